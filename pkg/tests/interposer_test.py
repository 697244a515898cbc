import json

import numpy as np
import pytest

from hybrid_phy.blocks import IQStream
from hybrid_phy.errors import ProtocolViolation, SplitPlanError
from hybrid_phy.interposer import (
    CpuAction,
    DacRing,
    Direction,
    EventKind,
    InterposerState,
    ProtocolPhase,
    SplitPlan,
    TransferEvent,
    pipeline_drain,
    pipeline_fill,
    protocol_step,
    ring_buffer_feed,
    split_execute,
    verify_ownership,
    write_event_log,
)
from hybrid_phy.pipeline import PRESET_IDS, build_preset, random_packet, run_pipeline

PACKET = random_packet(16, seed=11)


def segments(cfg):
    enabled = [i for i, s in enumerate(cfg.stages) if s.enabled]
    return [(a, b) for a in enabled for b in enabled if a <= b]


@pytest.mark.parametrize("preset_id", PRESET_IDS)
@pytest.mark.parametrize("buffer_items", [16, 64, 256, 1024])
def test_split_execution_is_bit_exact(preset_id, buffer_items):
    cfg = build_preset(preset_id)
    expected = run_pipeline(cfg, PACKET)
    for first, last in segments(cfg):
        plan = SplitPlan(sw_first=first, sw_last=last, buffer_items=buffer_items)
        run = split_execute(cfg, plan, PACKET)
        assert run.output == expected, plan.describe(cfg)
        assert all(size <= buffer_items for size in run.write_sizes)
        assert sum(run.released_per_write()) == len(expected)
        verify_ownership(run.events)


def test_software_fir_matches_hardware():
    cfg = build_preset(1)
    run = split_execute(cfg, SplitPlan(sw_first=6, sw_last=6, buffer_items=256), PACKET)
    assert run.output == run_pipeline(cfg, PACKET)
    assert run.reads == 2
    assert run.writes == 2


def test_hardware_only_has_no_events():
    cfg = build_preset(4)
    run = split_execute(cfg, SplitPlan.hardware(), PACKET)
    assert run.events == []
    assert run.output == run_pipeline(cfg, PACKET)


def test_write_sizes_cover_software_output():
    cfg = build_preset(1)
    # Zpad in software turns each 64-sample read into 256 samples
    run = split_execute(cfg, SplitPlan(sw_first=7, sw_last=7, buffer_items=64), PACKET)
    assert sum(run.write_sizes) == 2048
    assert set(run.write_sizes) == {64}
    assert run.writes == 4 * run.reads


def test_protocol_reaches_end_in_bounded_steps():
    for preset_id in PRESET_IDS:
        cfg = build_preset(preset_id)
        for first, last in segments(cfg):
            run = split_execute(cfg, SplitPlan(sw_first=first, sw_last=last, buffer_items=32), PACKET)
            assert run.steps <= 2 * (run.reads + run.writes) + 4
            assert run.events[-1].kind == EventKind.END


def test_disabled_stage_in_plan():
    with pytest.raises(SplitPlanError):
        split_execute(build_preset(1), SplitPlan(sw_first=1, sw_last=1), PACKET)


def test_segment_out_of_range():
    with pytest.raises(SplitPlanError):
        split_execute(build_preset(1), SplitPlan(sw_first=5, sw_last=9), PACKET)


def test_zero_buffer_rejected():
    with pytest.raises(SplitPlanError):
        SplitPlan(sw_first=0, sw_last=0, buffer_items=0)


def test_event_log_is_ndjson(tmp_path):
    run = split_execute(build_preset(6), SplitPlan(sw_first=2, sw_last=2, buffer_items=64), PACKET)
    path = tmp_path / "events.ndjson"
    write_event_log(run.events, path)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(records) == len(run.events)
    assert {"timestamp", "kind", "direction", "size"} <= set(records[0])
    assert records[-1]["kind"] == "end"
    starts = [r for r in records if r["kind"] == "dma_start"]
    dones = [r for r in records if r["kind"] == "dma_done"]
    assert len(starts) == len(dones)


# ---------------------------------------------------------------------------
# State machine
# ---------------------------------------------------------------------------


def test_idle_poll_blocks_until_irq():
    state, _ = protocol_step(InterposerState(buffer_items=16), CpuAction.POLL)
    assert state.phase == ProtocolPhase.BLOCKED
    state, _ = protocol_step(state, CpuAction.POLL)
    assert state.phase == ProtocolPhase.BLOCKED

    state, events = pipeline_fill(state, 16, last=False)
    assert [e.kind for e in events] == [EventKind.DMA_START, EventKind.DMA_DONE, EventKind.IRQ]
    state, _ = protocol_step(state, CpuAction.POLL)
    assert state.phase == ProtocolPhase.LOOP
    assert state.can_accept_read


def test_read_rejected_with_pending_write():
    state, _ = pipeline_fill(InterposerState(buffer_items=16), 16, last=False)
    state, _ = pipeline_fill(state, 16, last=False)
    state, _ = protocol_step(state, CpuAction.ACCEPT_READ)
    state, _ = protocol_step(state, CpuAction.PROCESS, produced=16)
    assert state.read_ready
    with pytest.raises(ProtocolViolation):
        protocol_step(state, CpuAction.ACCEPT_READ)


def test_last_buffer_leads_to_end():
    state, _ = pipeline_fill(InterposerState(buffer_items=16), 5, last=True)
    state, events = protocol_step(state, CpuAction.ACCEPT_READ)
    assert [e.kind for e in events] == [EventKind.CACHE_INVALIDATE, EventKind.RELEASE]
    assert state.last_flag
    state, _ = protocol_step(state, CpuAction.PROCESS, produced=5)
    assert not state.can_finish
    state, _ = protocol_step(state, CpuAction.ACCEPT_WRITE)
    state, events = protocol_step(state, CpuAction.FINISH)
    assert state.phase == ProtocolPhase.END
    assert events[0].kind == EventKind.END
    with pytest.raises(ProtocolViolation):
        protocol_step(state, CpuAction.POLL)


def test_writes_are_chunked_to_buffer_size():
    state, _ = pipeline_fill(InterposerState(buffer_items=256), 256, last=False)
    state, _ = protocol_step(state, CpuAction.ACCEPT_READ)
    state, _ = protocol_step(state, CpuAction.PROCESS, produced=600)

    sizes = []
    state, events = protocol_step(state, CpuAction.ACCEPT_WRITE)
    sizes.append(events[0].size_items)
    state, events = protocol_step(state, CpuAction.ACCEPT_WRITE)
    sizes.append(events[0].size_items)
    assert not state.can_accept_write
    with pytest.raises(ProtocolViolation):
        protocol_step(state, CpuAction.ACCEPT_WRITE)

    state, _ = pipeline_drain(state, released=256)
    state, events = protocol_step(state, CpuAction.ACCEPT_WRITE)
    sizes.append(events[0].size_items)
    assert sizes == [256, 256, 88]
    assert [e.kind for e in events] == [EventKind.CACHE_FLUSH, EventKind.DMA_START, EventKind.DMA_DONE]
    assert state.pending_write == 0


def test_fill_rejected_while_both_outbound_buffers_owned():
    state, _ = pipeline_fill(InterposerState(buffer_items=8), 8, last=False)
    state, _ = pipeline_fill(state, 8, last=False)
    assert not state.outbound_free
    with pytest.raises(ProtocolViolation):
        pipeline_fill(state, 8, last=False)


def test_oversize_fill_rejected():
    with pytest.raises(ProtocolViolation):
        pipeline_fill(InterposerState(buffer_items=8), 9, last=False)


def test_disabled_interposer_rejects_actions():
    with pytest.raises(ProtocolViolation):
        protocol_step(InterposerState(buffer_items=8, enabled=False), CpuAction.POLL)


def test_ownership_check_catches_double_dma():
    events = [
        TransferEvent(EventKind.DMA_START, Direction.TO_CPU, 8, 0),
        TransferEvent(EventKind.DMA_DONE, Direction.TO_CPU, 8, 0),
        TransferEvent(EventKind.DMA_START, Direction.TO_CPU, 8, 0),
    ]
    with pytest.raises(ProtocolViolation):
        verify_ownership(events)


def test_ownership_check_catches_release_of_free_buffer():
    with pytest.raises(ProtocolViolation):
        verify_ownership([TransferEvent(EventKind.RELEASE, Direction.FROM_CPU, 8, 1)])


# ---------------------------------------------------------------------------
# DAC ring
# ---------------------------------------------------------------------------


def samples(n):
    return IQStream(np.arange(1, n + 1, dtype=np.complex128))


def test_ring_buffer_wraps():
    ring = DacRing(4)
    assert ring.push(np.array([1, 2, 3], dtype=np.complex128)) == 3
    out, got = ring.pop(2)
    assert got == 2 and out.tolist() == [1, 2]
    assert ring.push(np.array([4, 5, 6, 7], dtype=np.complex128)) == 3
    assert ring.full
    assert ring.push(np.array([8], dtype=np.complex128)) == 0
    out, got = ring.pop(5)
    assert got == 4
    assert out.tolist() == [3, 4, 5, 6, 0]
    assert ring.level == 0 and not ring.full


def test_ring_capacity_one_alternates():
    trace = ring_buffer_feed(samples(5), capacity=1)
    assert trace.occupancy == (1, 0) * 5
    assert not trace.underrun
    assert trace.consumed == 5


def test_ring_producer_ahead_never_empties():
    trace = ring_buffer_feed(samples(100), capacity=8, production=[2] * 100)
    assert not trace.underrun
    assert trace.consumed == 100
    assert trace.start_tick == 3
    assert min(trace.occupancy[2 * trace.start_tick : -16]) > 0


def test_ring_stalled_producer_drains_to_zero():
    trace = ring_buffer_feed(samples(8), capacity=8, production=[4])
    assert trace.underrun
    assert trace.occupancy[-1] == 0
    assert trace.consumed == 4


def test_ring_rejects_zero_capacity():
    with pytest.raises(SplitPlanError):
        ring_buffer_feed(samples(4), capacity=0)
