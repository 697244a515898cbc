"""Interposer model and split execution.

The interposer sits between two accelerator stages and diverts the stream to
the CPU through two double buffers, one per direction. ``protocol_step`` is
the CPU side of the hand-shake, ``pipeline_fill`` and ``pipeline_drain`` are
the hardware side. ``split_execute`` drives both to run a pipeline with one
contiguous segment of blocks done in software, and records every transfer so
the timing layer can replay it.
"""
import json
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Deque, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .blocks import BlockKind, IQStream, Stream, SymbolStream, concat_streams
from .errors import ProtocolViolation, SplitPlanError
from .pipeline import PipelineConfig, StageChain, run_pipeline

logger = logging.getLogger(__name__)


class SplitPlan(BaseModel):
    """Which stages run in software. Stage indices are 0-based positions in the pipeline."""

    model_config = ConfigDict(frozen=True)

    sw_first: Optional[int] = None
    sw_last: Optional[int] = None
    buffer_items: int = 256
    irq_threshold: Optional[int] = None

    @field_validator("buffer_items")
    @classmethod
    def _positive_buffer(cls, v: int) -> int:
        if v < 1:
            raise SplitPlanError(f"Interposer buffers must hold at least one item, got {v}")
        return v

    @field_validator("irq_threshold")
    @classmethod
    def _positive_threshold(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise SplitPlanError(f"IRQ threshold must be >= 1, got {v}")
        return v

    @classmethod
    def hardware(cls) -> "SplitPlan":
        return cls()

    @property
    def is_hardware_only(self) -> bool:
        return self.sw_first is None and self.sw_last is None

    @property
    def handoff_items(self) -> int:
        if self.irq_threshold is None:
            return self.buffer_items
        return min(self.irq_threshold, self.buffer_items)

    def validate_for(self, cfg: PipelineConfig) -> None:
        if self.is_hardware_only:
            return
        if self.sw_first is None or self.sw_last is None:
            raise SplitPlanError("A software segment needs both a first and a last stage")
        if not 0 <= self.sw_first <= self.sw_last < len(cfg.stages):
            raise SplitPlanError(
                f"Segment {self.sw_first}..{self.sw_last} is outside stages 0..{len(cfg.stages) - 1}"
            )
        for idx in (self.sw_first, self.sw_last):
            if not cfg.stages[idx].enabled:
                raise SplitPlanError(f"Segment endpoint {cfg.stages[idx].name} is disabled in this pipeline")

    def describe(self, cfg: Optional[PipelineConfig] = None) -> str:
        if self.is_hardware_only:
            return "hardware"
        if cfg is None:
            return f"sw[{self.sw_first}..{self.sw_last}] B={self.buffer_items}"
        names = [s.name for s in cfg.stages[self.sw_first : self.sw_last + 1] if s.enabled]
        return f"sw[{'+'.join(names)}] B={self.buffer_items}"


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------


class Direction(str, Enum):
    TO_CPU = "to_cpu"
    FROM_CPU = "from_cpu"


class EventKind(str, Enum):
    IRQ = "irq"
    DMA_START = "dma_start"
    DMA_DONE = "dma_done"
    CACHE_FLUSH = "cache_flush"
    CACHE_INVALIDATE = "cache_invalidate"
    RELEASE = "release"
    DSP = "dsp"
    END = "end"


@dataclass(frozen=True)
class TransferEvent:
    kind: EventKind
    direction: Optional[Direction] = None
    size_items: int = 0
    buffer: Optional[int] = None
    timestamp: int = 0
    released: int = 0
    dsp_items: Mapping[BlockKind, int] = field(default_factory=dict)
    last: bool = False

    def to_record(self) -> Dict[str, object]:
        record: Dict[str, object] = {
            "timestamp": self.timestamp,
            "kind": self.kind.value,
            "direction": self.direction.value if self.direction else None,
            "size": self.size_items,
        }
        if self.buffer is not None:
            record["buffer"] = self.buffer
        if self.released:
            record["released"] = self.released
        if self.dsp_items:
            record["dsp_items"] = {k.value: v for k, v in self.dsp_items.items()}
        if self.last:
            record["last"] = True
        return record


def write_event_log(events: Iterable[TransferEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for event in events:
            f.write(json.dumps(event.to_record(), sort_keys=True) + "\n")


def verify_ownership(events: Sequence[TransferEvent]) -> None:
    """Replay a log and raise if the CPU and the pipeline ever hold the same buffer."""
    busy: Dict[Tuple[Direction, int], str] = {}
    for ev in events:
        if ev.buffer is None or ev.direction is None:
            continue
        key = (ev.direction, ev.buffer)
        state = busy.get(key, "free")
        if ev.kind == EventKind.DMA_START:
            if state != "free":
                raise ProtocolViolation(f"DMA into {key} while it is {state}")
            busy[key] = "dma"
        elif ev.kind == EventKind.DMA_DONE:
            if state != "dma":
                raise ProtocolViolation(f"DMA done on {key} with no transfer in flight")
            busy[key] = "owned"
        elif ev.kind in (EventKind.CACHE_INVALIDATE, EventKind.CACHE_FLUSH):
            expected = "owned" if ev.direction == Direction.TO_CPU else "free"
            if state != expected:
                raise ProtocolViolation(f"Cache operation on {key} while it is {state}")
        elif ev.kind == EventKind.RELEASE:
            if state != "owned":
                raise ProtocolViolation(f"Release of {key} which is not owned")
            busy[key] = "free"


# ---------------------------------------------------------------------------
# State machine
# ---------------------------------------------------------------------------


class CpuAction(str, Enum):
    POLL = "poll"
    ACCEPT_READ = "accept_read"
    ACCEPT_WRITE = "accept_write"
    PROCESS = "process"
    FINISH = "finish"


class IrqReason(str, Enum):
    NONE = "none"
    READ_READY = "read_ready"
    WRITE_READY = "write_ready"


class ProtocolPhase(str, Enum):
    LOOP = "loop"
    BLOCKED = "blocked"
    PROCESS = "process"
    END = "end"


@dataclass(frozen=True)
class InterposerState:
    buffer_items: int
    enabled: bool = True
    out_fill: Tuple[int, int] = (0, 0)
    out_last: Tuple[bool, bool] = (False, False)
    hw_out: int = 0
    cpu_out: int = 0
    in_fill: Tuple[int, int] = (0, 0)
    cpu_in: int = 0
    hw_in: int = 0
    processing: int = 0
    pending_write: int = 0
    pending_irq: IrqReason = IrqReason.NONE
    last_flag: bool = False
    phase: ProtocolPhase = ProtocolPhase.LOOP
    released_total: int = 0

    @property
    def read_ready(self) -> bool:
        return self.out_fill[self.cpu_out] > 0 or self.out_last[self.cpu_out]

    @property
    def write_ready(self) -> bool:
        return self.in_fill[self.cpu_in] == 0

    @property
    def can_accept_read(self) -> bool:
        return self.pending_write == 0 and not self.last_flag and self.read_ready

    @property
    def can_accept_write(self) -> bool:
        return self.pending_write > 0 and self.write_ready

    @property
    def can_finish(self) -> bool:
        return self.last_flag and self.pending_write == 0 and self.processing == 0

    @property
    def outbound_free(self) -> bool:
        return self.out_fill[self.hw_out] == 0 and not self.out_last[self.hw_out]


def _set(pair: tuple, index: int, value) -> tuple:
    items = list(pair)
    items[index] = value
    return tuple(items)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ProtocolViolation(message)


def protocol_step(
    state: InterposerState,
    action: CpuAction,
    produced: int = 0,
    dsp_items: Optional[Mapping[BlockKind, int]] = None,
) -> Tuple[InterposerState, List[TransferEvent]]:
    """Apply one CPU action. ``produced`` and ``dsp_items`` only apply to PROCESS."""
    _require(state.enabled, "Interposer is disabled; the stream bypasses the CPU")
    _require(state.phase != ProtocolPhase.END, f"{action.value} after the run has ended")
    ts = state.released_total

    if action == CpuAction.POLL:
        if state.phase == ProtocolPhase.BLOCKED:
            if state.pending_irq == IrqReason.NONE:
                return state, []
            return replace(state, phase=ProtocolPhase.LOOP, pending_irq=IrqReason.NONE), []
        _require(state.phase == ProtocolPhase.LOOP, f"poll while {state.phase.value}")
        if state.can_accept_write or state.can_accept_read or state.can_finish:
            return replace(state, pending_irq=IrqReason.NONE), []
        return replace(state, phase=ProtocolPhase.BLOCKED, pending_irq=IrqReason.NONE), []

    if action == CpuAction.ACCEPT_READ:
        _require(state.phase == ProtocolPhase.LOOP, f"read accepted while {state.phase.value}")
        _require(state.pending_write == 0, "read accepted with pending write data")
        _require(not state.last_flag, "read accepted after the last buffer")
        _require(state.read_ready, "read accepted with no outbound data")
        buf = state.cpu_out
        size = state.out_fill[buf]
        last = state.out_last[buf]
        events = [
            TransferEvent(EventKind.CACHE_INVALIDATE, Direction.TO_CPU, size, buf, ts, last=last),
            TransferEvent(EventKind.RELEASE, Direction.TO_CPU, size, buf, ts, last=last),
        ]
        new = replace(
            state,
            out_fill=_set(state.out_fill, buf, 0),
            out_last=_set(state.out_last, buf, False),
            cpu_out=buf ^ 1,
            processing=size,
            last_flag=last,
            phase=ProtocolPhase.PROCESS,
        )
        return new, events

    if action == CpuAction.PROCESS:
        _require(state.phase == ProtocolPhase.PROCESS, f"process while {state.phase.value}")
        _require(produced >= 0, "negative production count")
        event = TransferEvent(EventKind.DSP, None, state.processing, None, ts, dsp_items=dict(dsp_items or {}))
        new = replace(state, processing=0, pending_write=produced, phase=ProtocolPhase.LOOP)
        return new, [event]

    if action == CpuAction.ACCEPT_WRITE:
        _require(state.phase == ProtocolPhase.LOOP, f"write accepted while {state.phase.value}")
        _require(state.pending_write > 0, "write accepted with nothing to write")
        _require(state.write_ready, "write accepted with no free inbound buffer")
        buf = state.cpu_in
        chunk = min(state.pending_write, state.buffer_items)
        events = [
            TransferEvent(EventKind.CACHE_FLUSH, Direction.FROM_CPU, chunk, buf, ts),
            TransferEvent(EventKind.DMA_START, Direction.FROM_CPU, chunk, buf, ts),
            TransferEvent(EventKind.DMA_DONE, Direction.FROM_CPU, chunk, buf, ts),
        ]
        new = replace(
            state,
            in_fill=_set(state.in_fill, buf, chunk),
            cpu_in=buf ^ 1,
            pending_write=state.pending_write - chunk,
        )
        return new, events

    if action == CpuAction.FINISH:
        _require(state.phase == ProtocolPhase.LOOP, f"finish while {state.phase.value}")
        _require(state.can_finish, "finish before the last buffer was processed and written")
        return replace(state, phase=ProtocolPhase.END), [TransferEvent(EventKind.END, None, 0, None, ts)]

    raise ProtocolViolation(f"Unknown action {action!r}")


def pipeline_fill(state: InterposerState, size: int, last: bool) -> Tuple[InterposerState, List[TransferEvent]]:
    """Hardware side: the upstream stage deposits ``size`` items in the next outbound buffer."""
    _require(state.enabled, "Interposer is disabled")
    _require(state.outbound_free, f"outbound buffer {state.hw_out} is still owned by the CPU")
    _require(0 <= size <= state.buffer_items, f"fill of {size} items exceeds buffer of {state.buffer_items}")
    buf = state.hw_out
    ts = state.released_total
    events = [
        TransferEvent(EventKind.DMA_START, Direction.TO_CPU, size, buf, ts, last=last),
        TransferEvent(EventKind.DMA_DONE, Direction.TO_CPU, size, buf, ts, last=last),
        TransferEvent(EventKind.IRQ, Direction.TO_CPU, size, buf, ts, last=last),
    ]
    new = replace(
        state,
        out_fill=_set(state.out_fill, buf, size),
        out_last=_set(state.out_last, buf, last),
        hw_out=buf ^ 1,
        pending_irq=IrqReason.READ_READY,
    )
    return new, events


def pipeline_drain(state: InterposerState, released: int) -> Tuple[InterposerState, List[TransferEvent]]:
    """Hardware side: the downstream stage consumes the next inbound buffer."""
    _require(state.enabled, "Interposer is disabled")
    buf = state.hw_in
    size = state.in_fill[buf]
    _require(size > 0, f"inbound buffer {buf} is empty")
    total = state.released_total + released
    events = [
        TransferEvent(EventKind.RELEASE, Direction.FROM_CPU, size, buf, total, released=released),
        TransferEvent(EventKind.IRQ, Direction.FROM_CPU, size, buf, total),
    ]
    new = replace(
        state,
        in_fill=_set(state.in_fill, buf, 0),
        hw_in=buf ^ 1,
        pending_irq=IrqReason.WRITE_READY,
        released_total=total,
    )
    return new, events


# ---------------------------------------------------------------------------
# Split execution
# ---------------------------------------------------------------------------


@dataclass
class HybridRun:
    output: Stream
    events: List[TransferEvent]
    steps: int = 0
    reads: int = 0
    writes: int = 0
    write_sizes: List[int] = field(default_factory=list)

    def released_per_write(self) -> List[int]:
        return [e.released for e in self.events if e.kind == EventKind.RELEASE and e.direction == Direction.FROM_CPU]


def _slice(stream: Stream, start: int, stop: int) -> Stream:
    return stream.slice(start, stop)


def _empty_like(stream: Stream) -> Stream:
    if isinstance(stream, IQStream):
        return IQStream.empty()
    return SymbolStream.empty(stream.width)


def split_execute(
    cfg: PipelineConfig,
    plan: SplitPlan,
    packet: bytes,
    logger_instance: Optional[logging.Logger] = None,
) -> HybridRun:
    effective_logger = logger_instance or logger
    plan.validate_for(cfg)
    if plan.is_hardware_only:
        return HybridRun(output=run_pipeline(cfg, packet), events=[])
    assert plan.sw_first is not None and plan.sw_last is not None

    upstream = StageChain(cfg.stages[: plan.sw_first])
    software = StageChain(cfg.stages[plan.sw_first : plan.sw_last + 1])
    downstream = StageChain(cfg.stages[plan.sw_last + 1 :])

    source = upstream.run(SymbolStream.from_bytes(packet)) if packet else None
    if source is None or len(source) == 0:
        raise SplitPlanError("Nothing reaches the software segment; the packet is empty")
    total_in = len(source)
    handoff = plan.handoff_items

    state = InterposerState(buffer_items=plan.buffer_items)
    events: List[TransferEvent] = []
    outbound: Deque[Stream] = deque()
    inbound: Deque[Stream] = deque()
    write_backlog: Optional[Stream] = None
    outputs: List[Stream] = []
    run = HybridRun(output=_empty_like(source), events=events)
    end_events: List[TransferEvent] = []
    pos = 0
    source_done = False

    while state.phase != ProtocolPhase.END:
        run.steps += 1
        progressed = False

        if not source_done and state.outbound_free:
            size = min(handoff, total_in - pos)
            last = pos + size >= total_in
            state, ev = pipeline_fill(state, size, last)
            events.extend(ev)
            outbound.append(_slice(source, pos, pos + size))
            pos += size
            source_done = last
            progressed = True

        while state.in_fill[state.hw_in] > 0:
            released = downstream.push(inbound.popleft())
            outputs.append(released)
            state, ev = pipeline_drain(state, len(released))
            events.extend(ev)
            progressed = True

        state, _ = protocol_step(state, CpuAction.POLL)
        if state.phase == ProtocolPhase.BLOCKED:
            if not progressed:
                raise ProtocolViolation(f"Interposer deadlocked after {run.steps} steps")
            continue

        if state.can_accept_write:
            assert write_backlog is not None
            chunk = min(state.pending_write, plan.buffer_items)
            state, ev = protocol_step(state, CpuAction.ACCEPT_WRITE)
            events.extend(ev)
            inbound.append(_slice(write_backlog, 0, chunk))
            write_backlog = _slice(write_backlog, chunk, len(write_backlog))
            run.writes += 1
            run.write_sizes.append(chunk)
        elif state.can_accept_read:
            state, ev = protocol_step(state, CpuAction.ACCEPT_READ)
            events.extend(ev)
            data = outbound.popleft()
            run.reads += 1
            before = dict(software.input_counts)
            produced = software.push(data)
            if state.last_flag:
                produced = concat_streams([produced, software.drain()])
            counts = {k: software.input_counts[k] - before[k] for k in before}
            write_backlog = produced
            state, ev = protocol_step(state, CpuAction.PROCESS, produced=len(produced), dsp_items=counts)
            events.extend(ev)
        elif state.can_finish:
            state, ev = protocol_step(state, CpuAction.FINISH)
            end_events = ev
        elif not progressed:
            raise ProtocolViolation(f"Interposer deadlocked after {run.steps} steps")

    while state.in_fill[state.hw_in] > 0:
        released = downstream.push(inbound.popleft())
        outputs.append(released)
        state, ev = pipeline_drain(state, len(released))
        events.extend(ev)

    tail = downstream.drain()
    if tail is not None and len(tail):
        outputs.append(tail)
        idx = max(
            (i for i, e in enumerate(events) if e.kind == EventKind.RELEASE and e.direction == Direction.FROM_CPU),
            default=None,
        )
        if idx is None:
            events.append(TransferEvent(EventKind.RELEASE, Direction.FROM_CPU, 0, None, len(tail), released=len(tail)))
        else:
            ev0 = events[idx]
            events[idx] = replace(ev0, released=ev0.released + len(tail), timestamp=ev0.timestamp + len(tail))
    events.extend(end_events)

    out = concat_streams(outputs)
    run.output = out if out is not None else _empty_like(source)
    effective_logger.debug(
        f"Split run {plan.describe(cfg)}: {run.reads} reads, {run.writes} writes, "
        f"{len(run.output)} output items in {run.steps} steps"
    )
    return run


# ---------------------------------------------------------------------------
# DAC ring buffer
# ---------------------------------------------------------------------------


class DacRing:
    """Fixed-capacity FIFO of complex samples between the accelerator and the DAC.

    Same ``level``/``capacity`` vocabulary as the simpy container the timing layer
    uses for the ring, but it carries the samples themselves. Not thread-safe;
    callers step it from a single loop.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise SplitPlanError(f"Ring capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.level = 0
        self._slots = np.zeros(self.capacity, dtype=np.complex128)
        self._head = 0

    def _positions(self, start: int, count: int) -> np.ndarray:
        return (start + np.arange(count)) % self.capacity

    @property
    def full(self) -> bool:
        return self.level == self.capacity

    def push(self, samples: np.ndarray) -> int:
        """Store as many leading samples as there is room for. Returns how many."""
        accepted = max(0, min(samples.shape[0], self.capacity - self.level))
        if accepted:
            self._slots[self._positions(self._head + self.level, accepted)] = samples[:accepted]
            self.level += accepted
        return accepted

    def pop(self, count: int) -> Tuple[np.ndarray, int]:
        """The oldest ``count`` samples, zero-filled past what the ring held."""
        taken = min(count, self.level)
        out = np.zeros(count, dtype=np.complex128)
        out[:taken] = self._slots[self._positions(self._head, taken)]
        self._head = (self._head + taken) % self.capacity
        self.level -= taken
        return out, taken


class OccupancyTrace(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    capacity: int
    occupancy: Tuple[int, ...]
    start_tick: Optional[int]
    underrun_tick: Optional[int]
    consumed: int

    @property
    def underrun(self) -> bool:
        return self.underrun_tick is not None


def ring_buffer_feed(
    samples: IQStream,
    capacity: int,
    production: Optional[Sequence[int]] = None,
) -> OccupancyTrace:
    """Tick-level ring model: each tick the producer offers ``production[t]`` samples,
    then the DAC takes one. The DAC starts once the ring is full or the producer has
    delivered everything. Occupancy is sampled after each phase of each tick.

    Without a schedule the producer offers ``capacity`` samples every tick.
    """
    ring = DacRing(capacity)
    data = samples.samples
    total = data.size
    schedule = list(production) if production is not None else None
    occupancy: List[int] = []
    produced = consumed = 0
    offered_backlog = 0
    started_at: Optional[int] = None
    underrun_at: Optional[int] = None
    tick = 0
    while consumed < total:
        if schedule is None:
            offer = capacity
        elif tick < len(schedule):
            offer = schedule[tick]
        else:
            offer = 0
        offered_backlog = min(offered_backlog + offer, total - produced)
        written = ring.push(data[produced : produced + offered_backlog])
        produced += written
        offered_backlog -= written
        occupancy.append(ring.level)

        producer_exhausted = schedule is not None and tick >= len(schedule) and offered_backlog == 0
        if started_at is None and (ring.full or produced == total or producer_exhausted):
            started_at = tick
        if started_at is not None:
            _, got = ring.pop(1)
            if got:
                consumed += 1
            elif underrun_at is None:
                underrun_at = tick
        occupancy.append(ring.level)

        if producer_exhausted and ring.level == 0 and consumed < total:
            if underrun_at is None:
                underrun_at = tick + 1
            break
        tick += 1

    return OccupancyTrace(
        capacity=capacity,
        occupancy=tuple(occupancy),
        start_tick=started_at,
        underrun_tick=underrun_at,
        consumed=consumed,
    )
