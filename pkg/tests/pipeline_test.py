import json

import numpy as np
import pytest

from hybrid_phy.blocks import UNIFIED_ORDER, BlockConfig, BlockKind, IQStream, SymbolStream, concat_streams
from hybrid_phy.errors import BlockConfigError, PipelineError, PresetMismatchError, UnknownPresetError
from hybrid_phy.pipeline import (
    PRESET_IDS,
    PipelineConfig,
    StageChain,
    build_preset,
    enabled_blocks_by_modulation,
    get_preset,
    list_presets,
    load_pipeline_config,
    random_packet,
    rate_profile,
    run_pipeline,
)

# id: (data rate bytes/s, sample rate samples/s)
PRESET_RATES = {
    1: (31250, 4_000_000),
    2: (31250, 2_000_000),
    3: (31250, 2_000_000),
    4: (2500, 1_200_000),
    5: (5000, 2_400_000),
    6: (12500, 400_000),
}


# id: (band, modulation, data rate, symbol rate, sample rate)
PRESET_ROWS = {
    1: ("2450 MHz", "OQPSK", 31250, 62500, 4_000_000),
    2: ("915 MHz", "OQPSK", 31250, 62500, 2_000_000),
    3: ("780 MHz", "OQPSK", 31250, 62500, 2_000_000),
    4: ("868 MHz", "BPSK", 2500, 20000, 1_200_000),
    5: ("915 MHz", "BPSK", 5000, 40000, 2_400_000),
    6: ("920.8–928 MHz", "GFSK", 12500, 100000, 400_000),
}


def all_disabled():
    return PipelineConfig(stages=[BlockConfig.of(k, enabled=False) for k in UNIFIED_ORDER])


def test_six_presets():
    presets = list_presets()
    assert [p.id for p in presets] == list(PRESET_IDS)
    assert get_preset(1).label == "OQPSK-2450"
    assert get_preset(4).modulation == "BPSK"
    assert get_preset(6).label == "GFSK-920.8–928"


@pytest.mark.parametrize("preset_id", PRESET_IDS)
def test_preset_rows(preset_id):
    p = get_preset(preset_id)
    assert (p.band, p.modulation, p.data_rate, p.symbol_rate, p.sample_rate) == PRESET_ROWS[preset_id]


def test_enabled_blocks_per_modulation():
    usage = enabled_blocks_by_modulation()
    assert usage["OQPSK"] == {
        BlockKind.SPLITTER,
        BlockKind.CHIP,
        BlockKind.MAPPER,
        BlockKind.FIR,
        BlockKind.ZPAD,
        BlockKind.OFFSET,
    }
    assert usage["BPSK"] == {BlockKind.SPLITTER, BlockKind.DIFFENC, BlockKind.CHIP, BlockKind.MAPPER, BlockKind.FIR}
    assert usage["GFSK"] == {BlockKind.SPLITTER, BlockKind.PN9, BlockKind.CLOCK, BlockKind.MAPPER}


def test_build_preset_follows_unified_order():
    for preset_id in PRESET_IDS:
        cfg = build_preset(preset_id)
        assert tuple(s.kind for s in cfg.stages) == UNIFIED_ORDER
        assert cfg.preset_id == preset_id


def test_unknown_preset():
    with pytest.raises(UnknownPresetError):
        build_preset(7)


@pytest.mark.parametrize("preset_id", PRESET_IDS)
def test_rate_profile_endpoints(preset_id):
    data_rate, sample_rate = PRESET_RATES[preset_id]
    profile = rate_profile(build_preset(preset_id), get_preset(preset_id))
    assert profile.first == data_rate
    assert profile.last == sample_rate
    assert len(profile.boundaries) == 10


@pytest.mark.parametrize("preset_id", PRESET_IDS)
def test_rate_profile_bit_rate_never_drops(preset_id):
    profile = rate_profile(build_preset(preset_id), get_preset(preset_id))
    bit_rates = [b.bits_per_s for b in profile.boundaries]
    assert bit_rates == sorted(bit_rates)


def test_symbol_rate_after_splitter():
    for preset_id in PRESET_IDS:
        preset = get_preset(preset_id)
        cfg = build_preset(preset_id)
        profile = rate_profile(cfg, preset)
        assert profile.rate_out_of(cfg.index_of(BlockKind.SPLITTER)) == preset.symbol_rate


def test_rate_profile_flat_when_everything_disabled():
    profile = rate_profile(all_disabled(), get_preset(1))
    assert {b.items_per_s for b in profile.boundaries} == {31250}


def test_rate_profile_preset_mismatch():
    with pytest.raises(PresetMismatchError):
        rate_profile(build_preset(1), get_preset(4))


@pytest.mark.parametrize("preset_id, expected", [(1, 2048 + 2), (2, 1024 + 1), (4, 7680), (5, 7680), (6, 512)])
def test_output_length(preset_id, expected):
    out = run_pipeline(build_preset(preset_id), random_packet(16, seed=1))
    assert isinstance(out, IQStream)
    assert len(out) == expected


def test_output_length_tracks_sample_clock():
    packet = random_packet(16)
    for preset_id in PRESET_IDS:
        preset = get_preset(preset_id)
        cfg = build_preset(preset_id)
        delay = cfg.stage(BlockKind.OFFSET).params.delay if cfg.stage(BlockKind.OFFSET).enabled else 0
        assert len(run_pipeline(cfg, packet)) == len(packet) * preset.sample_rate // preset.data_rate + delay


def test_all_disabled_is_identity():
    out = run_pipeline(all_disabled(), b"\x00\x01\xfe")
    assert out == SymbolStream.from_bytes(b"\x00\x01\xfe")


def test_empty_packet():
    with pytest.raises(PipelineError):
        run_pipeline(build_preset(1), b"")


def test_stage_order_enforced():
    with pytest.raises(BlockConfigError):
        PipelineConfig(stages=[BlockConfig.of(BlockKind.FIR), BlockConfig.of(BlockKind.SPLITTER)])


def test_mismatched_stage_types():
    cfg = build_preset(1).with_stage(4, BlockConfig.of(BlockKind.CHIP, enabled=False))
    with pytest.raises(BlockConfigError):
        run_pipeline(cfg, b"\x12")


def test_stage_chain_streams_in_pieces():
    cfg = build_preset(1)
    packet = random_packet(24, seed=5)
    chain = StageChain(cfg.stages)
    pieces = [chain.push(SymbolStream.from_bytes(packet[a : a + 5])) for a in range(0, len(packet), 5)]
    streamed = concat_streams(pieces + [chain.drain()])
    assert streamed == run_pipeline(cfg, packet)
    assert chain.input_counts[BlockKind.SPLITTER] == len(packet)


def test_pipelines_are_deterministic():
    packet = random_packet(32, seed=9)
    for preset_id in PRESET_IDS:
        assert run_pipeline(build_preset(preset_id), packet) == run_pipeline(build_preset(preset_id), packet)


def test_random_packet_is_seeded():
    assert random_packet(16, seed=3) == random_packet(16, seed=3)
    assert random_packet(16, seed=3) != random_packet(16, seed=4)
    assert len(random_packet()) == 16
    with pytest.raises(PipelineError):
        random_packet(0)


def test_load_pipeline_config(tmp_path):
    stages = [s.model_dump(mode="json") for s in build_preset(6).stages]
    stages[1]["params"]["seed"] = 0x0AA
    path = tmp_path / "custom.json"
    path.write_text(json.dumps({"preset_id": 6, "stages": stages}))

    cfg = load_pipeline_config(path)
    assert cfg.stage(BlockKind.PN9).params.seed == 0x0AA
    assert cfg.preset_id == 6
    out = run_pipeline(cfg, b"\x42\x42")
    assert np.allclose(np.abs(out.samples), 1.0)
    assert out != run_pipeline(build_preset(6), b"\x42\x42")


def test_load_pipeline_config_bad_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(BlockConfigError):
        load_pipeline_config(path)
