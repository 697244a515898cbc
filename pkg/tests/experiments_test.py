import numpy as np
import pandas as pd
import pytest

from hybrid_phy.blocks import BlockKind
from hybrid_phy.errors import BufferSearchCapExceeded, ExportError, FitError, SplitPlanError
from hybrid_phy.experiments import (
    RATE_SPACED_PAIRS,
    RESULT_COLUMNS,
    RetrofitScenario,
    all_single_block_pairs,
    export_results,
    find_min_buffer,
    fit_min_buffer_table,
    gated_sweep,
    load_points_csv,
    load_synthetic_points,
    min_buffer_search,
    min_buffer_table,
    phase_survey,
    power_law_fit,
    rate_spaced_pairs,
    rate_table,
    retrofit_run,
    trend_violations,
)
from hybrid_phy.interposer import SplitPlan
from hybrid_phy.pipeline import PRESET_IDS, build_preset, random_packet
from hybrid_phy.timing import load_cost_model, simulate

COST = load_cost_model()
PACKET = random_packet()


# ---------------------------------------------------------------------------
# Minimum buffer search
# ---------------------------------------------------------------------------


def test_search_finds_threshold_of_synthetic_oracle():
    calls = []

    def underruns(b):
        calls.append(b)
        return b < 137

    size, trials = find_min_buffer(underruns, cap=65536)
    assert size == 137
    assert trials == len(set(calls))
    assert trials < 20


def test_search_threshold_of_one():
    assert find_min_buffer(lambda b: False)[0] == 1


def test_search_threshold_at_cap():
    assert find_min_buffer(lambda b: b < 100, cap=100)[0] == 100


def test_search_cap_exceeded():
    with pytest.raises(BufferSearchCapExceeded) as info:
        find_min_buffer(lambda b: True, cap=50)
    assert info.value.cap == 50


def test_min_buffer_is_exact():
    cfg = build_preset(1)
    idx = cfg.index_of(BlockKind.FIR)
    result = min_buffer_search(1, idx, idx, COST, PACKET)
    assert result.min_buffer > 1
    assert result.block == "FIR"
    assert result.boundary_rate == 2_000_000

    def underrun(b):
        return simulate(cfg, SplitPlan(sw_first=idx, sw_last=idx, buffer_items=b), PACKET, COST).underrun

    assert not underrun(result.min_buffer)
    assert underrun(result.min_buffer - 1)


def test_unbounded_irq_latency_hits_cap():
    cfg = build_preset(1)
    idx = cfg.index_of(BlockKind.FIR)
    slow = COST.with_overrides(irq_latency_cycles=10**9)
    with pytest.raises(BufferSearchCapExceeded) as info:
        min_buffer_search(1, idx, idx, slow, PACKET, cap=8)
    assert "preset 1" in str(info.value)


def test_grid_flags_cap_instead_of_failing():
    cfg = build_preset(1)
    slow = COST.with_overrides(irq_latency_cycles=10**9)
    table = min_buffer_table([(1, cfg.index_of(BlockKind.FIR))], slow, PACKET, cap=8)
    assert bool(table["cap_exceeded"].iloc[0])
    assert pd.isna(table["min_buffer"].iloc[0])


def test_rate_spaced_pairs_need_more_buffer_as_rate_grows():
    pairs = rate_spaced_pairs()
    assert len(pairs) == len(RATE_SPACED_PAIRS)
    table = min_buffer_table(pairs, COST, PACKET, jobs=4)
    rates = table["boundary_rate"].tolist()
    sizes = table["min_buffer"].tolist()
    assert rates == sorted(rates)
    assert sizes == sorted(sizes)
    assert sizes[0] == 1
    assert sizes[-1] > 1
    assert table["censored"].tolist() == [s == 1 for s in sizes]
    assert (table["sw_first"] == table["sw_last"]).all()


# ---------------------------------------------------------------------------
# Power-law fit
# ---------------------------------------------------------------------------


def test_fit_recovers_synthetic_constants():
    fit = power_law_fit(load_synthetic_points())
    assert fit.m == pytest.approx(0.66, abs=1e-9)
    assert fit.k == pytest.approx(0.0007, abs=1e-9)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.n_points == 10
    assert len(fit.points) == 10
    assert fit.points[0] == pytest.approx((2e4, 0.0007 * 2e4**0.66))


@pytest.mark.parametrize("pairs", [all_single_block_pairs(), rate_spaced_pairs()], ids=["all_blocks", "rate_spaced"])
def test_fit_on_simulated_min_buffers(pairs):
    table = min_buffer_table(pairs, COST, PACKET, jobs=4)
    fit = fit_min_buffer_table(table)
    assert fit.r2 >= 0.9
    assert fit.m > 0
    assert fit.n_points == len(fit.points) >= 3


def test_fit_constant_sizes():
    fit = power_law_fit([(1e3, 5.0), (1e4, 5.0), (1e5, 5.0)])
    assert fit.m == pytest.approx(0.0, abs=1e-12)
    assert fit.k == pytest.approx(5.0)


def test_fit_is_scale_consistent():
    points = load_synthetic_points()
    base = power_law_fit(points)
    c = 37.0
    scaled = power_law_fit([(r * c, s) for r, s in points])
    assert scaled.m == pytest.approx(base.m, abs=1e-9)
    assert scaled.k == pytest.approx(base.k * c ** (-base.m), rel=1e-9)


def test_fit_tolerates_noise():
    rng = np.random.default_rng(42)
    rates = np.geomspace(1e4, 1e7, 20)
    sizes = 0.0007 * rates**0.66 * (1 + 0.1 * rng.uniform(-1, 1, size=20))
    fit = power_law_fit(list(zip(rates, sizes)))
    assert fit.r2 >= 0.9
    assert fit.m == pytest.approx(0.66, abs=0.05)


def test_fit_needs_three_positive_points():
    with pytest.raises(FitError):
        power_law_fit([(1.0, 1.0), (2.0, 2.0)])
    with pytest.raises(FitError):
        power_law_fit([(1.0, 1.0), (2.0, 0.0), (3.0, 3.0)])
    with pytest.raises(FitError):
        power_law_fit([(5.0, 1.0), (5.0, 2.0), (5.0, 3.0)])


def test_fit_skips_censored_and_missing_points(tmp_path):
    table = pd.DataFrame(
        {
            "boundary_rate": [1e4, 1e5, 1e6, 1e7, 2e7],
            "min_buffer": [1, 2, 10, 45, None],
            "censored": [True, False, False, False, False],
        }
    )
    fit = fit_min_buffer_table(table)
    assert fit.n_points == 3

    path = tmp_path / "points.csv"
    table.to_csv(path, index=False)
    assert len(load_points_csv(path)) == 3


def test_points_csv_needs_columns(tmp_path):
    path = tmp_path / "points.csv"
    pd.DataFrame({"rate": [1, 2, 3]}).to_csv(path, index=False)
    with pytest.raises(FitError):
        load_points_csv(path)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def test_gated_sweep_table():
    table = gated_sweep([4], [64, 256], COST, PACKET)
    assert len(table) == 1 + 5 * 2
    assert set(RESULT_COLUMNS) <= set(table.columns)
    baseline = table[table["sw_first"].isna()]
    assert len(baseline) == 1
    assert baseline["streaming_gated_fraction"].iloc[0] == pytest.approx(1.0)
    blocks = table.dropna(subset=["sw_first"])
    assert blocks["sw_first"].min() == 1
    assert (blocks["gated_fraction"] < baseline["gated_fraction"].iloc[0]).all()


def test_gating_trends_hold_on_full_grid():
    table = gated_sweep(PRESET_IDS, [16, 64, 256, 1024], COST, PACKET, jobs=4)
    assert trend_violations(table) == []


def test_trend_check_flags_inverted_rows():
    table = pd.DataFrame(
        {
            "preset_id": [1, 1, 1, 1],
            "sw_first": [5, 7, 5, 7],
            "buffer_items": [64, 64, 256, 256],
            "block": ["Chip", "FIR", "Chip", "FIR"],
            "charged_rate": [1e6, 3e6, 0.5e6, 2e6],
            "gated_fraction": [0.80, 0.85, 0.79, 0.86],
        }
    )
    found = trend_violations(table)
    assert len(found) == 3
    assert any("B=64: FIR charges more than Chip" in v for v in found)
    assert any("stage 5: B=256" in v for v in found)


def test_gated_sweep_is_order_stable_across_workers():
    serial = gated_sweep([1, 6], [32, 128], COST, PACKET, jobs=1)
    parallel = gated_sweep([1, 6], [32, 128], COST, PACKET, jobs=4)
    pd.testing.assert_frame_equal(serial, parallel)


def test_rate_table():
    table = rate_table([1])
    assert len(table) == 10
    assert table["after"].iloc[0] == "input"
    assert table["items_per_s"].iloc[-1] == 4_000_000


# ---------------------------------------------------------------------------
# Retrofit
# ---------------------------------------------------------------------------


def test_retrofit_missing_blocks():
    assert RetrofitScenario.for_preset(1).missing_blocks == {BlockKind.ZPAD, BlockKind.OFFSET}
    assert RetrofitScenario.for_preset(4).missing_blocks == {BlockKind.DIFFENC}
    assert RetrofitScenario.for_preset(6).missing_blocks == {BlockKind.PN9, BlockKind.CLOCK}


def test_retrofit_segments_are_contiguous():
    assert RetrofitScenario.for_preset(6).plan(64).model_dump(include={"sw_first", "sw_last"}) == {
        "sw_first": 1,
        "sw_last": 2,
    }
    plan = RetrofitScenario.for_preset(2).plan(64)
    assert (plan.sw_first, plan.sw_last) == (7, 8)


def test_retrofit_rejects_split_segments():
    scenario = RetrofitScenario(preset_id=1, missing_blocks=frozenset({BlockKind.SPLITTER, BlockKind.FIR}))
    with pytest.raises(SplitPlanError):
        scenario.plan(64)


def test_retrofit_rejects_unused_block():
    scenario = RetrofitScenario(preset_id=1, missing_blocks=frozenset({BlockKind.PN9}))
    with pytest.raises(SplitPlanError):
        scenario.plan(64)


def test_retrofit_keeps_iq_and_costs_oqpsk_more():
    buffers = [64, 256]
    tables = {p: retrofit_run(RetrofitScenario.for_preset(p), buffers, COST, PACKET) for p in (1, 4, 6)}
    for table in tables.values():
        assert table["iq_equal"].all()
        assert (table["delta"] > 0).all()
    oqpsk = tables[1].set_index("buffer_items")["delta"]
    bpsk = tables[4].set_index("buffer_items")["delta"]
    for b in buffers:
        assert oqpsk[b] > bpsk[b]


def test_phase_survey():
    survey = phase_survey(COST, buffer_items=128, packet=PACKET)
    assert set(survey["modulation"]) == {"OQPSK", "BPSK", "GFSK"}
    totals = survey.groupby("preset_id")["fraction"].sum()
    assert np.allclose(totals, 1.0)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def test_export_empty_table(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(ExportError):
        export_results({"sweep": pd.DataFrame()}, out)
    assert not out.exists()
    with pytest.raises(ExportError):
        export_results({}, out)


def test_export_is_deterministic(tmp_path):
    table = gated_sweep([6], [64], COST, PACKET)
    first = export_results({"sweep": table}, tmp_path / "a", plot=False)
    second = export_results({"sweep": table}, tmp_path / "b", plot=False)
    assert first[0].read_bytes() == second[0].read_bytes()
    header = first[0].read_text().splitlines()[0].split(",")
    assert header[: len(RESULT_COLUMNS)] == RESULT_COLUMNS


def test_export_renders_plots(tmp_path):
    table = pd.DataFrame(
        {
            "preset_id": [1, 1, 1],
            "sw_first": [5, 6, 7],
            "sw_last": [5, 6, 7],
            "min_buffer": [3, 6, 14],
            "boundary_rate": [1e6, 2e6, 5e6],
            "censored": [False, False, False],
        }
    )
    paths = export_results({"min_buffer": table, "rates": rate_table([1, 4])}, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["min_buffer.csv", "min_buffer.png", "rates.csv", "rates.png"]
    assert all(p.stat().st_size > 0 for p in paths)
