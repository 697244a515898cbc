"""Design-space experiments over presets, software segments and buffer sizes.

Every table produced here is a pandas DataFrame keyed by preset and segment.
Stage numbers in tables are 1-based positions in the unified block order,
the same numbering the command line uses.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from .blocks import DATA_DIR, DISPLAY_NAMES, BlockKind
from .errors import BufferSearchCapExceeded, ExportError, FitError, SplitPlanError
from .interposer import SplitPlan
from .pipeline import (
    PRESET_IDS,
    build_preset,
    enabled_blocks_by_modulation,
    get_preset,
    list_presets,
    random_packet,
    rate_profile,
)
from .timing import DEFAULT_DAC_RING, CostModel, Phase, RunReport, phase_report, simulate

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "preset_id",
    "sw_first",
    "sw_last",
    "buffer_items",
    "gated_fraction",
    "underrun",
    "min_buffer",
    "boundary_rate",
]
FLOAT_FORMAT = "%.6f"
DEFAULT_BUFFER_CAP = 65536
DEFAULT_SWEEP_BUFFERS = (16, 64, 256, 1024)
SYNTHETIC_FIT_FILE = DATA_DIR / "fit_synthetic.json"
# float noise only; equal cycle counts give equal fractions
TREND_EPSILON = 1e-12

# (preset, block) pairs whose intervention rates are spread across four decades
RATE_SPACED_PAIRS: Tuple[Tuple[int, BlockKind], ...] = (
    (4, BlockKind.SPLITTER),
    (4, BlockKind.DIFFENC),
    (1, BlockKind.SPLITTER),
    (6, BlockKind.CLOCK),
    (4, BlockKind.CHIP),
    (6, BlockKind.MAPPER),
    (1, BlockKind.FIR),
    (1, BlockKind.MAPPER),
    (1, BlockKind.ZPAD),
    (1, BlockKind.OFFSET),
)


class SweepPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    preset_id: int
    sw_first: Optional[int] = None
    sw_last: Optional[int] = None
    buffer_items: int = 256

    @property
    def plan(self) -> SplitPlan:
        return SplitPlan(sw_first=self.sw_first, sw_last=self.sw_last, buffer_items=self.buffer_items)


class SweepRunner:
    """Runs independent simulation points, optionally on a thread pool.

    Results come back in the order the points were given, whatever order they finish in.
    """

    def __init__(
        self,
        cost: CostModel,
        packet: Optional[bytes] = None,
        dac_ring: int = DEFAULT_DAC_RING,
        max_workers: int = 1,
    ):
        self.cost = cost
        self.packet = packet if packet is not None else random_packet()
        self.dac_ring = dac_ring
        self.max_workers = max(1, max_workers)

    def run_point(self, point: SweepPoint) -> RunReport:
        cfg = build_preset(point.preset_id)
        return simulate(cfg, point.plan, self.packet, self.cost, dac_ring=self.dac_ring)

    def run(self, points: Sequence[SweepPoint]) -> List[RunReport]:
        if self.max_workers == 1 or len(points) < 2:
            return [self.run_point(p) for p in points]
        with ThreadPoolExecutor(self.max_workers, "SweepPoint") as executor:
            return list(executor.map(self.run_point, points))


def _stage_label(sw_first: Optional[int], sw_last: Optional[int], preset_id: int) -> str:
    if sw_first is None or sw_last is None:
        return "hardware"
    cfg = build_preset(preset_id)
    return "+".join(s.name for s in cfg.stages[sw_first : sw_last + 1] if s.enabled)


def _one_based(index: Optional[int]) -> Optional[int]:
    return None if index is None else index + 1


def report_row(report: RunReport) -> Dict[str, object]:
    assert report.preset_id is not None
    return {
        "preset_id": report.preset_id,
        "sw_first": _one_based(report.sw_first),
        "sw_last": _one_based(report.sw_last),
        "buffer_items": report.buffer_items,
        "gated_fraction": report.gated_fraction,
        "underrun": report.underrun,
        "min_buffer": None,
        "boundary_rate": report.intervention_rate,
        "charged_rate": report.charged_rate,
        "block": _stage_label(report.sw_first, report.sw_last, report.preset_id),
        "streaming_gated_fraction": report.streaming_gated_fraction,
    }


def _frame(rows: List[Dict[str, object]]) -> pd.DataFrame:
    df = pd.DataFrame(rows)
    for col in ("sw_first", "sw_last", "min_buffer"):
        if col in df.columns:
            df[col] = df[col].astype("Int64")
    return df


def single_block_points(preset_id: int, buffers: Iterable[int], include_baseline: bool = True) -> List[SweepPoint]:
    cfg = build_preset(preset_id)
    points = []
    if include_baseline:
        points.append(SweepPoint(preset_id=preset_id))
    for idx, stage in enumerate(cfg.stages):
        if not stage.enabled:
            continue
        for b in buffers:
            points.append(SweepPoint(preset_id=preset_id, sw_first=idx, sw_last=idx, buffer_items=b))
    return points


def gated_sweep(
    preset_ids: Iterable[int],
    buffers: Sequence[int],
    cost: CostModel,
    packet: Optional[bytes] = None,
    dac_ring: int = DEFAULT_DAC_RING,
    jobs: int = 1,
) -> pd.DataFrame:
    """Gated fraction for every single enabled block in software at every buffer size,
    plus one all-hardware row per preset."""
    points: List[SweepPoint] = []
    for preset_id in preset_ids:
        points.extend(single_block_points(preset_id, buffers))
    logger.info(f"Running {len(points)} sweep points on {jobs} worker(s)")
    reports = SweepRunner(cost, packet, dac_ring, max_workers=jobs).run(points)
    return _frame([report_row(r) for r in reports])


def trend_violations(df: pd.DataFrame) -> List[str]:
    """Sweep rows that break the gating trends.

    At a fixed preset and buffer, a block with a higher charged rate must not be
    gated more. At a fixed block, a larger buffer must not be gated less.
    """
    blocks = df.dropna(subset=["sw_first"])
    found: List[str] = []
    for (preset_id, buffer_items), group in blocks.groupby(["preset_id", "buffer_items"]):
        rows = group.sort_values("charged_rate").to_dict("records")
        for i, a in enumerate(rows):
            for b in rows[i + 1 :]:
                if b["charged_rate"] > a["charged_rate"] and b["gated_fraction"] > a["gated_fraction"] + TREND_EPSILON:
                    found.append(
                        f"preset {preset_id} B={buffer_items}: {b['block']} charges more than {a['block']} "
                        f"but is gated {b['gated_fraction']:.4f} > {a['gated_fraction']:.4f}"
                    )
    for (preset_id, sw_first), group in blocks.groupby(["preset_id", "sw_first"]):
        group = group.sort_values("buffer_items")
        fractions = group["gated_fraction"].tolist()
        sizes = group["buffer_items"].tolist()
        for (b_lo, g_lo), (b_hi, g_hi) in zip(zip(sizes, fractions), zip(sizes[1:], fractions[1:])):
            if g_hi + TREND_EPSILON < g_lo:
                found.append(
                    f"preset {preset_id} stage {sw_first}: B={b_hi} gated {g_hi:.4f} < B={b_lo} gated {g_lo:.4f}"
                )
    return found


# ---------------------------------------------------------------------------
# Minimum buffer search
# ---------------------------------------------------------------------------


def find_min_buffer(underruns: Callable[[int], bool], cap: int = DEFAULT_BUFFER_CAP) -> Tuple[int, int]:
    """Smallest B in 1..cap with ``underruns(B)`` false, assuming underrun is monotone in B.

    Returns (B, number of trials).
    """
    if cap < 1:
        raise BufferSearchCapExceeded(cap)
    trials: Dict[int, bool] = {}

    def trial(b: int) -> bool:
        if b not in trials:
            trials[b] = underruns(b)
        return trials[b]

    lo, hi = 0, 1
    while trial(hi):
        if hi >= cap:
            raise BufferSearchCapExceeded(cap)
        lo, hi = hi, min(hi * 2, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if trial(mid):
            lo = mid
        else:
            hi = mid
    return hi, len(trials)


class MinBufferResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    preset_id: int
    sw_first: int
    sw_last: int
    block: str
    boundary_rate: float
    min_buffer: Optional[int]
    trials: int
    cap_exceeded: bool = False

    @property
    def censored(self) -> bool:
        """B* = 1 only says the real threshold is at or below one item."""
        return self.min_buffer == 1


def min_buffer_search(
    preset_id: int,
    sw_first: int,
    sw_last: int,
    cost: CostModel,
    packet: Optional[bytes] = None,
    cap: int = DEFAULT_BUFFER_CAP,
    dac_ring: int = DEFAULT_DAC_RING,
) -> MinBufferResult:
    """Raises BufferSearchCapExceeded when the segment underruns even at ``cap``."""
    cfg = build_preset(preset_id)
    packet = packet if packet is not None else random_packet()
    SplitPlan(sw_first=sw_first, sw_last=sw_last).validate_for(cfg)

    def underruns(b: int) -> bool:
        plan = SplitPlan(sw_first=sw_first, sw_last=sw_last, buffer_items=b)
        return simulate(cfg, plan, packet, cost, dac_ring=dac_ring).underrun

    label = _stage_label(sw_first, sw_last, preset_id)
    try:
        size, trials = find_min_buffer(underruns, cap)
    except BufferSearchCapExceeded as e:
        raise BufferSearchCapExceeded(cap, f"preset {preset_id}, software {label}") from e
    profile = rate_profile(cfg, get_preset(preset_id))
    rate = profile.rate_into(sw_first) + profile.rate_out_of(sw_last)
    logger.info(f"Preset {preset_id} {label}: minimum buffer {size} items at {rate:.0f} items/s ({trials} trials)")
    return MinBufferResult(
        preset_id=preset_id,
        sw_first=sw_first,
        sw_last=sw_last,
        block=label,
        boundary_rate=rate,
        min_buffer=size,
        trials=trials,
    )


def min_buffer_or_flag(
    preset_id: int,
    sw_first: int,
    sw_last: int,
    cost: CostModel,
    packet: Optional[bytes] = None,
    cap: int = DEFAULT_BUFFER_CAP,
    dac_ring: int = DEFAULT_DAC_RING,
) -> MinBufferResult:
    """Like min_buffer_search, but a segment that underruns even at ``cap`` comes back
    flagged with ``cap_exceeded`` and no size."""
    try:
        return min_buffer_search(preset_id, sw_first, sw_last, cost, packet, cap=cap, dac_ring=dac_ring)
    except BufferSearchCapExceeded as e:
        logger.warning(str(e))
        profile = rate_profile(build_preset(preset_id), get_preset(preset_id))
        return MinBufferResult(
            preset_id=preset_id,
            sw_first=sw_first,
            sw_last=sw_last,
            block=_stage_label(sw_first, sw_last, preset_id),
            boundary_rate=profile.rate_into(sw_first) + profile.rate_out_of(sw_last),
            min_buffer=None,
            trials=0,
            cap_exceeded=True,
        )


def min_buffer_table(
    pairs: Sequence[Tuple[int, int]],
    cost: CostModel,
    packet: Optional[bytes] = None,
    cap: int = DEFAULT_BUFFER_CAP,
    dac_ring: int = DEFAULT_DAC_RING,
    jobs: int = 1,
) -> pd.DataFrame:
    """One minimum-buffer search per (preset, 0-based stage) pair, single-block segments."""
    packet = packet if packet is not None else random_packet()

    def search(pair: Tuple[int, int]) -> MinBufferResult:
        return min_buffer_or_flag(pair[0], pair[1], pair[1], cost, packet, cap=cap, dac_ring=dac_ring)

    if jobs > 1:
        with ThreadPoolExecutor(jobs, "MinBuffer") as executor:
            results = list(executor.map(search, pairs))
    else:
        results = [search(p) for p in pairs]
    rows = [
        {
            "preset_id": r.preset_id,
            "sw_first": r.sw_first + 1,
            "sw_last": r.sw_last + 1,
            "buffer_items": None,
            "gated_fraction": None,
            "underrun": None,
            "min_buffer": r.min_buffer,
            "boundary_rate": r.boundary_rate,
            "block": r.block,
            "censored": r.censored,
            "cap_exceeded": r.cap_exceeded,
        }
        for r in results
    ]
    return _frame(rows)


def all_single_block_pairs(preset_ids: Iterable[int] = PRESET_IDS) -> List[Tuple[int, int]]:
    pairs = []
    for preset_id in preset_ids:
        cfg = build_preset(preset_id)
        pairs.extend((preset_id, i) for i, s in enumerate(cfg.stages) if s.enabled)
    return pairs


def rate_spaced_pairs() -> List[Tuple[int, int]]:
    return [(p, build_preset(p).index_of(kind)) for p, kind in RATE_SPACED_PAIRS]


# ---------------------------------------------------------------------------
# Power-law fit
# ---------------------------------------------------------------------------


class FitResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: float
    m: float
    r2: float
    n_points: int
    points: List[Tuple[float, float]] = []

    def predict(self, rate: float) -> float:
        return self.k * rate**self.m


def power_law_fit(points: Sequence[Tuple[float, float]]) -> FitResult:
    """Least-squares fit of size = k * rate ** m in log-log space."""
    if len(points) < 3:
        raise FitError(f"Need at least 3 points for a power-law fit, got {len(points)}")
    data = np.asarray(points, dtype=np.float64)
    if np.any(data <= 0) or not np.all(np.isfinite(data)):
        raise FitError("Power-law points must be finite and positive")
    x = np.log(data[:, 0])
    y = np.log(data[:, 1])
    if np.ptp(x) == 0:
        raise FitError("All points share one rate; the slope is undefined")
    m, c = np.polyfit(x, y, 1)
    residual = y - (m * x + c)
    ss_res = float(np.sum(residual**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(
        k=float(math.exp(c)),
        m=float(m),
        r2=r2,
        n_points=len(points),
        points=[(float(r), float(s)) for r, s in data],
    )


def load_synthetic_points(path: Optional[Union[str, Path]] = None) -> List[Tuple[float, float]]:
    path = Path(path) if path else SYNTHETIC_FIT_FILE
    try:
        with open(path, "r", encoding="utf-8") as f:
            spec = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise FitError(f"Cannot read synthetic dataset {path}: {e}") from e
    k, m = spec["k"], spec["m"]
    return [(float(r), k * float(r) ** m) for r in spec["rates"]]


def load_points_csv(path: Union[str, Path]) -> List[Tuple[float, float]]:
    """Read (rate, size) pairs from a CSV holding boundary_rate and min_buffer columns."""
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise FitError(f"Cannot read points from {path}: {e}") from e
    if not {"boundary_rate", "min_buffer"} <= set(df.columns):
        raise FitError(f"{path} needs boundary_rate and min_buffer columns")
    df = df.dropna(subset=["boundary_rate", "min_buffer"])
    if "censored" in df.columns:
        df = df[~df["censored"].astype(bool)]
    return list(zip(df["boundary_rate"].astype(float), df["min_buffer"].astype(float)))


def fit_min_buffer_table(table: pd.DataFrame) -> FitResult:
    usable = table.dropna(subset=["min_buffer"])
    if "censored" in usable.columns:
        usable = usable[~usable["censored"].astype(bool)]
    points = list(zip(usable["boundary_rate"].astype(float), usable["min_buffer"].astype(float)))
    return power_law_fit(points)


# ---------------------------------------------------------------------------
# Retrofit
# ---------------------------------------------------------------------------


class RetrofitScenario(BaseModel):
    """A standard whose unique blocks are missing from the accelerator and done in software."""

    model_config = ConfigDict(frozen=True)

    preset_id: int
    missing_blocks: FrozenSet[BlockKind]

    @classmethod
    def for_preset(cls, preset_id: int) -> "RetrofitScenario":
        modulation = get_preset(preset_id).modulation
        usage = enabled_blocks_by_modulation()
        others = frozenset().union(*(v for k, v in usage.items() if k != modulation))
        return cls(preset_id=preset_id, missing_blocks=usage[modulation] - others)

    def plan(self, buffer_items: int) -> SplitPlan:
        cfg = build_preset(self.preset_id)
        missing = [i for i, s in enumerate(cfg.stages) if s.kind in self.missing_blocks]
        if not missing:
            raise SplitPlanError(f"Preset {self.preset_id} has none of the blocks {sorted(self.missing_blocks)}")
        first, last = min(missing), max(missing)
        for stage in cfg.stages[first : last + 1]:
            if stage.enabled and stage.kind not in self.missing_blocks:
                raise SplitPlanError(
                    f"Missing blocks are not contiguous: {stage.name} sits between them in hardware"
                )
        for kind in self.missing_blocks:
            if not cfg.stage(kind).enabled:
                raise SplitPlanError(f"{DISPLAY_NAMES[kind]} is not used by preset {self.preset_id}")
        return SplitPlan(sw_first=first, sw_last=last, buffer_items=buffer_items)


def retrofit_run(
    scenario: RetrofitScenario,
    buffers: Sequence[int],
    cost: CostModel,
    packet: Optional[bytes] = None,
    dac_ring: int = DEFAULT_DAC_RING,
) -> pd.DataFrame:
    runner = SweepRunner(cost, packet, dac_ring)
    baseline = runner.run_point(SweepPoint(preset_id=scenario.preset_id))
    rows = []
    for b in buffers:
        plan = scenario.plan(b)
        point = SweepPoint(preset_id=scenario.preset_id, sw_first=plan.sw_first, sw_last=plan.sw_last, buffer_items=b)
        report = runner.run_point(point)
        row = report_row(report)
        row.update(
            {
                "modulation": get_preset(scenario.preset_id).modulation,
                "baseline_gated": baseline.gated_fraction,
                "delta": baseline.gated_fraction - report.gated_fraction,
                "iq_equal": report.output_digest == baseline.output_digest,
            }
        )
        rows.append(row)
    return _frame(rows)


def phase_survey(
    cost: CostModel,
    buffer_items: int = 256,
    packet: Optional[bytes] = None,
    preset_ids: Sequence[int] = (1, 4, 6),
    dac_ring: int = DEFAULT_DAC_RING,
) -> pd.DataFrame:
    """Where the CPU's cycles go for each standard's retrofit segment."""
    runner = SweepRunner(cost, packet, dac_ring)
    rows = []
    for preset_id in preset_ids:
        plan = RetrofitScenario.for_preset(preset_id).plan(buffer_items)
        report = runner.run_point(
            SweepPoint(preset_id=preset_id, sw_first=plan.sw_first, sw_last=plan.sw_last, buffer_items=buffer_items)
        )
        fractions = phase_report(report).fractions
        for phase in [p.value for p in Phase] + ["gated"]:
            rows.append(
                {
                    "preset_id": preset_id,
                    "modulation": get_preset(preset_id).modulation,
                    "buffer_items": buffer_items,
                    "phase": phase,
                    "fraction": fractions[phase],
                }
            )
    return pd.DataFrame(rows)


def rate_table(preset_ids: Iterable[int] = PRESET_IDS) -> pd.DataFrame:
    rows = []
    presets = {p.id: p for p in list_presets()}
    for preset_id in preset_ids:
        preset = presets[preset_id]
        profile = rate_profile(build_preset(preset_id), preset)
        for boundary in profile.boundaries:
            rows.append(
                {
                    "preset_id": preset_id,
                    "label": preset.label,
                    "boundary": boundary.index,
                    "after": "input" if boundary.after is None else DISPLAY_NAMES[boundary.after],
                    "items_per_s": boundary.items_per_s,
                    "width_bits": boundary.width_bits,
                    "bits_per_s": boundary.bits_per_s,
                }
            )
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _ordered_columns(df: pd.DataFrame) -> List[str]:
    known = [c for c in RESULT_COLUMNS if c in df.columns]
    return known + [c for c in df.columns if c not in known]


def export_results(
    tables: Mapping[str, pd.DataFrame],
    out_dir: Union[str, Path],
    plot: bool = True,
) -> List[Path]:
    """Write each table as <name>.csv (and a plot where one exists for that table)."""
    if not tables:
        raise ExportError("Nothing to export")
    for name, df in tables.items():
        if df is None or df.empty:
            raise ExportError(f"Table {name!r} is empty")
    out_dir = Path(out_dir)
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ExportError(f"Cannot create output directory: {e}", str(out_dir)) from e
    for name, df in tables.items():
        path = out_dir / f"{name}.csv"
        try:
            df[_ordered_columns(df)].to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        except OSError as e:
            raise ExportError(f"Cannot write table {name!r}: {e}", str(path)) from e
        written.append(path)
        logger.debug(f"Wrote {path}")
    if plot:
        from .plots import render_tables

        written.extend(render_tables(tables, out_dir))
    return written
