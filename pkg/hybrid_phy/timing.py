"""Discrete-event timing of a hybrid run.

The CPU replays the interposer event log and pays cycle costs per phase while
the accelerator side moves samples into the DAC ring. The DAC consumes one
sample per sample-clock tick once the ring has filled. Whenever the CPU waits
on the accelerator it is clock-gated, and that time is what the experiments
are about.
"""
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import simpy
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .blocks import DATA_DIR, UNIFIED_ORDER, BlockKind
from .errors import CostModelError
from .interposer import Direction, EventKind, HybridRun, SplitPlan, split_execute
from .pipeline import PipelineConfig, RateProfile, StandardPreset, get_preset, rate_profile

logger = logging.getLogger(__name__)

COST_MODEL_FILE = DATA_DIR / "cost_model.json"
DEFAULT_DAC_RING = 256


class CostModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cpu_hz: float = 1e9
    irq_latency_cycles: int = 7494
    cache_op_cycles: int = 2000
    dma_setup_cycles: int = 500
    copy_cycles_per_item: int = 2
    loop_cycles: int = 200
    init_cycles: int = 50000
    end_cycles: int = 5000
    dsp_enabled: bool = True
    dsp_cycles_per_item: Dict[BlockKind, int] = {k: 0 for k in UNIFIED_ORDER}

    @field_validator("cpu_hz")
    @classmethod
    def _positive_clock(cls, v: float) -> float:
        if v <= 0:
            raise CostModelError(f"cpu_hz must be positive, got {v}")
        return v

    @field_validator(
        "irq_latency_cycles",
        "cache_op_cycles",
        "dma_setup_cycles",
        "copy_cycles_per_item",
        "loop_cycles",
        "init_cycles",
        "end_cycles",
    )
    @classmethod
    def _nonnegative(cls, v: int) -> int:
        if v < 0:
            raise CostModelError(f"Cycle costs must be non-negative, got {v}")
        return v

    @field_validator("dsp_cycles_per_item")
    @classmethod
    def _complete_dsp_table(cls, v: Dict[BlockKind, int]) -> Dict[BlockKind, int]:
        if any(c < 0 for c in v.values()):
            raise CostModelError("DSP cycle costs must be non-negative")
        return {k: v.get(k, 0) for k in UNIFIED_ORDER}

    def dsp_cycles(self, items: Dict[BlockKind, int]) -> Dict[BlockKind, float]:
        if not self.dsp_enabled:
            return {k: 0.0 for k in items}
        return {k: float(self.dsp_cycles_per_item[k] * n) for k, n in items.items()}

    def with_overrides(self, **overrides) -> "CostModel":
        return CostModel(**{**self.model_dump(), **overrides})


def load_cost_model(path: Optional[Union[str, Path]] = None) -> CostModel:
    """Bundled defaults, optionally overlaid with a user JSON file."""
    with open(COST_MODEL_FILE, "r", encoding="utf-8") as f:
        data = json.load(f)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                user = json.load(f)
        except OSError as e:
            raise CostModelError(f"Cannot read cost model {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise CostModelError(f"Cost model {path} is not valid JSON: {e}") from e
        dsp = {**data.get("dsp_cycles_per_item", {}), **user.pop("dsp_cycles_per_item", {})}
        data.update(user)
        data["dsp_cycles_per_item"] = dsp
    try:
        return CostModel(**data)
    except ValidationError as e:
        raise CostModelError(f"Invalid cost model: {e}") from e


class Phase(str, Enum):
    INIT = "init"
    LOOP = "loop"
    IRQ = "irq"
    READ = "read"
    DSP = "dsp"
    WRITE = "write"
    END = "end"


# Phases the CPU pays for between init and end
STREAMING_PHASES = (Phase.LOOP, Phase.IRQ, Phase.READ, Phase.DSP, Phase.WRITE)


class PhaseAccount(BaseModel):
    cycles: Dict[Phase, float]
    gated_cycles: float
    dsp_by_kind: Dict[BlockKind, float] = {}
    read_breakdown: Dict[str, float] = {}
    write_breakdown: Dict[str, float] = {}

    @property
    def total_cycles(self) -> float:
        return sum(self.cycles.values()) + self.gated_cycles


class RunReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    preset_id: Optional[int]
    sw_first: Optional[int]
    sw_last: Optional[int]
    buffer_items: int
    dac_ring: int
    underrun: bool
    underrun_ticks: int
    first_underrun_s: Optional[float]
    total_cycles: float
    gated_fraction: float
    streaming_gated_fraction: float
    phases: PhaseAccount
    rates: RateProfile
    intervention_rate: Optional[float]
    # CPU cycles charged outside init/end, per second of DAC output
    charged_rate: float
    output_items: int
    output_digest: str
    reads: int
    writes: int


class PhaseBreakdown(BaseModel):
    fractions: Dict[str, float]
    dsp_share: Dict[BlockKind, float]
    read_share: Dict[str, float]
    write_share: Dict[str, float]


@dataclass(frozen=True)
class TimelineEntry:
    start: float
    phase: str
    cycles: float


@dataclass(frozen=True)
class _CpuOp:
    kind: str
    size: int = 0
    released: int = 0
    dsp: Optional[Dict[BlockKind, int]] = None


def _cpu_ops(run: HybridRun) -> List[_CpuOp]:
    releases = run.released_per_write()
    ops: List[_CpuOp] = []
    writes = 0
    for ev in run.events:
        if ev.kind == EventKind.CACHE_INVALIDATE and ev.direction == Direction.TO_CPU:
            ops.append(_CpuOp("read", size=ev.size_items))
        elif ev.kind == EventKind.DSP:
            ops.append(_CpuOp("dsp", size=ev.size_items, dsp=dict(ev.dsp_items)))
        elif ev.kind == EventKind.CACHE_FLUSH and ev.direction == Direction.FROM_CPU:
            ops.append(_CpuOp("write", size=ev.size_items, released=releases[writes]))
            writes += 1
        elif ev.kind == EventKind.END:
            ops.append(_CpuOp("finish", released=sum(releases[writes:])))
    return ops


class Simulator:
    def __init__(
        self,
        cfg: PipelineConfig,
        plan: SplitPlan,
        packet: bytes,
        cost: CostModel,
        dac_ring: int = DEFAULT_DAC_RING,
        preset: Optional[StandardPreset] = None,
        logger_instance: Optional[logging.Logger] = None,
    ):
        self.logger = logger_instance or logger
        if preset is None:
            if cfg.preset_id is None:
                raise CostModelError("A custom pipeline needs an explicit preset for its sample clock")
            preset = get_preset(cfg.preset_id)
        if cost.cpu_hz <= preset.sample_rate:
            raise CostModelError(
                f"CPU clock {cost.cpu_hz:g} Hz must exceed the sample clock {preset.sample_rate} Hz"
            )
        if dac_ring < 1:
            raise CostModelError(f"DAC ring must hold at least one sample, got {dac_ring}")
        self.cfg = cfg
        self.plan = plan
        self.packet = packet
        self.cost = cost
        self.dac_ring = dac_ring
        self.preset = preset
        self.timeline: List[TimelineEntry] = []
        self.hybrid: Optional[HybridRun] = None

    # -- helpers -----------------------------------------------------------

    def _busy(self, phase: Phase, cycles: float):
        if cycles <= 0:
            return
        self.timeline.append(TimelineEntry(self.env.now, phase.value, cycles))
        self.phase_cycles[phase] += cycles
        yield self.env.timeout(cycles)

    def _sleep(self, event):
        start = self.env.now
        value = yield event
        slept = self.env.now - start
        if slept > 0:
            self.timeline.append(TimelineEntry(start, "gated", slept))
            self.gated += slept
        return value

    # -- processes ---------------------------------------------------------

    def _cpu(self, ops: List[_CpuOp]):
        c = self.cost
        yield from self._busy(Phase.INIT, c.init_cycles)
        if self.plan.is_hardware_only:
            self.inbound.put((self.total, None))
        for op in ops:
            if op.kind == "read":
                yield from self._busy(Phase.LOOP, c.loop_cycles)
                copy = c.copy_cycles_per_item * op.size
                self.read_breakdown["cache"] += c.cache_op_cycles
                self.read_breakdown["copy"] += copy
                yield from self._busy(Phase.READ, c.cache_op_cycles + copy)
            elif op.kind == "dsp":
                per_kind = c.dsp_cycles(op.dsp or {})
                for kind, cycles in per_kind.items():
                    self.dsp_by_kind[kind] = self.dsp_by_kind.get(kind, 0.0) + cycles
                yield from self._busy(Phase.DSP, sum(per_kind.values()))
            elif op.kind == "write":
                yield from self._busy(Phase.LOOP, c.loop_cycles)
                request = self.free_slots.get()
                if request.triggered:
                    slot = yield request
                else:
                    slot = yield from self._sleep(request)
                    yield from self._busy(Phase.IRQ, c.irq_latency_cycles)
                copy = c.copy_cycles_per_item * op.size
                self.write_breakdown["cache"] += c.cache_op_cycles
                self.write_breakdown["dma_setup"] += c.dma_setup_cycles
                self.write_breakdown["copy"] += copy
                yield from self._busy(Phase.WRITE, c.cache_op_cycles + c.dma_setup_cycles + copy)
                self.inbound.put((op.released, slot))
            elif op.kind == "finish":
                yield from self._busy(Phase.LOOP, c.loop_cycles)
                if op.released:
                    self.inbound.put((op.released, None))
        if not self.dac_done.triggered:
            yield from self._sleep(self.dac_done)
        yield from self._busy(Phase.END, c.irq_latency_cycles + c.end_cycles)

    def _downstream(self):
        while True:
            count, slot = yield self.inbound.get()
            remaining = count
            while remaining:
                space = self.ring.capacity - self.ring.level
                amount = min(space, remaining) if space > 0 else 1
                yield self.ring.put(amount)
                remaining -= amount
                self.released += amount
                if not self.warm.triggered and (self.ring.level >= self.ring.capacity or self.released >= self.total):
                    self.warm.succeed()
            if slot is not None:
                yield self.free_slots.put(slot)

    def _dac(self):
        yield self.warm
        period = self.cost.cpu_hz / self.preset.sample_rate
        start = self.env.now
        tick = 0
        consumed = 0
        while consumed < self.total:
            due = start + tick * period
            if self.env.now < due:
                yield self.env.timeout(due - self.env.now)
            if self.ring.level == 0:
                self.underrun_ticks += 1
                if self.first_underrun is None:
                    self.first_underrun = self.env.now
                yield self.ring.get(1)
                tick = math.ceil((self.env.now - start) / period - 1e-9)
                due = start + tick * period
                if self.env.now < due:
                    yield self.env.timeout(due - self.env.now)
            else:
                yield self.ring.get(1)
            consumed += 1
            tick += 1
        self.dac_done.succeed(self.env.now)

    # -- entry point -------------------------------------------------------

    def run(self) -> RunReport:
        self.hybrid = split_execute(self.cfg, self.plan, self.packet, logger_instance=self.logger)
        output = self.hybrid.output
        self.total = len(output)

        self.env = simpy.Environment()
        self.ring = simpy.Container(self.env, capacity=self.dac_ring, init=0)
        self.free_slots = simpy.Store(self.env, capacity=2)
        self.free_slots.items.extend([0, 1])
        self.inbound = simpy.Store(self.env)
        self.warm = self.env.event()
        self.dac_done = self.env.event()
        self.released = 0
        self.underrun_ticks = 0
        self.first_underrun: Optional[float] = None
        self.gated = 0.0
        self.phase_cycles: Dict[Phase, float] = {p: 0.0 for p in Phase}
        self.dsp_by_kind: Dict[BlockKind, float] = {}
        self.read_breakdown = {"cache": 0.0, "copy": 0.0}
        self.write_breakdown = {"cache": 0.0, "dma_setup": 0.0, "copy": 0.0}

        cpu = self.env.process(self._cpu(_cpu_ops(self.hybrid)))
        self.env.process(self._downstream())
        self.env.process(self._dac())
        self.env.run(until=cpu)

        total_cycles = float(self.env.now)
        streaming = total_cycles - self.phase_cycles[Phase.INIT] - self.phase_cycles[Phase.END]
        charged = sum(self.phase_cycles[p] for p in STREAMING_PHASES)
        air_time = self.total / self.preset.sample_rate
        profile = rate_profile(self.cfg, self.preset)
        account = PhaseAccount(
            cycles=dict(self.phase_cycles),
            gated_cycles=self.gated,
            dsp_by_kind=self.dsp_by_kind,
            read_breakdown=self.read_breakdown,
            write_breakdown=self.write_breakdown,
        )
        report = RunReport(
            preset_id=self.preset.id,
            sw_first=self.plan.sw_first,
            sw_last=self.plan.sw_last,
            buffer_items=self.plan.buffer_items,
            dac_ring=self.dac_ring,
            underrun=self.underrun_ticks > 0,
            underrun_ticks=self.underrun_ticks,
            first_underrun_s=None if self.first_underrun is None else self.first_underrun / self.cost.cpu_hz,
            total_cycles=total_cycles,
            gated_fraction=self.gated / total_cycles if total_cycles else 0.0,
            streaming_gated_fraction=self.gated / streaming if streaming > 0 else 1.0,
            phases=account,
            rates=profile,
            intervention_rate=intervention_rate(profile, self.plan),
            charged_rate=charged / air_time if air_time else 0.0,
            output_items=self.total,
            output_digest=output.digest(),
            reads=self.hybrid.reads,
            writes=self.hybrid.writes,
        )
        self.logger.debug(
            f"Simulated {self.plan.describe(self.cfg)} on preset {self.preset.id}: "
            f"gated {report.gated_fraction:.4f}, underrun {report.underrun}"
        )
        return report

    def write_timeline(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for entry in self.timeline:
                f.write(json.dumps({"start": entry.start, "phase": entry.phase, "cycles": entry.cycles}) + "\n")


def intervention_rate(profile: RateProfile, plan: SplitPlan) -> Optional[float]:
    """Items per second crossing the interposer, both directions together."""
    if plan.is_hardware_only:
        return None
    assert plan.sw_first is not None and plan.sw_last is not None
    return profile.rate_into(plan.sw_first) + profile.rate_out_of(plan.sw_last)


def simulate(
    cfg: PipelineConfig,
    plan: SplitPlan,
    packet: bytes,
    cost: CostModel,
    dac_ring: int = DEFAULT_DAC_RING,
    preset: Optional[StandardPreset] = None,
) -> RunReport:
    return Simulator(cfg, plan, packet, cost, dac_ring=dac_ring, preset=preset).run()


def phase_report(report: RunReport) -> PhaseBreakdown:
    total = report.total_cycles or 1.0
    account = report.phases
    fractions = {p.value: c / total for p, c in account.cycles.items()}
    fractions["gated"] = account.gated_cycles / total
    dsp_total = sum(account.dsp_by_kind.values())
    read_total = sum(account.read_breakdown.values())
    write_total = sum(account.write_breakdown.values())
    return PhaseBreakdown(
        fractions=fractions,
        dsp_share={k: (v / dsp_total if dsp_total else 0.0) for k, v in account.dsp_by_kind.items()},
        read_share={k: (v / read_total if read_total else 0.0) for k, v in account.read_breakdown.items()},
        write_share={k: (v / write_total if write_total else 0.0) for k, v in account.write_breakdown.items()},
    )


def phase_shares(report: RunReport) -> List[Tuple[str, float]]:
    """Phase fractions in display order, gated last."""
    breakdown = phase_report(report)
    return [(p.value, breakdown.fractions[p.value]) for p in Phase] + [("gated", breakdown.fractions["gated"])]
