"""Preset definitions, pipeline configuration and end-to-end pipeline execution."""
import json
import logging
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .blocks import (
    DATA_DIR,
    UNIFIED_ORDER,
    BlockConfig,
    BlockKind,
    BlockProcessor,
    Stream,
    SymbolStream,
    concat_streams,
    make_processor,
    output_width,
    rate_multiplier,
)
from .errors import BlockConfigError, PipelineError, PresetMismatchError, UnknownPresetError

logger = logging.getLogger(__name__)

PRESETS_FILE = DATA_DIR / "presets.json"
PRESET_IDS = (1, 2, 3, 4, 5, 6)
DEFAULT_PACKET_BYTES = 16


class StandardPreset(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    band: str
    modulation: str
    data_rate: int
    symbol_rate: int
    sample_rate: int

    @property
    def label(self) -> str:
        return f"{self.modulation}-{self.band.split()[0]}"


class PipelineConfig(BaseModel):
    """Up to nine stages in unified order. Disabled stages pass data through."""

    model_config = ConfigDict(frozen=True)

    stages: Tuple[BlockConfig, ...]
    preset_name: Optional[str] = None
    preset_id: Optional[int] = None

    @model_validator(mode="after")
    def _unified_order(self) -> "PipelineConfig":
        if len(self.stages) > len(UNIFIED_ORDER):
            raise BlockConfigError(f"A pipeline holds at most {len(UNIFIED_ORDER)} stages")
        positions = [UNIFIED_ORDER.index(s.kind) for s in self.stages]
        if positions != sorted(set(positions)):
            raise BlockConfigError("Stages must be unique and follow the unified block order")
        return self

    def index_of(self, kind: BlockKind) -> int:
        for i, stage in enumerate(self.stages):
            if stage.kind == kind:
                return i
        raise KeyError(kind)

    def stage(self, kind: BlockKind) -> BlockConfig:
        return self.stages[self.index_of(kind)]

    @property
    def enabled_kinds(self) -> Tuple[BlockKind, ...]:
        return tuple(s.kind for s in self.stages if s.enabled)

    def with_stage(self, index: int, stage: BlockConfig) -> "PipelineConfig":
        stages = list(self.stages)
        stages[index] = stage
        return PipelineConfig(stages=tuple(stages), preset_name=self.preset_name, preset_id=self.preset_id)


class BoundaryRate(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    after: Optional[BlockKind]
    items_per_s: float
    width_bits: int

    @property
    def bits_per_s(self) -> float:
        return self.items_per_s * self.width_bits


class RateProfile(BaseModel):
    """Item rate at every stage boundary. Boundary 0 is the packet input,
    boundary i is the output of stage i."""

    model_config = ConfigDict(frozen=True)

    preset_id: Optional[int]
    boundaries: Tuple[BoundaryRate, ...]

    def rate_into(self, stage_index: int) -> float:
        return self.boundaries[stage_index].items_per_s

    def rate_out_of(self, stage_index: int) -> float:
        return self.boundaries[stage_index + 1].items_per_s

    @property
    def first(self) -> float:
        return self.boundaries[0].items_per_s

    @property
    def last(self) -> float:
        return self.boundaries[-1].items_per_s


@lru_cache(maxsize=None)
def _preset_data() -> dict:
    with open(PRESETS_FILE, "r", encoding="utf-8") as f:
        return json.load(f)


def list_presets() -> List[StandardPreset]:
    return [StandardPreset(**{k: v for k, v in p.items() if k != "overrides"}) for p in _preset_data()["presets"]]


def _preset_entry(preset_id: int) -> dict:
    for entry in _preset_data()["presets"]:
        if entry["id"] == preset_id:
            return entry
    raise UnknownPresetError(preset_id)


def get_preset(preset_id: int) -> StandardPreset:
    entry = _preset_entry(preset_id)
    return StandardPreset(**{k: v for k, v in entry.items() if k != "overrides"})


def modulation_stages(modulation: str) -> List[dict]:
    try:
        return _preset_data()["modulations"][modulation]
    except KeyError:
        raise PipelineError(f"No stage template for modulation {modulation!r}") from None


def enabled_blocks_by_modulation() -> Dict[str, frozenset]:
    return {
        name: frozenset(BlockKind(s["kind"]) for s in stages if s["enabled"])
        for name, stages in _preset_data()["modulations"].items()
    }


def build_preset(preset_id: int) -> PipelineConfig:
    entry = _preset_entry(preset_id)
    overrides = entry.get("overrides", {})
    stages = []
    for raw in modulation_stages(entry["modulation"]):
        params = {**raw.get("params", {}), **overrides.get(raw["kind"], {})}
        stages.append({**raw, "params": params})
    try:
        cfg = PipelineConfig(stages=stages, preset_name=get_preset(preset_id).label, preset_id=preset_id)
    except ValidationError as e:
        raise BlockConfigError(f"Preset {preset_id} is malformed: {e}") from e
    logger.debug(f"Built preset {preset_id} ({cfg.preset_name}): enabled {[k.value for k in cfg.enabled_kinds]}")
    return cfg


class StageChain:
    """A run of stages wired back to back as streaming processors.

    ``input_counts`` accumulates how many items each enabled stage consumed,
    which is what the CPU cost model charges DSP time against.
    """

    def __init__(self, stages: Sequence[BlockConfig]):
        self.stages = tuple(stages)
        self.processors: List[BlockProcessor] = [make_processor(s) for s in self.stages]
        self.input_counts: Dict[BlockKind, int] = {s.kind: 0 for s in self.stages if s.enabled}

    def _run_from(self, start: int, stream: Optional[Stream]) -> Optional[Stream]:
        for stage, proc in zip(self.stages[start:], self.processors[start:]):
            if stream is None:
                return None
            if stage.enabled:
                self.input_counts[stage.kind] += len(stream)
            stream = proc.process(stream)
        return stream

    def push(self, stream: Stream) -> Stream:
        out = self._run_from(0, stream)
        assert out is not None
        return out

    def drain(self) -> Optional[Stream]:
        """Flush every stage in order, pushing each tail through the stages after it."""
        tails = []
        for i, proc in enumerate(self.processors):
            tail = proc.flush()
            tails.append(self._run_from(i + 1, tail))
        return concat_streams(tails)

    def run(self, stream: Stream) -> Stream:
        out = concat_streams([self.push(stream), self.drain()])
        assert out is not None
        return out


def run_pipeline(cfg: PipelineConfig, packet: bytes) -> Stream:
    if not packet:
        raise PipelineError("Cannot modulate an empty packet")
    out = StageChain(cfg.stages).run(SymbolStream.from_bytes(packet))
    logger.debug(f"Pipeline {cfg.preset_name or 'custom'}: {len(packet)} bytes -> {len(out)} items")
    return out


def rate_profile(cfg: PipelineConfig, preset: StandardPreset) -> RateProfile:
    if cfg.preset_id is not None and cfg.preset_id != preset.id:
        raise PresetMismatchError(f"Pipeline was built for preset {cfg.preset_id}, not preset {preset.id}")
    rate = Fraction(preset.data_rate)
    width = 8
    boundaries = [BoundaryRate(index=0, after=None, items_per_s=float(rate), width_bits=width)]
    for i, stage in enumerate(cfg.stages):
        rate *= rate_multiplier(stage)
        width = output_width(stage, width)
        boundaries.append(BoundaryRate(index=i + 1, after=stage.kind, items_per_s=float(rate), width_bits=width))
    return RateProfile(preset_id=preset.id, boundaries=tuple(boundaries))


def random_packet(length: int = DEFAULT_PACKET_BYTES, seed: int = 0) -> bytes:
    if length < 1:
        raise PipelineError(f"Packet length must be >= 1, got {length}")
    return np.random.default_rng(seed).integers(0, 256, size=length, dtype=np.uint8).tobytes()


def load_pipeline_config(path) -> PipelineConfig:
    """A custom pipeline from JSON: {"preset_id": 1, "stages": [{"kind": ..., "enabled": ..., "params": {...}}]}."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise BlockConfigError(f"Cannot read pipeline config {path}: {e}") from e
    try:
        return PipelineConfig(**data)
    except ValidationError as e:
        raise BlockConfigError(f"Invalid pipeline config {path}: {e}") from e
