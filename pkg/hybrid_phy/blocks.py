"""The nine accelerator blocks of the unified transmit pipeline.

Every block exists twice: as a stateful streaming processor (``process`` a
chunk, ``flush`` at end of packet) and as a pure function that runs a fresh
processor over a whole stream. Feeding a processor any chunking of a stream
gives exactly the batch output, which is what lets a contiguous run of blocks
move between the accelerator and the CPU without changing a single sample.
"""
import hashlib
import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import BlockConfigError

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
FIR_TAP_COUNT = 41
FIR_HISTORY = FIR_TAP_COUNT - 1
PN9_DEFAULT_SEED = 0x1FF
IQ_WIDTH_BITS = 32


class BlockKind(str, Enum):
    SPLITTER = "splitter"
    PN9 = "pn9"
    CLOCK = "clock"
    DIFFENC = "diffenc"
    CHIP = "chip"
    MAPPER = "mapper"
    FIR = "fir"
    ZPAD = "zpad"
    OFFSET = "offset"


UNIFIED_ORDER: Tuple[BlockKind, ...] = tuple(BlockKind)

DISPLAY_NAMES = {
    BlockKind.SPLITTER: "Splitter",
    BlockKind.PN9: "PN9",
    BlockKind.CLOCK: "Clock",
    BlockKind.DIFFENC: "Diffenc",
    BlockKind.CHIP: "Chip",
    BlockKind.MAPPER: "Mapper",
    BlockKind.FIR: "FIR",
    BlockKind.ZPAD: "Zpad",
    BlockKind.OFFSET: "Offset",
}


# ---------------------------------------------------------------------------
# Streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolStream:
    """Small unsigned symbols, one per uint8 item. Width 8 means raw bytes."""

    items: np.ndarray
    width: int = 8

    def __post_init__(self):
        if self.width not in (1, 2, 4, 8):
            raise BlockConfigError(f"Unsupported symbol width {self.width}")
        items = np.asarray(self.items, dtype=np.uint8).reshape(-1)
        if self.width < 8 and items.size and int(items.max()) >= (1 << self.width):
            raise BlockConfigError(f"Symbol value out of range for width {self.width}")
        object.__setattr__(self, "items", items)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SymbolStream":
        return cls(np.frombuffer(bytes(data), dtype=np.uint8).copy(), 8)

    @classmethod
    def empty(cls, width: int) -> "SymbolStream":
        return cls(np.zeros(0, dtype=np.uint8), width)

    @property
    def width_bits(self) -> int:
        return self.width

    def __len__(self) -> int:
        return int(self.items.size)

    def slice(self, start: int, stop: int) -> "SymbolStream":
        return SymbolStream(self.items[start:stop], self.width)

    def digest(self) -> str:
        return hashlib.sha256(bytes([self.width]) + self.items.tobytes()).hexdigest()

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SymbolStream)
            and self.width == other.width
            and np.array_equal(self.items, other.items)
        )


@dataclass(frozen=True)
class IQStream:
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.complex128).reshape(-1))

    @classmethod
    def empty(cls) -> "IQStream":
        return cls(np.zeros(0, dtype=np.complex128))

    @property
    def width_bits(self) -> int:
        return IQ_WIDTH_BITS

    def __len__(self) -> int:
        return int(self.samples.size)

    def slice(self, start: int, stop: int) -> "IQStream":
        return IQStream(self.samples[start:stop])

    def digest(self) -> str:
        return hashlib.sha256(self.samples.astype("<c16").tobytes()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, IQStream) and np.array_equal(self.samples, other.samples)


Stream = Union[SymbolStream, IQStream]


def concat_streams(streams: Sequence[Optional[Stream]]) -> Optional[Stream]:
    parts = [s for s in streams if s is not None]
    if not parts:
        return None
    first = parts[0]
    if isinstance(first, IQStream):
        if not all(isinstance(p, IQStream) for p in parts):
            raise BlockConfigError("Cannot concatenate IQ and symbol streams")
        return IQStream(np.concatenate([p.samples for p in parts]))
    if not all(isinstance(p, SymbolStream) and p.width == first.width for p in parts):
        raise BlockConfigError("Cannot concatenate streams of different widths")
    return SymbolStream(np.concatenate([p.items for p in parts]), first.width)


def _expect_symbols(stream: Stream, kind: BlockKind, widths: Sequence[int]) -> np.ndarray:
    if not isinstance(stream, SymbolStream) or stream.width not in widths:
        got = "IQ samples" if isinstance(stream, IQStream) else f"width-{stream.width} symbols"
        raise BlockConfigError(f"{DISPLAY_NAMES[kind]} expects width {list(widths)} symbols, got {got}")
    return stream.items


def _expect_iq(stream: Stream, kind: BlockKind) -> np.ndarray:
    if not isinstance(stream, IQStream):
        raise BlockConfigError(f"{DISPLAY_NAMES[kind]} expects IQ samples, got width-{stream.width} symbols")
    return stream.samples


# ---------------------------------------------------------------------------
# Bundled data
# ---------------------------------------------------------------------------


def _resolve_data_file(name: str, prefix: str) -> Path:
    bundled = DATA_DIR / f"{prefix}_{name}.txt"
    if bundled.exists():
        return bundled
    path = Path(name)
    if path.exists():
        return path
    raise BlockConfigError(f"No bundled {prefix} table named {name!r} and no such file")


def _data_lines(path: Path) -> List[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [ln.strip() for ln in f if ln.strip() and not ln.lstrip().startswith("#")]


@lru_cache(maxsize=None)
def load_chip_table(name: str) -> np.ndarray:
    """Load a chip table: one row per symbol value, chip c0 first."""
    path = _resolve_data_file(name, "chips")
    rows = _data_lines(path)
    if not rows:
        raise BlockConfigError(f"Chip table {path} is empty")
    if len({len(r) for r in rows}) != 1:
        raise BlockConfigError(f"Chip table {path} has rows of unequal length")
    if any(set(r) - {"0", "1"} for r in rows):
        raise BlockConfigError(f"Chip table {path} contains characters other than 0 and 1")
    table = np.array([[int(c) for c in r] for r in rows], dtype=np.uint8)
    table.setflags(write=False)
    logger.debug(f"Loaded chip table {path.name}: {table.shape[0]} symbols x {table.shape[1]} chips")
    return table


@lru_cache(maxsize=None)
def load_taps(name: str) -> Tuple[float, ...]:
    path = _resolve_data_file(name, "taps")
    try:
        taps = tuple(float(v) for v in _data_lines(path))
    except ValueError as e:
        raise BlockConfigError(f"Tap file {path} contains a non-numeric value") from e
    if len(taps) != FIR_TAP_COUNT:
        raise BlockConfigError(f"Tap file {path} holds {len(taps)} taps, expected {FIR_TAP_COUNT}")
    return taps


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class _Params(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SplitterParams(_Params):
    kind: Literal["splitter"] = "splitter"
    mode: Literal["bits", "nibbles"] = "bits"


class Pn9Params(_Params):
    kind: Literal["pn9"] = "pn9"
    seed: int = PN9_DEFAULT_SEED

    @field_validator("seed")
    @classmethod
    def _nonzero_seed(cls, v: int) -> int:
        if not 0 < v < 512:
            raise BlockConfigError(f"PN9 seed must be a non-zero 9-bit value, got {v}")
        return v


class ClockParams(_Params):
    kind: Literal["clock"] = "clock"
    start: int = 0

    @field_validator("start")
    @classmethod
    def _quadrant(cls, v: int) -> int:
        if v not in (0, 1, 2, 3):
            raise BlockConfigError(f"Clock start state must be 0..3, got {v}")
        return v


class DiffencParams(_Params):
    kind: Literal["diffenc"] = "diffenc"
    initial: int = 0

    @field_validator("initial")
    @classmethod
    def _bit(cls, v: int) -> int:
        if v not in (0, 1):
            raise BlockConfigError(f"Differential encoder initial state must be 0 or 1, got {v}")
        return v


class ChipParams(_Params):
    kind: Literal["chip"] = "chip"
    table: str = "oqpsk"

    @field_validator("table")
    @classmethod
    def _loadable(cls, v: str) -> str:
        load_chip_table(v)
        return v


class MapperParams(_Params):
    kind: Literal["mapper"] = "mapper"
    constellation: Literal["bipolar", "oqpsk_interleave", "quadrant"] = "bipolar"
    hold: int = 1

    @field_validator("hold")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise BlockConfigError(f"Mapper hold must be >= 1, got {v}")
        return v


class FirParams(_Params):
    kind: Literal["fir"] = "fir"
    taps_file: Optional[str] = "half_sine"
    taps: Optional[Tuple[float, ...]] = None
    normalize: bool = False
    flush_tail: bool = False

    @model_validator(mode="after")
    def _resolve_taps(self) -> "FirParams":
        if self.taps is None:
            if self.taps_file is None:
                raise BlockConfigError("FIR needs either taps or taps_file")
            object.__setattr__(self, "taps", load_taps(self.taps_file))
        elif len(self.taps) != FIR_TAP_COUNT:
            raise BlockConfigError(f"FIR needs exactly {FIR_TAP_COUNT} taps, got {len(self.taps)}")
        return self

    def effective_taps(self) -> np.ndarray:
        taps = np.asarray(self.taps, dtype=np.float64)
        if self.normalize:
            norm = math.fsum(abs(t) for t in self.taps)
            if norm == 0:
                raise BlockConfigError("Cannot normalize an all-zero tap set")
            taps = taps / norm
        return taps


class ZpadParams(_Params):
    kind: Literal["zpad"] = "zpad"
    n_zeros: int = 1
    every_m: int = 1

    @model_validator(mode="after")
    def _check(self) -> "ZpadParams":
        if self.every_m < 1:
            raise BlockConfigError(f"Zero-pad period must be >= 1, got {self.every_m}")
        if self.n_zeros < 0:
            raise BlockConfigError(f"Zero-pad count must be >= 0, got {self.n_zeros}")
        return self


class OffsetParams(_Params):
    kind: Literal["offset"] = "offset"
    delay: int = 1

    @field_validator("delay")
    @classmethod
    def _nonnegative(cls, v: int) -> int:
        if v < 0:
            raise BlockConfigError(f"Offset delay must be >= 0, got {v}")
        return v


BlockParams = Annotated[
    Union[
        SplitterParams,
        Pn9Params,
        ClockParams,
        DiffencParams,
        ChipParams,
        MapperParams,
        FirParams,
        ZpadParams,
        OffsetParams,
    ],
    Field(discriminator="kind"),
]


class BlockConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: BlockKind
    enabled: bool = True
    params: BlockParams

    @model_validator(mode="before")
    @classmethod
    def _tag_params(cls, data):
        if isinstance(data, dict) and "kind" in data:
            params = data.get("params")
            if params is None or isinstance(params, dict):
                params = dict(params or {})
                params.setdefault("kind", BlockKind(data["kind"]).value)
                data = {**data, "params": params}
        return data

    @model_validator(mode="after")
    def _kinds_agree(self) -> "BlockConfig":
        if self.params.kind != self.kind.value:
            raise BlockConfigError(f"Parameters for {self.params.kind} attached to a {self.kind.value} block")
        return self

    @classmethod
    def of(cls, kind: BlockKind, enabled: bool = True, **params) -> "BlockConfig":
        return cls(kind=kind, enabled=enabled, params=params)

    @property
    def name(self) -> str:
        return DISPLAY_NAMES[self.kind]


def output_width(cfg: BlockConfig, input_width: int) -> int:
    """Width in bits of one output item, given the width of one input item."""
    if not cfg.enabled:
        return input_width
    p = cfg.params
    if isinstance(p, SplitterParams):
        return 1 if p.mode == "bits" else 4
    if isinstance(p, ClockParams):
        return 2
    if isinstance(p, (Pn9Params, DiffencParams, ChipParams)):
        return 1
    return IQ_WIDTH_BITS


def rate_multiplier(cfg: BlockConfig) -> Fraction:
    """Output items per input item, exactly."""
    if not cfg.enabled:
        return Fraction(1)
    p = cfg.params
    if isinstance(p, SplitterParams):
        return Fraction(8 if p.mode == "bits" else 2)
    if isinstance(p, ChipParams):
        return Fraction(load_chip_table(p.table).shape[1])
    if isinstance(p, MapperParams):
        per_symbol = Fraction(1, 2) if p.constellation == "oqpsk_interleave" else Fraction(1)
        return per_symbol * p.hold
    if isinstance(p, ZpadParams):
        return Fraction(p.every_m + p.n_zeros, p.every_m)
    return Fraction(1)


# ---------------------------------------------------------------------------
# Streaming processors
# ---------------------------------------------------------------------------


class BlockProcessor:
    """One block instance holding whatever state must survive a chunk boundary."""

    kind: Optional[BlockKind] = None

    def process(self, stream: Stream) -> Stream:
        raise NotImplementedError

    def flush(self) -> Optional[Stream]:
        """Emit anything held back at end of packet. None when nothing is held."""
        return None


class PassThrough(BlockProcessor):
    def __init__(self, kind: Optional[BlockKind] = None):
        self.kind = kind

    def process(self, stream: Stream) -> Stream:
        return stream


class SplitterProcessor(BlockProcessor):
    kind = BlockKind.SPLITTER

    def __init__(self, params: SplitterParams):
        self.mode = params.mode

    def process(self, stream: Stream) -> Stream:
        data = _expect_symbols(stream, self.kind, (8,))
        if self.mode == "bits":
            return SymbolStream(np.unpackbits(data, bitorder="little"), 1)
        nibbles = np.stack([data & 0x0F, data >> 4], axis=1).reshape(-1)
        return SymbolStream(nibbles, 4)


class Pn9Processor(BlockProcessor):
    kind = BlockKind.PN9

    def __init__(self, params: Pn9Params):
        self.state = params.seed

    def process(self, stream: Stream) -> Stream:
        bits = _expect_symbols(stream, self.kind, (1,))
        out = np.empty(bits.size, dtype=np.uint8)
        s = self.state
        for i, b in enumerate(bits):
            out[i] = b ^ (s & 1)
            fb = (s ^ (s >> 5)) & 1
            s = (s >> 1) | (fb << 8)
        self.state = s
        return SymbolStream(out, 1)


class ClockProcessor(BlockProcessor):
    kind = BlockKind.CLOCK

    def __init__(self, params: ClockParams):
        self.state = params.start

    def process(self, stream: Stream) -> Stream:
        bits = _expect_symbols(stream, self.kind, (1,))
        steps = 2 * bits.astype(np.int64) - 1
        quadrants = np.mod(self.state + np.cumsum(steps), 4).astype(np.uint8)
        if quadrants.size:
            self.state = int(quadrants[-1])
        return SymbolStream(quadrants, 2)


class DiffencProcessor(BlockProcessor):
    kind = BlockKind.DIFFENC

    def __init__(self, params: DiffencParams):
        self.state = params.initial

    def process(self, stream: Stream) -> Stream:
        bits = _expect_symbols(stream, self.kind, (1,))
        encoded = np.bitwise_xor.accumulate(np.concatenate([[self.state], bits]).astype(np.uint8))[1:]
        if encoded.size:
            self.state = int(encoded[-1])
        return SymbolStream(encoded, 1)


class ChipProcessor(BlockProcessor):
    kind = BlockKind.CHIP

    def __init__(self, params: ChipParams):
        self.table = load_chip_table(params.table)

    def process(self, stream: Stream) -> Stream:
        n_symbols = self.table.shape[0]
        widths = [w for w in (1, 2, 4, 8) if (1 << w) >= n_symbols]
        symbols = _expect_symbols(stream, self.kind, widths)
        if symbols.size and int(symbols.max()) >= n_symbols:
            raise BlockConfigError(
                f"Symbol {int(symbols.max())} has no row in a {n_symbols}-entry chip table"
            )
        return SymbolStream(self.table[symbols].reshape(-1), 1)


_QUADRANT_POINTS = np.array([1 + 0j, 0 + 1j, -1 + 0j, 0 - 1j], dtype=np.complex128)


class MapperProcessor(BlockProcessor):
    kind = BlockKind.MAPPER

    def __init__(self, params: MapperParams):
        self.constellation = params.constellation
        self.hold = params.hold
        self.carry: Optional[int] = None

    def _held(self, i: np.ndarray, q: np.ndarray) -> IQStream:
        out = np.empty(i.size, dtype=np.complex128)
        out.real = i
        out.imag = q
        if self.hold > 1:
            out = np.repeat(out, self.hold)
        return IQStream(out)

    def process(self, stream: Stream) -> Stream:
        if self.constellation == "quadrant":
            symbols = _expect_symbols(stream, self.kind, (2,))
            points = _QUADRANT_POINTS[symbols]
            return self._held(points.real, points.imag)
        chips = _expect_symbols(stream, self.kind, (1,)).astype(np.float64)
        if self.constellation == "bipolar":
            return self._held(2 * chips - 1, np.zeros(chips.size))
        if self.carry is not None:
            chips = np.concatenate([[float(self.carry)], chips])
            self.carry = None
        if chips.size % 2:
            self.carry = int(chips[-1])
            chips = chips[:-1]
        return self._held(2 * chips[0::2] - 1, 2 * chips[1::2] - 1)

    def flush(self) -> Optional[Stream]:
        if self.carry is None:
            return None
        i = np.array([2.0 * self.carry - 1])
        self.carry = None
        return self._held(i, np.zeros(1))


class FirProcessor(BlockProcessor):
    """41-tap real FIR applied to I and Q separately, direct form."""

    kind = BlockKind.FIR

    def __init__(self, params: FirParams):
        self.taps = params.effective_taps()
        self.flush_tail = params.flush_tail
        self.history_i = np.zeros(FIR_HISTORY)
        self.history_q = np.zeros(FIR_HISTORY)

    def _filter(self, rail: np.ndarray, history: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = rail.size
        ext = np.concatenate([history, rail])
        y = np.zeros(n)
        for k in range(FIR_TAP_COUNT):
            y += self.taps[k] * ext[FIR_HISTORY - k : FIR_HISTORY - k + n]
        return y, ext[-FIR_HISTORY:]

    def process(self, stream: Stream) -> Stream:
        samples = _expect_iq(stream, self.kind)
        yi, self.history_i = self._filter(samples.real.copy(), self.history_i)
        yq, self.history_q = self._filter(samples.imag.copy(), self.history_q)
        out = np.empty(samples.size, dtype=np.complex128)
        out.real = yi
        out.imag = yq
        return IQStream(out)

    def flush(self) -> Optional[Stream]:
        if not self.flush_tail:
            return None
        return self.process(IQStream(np.zeros(FIR_HISTORY, dtype=np.complex128)))


class ZpadProcessor(BlockProcessor):
    kind = BlockKind.ZPAD

    def __init__(self, params: ZpadParams):
        self.n_zeros = params.n_zeros
        self.every_m = params.every_m
        self.phase = 0

    def process(self, stream: Stream) -> Stream:
        samples = _expect_iq(stream, self.kind)
        n = samples.size
        if self.n_zeros == 0 or n == 0:
            self.phase = (self.phase + n) % self.every_m
            return IQStream(samples.copy())
        ends_group = (self.phase + np.arange(1, n + 1)) % self.every_m == 0
        shift = np.concatenate([[0], np.cumsum(ends_group)[:-1]]) * self.n_zeros
        positions = np.arange(n) + shift
        total = n + int(ends_group.sum()) * self.n_zeros
        out = np.zeros(total, dtype=np.complex128)
        out[positions] = samples
        self.phase = (self.phase + n) % self.every_m
        return IQStream(out)


class OffsetProcessor(BlockProcessor):
    """Delays the Q rail by a fixed number of samples; I passes straight through."""

    kind = BlockKind.OFFSET

    def __init__(self, params: OffsetParams):
        self.delay = params.delay
        self.pending_q = np.zeros(params.delay)

    def process(self, stream: Stream) -> Stream:
        samples = _expect_iq(stream, self.kind)
        if self.delay == 0:
            return IQStream(samples.copy())
        q = np.concatenate([self.pending_q, samples.imag])
        out = np.empty(samples.size, dtype=np.complex128)
        out.real = samples.real
        out.imag = q[: samples.size]
        self.pending_q = q[samples.size :]
        return IQStream(out)

    def flush(self) -> Optional[Stream]:
        if self.delay == 0:
            return None
        out = np.empty(self.delay, dtype=np.complex128)
        out.real = 0.0
        out.imag = self.pending_q
        self.pending_q = np.zeros(self.delay)
        return IQStream(out)


_PROCESSORS = {
    BlockKind.SPLITTER: SplitterProcessor,
    BlockKind.PN9: Pn9Processor,
    BlockKind.CLOCK: ClockProcessor,
    BlockKind.DIFFENC: DiffencProcessor,
    BlockKind.CHIP: ChipProcessor,
    BlockKind.MAPPER: MapperProcessor,
    BlockKind.FIR: FirProcessor,
    BlockKind.ZPAD: ZpadProcessor,
    BlockKind.OFFSET: OffsetProcessor,
}


def make_processor(cfg: BlockConfig) -> BlockProcessor:
    if not cfg.enabled:
        return PassThrough(cfg.kind)
    return _PROCESSORS[cfg.kind](cfg.params)


def run_block(cfg: BlockConfig, stream: Stream) -> Stream:
    proc = make_processor(cfg)
    out = concat_streams([proc.process(stream), proc.flush()])
    assert out is not None
    return out


# ---------------------------------------------------------------------------
# Pure block functions
# ---------------------------------------------------------------------------


def splitter(data: Union[bytes, SymbolStream], mode: str = "bits") -> SymbolStream:
    stream = data if isinstance(data, SymbolStream) else SymbolStream.from_bytes(data)
    return SplitterProcessor(SplitterParams(mode=mode)).process(stream)


def pn9(bits: SymbolStream, seed: int = PN9_DEFAULT_SEED) -> SymbolStream:
    return Pn9Processor(Pn9Params(seed=seed)).process(bits)


def pn9_sequence(length: int, seed: int = PN9_DEFAULT_SEED) -> np.ndarray:
    """The raw whitening sequence, i.e. PN9 applied to all-zero input."""
    return pn9(SymbolStream(np.zeros(length, dtype=np.uint8), 1), seed).items


def clock_walk(bits: SymbolStream, start: int = 0) -> SymbolStream:
    return ClockProcessor(ClockParams(start=start)).process(bits)


def diffenc(bits: SymbolStream, initial: int = 0) -> SymbolStream:
    return DiffencProcessor(DiffencParams(initial=initial)).process(bits)


def diffdec(bits: SymbolStream, initial: int = 0) -> SymbolStream:
    encoded = _expect_symbols(bits, BlockKind.DIFFENC, (1,))
    prev = np.concatenate([[initial], encoded[:-1]]).astype(np.uint8)
    return SymbolStream(encoded ^ prev, 1)


def chip_map(symbols: SymbolStream, table: str = "oqpsk") -> SymbolStream:
    return ChipProcessor(ChipParams(table=table)).process(symbols)


def mapper(symbols: SymbolStream, constellation: str = "bipolar", hold: int = 1) -> IQStream:
    proc = MapperProcessor(MapperParams(constellation=constellation, hold=hold))
    out = concat_streams([proc.process(symbols), proc.flush()])
    assert isinstance(out, IQStream)
    return out


def fir41(samples: IQStream, taps: Sequence[float], normalize: bool = False, flush_tail: bool = False) -> IQStream:
    proc = FirProcessor(FirParams(taps_file=None, taps=tuple(taps), normalize=normalize, flush_tail=flush_tail))
    out = concat_streams([proc.process(samples), proc.flush()])
    assert isinstance(out, IQStream)
    return out


def zpad(samples: IQStream, n_zeros: int, every_m: int) -> IQStream:
    out = ZpadProcessor(ZpadParams(n_zeros=n_zeros, every_m=every_m)).process(samples)
    assert isinstance(out, IQStream)
    return out


def offset_q(samples: IQStream, delay: int) -> IQStream:
    proc = OffsetProcessor(OffsetParams(delay=delay))
    out = concat_streams([proc.process(samples), proc.flush()])
    assert isinstance(out, IQStream)
    return out
