"""Interleaved IQ sample files.

A 28-byte little-endian header followed by I,Q pairs:

    offset  size  field
    0       4     magic b"HPIQ"
    4       1     version (u8), currently 1
    5       1     format code (u8): 1 = cf32le, 2 = ci16le
    6       2     reserved (u16), 0
    8       8     sample rate in Hz (f64)
    16      2     preset id (i16), -1 when the pipeline is not a preset
    18      2     reserved (u16), 0
    20      8     complex sample count N (u64)
    28      ...   payload, I0 Q0 I1 Q1 ..., 8*N bytes (float32) or 4*N bytes (int16)

int16 rails are rint(x * 32767) clipped to +-32767.
"""

import logging
import struct
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from .blocks import IQStream
from .errors import IQFormatError

logger = logging.getLogger(__name__)

MAGIC = b"HPIQ"
VERSION = 1
HEADER = struct.Struct("<4sBBHdhHQ")
INT16_FULL_SCALE = 32767


class SampleFormat(str, Enum):
    CF32 = "cf32le"
    CI16 = "ci16le"


_FORMAT_CODES = {SampleFormat.CF32: 1, SampleFormat.CI16: 2}
_CODE_FORMATS = {v: k for k, v in _FORMAT_CODES.items()}
_DTYPES = {SampleFormat.CF32: np.dtype("<f4"), SampleFormat.CI16: np.dtype("<i2")}


class IQFileHeader(BaseModel):
    model_config = ConfigDict(frozen=True)

    format: SampleFormat
    sample_rate: float
    preset_id: Optional[int]
    count: int

    def pack(self) -> bytes:
        preset = -1 if self.preset_id is None else self.preset_id
        return HEADER.pack(MAGIC, VERSION, _FORMAT_CODES[self.format], 0, self.sample_rate, preset, 0, self.count)


def quantize(samples: np.ndarray) -> np.ndarray:
    """Complex samples in [-1, 1] to interleaved int16 pairs."""
    rails = np.empty(samples.size * 2, dtype=np.float64)
    rails[0::2] = samples.real
    rails[1::2] = samples.imag
    return np.clip(np.rint(rails * INT16_FULL_SCALE), -INT16_FULL_SCALE, INT16_FULL_SCALE).astype("<i2")


def write_iq(
    path: Union[str, Path],
    stream: IQStream,
    fmt: Union[SampleFormat, str] = SampleFormat.CF32,
    sample_rate: float = 0.0,
    preset_id: Optional[int] = None,
) -> IQFileHeader:
    if not isinstance(stream, IQStream):
        raise IQFormatError("Only IQ sample streams can be written to an IQ file", str(path))
    try:
        fmt = SampleFormat(fmt)
    except ValueError as e:
        raise IQFormatError(f"Unknown sample format {fmt!r}", str(path)) from e
    samples = stream.samples
    if fmt == SampleFormat.CI16:
        payload = quantize(samples)
    else:
        payload = np.empty(samples.size * 2, dtype="<f4")
        payload[0::2] = samples.real
        payload[1::2] = samples.imag
    header = IQFileHeader(format=fmt, sample_rate=float(sample_rate), preset_id=preset_id, count=samples.size)
    try:
        with open(path, "wb") as f:
            f.write(header.pack())
            f.write(payload.tobytes())
    except OSError as e:
        raise IQFormatError(f"Cannot write IQ file: {e}", str(path)) from e
    logger.debug(f"Wrote {samples.size} {fmt.value} samples to {path}")
    return header


def read_iq_raw(path: Union[str, Path]) -> Tuple[IQFileHeader, np.ndarray]:
    """Header plus the payload as stored, interleaved I,Q in the file's dtype."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IQFormatError(f"Cannot read IQ file: {e}", str(path)) from e
    if len(blob) < HEADER.size:
        raise IQFormatError(f"Truncated header ({len(blob)} of {HEADER.size} bytes)", str(path))
    magic, version, code, _, sample_rate, preset, _, count = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise IQFormatError(f"Bad magic {magic!r}", str(path))
    if version != VERSION:
        raise IQFormatError(f"Unsupported version {version}", str(path))
    if code not in _CODE_FORMATS:
        raise IQFormatError(f"Unknown sample format code {code}", str(path))
    fmt = _CODE_FORMATS[code]
    dtype = _DTYPES[fmt]
    expected = HEADER.size + count * 2 * dtype.itemsize
    if len(blob) != expected:
        size = len(blob) - HEADER.size
        raise IQFormatError(f"Header declares {count} samples but payload holds {size} bytes", str(path))
    payload = np.frombuffer(blob, dtype=dtype, offset=HEADER.size)
    header = IQFileHeader(format=fmt, sample_rate=sample_rate, preset_id=None if preset < 0 else preset, count=count)
    return header, payload


def read_iq(path: Union[str, Path]) -> Tuple[IQFileHeader, IQStream]:
    header, payload = read_iq_raw(path)
    rails = payload.astype(np.float64)
    if header.format == SampleFormat.CI16:
        rails /= INT16_FULL_SCALE
    samples = np.empty(header.count, dtype=np.complex128)
    samples.real = rails[0::2]
    samples.imag = rails[1::2]
    return header, IQStream(samples)
