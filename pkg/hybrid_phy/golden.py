"""Golden-vector corpus: packets, presets and expected IQ files.

Expected files come from the reference modem and are only (re)written by an
explicit ``generate_corpus`` call. ``verify_golden`` runs the block pipeline
and compares it against them.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from .blocks import IQStream
from .errors import GoldenCorpusError
from .iqfile import INT16_FULL_SCALE, SampleFormat, quantize, read_iq_raw, write_iq
from .pipeline import PipelineConfig, build_preset, get_preset, run_pipeline
from .reference import reference_modulate

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class GoldenVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    preset_id: int
    packet_hex: str
    format: SampleFormat = SampleFormat.CI16
    tolerance: float = 0.0
    expected_file: str
    digest: Optional[str] = None

    @property
    def packet(self) -> bytes:
        return bytes.fromhex(self.packet_hex)


class GoldenManifest(BaseModel):
    vectors: List[GoldenVector]


class GoldenResult(BaseModel):
    name: str
    passed: bool
    max_abs_error: float
    message: str = ""


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_manifest(corpus_dir: Union[str, Path]) -> GoldenManifest:
    path = Path(corpus_dir) / MANIFEST_NAME
    try:
        with open(path, "r", encoding="utf-8") as f:
            return GoldenManifest(**json.load(f))
    except FileNotFoundError as e:
        raise GoldenCorpusError(f"No golden manifest at {path}") from e
    except (json.JSONDecodeError, ValidationError) as e:
        raise GoldenCorpusError(f"Malformed golden manifest {path}: {e}") from e


def save_manifest(manifest: GoldenManifest, corpus_dir: Union[str, Path]) -> Path:
    path = Path(corpus_dir) / MANIFEST_NAME
    path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    return path


def generate_corpus(corpus_dir: Union[str, Path], logger_instance: Optional[logging.Logger] = None) -> GoldenManifest:
    """Write every expected IQ file from the reference modem and record its digest."""
    effective_logger = logger_instance or logger
    corpus_dir = Path(corpus_dir)
    manifest = load_manifest(corpus_dir)
    vectors = []
    for vector in manifest.vectors:
        samples = IQStream(np.array(reference_modulate(vector.preset_id, vector.packet), dtype=np.complex128))
        path = corpus_dir / vector.expected_file
        path.parent.mkdir(parents=True, exist_ok=True)
        write_iq(path, samples, vector.format, get_preset(vector.preset_id).sample_rate, vector.preset_id)
        digest = _file_digest(path)
        effective_logger.info(f"Generated {vector.name}: {len(samples)} samples, sha256 {digest[:12]}")
        vectors.append(vector.model_copy(update={"digest": digest}))
    manifest = GoldenManifest(vectors=vectors)
    save_manifest(manifest, corpus_dir)
    return manifest


def verify_golden(
    vector: GoldenVector,
    corpus_dir: Union[str, Path],
    cfg: Optional[PipelineConfig] = None,
) -> GoldenResult:
    path = Path(corpus_dir) / vector.expected_file
    if not path.exists():
        raise GoldenCorpusError(f"Golden file {path} is missing; run verify --generate first")
    if vector.digest is not None and _file_digest(path) != vector.digest:
        return GoldenResult(name=vector.name, passed=False, max_abs_error=float("inf"), message="file digest mismatch")
    header, payload = read_iq_raw(path)

    out = run_pipeline(cfg or build_preset(vector.preset_id), vector.packet)
    if not isinstance(out, IQStream):
        return GoldenResult(
            name=vector.name, passed=False, max_abs_error=float("inf"), message="pipeline output is not IQ"
        )
    if len(out) != header.count:
        return GoldenResult(
            name=vector.name,
            passed=False,
            max_abs_error=float("inf"),
            message=f"length {len(out)} != expected {header.count}",
        )
    if header.format == SampleFormat.CI16:
        diff = np.abs(quantize(out.samples).astype(np.int64) - payload.astype(np.int64))
        error = float(diff.max(initial=0)) / INT16_FULL_SCALE
    else:
        rails = np.empty(out.samples.size * 2)
        rails[0::2] = out.samples.real
        rails[1::2] = out.samples.imag
        error = float(np.abs(rails - payload.astype(np.float64)).max(initial=0.0))
    passed = error <= vector.tolerance
    return GoldenResult(
        name=vector.name,
        passed=passed,
        max_abs_error=error,
        message="" if passed else f"max error {error:.3g} exceeds tolerance {vector.tolerance:g}",
    )


def verify_corpus(corpus_dir: Union[str, Path], cfg: Optional[PipelineConfig] = None) -> List[GoldenResult]:
    """Verify every vector. ``cfg`` replaces the preset pipeline for vectors of its preset."""
    results = []
    for vector in load_manifest(corpus_dir).vectors:
        use_cfg = cfg if cfg is not None and cfg.preset_id == vector.preset_id else None
        result = verify_golden(vector, corpus_dir, use_cfg)
        logger.debug(f"{vector.name}: {'pass' if result.passed else 'FAIL ' + result.message}")
        results.append(result)
    return results
