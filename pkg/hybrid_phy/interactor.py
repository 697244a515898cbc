import json
import logging
import platform
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from hybrid_phy import __version__
from hybrid_phy.experiments import (
    DEFAULT_BUFFER_CAP,
    RetrofitScenario,
    all_single_block_pairs,
    export_results,
    fit_min_buffer_table,
    gated_sweep,
    load_points_csv,
    load_synthetic_points,
    min_buffer_or_flag,
    min_buffer_table,
    phase_survey,
    power_law_fit,
    rate_spaced_pairs,
    rate_table,
    retrofit_run,
    trend_violations,
)
from hybrid_phy.errors import FitError
from hybrid_phy.golden import generate_corpus, verify_corpus
from hybrid_phy.interposer import SplitPlan, write_event_log
from hybrid_phy.iqfile import SampleFormat, write_iq
from hybrid_phy.pipeline import PRESET_IDS, PipelineConfig, build_preset, get_preset, load_pipeline_config, run_pipeline
from hybrid_phy.timing import DEFAULT_DAC_RING, CostModel, Simulator, load_cost_model, phase_report

_TRACKED_PACKAGES = ("numpy", "pandas", "simpy", "matplotlib", "pydantic")


def _package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version(), "hybrid-phy": __version__}
    for name in _TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


class PhyInteractor:
    def __init__(
        self,
        verbose: bool = False,
        logger_instance: Optional[logging.Logger] = None,
        cost_model_path: Optional[str] = None,
    ):
        """
        Entry point for everything the command line can do.

        Args:
            verbose: Enable verbose logging.
            logger_instance: Optional logger instance to use. If None, creates its own.
            cost_model_path: Optional JSON file overriding the bundled cost model.
        """
        self.verbose = verbose

        if logger_instance:
            self.logger = logger_instance
        else:
            self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
            if not self.logger.handlers:
                stderr_handler = logging.StreamHandler(sys.stderr)
                formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
                stderr_handler.setFormatter(formatter)
                self.logger.addHandler(stderr_handler)
                self.logger.propagate = False

            self.logger.setLevel(logging.DEBUG if self.verbose else logging.INFO)

        self.cost_model_path = cost_model_path
        self.cost: CostModel = load_cost_model(cost_model_path)

    def _output_dir(self, output_dir: str) -> Path:
        path = Path(output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def write_manifest(self, output_dir: str, command: str, argv: Sequence[str], config: Dict[str, Any]) -> Path:
        """Record what produced the files in ``output_dir``."""
        manifest = {
            "command": command,
            "argv": list(argv),
            "config": config,
            "cost_model": self.cost.model_dump(mode="json"),
            "cost_model_path": self.cost_model_path,
            "versions": _package_versions(),
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        path = self._output_dir(output_dir) / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path

    def _pipeline(self, preset_id: int, config_path: Optional[str]) -> PipelineConfig:
        if config_path:
            cfg = load_pipeline_config(config_path)
            self.logger.info(f"Using custom pipeline from {config_path}")
            return cfg
        return build_preset(preset_id)

    def modulate(
        self,
        preset_id: int,
        packet: bytes,
        output_dir: str,
        fmt: str = SampleFormat.CF32.value,
        config_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        cfg = self._pipeline(preset_id, config_path)
        preset = get_preset(cfg.preset_id or preset_id)
        out = run_pipeline(cfg, packet)
        path = self._output_dir(output_dir) / f"preset{preset.id}.iq"
        write_iq(path, out, fmt, preset.sample_rate, preset.id)
        self.logger.info(f"Modulated {len(packet)} bytes with preset {preset.id} ({preset.label}): {len(out)} samples")
        return {"samples": len(out), "digest": out.digest(), "output_path": str(path)}

    def simulate(
        self,
        preset_id: int,
        packet: bytes,
        output_dir: str,
        sw: Optional[Tuple[int, int]] = None,
        buffer_items: int = 256,
        dac_ring: int = DEFAULT_DAC_RING,
        irq_threshold: Optional[int] = None,
        config_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        """Time one run. ``sw`` is a 0-based inclusive stage range, None for all hardware."""
        cfg = self._pipeline(preset_id, config_path)
        plan = SplitPlan(
            sw_first=sw[0] if sw else None,
            sw_last=sw[1] if sw else None,
            buffer_items=buffer_items,
            irq_threshold=irq_threshold,
        )
        sim = Simulator(
            cfg,
            plan,
            packet,
            self.cost,
            dac_ring=dac_ring,
            preset=get_preset(cfg.preset_id or preset_id),
            logger_instance=self.logger,
        )
        report = sim.run()
        out_dir = self._output_dir(output_dir)
        (out_dir / "report.json").write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        assert sim.hybrid is not None
        write_event_log(sim.hybrid.events, out_dir / "events.ndjson")
        sim.write_timeline(out_dir / "timeline.ndjson")
        breakdown = phase_report(report)
        phases = pd.DataFrame([{"phase": k, "fraction": v} for k, v in breakdown.fractions.items()])
        export_results({"phase_breakdown": phases}, out_dir, plot=False)

        level = logging.WARNING if report.underrun else logging.INFO
        self.logger.log(
            level,
            f"{plan.describe(cfg)}: gated {report.gated_fraction:.4f} "
            f"(streaming {report.streaming_gated_fraction:.4f}), underrun={report.underrun}",
        )
        return {
            "gated_fraction": report.gated_fraction,
            "streaming_gated_fraction": report.streaming_gated_fraction,
            "underrun": report.underrun,
            "output_digest": report.output_digest,
            "output_path": str(out_dir),
        }

    def sweep(
        self,
        preset_ids: Sequence[int],
        buffers: Sequence[int],
        packet: bytes,
        output_dir: str,
        dac_ring: int = DEFAULT_DAC_RING,
        jobs: int = 1,
    ) -> Dict[str, Any]:
        table = gated_sweep(preset_ids, buffers, self.cost, packet, dac_ring=dac_ring, jobs=jobs)
        for violation in trend_violations(table):
            self.logger.warning(f"Gating trend broken: {violation}")
        rates = rate_table(preset_ids)
        paths = export_results({"sweep": table, "rates": rates}, output_dir)
        self.logger.info(f"Sweep of {len(table)} points written to {output_dir}")
        return {"points": len(table), "files": [str(p) for p in paths]}

    def min_buffer(
        self,
        packet: bytes,
        output_dir: str,
        preset_id: Optional[int] = None,
        sw: Optional[Tuple[int, int]] = None,
        spaced: bool = False,
        cap: int = DEFAULT_BUFFER_CAP,
        dac_ring: int = DEFAULT_DAC_RING,
        jobs: int = 1,
    ) -> Dict[str, Any]:
        """Single segment when ``preset_id`` and ``sw`` are given, otherwise a grid of single-block segments.

        A segment that cannot keep up at ``cap`` is reported with ``cap_exceeded`` set and no size.
        """
        if sw is not None and preset_id is None:
            raise ValueError("A software segment needs a preset")
        if sw is not None and spaced:
            raise ValueError("A software segment cannot be combined with the rate-spaced grid")
        if preset_id is not None and sw is not None:
            result = min_buffer_or_flag(preset_id, sw[0], sw[1], self.cost, packet, cap=cap, dac_ring=dac_ring)
            self._output_dir(output_dir)
            (Path(output_dir) / "min_buffer.json").write_text(result.model_dump_json(indent=2) + "\n")
            return result.model_dump()

        if spaced:
            pairs = rate_spaced_pairs()
            grid = "rate-spaced"
        else:
            pairs = all_single_block_pairs([preset_id] if preset_id else PRESET_IDS)
            grid = "every enabled block of every preset"
        table = min_buffer_table(pairs, self.cost, packet, cap=cap, dac_ring=dac_ring, jobs=jobs)
        summary: Dict[str, Any] = {"grid": grid, "pairs": [[p, i + 1] for p, i in pairs]}
        try:
            fit = fit_min_buffer_table(table)
        except FitError as e:
            self.logger.warning(f"No power-law fit: {e}")
        else:
            summary["fit"] = fit.model_dump()
            self.logger.info(f"Size ~ {fit.k:.4g} * rate^{fit.m:.4f} (r2 {fit.r2:.3f})")
        paths = export_results({"min_buffer": table}, output_dir)
        (Path(output_dir) / "min_buffer_fit.json").write_text(json.dumps(summary, indent=2) + "\n")
        summary["files"] = [str(p) for p in paths]
        summary["cap_exceeded"] = int(table["cap_exceeded"].sum())
        return summary

    def fit(self, output_dir: str, points_csv: Optional[str] = None) -> Dict[str, Any]:
        points: List[Tuple[float, float]] = load_points_csv(points_csv) if points_csv else load_synthetic_points()
        result = power_law_fit(points)
        self._output_dir(output_dir)
        (Path(output_dir) / "fit.json").write_text(result.model_dump_json(indent=2) + "\n")
        return result.model_dump()

    def retrofit(
        self,
        preset_ids: Sequence[int],
        buffers: Sequence[int],
        packet: bytes,
        output_dir: str,
        dac_ring: int = DEFAULT_DAC_RING,
    ) -> Dict[str, Any]:
        tables = []
        for preset_id in preset_ids:
            scenario = RetrofitScenario.for_preset(preset_id)
            self.logger.info(
                f"Retrofit preset {preset_id}: software {sorted(k.value for k in scenario.missing_blocks)}"
            )
            tables.append(retrofit_run(scenario, buffers, self.cost, packet, dac_ring=dac_ring))
        table = pd.concat(tables, ignore_index=True)
        phases = phase_survey(self.cost, packet=packet, dac_ring=dac_ring)
        paths = export_results({"retrofit": table, "phases": phases}, output_dir)
        mismatched = int((~table["iq_equal"].astype(bool)).sum())
        if mismatched:
            self.logger.error(f"{mismatched} retrofit runs changed the IQ output")
        return {"rows": len(table), "iq_mismatches": mismatched, "files": [str(p) for p in paths]}

    def verify(self, corpus_dir: str, output_dir: str, generate: bool = False) -> Dict[str, Any]:
        if generate:
            manifest = generate_corpus(corpus_dir, logger_instance=self.logger)
            self.logger.info(f"Generated {len(manifest.vectors)} golden vectors in {corpus_dir}")
        results = verify_corpus(corpus_dir)
        for r in results:
            if r.passed:
                self.logger.debug(f"PASS {r.name} (max error {r.max_abs_error:.3g})")
            else:
                self.logger.error(f"FAIL {r.name}: {r.message}")
        self._output_dir(output_dir)
        (Path(output_dir) / "verify.json").write_text(
            json.dumps([r.model_dump() for r in results], indent=2) + "\n", encoding="utf-8"
        )
        return {"passed": sum(r.passed for r in results), "failed": sum(not r.passed for r in results)}
