import argparse
import logging
import sys
import time
from typing import List, Optional, Tuple

from hybrid_phy import log
from hybrid_phy.errors import HybridPhyError
from hybrid_phy.experiments import DEFAULT_BUFFER_CAP, DEFAULT_SWEEP_BUFFERS
from hybrid_phy.interactor import PhyInteractor
from hybrid_phy.iqfile import SampleFormat
from hybrid_phy.pipeline import DEFAULT_PACKET_BYTES, PRESET_IDS, random_packet
from hybrid_phy.timing import DEFAULT_DAC_RING

logger = logging.getLogger()

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE_ERROR = 2


def parse_segment(text: str) -> Tuple[int, int]:
    """'6..7' or '6' -> 0-based (5, 6). Stages are numbered 1..9 in unified order."""
    first, _, last = text.partition("..")
    try:
        a, b = int(first), int(last or first)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected FIRST..LAST stage numbers, got {text!r}")
    if not 1 <= a <= b <= 9:
        raise argparse.ArgumentTypeError(f"stage numbers must satisfy 1 <= first <= last <= 9, got {text!r}")
    return a - 1, b - 1


def parse_buffers(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated buffer sizes, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"buffer sizes must be positive, got {text!r}")
    return values


def parse_presets(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated preset ids, got {text!r}")
    bad = [v for v in values if v not in PRESET_IDS]
    if not values or bad:
        raise argparse.ArgumentTypeError(f"presets must be among {list(PRESET_IDS)}, got {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", help="Enable verbose logging.", action="store_true")
    common.add_argument("--output-dir", "-o", help="Directory for result files.", default="output")
    common.add_argument("--cost-model", help="JSON file overriding the bundled cost model.")
    common.add_argument("--packet", help="File whose raw bytes are the packet.")
    common.add_argument("--packet-hex", help="Packet given as hex digits.")
    common.add_argument("--packet-bytes", type=int, default=DEFAULT_PACKET_BYTES, help="Random packet length.")
    common.add_argument("--seed", type=int, default=0, help="Seed for the random packet.")
    common.add_argument("--dac-ring", type=int, default=DEFAULT_DAC_RING, help="DAC ring capacity in samples.")

    parser = argparse.ArgumentParser(
        prog="hybrid-phy", description="Hybrid hardware/software IEEE 802.15.4 transmit PHY simulator."
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands.")

    modulate = subparsers.add_parser("modulate", parents=[common], help="Modulate a packet to an IQ file.")
    modulate.add_argument("--preset", type=int, choices=PRESET_IDS, default=1)
    modulate.add_argument("--config", help="JSON pipeline config replacing the preset's stages.")
    modulate.add_argument("--format", choices=[f.value for f in SampleFormat], default=SampleFormat.CF32.value)

    simulate = subparsers.add_parser("simulate", parents=[common], help="Time one hybrid run.")
    simulate.add_argument("--preset", type=int, choices=PRESET_IDS, default=1)
    simulate.add_argument("--config", help="JSON pipeline config replacing the preset's stages.")
    simulate.add_argument("--sw", type=parse_segment, help="Software stages FIRST..LAST, numbered 1..9.")
    simulate.add_argument("--buffer", type=int, default=256, help="Interposer buffer size in items.")
    simulate.add_argument("--irq-threshold", type=int, help="Items per interrupt, at most the buffer size.")

    sweep = subparsers.add_parser("sweep", parents=[common], help="Gated fraction of every single block in software.")
    sweep.add_argument("--presets", type=parse_presets, default=list(PRESET_IDS))
    sweep.add_argument("--buffers", type=parse_buffers, default=list(DEFAULT_SWEEP_BUFFERS))
    sweep.add_argument("--jobs", "-j", type=int, default=1, help="Parallel simulation workers.")

    minbuf = subparsers.add_parser("minbuf", parents=[common], help="Smallest buffer that avoids DAC underrun.")
    minbuf.add_argument("--preset", type=int, choices=PRESET_IDS)
    minbuf.add_argument("--sw", type=parse_segment, help="One segment; omit for a grid of single blocks.")
    minbuf.add_argument("--spaced", action="store_true", help="Use the rate-spaced (preset, block) grid.")
    minbuf.add_argument("--cap", type=int, default=DEFAULT_BUFFER_CAP, help="Largest buffer size to try.")
    minbuf.add_argument("--jobs", "-j", type=int, default=1, help="Parallel searches.")

    fit = subparsers.add_parser("fit", parents=[common], help="Fit size = k * rate^m.")
    fit.add_argument("--points", help="CSV with boundary_rate and min_buffer columns. Default: bundled synthetic set.")

    retrofit = subparsers.add_parser("retrofit", parents=[common], help="Run a standard's unique blocks in software.")
    retrofit.add_argument("--presets", type=parse_presets, default=[1, 4, 6])
    retrofit.add_argument("--buffers", type=parse_buffers, default=list(DEFAULT_SWEEP_BUFFERS))

    verify = subparsers.add_parser("verify", parents=[common], help="Check the pipeline against golden vectors.")
    verify.add_argument("--corpus", default="corpus", help="Golden corpus directory.")
    verify.add_argument("--generate", action="store_true", help="Regenerate expected files from the reference modem.")
    return parser


def check_args(parser: argparse.ArgumentParser, args) -> None:
    """Rules spanning several options."""
    if args.command == "minbuf" and args.sw is not None:
        if args.preset is None:
            parser.error("minbuf: --sw needs --preset")
        if args.spaced:
            parser.error("minbuf: --sw cannot be combined with --spaced")


def read_packet(args) -> bytes:
    if args.packet:
        with open(args.packet, "rb") as f:
            return f.read()
    if args.packet_hex:
        return bytes.fromhex(args.packet_hex)
    return random_packet(args.packet_bytes, args.seed)


def run_command(args, interactor: PhyInteractor) -> int:
    packet = read_packet(args)
    if args.command == "modulate":
        interactor.modulate(args.preset, packet, args.output_dir, args.format, args.config)
    elif args.command == "simulate":
        interactor.simulate(
            args.preset,
            packet,
            args.output_dir,
            sw=args.sw,
            buffer_items=args.buffer,
            dac_ring=args.dac_ring,
            irq_threshold=args.irq_threshold,
            config_path=args.config,
        )
    elif args.command == "sweep":
        interactor.sweep(args.presets, args.buffers, packet, args.output_dir, dac_ring=args.dac_ring, jobs=args.jobs)
    elif args.command == "minbuf":
        result = interactor.min_buffer(
            packet,
            args.output_dir,
            preset_id=args.preset,
            sw=args.sw,
            spaced=args.spaced,
            cap=args.cap,
            dac_ring=args.dac_ring,
            jobs=args.jobs,
        )
        if result.get("cap_exceeded") is True:
            logger.warning(f"The CPU cannot keep this segment fed at any buffer up to {args.cap}.")
        elif "min_buffer" in result:
            logger.info(f"Minimum buffer: {result['min_buffer']} items")
    elif args.command == "fit":
        result = interactor.fit(args.output_dir, args.points)
        print(f"m={result['m']:.6g} k={result['k']:.6g} r2={result['r2']:.6g}")
    elif args.command == "retrofit":
        interactor.retrofit(args.presets, args.buffers, packet, args.output_dir, dac_ring=args.dac_ring)
    elif args.command == "verify":
        summary = interactor.verify(args.corpus, args.output_dir, generate=args.generate)
        logger.info(f"Golden vectors: {summary['passed']} passed, {summary['failed']} failed")
        if summary["failed"]:
            return EXIT_DOMAIN_ERROR
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        check_args(parser, args)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE_ERROR

    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE_ERROR

    log_level = logging.DEBUG if args.verbose else logging.INFO
    handler = log.setup_logging(log_level)
    try:
        start_time = time.time()
        try:
            interactor = PhyInteractor(verbose=args.verbose, logger_instance=logger, cost_model_path=args.cost_model)
            config = {k: v for k, v in vars(args).items() if k != "verbose"}
            interactor.write_manifest(args.output_dir, args.command, argv, config)
            code = run_command(args, interactor)
        except HybridPhyError as e:
            logger.error(f"Error: {e}")
            logger.debug("Details:", exc_info=True)
            return EXIT_DOMAIN_ERROR
        except (OSError, ValueError) as e:
            logger.error(f"Error: {e}")
            return EXIT_USAGE_ERROR
        logger.info(f"Operation completed in {time.time() - start_time:.2f} seconds.")
        return code
    finally:
        logging.getLogger().removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
