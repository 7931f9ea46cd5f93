"""
Command-line entry point for the OTFS-IPAC simulator.

    python -m src.main sweep --config configs/reference.cfg --out results.csv
    python -m src.main crlb --bits 5 --snr 30
    python -m src.main single-trial --snr 20 --bits 3 --dump trial.jsonl
    python -m src.main validate-config --config configs/reference.cfg
"""

import argparse
import sys
from typing import List, Optional, Sequence

from src import __version__
from src.config import ScenarioConfig, load_config
from src.models.schemas import SweepSpec, format_bits, parse_bits
from src.services.simulation_service import SimulationService
from src.utils.errors import ConfigError, SimulationError
from src.utils.logger import setup_logger
from src.utils.pool_manager import get_pool_manager

logger = setup_logger(__name__)


def _float_list(raw: str) -> List[float]:
    return [float(v) for v in raw.split(",") if v.strip()]


def _bits_list(raw: str) -> List[Optional[int]]:
    return [parse_bits(v) for v in raw.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE scenario file (default: $OTFS_IPAC_CONFIG or the reference scenario)")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--trials", type=int, help="Monte-Carlo trials per point")
    common.add_argument("--bits", type=_bits_list, help="ADC resolutions, e.g. 3,4,5,inf")
    common.add_argument("--snr", type=_float_list, help="SNR points in dB, e.g. 0,10,20")
    common.add_argument("--snr-convention", choices=["receive", "transmit"], help="noise-variance convention")
    common.add_argument("--downlink-snr", choices=["symbol", "uplink"], help="downlink SNR reference")
    common.add_argument("--quiet", action="store_true", help="no progress bars")

    parser = argparse.ArgumentParser(
        prog="otfs-ipac",
        description="OTFS integrated positioning and communication simulator with low-resolution ADCs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", parents=[common], help="run the SNR x ADC-bits Monte-Carlo sweep")
    sweep.add_argument("--out", help="CSV output path")
    sweep.add_argument("--dump", help="JSON-lines file with per-trial metrics")

    sub.add_parser("crlb", parents=[common], help="bounds only, no estimation")

    single = sub.add_parser("single-trial", parents=[common], help="one trial with optional stage dump")
    single.add_argument("--trial", type=int, default=0, help="trial index (selects the random stream)")
    single.add_argument("--dump", help="JSON-lines file with every pipeline stage tensor")

    sub.add_parser("validate-config", parents=[common], help="check the scenario configuration")
    return parser


def apply_overrides(scenario: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    """Fold command-line flags into the scenario loaded from file."""
    frame = scenario.frame
    if args.seed is not None:
        frame = frame.model_copy(update={"seed": args.seed})

    sweep = scenario.sweep.model_dump()
    if args.trials is not None:
        sweep["trials"] = args.trials
    if args.bits:
        sweep["bits_list"] = args.bits
    if args.snr:
        sweep["snr_points"] = args.snr
    if args.snr_convention:
        sweep["snr_convention"] = args.snr_convention
    if args.downlink_snr:
        sweep["downlink_snr"] = args.downlink_snr
    if getattr(args, "out", None):
        sweep["output_path"] = args.out

    return scenario.model_copy(update={"frame": frame, "sweep": SweepSpec(**sweep)})


def _progress(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


def cmd_sweep(service: SimulationService, args: argparse.Namespace) -> int:
    try:
        rows = service.sweep(progress=_progress(args), dump_path=args.dump)
    finally:
        get_pool_manager().shutdown()
    if not service.scenario.sweep.output_path:
        print("snr_db,bits,metric,value,trials,seed")
        for row in rows:
            print(",".join(row.as_csv_fields()))
    return 0


def cmd_crlb(service: SimulationService, args: argparse.Namespace) -> int:
    spec = service.scenario.sweep
    trials = args.trials or 1
    print(f"{'snr_db':>8} {'bits':>5} {'param':>8} {'path':>4} {'crlb':>14}")
    for bits in spec.bits_list:
        for snr in spec.snr_points:
            report = service.crlb(snr, bits, trials)
            for name in ("gain", "angle", "doppler"):
                for p, value in enumerate(getattr(report, f"crlb_{name}")):
                    print(f"{snr:>8g} {format_bits(bits):>5} {name:>8} {p:>4} {value:>14.6e}")
            print(f"{snr:>8g} {format_bits(bits):>5} {'position':>8} {'-':>4} {report.crlb_position:>14.6e}")
            if report.unbounded_draws:
                logger.warning(f"{report.unbounded_draws} draws had zero-information parameters")
    return 0


def cmd_single_trial(service: SimulationService, args: argparse.Namespace) -> int:
    spec = service.scenario.sweep
    dump = [] if args.dump else None
    metrics = service.single_trial(spec.snr_points[0], spec.bits_list[0], trial_index=args.trial, dump=dump)
    if dump is not None:
        with open(args.dump, "w", encoding="utf-8") as f:
            for stage in dump:
                f.write(stage.model_dump_json() + "\n")
        logger.info(f"Wrote {len(dump)} stage tensors to {args.dump}")
    print(metrics.model_dump_json(indent=2))
    return 0


def cmd_validate_config(service: SimulationService, args: argparse.Namespace) -> int:
    report = service.validate()
    print(report.model_dump_json(indent=2))
    return 0 if report.valid else 1


COMMANDS = {
    "sweep": cmd_sweep,
    "crlb": cmd_crlb,
    "single-trial": cmd_single_trial,
    "validate-config": cmd_validate_config,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI.

    Returns:
        0 on success, 1 on a simulation or I/O failure, 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0

    try:
        scenario = apply_overrides(load_config(args.config), args)
        service = SimulationService(scenario)
        return COMMANDS[args.command](service, args)
    except (SimulationError, ValueError, OSError) as e:
        message = "; ".join(e.errors) if isinstance(e, ConfigError) else str(e)
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(cli_main())
