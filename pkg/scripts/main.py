#!/usr/bin/env python3
"""
TransNN Lab - Main Entry Point
Command-line runner for transmission-network simulation, threshold analysis, ODE consistency and learning
"""

import sys
import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from config.performance_config import apply_cpu_optimizations

# Thread counts must be exported before numpy loads
apply_cpu_optimizations()

from dotenv import load_dotenv

from config.app_config import AppConfig
from controllers.experiment_controller import ExperimentController
from services.exceptions import ConvergenceError, DomainError, NumericalError, RangeError, ValidationError
from utils.text_utils import parse_float_list, parse_int_list

# Load environment variables
load_dotenv()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_DOMAIN = 3
EXIT_CONVERGENCE = 4

logger = logging.getLogger(__name__)


def setup_logging(log_level: str = "INFO", quiet: bool = False, log_file: Optional[str] = None):
    """Setup logging configuration; logs go to stderr so stdout carries results only"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.WARNING if quiet else getattr(logging, log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    """Global flags plus one subparser per command"""
    parser = argparse.ArgumentParser(prog="transnn", description="TransNN Lab")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"Global seed (default {AppConfig.DEFAULT_SEED})")
    parser.add_argument("--out-dir", default=AppConfig.OUTPUT_DIR,
                        help="Directory for run outputs when a command has no --out")
    parser.add_argument("--format", dest="fmt", choices=["csv", "json"], default="csv",
                        help="Format of tabular outputs")
    parser.add_argument("--quiet", action="store_true", help="Only warnings and errors on stderr")
    parser.add_argument("--log-level", default=AppConfig.LOG_LEVEL,
                        help="Logging level (DEBUG, INFO, WARNING, ERROR)")
    parser.add_argument("--log-file", default=None, help="Also write logs to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Iterate a network and export the trajectory")
    simulate.add_argument("network", help="Network file (JSON or CSV edge list)")
    simulate.add_argument("--p0", required=True, help="Initial condition, e.g. 'all=0,node:0=1'")
    simulate.add_argument("--horizon", type=int, required=True, help="Number of steps")
    simulate.add_argument("--representation", choices=["prob", "info", "log_healthy"], default="prob")
    simulate.add_argument("--out", default=None)

    threshold = sub.add_parser("threshold", help="Spectral extinction check")
    threshold.add_argument("network")
    threshold.add_argument("--out", default=None)

    ode = sub.add_parser("ode", help="Integrate the continuous-time network SIS model")
    ode.add_argument("rates", help="Rates JSON file")
    ode.add_argument("--p0", required=True)
    ode.add_argument("--t-end", type=float, default=1.0)
    ode.add_argument("--dt", type=float, default=0.01)
    ode.add_argument("--out", default=None)

    consistency = sub.add_parser("consistency", help="Discrete-to-continuous consistency ladder")
    consistency.add_argument("rates")
    consistency.add_argument("--p0", required=True)
    consistency.add_argument("--deltas", default="0.1,0.05,0.025,0.0125", help="Strictly decreasing step sizes")
    consistency.add_argument("--t-end", type=float, default=1.0)
    consistency.add_argument("--self-transmission", choices=["exponential", "linear"], default="exponential")
    consistency.add_argument("--epsilon", type=float, default=None,
                             help="Multi-particle scaling exponent (overrides the rates file)")
    consistency.add_argument("--out", default=None)

    train = sub.add_parser("train", help="Train a layered TransNN")
    train.add_argument("--dataset", default=None, help="CSV file or built-in dataset name")
    train.add_argument("--config", default=None, help="Training config JSON")
    train.add_argument("--compare", action="store_true", help="Train every activation variant")
    train.add_argument("--progress", action="store_true", help="Show a progress bar")
    train.add_argument("--out", default=None)

    approx = sub.add_parser("approx", help="Universal-approximation width ladder")
    approx.add_argument("target", help="Built-in target function name")
    approx.add_argument("--widths", default="2,4,8,16,32")
    approx.add_argument("--b", type=float, default=1.0, help="Hidden-layer bias")
    approx.add_argument("--activation", default="tlogsigmoid")
    approx.add_argument("--refine-epochs", type=int, default=0)
    approx.add_argument("--out", default=None)

    validate = sub.add_parser("validate", help="Check a network or rates file")
    validate.add_argument("file")
    return parser


def run_command(controller: ExperimentController, args: argparse.Namespace) -> Dict[str, Any]:
    """Dispatch parsed arguments to the controller"""
    if args.command == "simulate":
        return controller.cmd_simulate(args.network, args.p0, args.horizon, args.representation, args.out)
    if args.command == "threshold":
        return controller.cmd_threshold(args.network, args.out)
    if args.command == "ode":
        return controller.cmd_ode(args.rates, args.p0, args.t_end, args.dt, args.out)
    if args.command == "consistency":
        deltas = parse_float_list(args.deltas, "--deltas")
        return controller.cmd_consistency(args.rates, args.p0, deltas, args.out, args.t_end,
                                          args.self_transmission, args.epsilon)
    if args.command == "train":
        return controller.cmd_train(args.dataset, args.config, args.out, args.compare, args.progress)
    if args.command == "approx":
        widths = parse_int_list(args.widths, "--widths")
        return controller.cmd_approx(args.target, widths, args.out, args.b, args.activation, args.refine_epochs)
    return controller.cmd_validate(args.file)


def print_result(command: str, result: Dict[str, Any]):
    """Human-readable summary on stdout"""
    if command == "threshold":
        print(result["summary"])
        return
    print(f"✅ {command}:")
    for key, value in result.items():
        print(f"  • {key}: {value}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.quiet, args.log_file)

    try:
        controller = ExperimentController(out_dir=args.out_dir, seed=args.seed, fmt=args.fmt)
        result = run_command(controller, args)
        print_result(args.command, result)
        return EXIT_OK
    except ValidationError as e:
        print(f"❌ invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DomainError, NumericalError, RangeError) as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except ConvergenceError as e:
        print(f"❌ not converged: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except KeyboardInterrupt:
        print("\n👋 Interrupted", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unexpected failure: {e}", exc_info=True)
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
