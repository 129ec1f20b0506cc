"""Command-line entrypoint for the MMOC benchmark runner."""

import argparse
import logging
import sys

from dotenv import load_dotenv

from mmoc.bench.runner import run, sweep
from mmoc.bench.spec import load_spec
from mmoc.config import get_settings
from mmoc.errors import ConfigurationError, MeshError, OutOfDomainError, SolverError

load_dotenv()

logging.basicConfig(
    level=getattr(logging, get_settings().log_level, logging.INFO),
    format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
    stream=sys.stdout,
)

logger = logging.getLogger(__name__)


def _parse_taus(raw: str) -> list[float]:
    try:
        return [float(part) for part in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"Invalid step list {raw!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmoc", description="Eulerian-Lagrangian transport benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="Run one benchmark spec to its final time")
    sweep_p = sub.add_parser("sweep", help="Run one spec across several step lengths")
    for p in (run_p, sweep_p):
        p.add_argument("--spec", required=True, help="Spec file (JSON or key = value lines)")
        p.add_argument("--ranks", type=int, default=None, help="Number of in-process partitions")
        p.add_argument("--out", default=None, help="Output directory")
        p.add_argument("--vtk-every", type=int, default=None, help="Write VTK every N steps (0 disables)")
        p.add_argument("--seed", type=int, default=None, help="Reserved; recorded in the summary")
    run_p.add_argument("--reference", default=None,
                       help="summary.json of a finer run; its periodic stage extrema are checked within 2%%")
    sweep_p.add_argument("--taus", type=_parse_taus, required=True, help="Step lengths, e.g. '0.1,0.05,0.025'")
    return parser


def main(argv: list[str] | None = None) -> int:
    """Parse arguments, run the requested command and return the exit code."""
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args.spec, ranks=args.ranks, out_dir=args.out, vtk_every=args.vtk_every, seed=args.seed)
        if args.command == "sweep":
            table = sweep(spec, args.taus)
            logger.info("Sweep table:\n%s", table.to_string(index=False))
            return 0
        report = run(spec, cycle_reference=args.reference)
    except (ConfigurationError, MeshError) as exc:
        logger.error("Invalid configuration: %s", exc)
        return 2
    except SolverError as exc:
        logger.error("Solver failed: %s (final residual %.3e)", exc, exc.final_residual)
        return 3
    except OutOfDomainError as exc:
        logger.error("Particle left the domain: %s", exc)
        return 3
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
