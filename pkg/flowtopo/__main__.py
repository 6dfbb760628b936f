"""Entry point for flowtopo: python -m flowtopo"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from flowtopo import __version__

logger = logging.getLogger("flowtopo")

EXIT_OK = 0
EXIT_ABORT = 1
EXIT_CONFIG = 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(item) for item in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowtopo",
        description="flowtopo - meshfree topology optimization of Stokes/Brinkman flow",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only warnings and errors")
    commands = parser.add_subparsers(dest="command", required=True)

    # Optimization runs
    run = commands.add_parser("run", help="Optimize a benchmark or a problem file")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--benchmark", choices=["rugby", "pipe-bend", "diffuser", "double-pipe"], help="Benchmark id")
    source.add_argument("--config", help="Problem definition JSON file, or the name of a saved problem")
    run.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"), help="Collocation grid (default: 100 100)")
    run.add_argument("--epochs", type=int, help="Training epochs (default: 50000)")
    run.add_argument("--seed", type=int, help="Random seed (default: 0)")
    run.add_argument("--sweep", type=int, help="Number of seeds to run, starting at --seed (default: 1)")
    run.add_argument("--workers", type=int, help="Seeds trained concurrently in a sweep (default: 2)")
    run.add_argument("--out", help="Output directory (default: runs)")
    run.add_argument("--snapshot-epochs", type=_int_list, help="Epochs at which the density is archived")
    run.add_argument("--bc-samples", type=int, help="Boundary samples per side (default: 25)")
    run.add_argument("--hidden", type=_int_list, help="Hidden layer widths (default: 64,64,64,64)")
    run.add_argument("--ghost-mode", choices=["model", "extrapolate"], help="Ghost point values (default: model)")
    run.add_argument(
        "--density-conditioning",
        choices=["inlet_outlet", "none"],
        help="Boundary data for the density channel (default: inlet_outlet)",
    )
    run.add_argument("--permeability", choices=["brinkman", "simp"], help="Permeability map (default: brinkman)")
    run.add_argument("--log-every", type=int, help="Epochs between progress lines (default: 500)")

    # Burgers validation
    burgers = commands.add_parser("burgers", help="Viscous Burgers validation demo")
    burgers.add_argument("--nu", type=float, default=None, help="Viscosity (default: 0.01/pi)")
    burgers.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NT"), default=(64, 32))
    burgers.add_argument("--epochs", type=int, default=10_000)
    burgers.add_argument("--seed", type=int, default=0)
    burgers.add_argument("--out", default=None, help="Directory for history.csv and u.csv")

    # Problem definitions
    problems = commands.add_parser("problems", help="List, dump or save problem definitions")
    problems.add_argument("--dump", metavar="BENCHMARK", help="Print a benchmark definition as JSON")
    problems.add_argument("--save", metavar="NAME", help="Save --from (benchmark or file) under NAME")
    problems.add_argument("--from", dest="source", metavar="SOURCE", help="Benchmark id or JSON file to save")
    problems.add_argument("--delete", metavar="NAME", help="Delete a saved problem")

    # Post-processing
    plot = commands.add_parser("plot", help="Render figures for a finished run (needs flowtopo[plot])")
    plot.add_argument("run_dir")
    reevaluate = commands.add_parser("reevaluate", help="Recompute J of a finished run from its saved parameters")
    reevaluate.add_argument("run_dir")
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _run_command(args: argparse.Namespace) -> int:
    from flowtopo.config import resolve_run_config
    from flowtopo.errors import ConfigError
    from flowtopo.runner import run, sweep

    overrides = {
        "benchmark": args.benchmark,
        "config": args.config,
        "epochs": args.epochs,
        "seed": args.seed,
        "sweep": args.sweep,
        "workers": args.workers,
        "out": args.out,
        "snapshot_epochs": args.snapshot_epochs,
        "bc_samples": args.bc_samples,
        "hidden": args.hidden,
        "ghost_mode": args.ghost_mode,
        "density_conditioning": args.density_conditioning,
        "permeability": args.permeability,
        "log_every": args.log_every,
    }
    if args.grid:
        overrides["nx"], overrides["ny"] = args.grid
    try:
        config = resolve_run_config(overrides)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG

    if config["sweep"] > 1:
        report = sweep(config)
        stats = report.statistics
        print(
            f"J over {report.successes} seeds: mean={stats['mean']:.6g} median={stats['median']:.6g} "
            f"std={stats['std']:.3g} min={stats['min']:.6g} max={stats['max']:.6g} failures={report.failures}"
        )
        return EXIT_OK if report.failures == 0 else EXIT_ABORT

    summary, err_msg = run(config)
    if summary is None:
        return EXIT_CONFIG
    print(f"J={summary.objective:.10g} |C1|={summary.volume_violation:.3e} status={summary.status}")
    return EXIT_ABORT if err_msg else EXIT_OK


def _burgers_command(args: argparse.Namespace) -> int:
    from pathlib import Path

    from flowtopo.artifacts import write_field_csv, write_history_csv
    from flowtopo.burgers import burgers_demo, burgers_train_config
    from flowtopo.problems import BurgersSpec

    spec = BurgersSpec() if args.nu is None else BurgersSpec(nu=args.nu)
    config = burgers_train_config(epochs=args.epochs, seed=args.seed, nx=args.grid[0], ny=args.grid[1])
    result = burgers_demo(spec, config)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_history_csv(out / "history.csv", (entry.as_row() for entry in result.train.history))
        write_field_csv(out / "u.csv", result.u, result.grid)
    print(f"residual drop={result.residual_drop:.3g} boundary error={result.boundary_error:.2e}")
    return EXIT_OK if result.train.completed else EXIT_ABORT


def _problems_command(args: argparse.Namespace) -> int:
    from pathlib import Path

    from flowtopo.config import delete_named_problem, list_saved_problems, save_named_problem
    from flowtopo.errors import ProblemError
    from flowtopo.problems import build_problem, load_problem, problem_to_dict

    try:
        if args.dump:
            print(json.dumps(problem_to_dict(build_problem(args.dump)), indent=2))
            return EXIT_OK
        if args.save:
            if not args.source:
                logger.error("--save needs --from BENCHMARK_OR_FILE")
                return EXIT_CONFIG
            source = Path(args.source)
            spec = load_problem(source) if source.is_file() else build_problem(args.source)
            return EXIT_OK if save_named_problem(args.save, problem_to_dict(spec)) else EXIT_ABORT
        if args.delete:
            return EXIT_OK if delete_named_problem(args.delete) else EXIT_ABORT
    except ProblemError as e:
        logger.error(str(e))
        return EXIT_CONFIG

    for name in ("rugby", "pipe-bend", "diffuser", "double-pipe"):
        print(f"benchmark  {name}")
    for name in list_saved_problems():
        print(f"saved      {name}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    if args.command == "run":
        return _run_command(args)
    if args.command == "burgers":
        return _burgers_command(args)
    if args.command == "problems":
        return _problems_command(args)
    if args.command == "plot":
        from flowtopo.plotting import plot_run

        try:
            plot_run(args.run_dir)
        except (ImportError, OSError) as e:
            logger.error(str(e))
            return EXIT_ABORT
        return EXIT_OK
    if args.command == "reevaluate":
        from flowtopo.errors import ConfigError
        from flowtopo.runner import reevaluate

        try:
            print(f"J={reevaluate(args.run_dir):.17g}")
        except ConfigError as e:
            logger.error(str(e))
            return EXIT_CONFIG
        return EXIT_OK
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
