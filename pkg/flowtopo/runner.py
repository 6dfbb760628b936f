"""Run orchestration: single runs, seed sweeps and re-evaluation of saved runs."""

from __future__ import annotations

import asyncio
import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from flowtopo import __version__
from flowtopo.artifacts import read_summary, write_field_csv, write_history_csv, write_pgm, write_summary
from flowtopo.config import RunConfig, resolve_problem_path, resolve_run_config, write_json_atomic
from flowtopo.errors import ConfigError, ProblemError
from flowtopo.optimizer import (
    FlowObjective,
    FlowSolution,
    TrainConfig,
    TrainResult,
    build_flow_objective,
    initial_parameters,
    optimize,
)
from flowtopo.physics import MaterialModel
from flowtopo.problems import ProblemSpec, build_problem, load_problem, problem_from_dict, problem_to_dict

logger = logging.getLogger(__name__)

_THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


@dataclass
class RunSummary:
    seed: int
    problem: str
    objective: float
    volume_violation: float
    residual_norms: tuple[float, float, float]
    wall_seconds: float
    epochs_completed: int
    status: str = "completed"
    error: str = ""
    config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        values: dict[str, Any] = {
            "problem": self.problem,
            "seed": self.seed,
            "status": self.status,
            "J": self.objective,
            "volume_violation": self.volume_violation,
            "R1": self.residual_norms[0],
            "R2": self.residual_norms[1],
            "R3": self.residual_norms[2],
            "epochs_completed": self.epochs_completed,
            "wall_seconds": self.wall_seconds,
            "threads": thread_info(),
            "version": __version__,
        }
        if self.error:
            values["error"] = self.error.replace("\n", " ")
        values.update({f"config.{key}": _echo(value) for key, value in self.config.items()})
        return values


def _echo(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    return str(value)


def thread_info() -> str:
    pinned = [f"{name}={os.environ[name]}" for name in _THREAD_VARIABLES if name in os.environ]
    return ",".join(pinned) or f"cpus={os.cpu_count()}"


# ── Configuration to solver objects ──────────────────────────


def resolve_problem(config: RunConfig) -> ProblemSpec:
    if config.get("benchmark"):
        problem = build_problem(config["benchmark"])
    else:
        problem = load_problem(resolve_problem_path(config["config"]))
    if config.get("permeability") == "simp":
        problem = replace(problem, material=MaterialModel.simp())
    return problem


def to_train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=config["epochs"],
        seed=config["seed"],
        nx=config["nx"],
        ny=config["ny"],
        bc_samples=config["bc_samples"],
        hidden=tuple(config["hidden"]),
        snapshot_epochs=tuple(config["snapshot_epochs"]),
        log_every=config["log_every"],
        ghost_mode=config["ghost_mode"],
        density_conditioning=config["density_conditioning"],
    )


# ── Single run ───────────────────────────────────────────────


def run(config: RunConfig) -> tuple[RunSummary | None, str]:
    """Train one seed and write its artifacts. Returns (summary, error_msg)."""
    try:
        config = resolve_run_config(dict(config))
        problem = resolve_problem(config)
        train_config = to_train_config(config)
        objective = build_flow_objective(problem, train_config)
    except (ConfigError, ProblemError, np.linalg.LinAlgError) as e:
        logger.error(f"Cannot start run: {e}")
        return None, str(e)

    start = time.perf_counter()
    result = optimize(objective, initial_parameters(objective, train_config), train_config)
    elapsed = time.perf_counter() - start

    solution = objective.solution(result.theta)
    summary = RunSummary(
        seed=config["seed"],
        problem=problem.name,
        objective=solution.objective,
        volume_violation=solution.volume_violation,
        residual_norms=solution.residual_norms,
        wall_seconds=elapsed,
        epochs_completed=result.epochs_completed,
        status="completed" if result.completed else "aborted",
        error=result.error or "",
        config=dict(config),
    )

    out = Path(config["out"])
    try:
        write_run_artifacts(out, config, problem, objective, result, solution, summary)
    except OSError as e:
        logger.error(f"Failed to write artifacts to {e.filename or out}: {e}")
        return summary, f"Failed to write artifacts to {e.filename or out}: {e}"

    logger.info(f"Run finished: J={summary.objective:.6g} |C1|={summary.volume_violation:.3e} in {elapsed:.1f}s")
    return summary, result.error or ""


def write_run_artifacts(
    out: Path,
    config: RunConfig,
    problem: ProblemSpec,
    objective: FlowObjective,
    result: TrainResult,
    solution: FlowSolution,
    summary: RunSummary,
) -> None:
    grid = objective.grid
    out.mkdir(parents=True, exist_ok=True)
    (out / "snapshots").mkdir(exist_ok=True)

    write_history_csv(out / "history.csv", (entry.as_row() for entry in result.history))
    for epoch, density in sorted(result.snapshots.items()):
        write_field_csv(out / "snapshots" / f"density_{epoch}.csv", density, grid)

    for name in ("u", "v", "p", "rho", "r1", "r2", "r3"):
        write_field_csv(out / f"{name}.csv", getattr(solution, name), grid)
    write_pgm(out / "rho.pgm", solution.rho)
    np.save(out / "theta.npy", result.theta)

    if not write_json_atomic(out / "config.json", dict(config), mode=0o644):
        raise OSError(f"could not write {out / 'config.json'}")
    if not write_json_atomic(out / "problem.json", problem_to_dict(problem), mode=0o644):
        raise OSError(f"could not write {out / 'problem.json'}")
    write_summary(out / "summary.txt", summary.to_dict())


def reevaluate(run_dir: str | Path) -> float:
    """Recompute the dissipated power of a saved run from its final parameters."""
    run_dir = Path(run_dir)
    try:
        config = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
        problem = problem_from_dict(json.loads((run_dir / "problem.json").read_text(encoding="utf-8")))
        theta = np.load(run_dir / "theta.npy")
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot reload run from {run_dir}: {e}") from e
    objective = build_flow_objective(problem, to_train_config(resolve_run_config(config)))
    return objective.solution(theta).objective


def summary_objective(run_dir: str | Path) -> float:
    return float(read_summary(Path(run_dir) / "summary.txt")["J"])


# ── Seed sweeps ──────────────────────────────────────────────


@dataclass
class SweepReport:
    rows: list[dict[str, Any]]
    statistics: dict[str, float]
    successes: int
    failures: int


def sweep_statistics(values: list[float]) -> dict[str, float]:
    """Mean, median, population std, min and max."""
    if not values:
        return {name: float("nan") for name in ("mean", "median", "std", "min", "max")}
    data = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(np.mean(data)),
        "median": float(np.median(data)),
        "std": float(np.std(data)),
        "min": float(np.min(data)),
        "max": float(np.max(data)),
    }


async def sweep_async(config: RunConfig, n: int | None = None) -> SweepReport:
    """Run seeds ``seed .. seed+n-1`` concurrently, each in ``<out>/seed_<k>/``."""
    config = resolve_run_config(dict(config))
    n = n if n is not None else config["sweep"]
    if n < 1:
        raise ConfigError(f"sweep needs at least one seed, got {n}")
    out = Path(config["out"])
    semaphore = asyncio.Semaphore(config["workers"])

    async def one(seed: int) -> tuple[int, RunSummary | None, str]:
        seed_config = {**config, "seed": seed, "sweep": 1, "out": str(out / f"seed_{seed}")}
        async with semaphore:
            summary, err_msg = await asyncio.to_thread(run, seed_config)
        return seed, summary, err_msg

    outcomes = await asyncio.gather(*(one(config["seed"] + k) for k in range(n)))

    rows = []
    objectives = []
    for seed, summary, err_msg in outcomes:
        ok = summary is not None and not err_msg
        rows.append(
            {
                "seed": seed,
                "status": "ok" if ok else "failed",
                "J": summary.objective if summary is not None else float("nan"),
                "volume_violation": summary.volume_violation if summary is not None else float("nan"),
                "wall_seconds": summary.wall_seconds if summary is not None else float("nan"),
                "error": err_msg.replace("\n", " "),
            }
        )
        if ok:
            objectives.append(summary.objective)
        else:
            logger.error(f"Seed {seed} failed: {err_msg}")

    report = SweepReport(rows, sweep_statistics(objectives), len(objectives), n - len(objectives))
    write_sweep_report(out, report)
    return report


def sweep(config: RunConfig, n: int | None = None) -> SweepReport:
    return asyncio.run(sweep_async(config, n))


def write_sweep_report(out: Path, report: SweepReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(report.rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in report.rows:
            writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    write_summary(
        out / "sweep_summary.txt",
        {**report.statistics, "successes": report.successes, "failures": report.failures},
    )
