"""Run configuration and the user config directory for flowtopo."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, TypedDict, cast

from flowtopo.errors import ConfigError, ProblemError

logger = logging.getLogger(__name__)


class RunConfig(TypedDict, total=False):
    """Settings of one optimization run (or one seed of a sweep)."""

    benchmark: str | None
    config: str | None
    nx: int
    ny: int
    epochs: int
    seed: int
    sweep: int
    workers: int
    snapshot_epochs: list[int]
    out: str
    bc_samples: int
    hidden: list[int]
    ghost_mode: str
    density_conditioning: str
    permeability: str
    log_every: int


DEFAULT_RUN_CONFIG: RunConfig = {
    "benchmark": None,
    "config": None,
    "nx": 100,
    "ny": 100,
    "epochs": 50_000,
    "seed": 0,
    "sweep": 1,
    "workers": 2,
    "snapshot_epochs": [1, 1000, 10000, 20000, 30000, 40000, 50000],
    "out": "runs",
    "bc_samples": 25,
    "hidden": [64, 64, 64, 64],
    "ghost_mode": "model",
    "density_conditioning": "inlet_outlet",
    "permeability": "brinkman",
    "log_every": 500,
}

_CHOICES = {
    "ghost_mode": ("model", "extrapolate"),
    "density_conditioning": ("inlet_outlet", "none"),
    "permeability": ("brinkman", "simp"),
}


def resolve_run_config(overrides: dict[str, Any] | None = None) -> RunConfig:
    """Merge overrides into the defaults and validate the result."""
    config = cast(RunConfig, {**DEFAULT_RUN_CONFIG, **{k: v for k, v in (overrides or {}).items() if v is not None}})
    unknown = set(config) - set(RunConfig.__annotations__)
    if unknown:
        raise ConfigError(f"Unknown run settings: {', '.join(sorted(unknown))}")

    if bool(config.get("benchmark")) == bool(config.get("config")):
        raise ConfigError("Exactly one of benchmark or config must be given")
    if config["nx"] < 16 or config["ny"] < 16:
        raise ConfigError(f"Grid must be at least 16x16, got {config['nx']}x{config['ny']}")
    if config["epochs"] < 1:
        raise ConfigError(f"epochs must be at least 1, got {config['epochs']}")
    if config["sweep"] < 1:
        raise ConfigError(f"sweep must be at least 1, got {config['sweep']}")
    if config["workers"] < 1:
        raise ConfigError(f"workers must be at least 1, got {config['workers']}")
    if config["bc_samples"] < 2:
        raise ConfigError(f"bc_samples must be at least 2, got {config['bc_samples']}")
    if not config["hidden"] or min(config["hidden"]) < 1:
        raise ConfigError(f"hidden layer widths must be positive, got {config['hidden']}")
    if config["log_every"] < 0:
        raise ConfigError("log_every must be non-negative")
    for key, choices in _CHOICES.items():
        if config[key] not in choices:
            raise ConfigError(f"{key} must be one of {', '.join(choices)}, got '{config[key]}'")

    snapshots = sorted({int(e) for e in config["snapshot_epochs"]})
    if snapshots and snapshots[0] < 1:
        raise ConfigError(f"snapshot epochs must be positive, got {snapshots[0]}")
    dropped = [e for e in snapshots if e > config["epochs"]]
    if dropped:
        logger.warning(f"Ignoring snapshot epochs beyond the run length: {dropped}")
    config["snapshot_epochs"] = [e for e in snapshots if e <= config["epochs"]]
    config["hidden"] = [int(w) for w in config["hidden"]]
    return config


# ── User config directory ────────────────────────────────────


def get_config_dir() -> Path:
    """Return the configuration directory, creating it if necessary."""
    config_dir = Path.home() / ".flowtopo"
    if not config_dir.exists():
        try:
            config_dir.mkdir(parents=True, exist_ok=True)
            config_dir.chmod(0o700)
        except Exception as e:
            logger.error(f"Failed to create config directory: {e}")
    return config_dir


def get_problems_dir() -> Path:
    return get_config_dir() / "problems"


def write_json_atomic(path: Path, data: Any, mode: int = 0o600) -> bool:
    """Write JSON through a temp file and ``os.replace``; returns False on failure."""
    path = Path(path)
    temp_file = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with temp_file.open("w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)
        temp_file.chmod(mode)
        os.replace(temp_file, path)
    except Exception as e:
        logger.error(f"Failed to write {path}: {e}")
        try:
            temp_file.unlink(missing_ok=True)
        except OSError:
            pass
        return False
    return True


def list_saved_problems() -> list[str]:
    problems_dir = get_problems_dir()
    if not problems_dir.exists():
        return []
    return sorted(p.stem for p in problems_dir.glob("*.json"))


def save_named_problem(name: str, data: dict[str, Any]) -> bool:
    """Store a problem definition under ``~/.flowtopo/problems/<name>.json``."""
    if not name or Path(name).name != name:
        logger.error(f"Invalid problem name: {name!r}")
        return False
    return write_json_atomic(get_problems_dir() / f"{name}.json", data)


def delete_named_problem(name: str) -> bool:
    path = get_problems_dir() / f"{name}.json"
    try:
        path.unlink()
    except OSError as e:
        logger.error(f"Failed to delete saved problem {name}: {e}")
        return False
    return True


def resolve_problem_path(reference: str) -> Path:
    """A path to an existing file, or the name of a saved problem."""
    path = Path(reference).expanduser()
    if path.is_file():
        return path
    saved = get_problems_dir() / f"{reference}.json"
    if saved.is_file():
        return saved
    raise ProblemError(f"No problem file or saved problem named '{reference}'")
