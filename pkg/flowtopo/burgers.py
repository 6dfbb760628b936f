"""Viscous Burgers validation problem solved with the same field-model stack."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from flowtopo import grid as fd
from flowtopo.autodiff import Tape, Value
from flowtopo.field_model import (
    BoundaryData,
    BoundaryDataSet,
    FieldModel,
    KernelConfig,
    MlpConfig,
    ParameterSet,
    build_cache,
)
from flowtopo.grid import Grid
from flowtopo.optimizer import LossTerms, PenaltySchedule, TrainConfig, TrainResult, optimize
from flowtopo.physics import squared_norm
from flowtopo.problems import BurgersSpec

logger = logging.getLogger(__name__)


def burgers_train_config(**overrides) -> TrainConfig:
    """Demo defaults: 10k epochs, small network, fixed penalty."""
    settings = {
        "epochs": 10_000,
        "nx": 64,
        "ny": 32,
        "bc_samples": 25,
        "hidden": (32, 32, 32),
        "length_scale": 100.0,
        "penalty": PenaltySchedule(cap=1.0),
        "update_weights": False,
        "snapshot_epochs": (),
    }
    settings.update(overrides)
    return TrainConfig(**settings)


def burgers_boundary_data(spec: BurgersSpec, n_bc: int) -> BoundaryDataSet:
    """u = 0 on x = +-1 for all t, and the initial profile on t = 0."""
    (x0, x1), (t0, t1) = spec.x_range, spec.t_range
    t = np.linspace(t0, t1, n_bc)
    x = np.linspace(x0, x1, n_bc)
    points = np.vstack(
        [
            np.column_stack([x, np.full(n_bc, t0)]),
            np.column_stack([np.full(n_bc, x0), t]),
            np.column_stack([np.full(n_bc, x1), t]),
        ]
    )
    _, first = np.unique(points, axis=0, return_index=True)
    points = points[np.sort(first)]
    values = np.where(points[:, 1] == t0, spec.initial_condition(points[:, 0]), 0.0)
    # sin(pi * x) is not exactly zero at x = +-1 in floating point
    values[np.isin(points[:, 0], (x0, x1))] = 0.0
    return BoundaryDataSet({"u": BoundaryData(points, values)}, lower=(x0, t0), upper=(x1, t1), pin_variable=None)


class BurgersObjective:
    """Integrated squared residual of u_t + u u_x - nu u_xx on a space-time grid."""

    reference_terms = ("R",)
    dynamic_terms = ()

    def __init__(self, spec: BurgersSpec, grid: Grid, model: FieldModel):
        self.spec = spec
        self.grid = grid
        self.model = model
        self.points = grid.padded_coordinates()
        model.bind(self.points)

    def field(self, theta: Value) -> fd.PaddedField:
        return self.grid.to_padded(self.model.fields(self.points, theta)["u"])

    def residual(self, u: fd.PaddedField):
        # grid x is space, grid y is time
        return fd.fd_dy(u, self.grid) + fd.interior(u) * fd.fd_dx(u, self.grid) - self.spec.nu * fd.fd_dxx(u, self.grid)

    def __call__(self, theta: Value) -> LossTerms:
        return LossTerms(None, {"R": squared_norm(self.residual(self.field(theta)), self.grid)})

    def snapshot(self, theta: np.ndarray) -> None:
        return None

    def solution(self, theta: np.ndarray) -> np.ndarray:
        return np.array(fd.interior(self.field(Tape().constant(theta)).data))


@dataclass
class BurgersResult:
    spec: BurgersSpec
    grid: Grid
    train: TrainResult
    u: np.ndarray
    boundary_error: float
    residual_history: list[float] = field(default_factory=list)

    @property
    def residual_drop(self) -> float:
        """Ratio of the first to the last integrated residual."""
        if len(self.residual_history) < 2 or self.residual_history[-1] == 0.0:
            return float("inf")
        return self.residual_history[0] / self.residual_history[-1]


def build_burgers_objective(spec: BurgersSpec, config: TrainConfig) -> BurgersObjective:
    (x0, x1), (t0, t1) = spec.x_range, spec.t_range
    grid = Grid(config.nx, config.ny, x0=x0, y0=t0, lx=x1 - x0, ly=t1 - t0)
    data = burgers_boundary_data(spec, config.bc_samples)
    cache = build_cache(data, KernelConfig((config.length_scale, config.length_scale), config.nugget))
    mlp = MlpConfig(hidden=tuple(config.hidden), output_dim=1)
    return BurgersObjective(spec, grid, FieldModel(mlp, cache, state_variables=("u",), density=None))


def boundary_error(objective: BurgersObjective, theta: np.ndarray) -> float:
    data = objective.model.cache["u"].data
    values = objective.model.evaluate(data.points, theta)["u"]
    return float(np.max(np.abs(values - data.values)))


def burgers_demo(spec: BurgersSpec | None = None, config: TrainConfig | None = None) -> BurgersResult:
    spec = spec or BurgersSpec()
    config = config or burgers_train_config()
    objective = build_burgers_objective(spec, config)
    theta0 = ParameterSet.initialize(objective.model.mlp, config.seed).theta
    logger.info(f"Burgers demo: nu={spec.nu:.5g}, {config.nx}x{config.ny} space-time grid, {config.epochs} epochs")
    result = optimize(objective, theta0, config)
    return BurgersResult(
        spec=spec,
        grid=objective.grid,
        train=result,
        u=objective.solution(result.theta),
        boundary_error=boundary_error(objective, result.theta),
        residual_history=[entry.terms["R"] for entry in result.history],
    )
