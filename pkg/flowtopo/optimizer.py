"""Penalized loss assembly and the single-loop training engine."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from flowtopo import autodiff as ad
from flowtopo import grid as fd
from flowtopo.autodiff import Tape, Value
from flowtopo.errors import NonFiniteLossError
from flowtopo.field_model import (
    DENSITY,
    FieldModel,
    KernelConfig,
    MlpConfig,
    ParameterSet,
    build_cache,
)
from flowtopo.grid import GhostMode, Grid
from flowtopo.physics import dissipated_power, residuals, squared_norm, volume_constraint
from flowtopo.problems import ProblemSpec, boundary_samples

logger = logging.getLogger(__name__)

DEFAULT_SNAPSHOT_EPOCHS = (1, 1000, 10000, 20000, 30000, 40000, 50000)


# ── Schedules ────────────────────────────────────────────────


@dataclass(frozen=True)
class PenaltySchedule:
    initial: float = 1.0
    growth: float = 1.05
    period: int = 50
    cap: float = 500.0


def update_penalty(schedule: PenaltySchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return min(schedule.cap, schedule.initial * schedule.growth ** (epoch // schedule.period))


def decay_epochs(epochs: int, count: int = 4) -> tuple[int, ...]:
    """``count`` equally spaced decay points strictly inside a run of ``epochs``."""
    points = {round(epochs * k / (count + 1)) for k in range(1, count + 1)}
    return tuple(sorted(p for p in points if 0 < p < epochs))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.75
    decay_at: tuple[int, ...] = ()

    @classmethod
    def create(
        cls, theta: np.ndarray, epochs: int = 0, learning_rate: float = 1e-3, decay: float = 0.75, decay_count: int = 4
    ) -> AdamState:
        return cls(
            m=np.zeros_like(theta),
            v=np.zeros_like(theta),
            learning_rate=learning_rate,
            decay=decay,
            decay_at=decay_epochs(epochs, decay_count) if epochs else (),
        )

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay ** sum(1 for e in self.decay_at if epoch >= e)


def adam_step(theta: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update at the learning rate scheduled for ``state.step``."""
    if grads.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError(f"adam_step: shapes {theta.shape}, {grads.shape}, {state.m.shape} do not match")
    lr = state.lr_at(state.step)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ── Dynamic weights ──────────────────────────────────────────


@dataclass(frozen=True)
class DynamicWeights:
    """Loss-term weights; reference terms stay at 1, dynamic ones track the reference gradient."""

    alpha: dict[str, float]
    reference: tuple[str, ...] = ("R1", "R2")
    dynamic: tuple[str, ...] = ("R3", "C1")
    lam: float = 0.9
    eps: float = 1e-8
    # binds only when a dynamic term's gradient vanishes and the eps floor takes over
    cap: float = 1e12

    @classmethod
    def initial(
        cls, reference: tuple[str, ...] = ("R1", "R2"), dynamic: tuple[str, ...] = ("R3", "C1"), **kwargs
    ) -> DynamicWeights:
        return cls({name: 1.0 for name in (*reference, *dynamic)}, tuple(reference), tuple(dynamic), **kwargs)

    def __getitem__(self, name: str) -> float:
        return self.alpha.get(name, 1.0)


@dataclass(frozen=True)
class GradientStats:
    reference_max: float
    reference_term: str | None
    term_means: dict[str, float]
    term_max: dict[str, float]


def gradient_stats(grads: dict[str, np.ndarray], weights: DynamicWeights) -> GradientStats:
    term_max = {name: float(np.max(np.abs(g))) if g.size else 0.0 for name, g in grads.items()}
    term_means = {name: float(np.mean(np.abs(g))) if g.size else 0.0 for name, g in grads.items()}
    reference_term = None
    reference_max = 0.0
    for name in weights.reference:
        if name in term_max and (reference_term is None or term_max[name] > reference_max):
            reference_term, reference_max = name, term_max[name]
    return GradientStats(reference_max, reference_term, term_means, term_max)


def update_weights(weights: DynamicWeights, stats: GradientStats) -> DynamicWeights:
    alpha = dict(weights.alpha)
    for name in weights.reference:
        alpha[name] = 1.0
    for name in weights.dynamic:
        mean = stats.term_means.get(name, 0.0)
        previous = alpha.get(name, 1.0)
        if stats.reference_max == 0.0 and mean == 0.0:
            continue
        target = stats.reference_max / max(mean, weights.eps)
        alpha[name] = min(weights.cap, (1.0 - weights.lam) * previous + weights.lam * target)
    logger.debug(f"Updated loss weights: {alpha}")
    return replace(weights, alpha=alpha)


# ── Loss assembly ────────────────────────────────────────────


@dataclass
class LossTerms:
    """Named scalar terms of one epoch, all on the same tape."""

    objective: Value | None
    penalized: dict[str, Value]


@dataclass(frozen=True)
class LossBreakdown:
    epoch: int
    objective: float
    terms: dict[str, float]
    alpha: dict[str, float]
    mu: float
    lr: float
    total: float
    dynamic: tuple[str, ...] = ()

    def scaled(self, name: str) -> float:
        return self.mu * self.alpha[name] * self.terms[name]

    def reconstruct(self) -> float:
        weighted = None
        for name, value in self.terms.items():
            piece = value * self.alpha[name]
            weighted = piece if weighted is None else weighted + piece
        penalty = 0.0 if weighted is None else weighted * self.mu
        return self.objective + penalty

    def as_row(self) -> dict[str, float]:
        row: dict[str, float] = {"epoch": self.epoch, "J": self.objective}
        row.update(self.terms)
        row.update({f"scaled_{name}": self.scaled(name) for name in self.terms})
        row.update({f"alpha_{name}": self.alpha[name] for name in self.dynamic})
        row.update({"mu_p": self.mu, "lr": self.lr, "total": self.total})
        return row


def assemble(terms: LossTerms, mu: float, weights: DynamicWeights, epoch: int = 0, lr: float = math.nan):
    """``J + mu * sum(alpha_i L_i)`` on the tape, plus its breakdown; raises on non-finite terms."""
    alpha = {name: weights[name] for name in terms.penalized}
    objective = terms.objective.item() if terms.objective is not None else 0.0
    values = {name: term.item() for name, term in terms.penalized.items()}

    weighted = None
    for name, term in terms.penalized.items():
        piece = term * alpha[name]
        weighted = piece if weighted is None else weighted + piece
    total = weighted * mu if weighted is not None else None
    if terms.objective is not None:
        total = terms.objective if total is None else terms.objective + total
    if total is None:
        raise ValueError("assemble: no loss terms")

    breakdown = LossBreakdown(epoch, objective, values, alpha, mu, lr, total.item(), tuple(weights.dynamic))
    for name, value in (("J", objective), *values.items()):
        if not np.isfinite(value):
            raise NonFiniteLossError(name, epoch, breakdown)
    if not np.isfinite(breakdown.total):
        raise NonFiniteLossError("total", epoch, breakdown)
    return total, breakdown


class Objective(Protocol):
    reference_terms: tuple[str, ...]
    dynamic_terms: tuple[str, ...]

    def __call__(self, theta: Value) -> LossTerms: ...

    def snapshot(self, theta: np.ndarray) -> np.ndarray | None: ...


# ── Flow problem ─────────────────────────────────────────────


@dataclass(frozen=True)
class FlowFields:
    u: fd.PaddedField
    v: fd.PaddedField
    p: fd.PaddedField
    rho: fd.Field


@dataclass(frozen=True)
class FlowSolution:
    """Numeric interior fields and residual maps for export."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    rho: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    objective: float
    volume_violation: float
    residual_norms: tuple[float, float, float]


class FlowObjective:
    """Dissipated power with the Brinkman residuals and the volume constraint as penalties."""

    reference_terms = ("R1", "R2")
    dynamic_terms = ("R3", "C1")

    def __init__(
        self,
        problem: ProblemSpec,
        grid: Grid,
        model: FieldModel,
        ghost_mode: GhostMode | str = GhostMode.MODEL,
        inequalities=(),
    ):
        self.problem = problem
        self.grid = grid
        self.model = model
        self.ghost_mode = GhostMode(ghost_mode)
        # Each entry maps (FlowFields, Grid) to a scalar C with C <= 0 feasible.
        self.inequalities = tuple(inequalities)
        self.points = grid.query_coordinates(self.ghost_mode)
        model.bind(self.points)

    def fields(self, theta: Value) -> FlowFields:
        columns = self.model.fields(self.points, theta)
        pad = self.grid.to_padded
        return FlowFields(
            u=pad(columns["u"], self.ghost_mode),
            v=pad(columns["v"], self.ghost_mode),
            p=pad(columns["p"], self.ghost_mode),
            rho=self.grid.to_interior(columns[DENSITY], self.ghost_mode),
        )

    def __call__(self, theta: Value) -> LossTerms:
        f = self.fields(theta)
        material = self.problem.material
        r1, r2, r3 = residuals(f.u, f.v, f.p, f.rho, material, self.grid)
        penalized = {
            "R1": squared_norm(r1, self.grid),
            "R2": squared_norm(r2, self.grid),
            "R3": squared_norm(r3, self.grid),
            "C1": volume_constraint(f.rho, self.problem.volume_fraction, self.grid) ** 2,
        }
        for k, inequality in enumerate(self.inequalities, start=1):
            penalized[f"G{k}"] = ad.relu(inequality(f, self.grid)) ** 2
        return LossTerms(dissipated_power(f.u, f.v, f.rho, material, self.grid), penalized)

    def snapshot(self, theta: np.ndarray) -> np.ndarray:
        return np.array(self.fields(Tape().constant(theta)).rho.data)

    def solution(self, theta: np.ndarray) -> FlowSolution:
        f = self.fields(Tape().constant(theta))
        u, v, p, rho = (np.array(x.data) for x in (f.u, f.v, f.p, f.rho))
        material = self.problem.material
        r1, r2, r3 = residuals(u, v, p, rho, material, self.grid)
        return FlowSolution(
            u=fd.interior(u).copy(),
            v=fd.interior(v).copy(),
            p=fd.interior(p).copy(),
            rho=rho,
            r1=r1,
            r2=r2,
            r3=r3,
            objective=float(dissipated_power(u, v, rho, material, self.grid)),
            volume_violation=abs(volume_constraint(rho, self.problem.volume_fraction, self.grid)),
            residual_norms=tuple(float(squared_norm(r, self.grid)) for r in (r1, r2, r3)),
        )


def total_loss(
    theta: np.ndarray | Value, objective: Objective, mu: float, weights: DynamicWeights, epoch: int = 0
) -> tuple[Value, LossBreakdown]:
    if not isinstance(theta, Value):
        theta = Tape().parameter(theta)
    return assemble(objective(theta), mu, weights, epoch)


# ── Training engine ──────────────────────────────────────────


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50_000
    seed: int = 0
    nx: int = 100
    ny: int = 100
    bc_samples: int = 25
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    length_scale: float = 100.0
    nugget: float = 1e-8
    learning_rate: float = 1e-3
    lr_decay: float = 0.75
    lr_decay_count: int = 4
    penalty: PenaltySchedule = field(default_factory=PenaltySchedule)
    weight_lambda: float = 0.9
    weight_eps: float = 1e-8
    weight_cap: float = 1e12
    update_weights: bool = True
    snapshot_epochs: tuple[int, ...] = DEFAULT_SNAPSHOT_EPOCHS
    log_every: int = 500
    ghost_mode: str = GhostMode.MODEL.value
    density_conditioning: str = "inlet_outlet"

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")


@dataclass
class TrainResult:
    theta: np.ndarray
    history: list[LossBreakdown]
    snapshots: dict[int, np.ndarray]
    weights: DynamicWeights
    mu: float
    gradient_stats: GradientStats | None = None
    density: np.ndarray | None = None
    error: str | None = None

    @property
    def completed(self) -> bool:
        return self.error is None

    @property
    def epochs_completed(self) -> int:
        return len(self.history)


def optimize(
    objective: Objective,
    theta0: np.ndarray,
    config: TrainConfig,
    weights: DynamicWeights | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> TrainResult:
    """Single loop: evaluate terms, one batched backward sweep, Adam step, weight update, penalty growth."""
    theta = np.array(theta0, dtype=np.float64)
    adam = AdamState.create(theta, config.epochs, config.learning_rate, config.lr_decay, config.lr_decay_count)
    if weights is None:
        weights = DynamicWeights.initial(
            tuple(objective.reference_terms),
            tuple(objective.dynamic_terms),
            lam=config.weight_lambda,
            eps=config.weight_eps,
            cap=config.weight_cap,
        )
    snapshot_at = set(config.snapshot_epochs)
    result = TrainResult(theta, [], {}, weights, update_penalty(config.penalty, 0))

    for epoch in range(config.epochs):
        mu = update_penalty(config.penalty, epoch)
        lr = adam.lr_at(adam.step)
        tape = Tape()
        leaf = tape.parameter(theta)
        try:
            terms = objective(leaf)
            _, breakdown = assemble(terms, mu, weights, epoch, lr)
        except NonFiniteLossError as e:
            logger.error(f"Training aborted: {e}")
            result.error = str(e)
            break

        names = list(terms.penalized)
        roots = [terms.penalized[name] for name in names]
        if terms.objective is not None:
            roots.append(terms.objective)
        sweeps = tape.backward_many(roots)
        grads = {name: sweeps[k][leaf] for k, name in enumerate(names)}
        total_grad = sweeps[-1][leaf] if terms.objective is not None else np.zeros_like(theta)
        for name, g in grads.items():
            total_grad = total_grad + (mu * weights[name]) * g
        stats = gradient_stats(grads, weights)

        result.history.append(breakdown)
        theta = adam_step(theta, total_grad, adam)
        if config.update_weights:
            weights = update_weights(weights, stats)
        result.theta, result.weights, result.mu, result.gradient_stats = theta, weights, mu, stats

        completed = epoch + 1
        if callback is not None:
            callback(completed, theta)
        if completed in snapshot_at:
            density = objective.snapshot(theta)
            if density is not None:
                result.snapshots[completed] = density
        if config.log_every and (epoch % config.log_every == 0 or completed == config.epochs):
            terms_text = " ".join(f"{name}={value:.3e}" for name, value in breakdown.terms.items())
            logger.info(
                f"epoch {epoch:6d} total={breakdown.total:.4e} J={breakdown.objective:.4e} {terms_text} "
                f"mu_p={mu:.3g} lr={lr:.2e}"
            )

    result.density = objective.snapshot(result.theta)
    return result


def build_flow_objective(problem: ProblemSpec, config: TrainConfig) -> FlowObjective:
    """Grid, boundary data, kernel caches and field model for one flow problem."""
    problem.validate()
    grid = Grid(config.nx, config.ny)
    data = boundary_samples(problem, config.bc_samples, density=config.density_conditioning)
    cache = build_cache(data, KernelConfig((config.length_scale, config.length_scale), config.nugget))
    mlp = MlpConfig(hidden=tuple(config.hidden))
    return FlowObjective(problem, grid, FieldModel(mlp, cache), config.ghost_mode)


def initial_parameters(objective: FlowObjective, config: TrainConfig) -> np.ndarray:
    return ParameterSet.initialize(objective.model.mlp, config.seed).theta


def train(problem: ProblemSpec, config: TrainConfig) -> TrainResult:
    objective = build_flow_objective(problem, config)
    logger.info(
        f"Training '{problem.name}' on {config.nx}x{config.ny} grid for {config.epochs} epochs (seed {config.seed})"
    )
    return optimize(objective, initial_parameters(objective, config), config)
