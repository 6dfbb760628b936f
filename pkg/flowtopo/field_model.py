"""Multi-output field model: network mean plus kernel boundary correction."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np
from scipy.linalg import cho_factor, cho_solve, ldl
from scipy.special import expit

from flowtopo import autodiff as ad
from flowtopo.autodiff import Tape, Value
from flowtopo.errors import FactorizationError, ProblemError

logger = logging.getLogger(__name__)

STATE_VARIABLES = ("u", "v", "p")
DENSITY = "rho"
DENSITY_FLUID_TARGET = 1.0 - 1e-3

_ACTIVATIONS = {"tanh": ad.tanh, "logistic": ad.logistic}


# ── Network mean ─────────────────────────────────────────────


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 2
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    output_dim: int = 4
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"Unknown activation '{self.activation}', expected one of {sorted(_ACTIVATIONS)}")
        if min(self.layer_sizes) < 1:
            raise ValueError(f"Layer widths must be positive, got {self.layer_sizes}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)


@dataclass(frozen=True)
class LayerSlot:
    """Offsets of one dense layer inside the flat parameter vector."""

    fan_in: int
    fan_out: int
    weight_offset: int
    bias_offset: int

    @property
    def end(self) -> int:
        return self.bias_offset + self.fan_out


@lru_cache(maxsize=32)
def parameter_layout(config: MlpConfig) -> tuple[LayerSlot, ...]:
    slots = []
    offset = 0
    sizes = config.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:], strict=True):
        slot = LayerSlot(fan_in, fan_out, offset, offset + fan_in * fan_out)
        slots.append(slot)
        offset = slot.end
    return tuple(slots)


@dataclass
class ParameterSet:
    """Flat float64 parameter vector together with its layer layout."""

    theta: np.ndarray
    config: MlpConfig = field(default_factory=MlpConfig)

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=np.float64).ravel()
        expected = parameter_layout(self.config)[-1].end
        if self.theta.size != expected:
            raise ValueError(f"Parameter vector has {self.theta.size} entries, layout needs {expected}")

    @property
    def layout(self) -> tuple[LayerSlot, ...]:
        return parameter_layout(self.config)

    @property
    def size(self) -> int:
        return self.theta.size

    @classmethod
    def initialize(cls, config: MlpConfig, seed: int | np.random.Generator = 0) -> ParameterSet:
        """Glorot-uniform weights and zero biases."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        theta = np.zeros(parameter_layout(config)[-1].end)
        for slot in parameter_layout(config):
            limit = np.sqrt(6.0 / (slot.fan_in + slot.fan_out))
            theta[slot.weight_offset : slot.bias_offset] = rng.uniform(-limit, limit, slot.fan_in * slot.fan_out)
        return cls(theta, config)

    @classmethod
    def from_layers(cls, config: MlpConfig, layers: list[tuple[np.ndarray, np.ndarray]]) -> ParameterSet:
        pieces = []
        for (weights, biases), slot in zip(layers, parameter_layout(config), strict=True):
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != (slot.fan_in, slot.fan_out) or np.shape(biases) != (slot.fan_out,):
                raise ValueError(f"Layer shapes {weights.shape}/{np.shape(biases)} do not match {slot}")
            pieces.extend([weights.ravel(), np.asarray(biases, dtype=np.float64)])
        return cls(np.concatenate(pieces), config)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (
                self.theta[slot.weight_offset : slot.bias_offset].reshape(slot.fan_in, slot.fan_out),
                self.theta[slot.bias_offset : slot.end],
            )
            for slot in self.layout
        ]


def mean_forward(points: np.ndarray, theta: Value | ParameterSet, config: MlpConfig | None = None) -> Value:
    """Network outputs at ``points``, one column per output variable.

    With a ``ParameterSet`` the pass is recorded on a throwaway tape.
    """
    if isinstance(theta, ParameterSet):
        config = theta.config
        theta = Tape().constant(theta.theta)
    if config is None:
        raise ValueError("mean_forward needs an MlpConfig when theta is a tape value")

    activation = _ACTIVATIONS[config.activation]
    h = theta.tape.constant(np.asarray(points, dtype=np.float64).reshape(-1, config.input_dim))
    slots = parameter_layout(config)
    for depth, slot in enumerate(slots):
        weights = theta[slot.weight_offset : slot.bias_offset].reshape(slot.fan_in, slot.fan_out)
        biases = theta[slot.bias_offset : slot.end]
        h = ad.broadcast_add(h @ weights, biases)
        if depth < len(slots) - 1:
            h = activation(h)
    return h


# ── Kernel and boundary data ─────────────────────────────────


@dataclass(frozen=True)
class KernelConfig:
    length_scales: tuple[float, ...] = (100.0, 100.0)
    nugget: float = 1e-8
    # Iterative-refinement sweeps that remove the nugget's bias from the boundary correction.
    refine_steps: int = 2

    def __post_init__(self) -> None:
        if any(phi <= 0 for phi in self.length_scales):
            raise ValueError(f"Kernel length scales must be positive, got {self.length_scales}")
        if self.nugget < 0:
            raise ValueError(f"Kernel nugget must be non-negative, got {self.nugget}")
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be non-negative")


def kernel_matrix(a: np.ndarray, b: np.ndarray, config: KernelConfig) -> np.ndarray:
    """Cross-covariance ``exp(-sum_k phi_k (a_k - b_k)^2)``, no nugget."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    phi = np.asarray(config.length_scales, dtype=np.float64)
    sq = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        sq += phi[k] * np.subtract.outer(a[:, k], b[:, k]) ** 2
    return np.exp(-sq)


def kernel_eval(x: np.ndarray, x_prime: np.ndarray, config: KernelConfig) -> float:
    value = float(kernel_matrix(x, x_prime, config)[0, 0])
    if np.array_equal(np.asarray(x, dtype=np.float64), np.asarray(x_prime, dtype=np.float64)):
        value += config.nugget
    return value


@dataclass(frozen=True)
class BoundaryData:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        values = np.array(self.values, dtype=np.float64).ravel()
        if len(points) != len(values):
            raise ProblemError(f"{len(points)} boundary points but {len(values)} values")
        points.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class BoundaryDataSet:
    """Known values per variable; the pin variable holds a single datum anywhere in the domain."""

    variables: Mapping[str, BoundaryData]
    lower: tuple[float, float] = (0.0, 0.0)
    upper: tuple[float, float] = (1.0, 1.0)
    pin_variable: str | None = "p"

    def __getitem__(self, name: str) -> BoundaryData:
        return self.variables[name]

    def __contains__(self, name: str) -> bool:
        return name in self.variables

    def validate(self) -> None:
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(upper - lower))))
        for name, data in self.variables.items():
            if len(data) == 0:
                raise ProblemError(f"Boundary set for '{name}' is empty")
            if not (np.isfinite(data.points).all() and np.isfinite(data.values).all()):
                raise ProblemError(f"Boundary set for '{name}' contains non-finite entries")
            if len(np.unique(data.points, axis=0)) != len(data):
                raise ProblemError(f"Boundary set for '{name}' contains duplicate points")
            if name == self.pin_variable:
                if len(data) != 1:
                    raise ProblemError(f"'{name}' must be pinned at exactly one point, got {len(data)}")
                continue
            inside = np.all((data.points >= lower - tol) & (data.points <= upper + tol), axis=1)
            on_edge = np.any(
                (np.abs(data.points - lower) <= tol) | (np.abs(data.points - upper) <= tol),
                axis=1,
            )
            bad = np.flatnonzero(~(inside & on_edge))
            if bad.size:
                raise ProblemError(f"Boundary set for '{name}' has point {tuple(data.points[bad[0]])} off the boundary")


# ── Cached factorizations ────────────────────────────────────


@dataclass(frozen=True)
class VariableCache:
    name: str
    data: BoundaryData
    gram: np.ndarray
    factor: tuple[np.ndarray, bool]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor, rhs, check_finite=False)


class KernelCache:
    """Per-variable Cholesky factors, built once and reused for every evaluation."""

    def __init__(self, config: KernelConfig):
        self.config = config
        self.variables: dict[str, VariableCache] = {}
        self.factorizations: Counter[str] = Counter()
        self._weights: dict[tuple[str, bytes], np.ndarray] = {}

    def __contains__(self, name: str) -> bool:
        return name in self.variables

    def __getitem__(self, name: str) -> VariableCache:
        return self.variables[name]

    def add(self, name: str, data: BoundaryData) -> VariableCache:
        gram = kernel_matrix(data.points, data.points, self.config)
        matrix = gram + self.config.nugget * np.eye(len(data))
        try:
            factor = cho_factor(matrix, lower=True)
        except np.linalg.LinAlgError as err:
            raise FactorizationError(name, smallest_pivot(matrix), self.config.nugget) from err
        self.factorizations[name] += 1
        entry = VariableCache(name, data, gram, factor)
        self.variables[name] = entry
        logger.debug(f"Factorized kernel matrix for '{name}' ({len(data)} samples)")
        return entry

    def weights(self, name: str, query: np.ndarray) -> np.ndarray:
        """``k(query, X) K^-1`` for one variable, memoized per query set."""
        query = np.ascontiguousarray(query, dtype=np.float64)
        key = (name, query.tobytes())
        cached = self._weights.get(key)
        if cached is not None:
            return cached

        entry = self.variables[name]
        cross = kernel_matrix(entry.data.points, query, self.config)
        solution = entry.solve(cross)
        for _ in range(self.config.refine_steps):
            solution = solution + entry.solve(cross - entry.gram @ solution)
        weights = np.ascontiguousarray(solution.T)
        weights.setflags(write=False)

        if len(self._weights) >= 16:
            self._weights.pop(next(iter(self._weights)))
        self._weights[key] = weights
        return weights


def smallest_pivot(matrix: np.ndarray) -> float:
    _, d, _ = ldl(matrix, lower=True)
    return float(np.min(np.linalg.eigvalsh(d)))


def build_cache(data: BoundaryDataSet, config: KernelConfig) -> KernelCache:
    data.validate()
    cache = KernelCache(config)
    for name, variable in data.variables.items():
        cache.add(name, variable)
    return cache


# ── Projection ───────────────────────────────────────────────


@dataclass(frozen=True)
class ProjectionConfig:
    slope: float = 12.0
    center: float = 0.5

    def inverse(self, rho: float) -> float:
        if not 0.0 < rho < 1.0:
            raise ValueError(f"Projection inverse needs a value in (0, 1), got {rho}")
        return self.center + float(np.log(rho / (1.0 - rho))) / self.slope


def project(z, config: ProjectionConfig | None = None):
    """Logistic projection ``1 / (1 + exp(-slope (z - center)))``."""
    config = config or ProjectionConfig()
    if isinstance(z, Value):
        return ad.logistic((z - config.center) * config.slope)
    out = expit(config.slope * (np.asarray(z, dtype=np.float64) - config.center))
    return float(out) if out.ndim == 0 else out


# ── Field model ──────────────────────────────────────────────


class FieldModel:
    """Network mean with a per-variable kernel correction that interpolates boundary data."""

    def __init__(
        self,
        mlp: MlpConfig,
        cache: KernelCache,
        state_variables: tuple[str, ...] = STATE_VARIABLES,
        density: str | None = DENSITY,
        projection: ProjectionConfig | None = None,
    ):
        self.mlp = mlp
        self.cache = cache
        self.state_variables = tuple(state_variables)
        self.density = density
        self.projection = projection or ProjectionConfig()
        if mlp.output_dim != len(self.outputs):
            raise ValueError(f"Network has {mlp.output_dim} outputs but the model needs {len(self.outputs)}")

    @property
    def outputs(self) -> tuple[str, ...]:
        return self.state_variables + ((self.density,) if self.density else ())

    def bind(self, points: np.ndarray) -> FieldModel:
        """Precompute the correction weights for a query lattice used every epoch."""
        for name in self.outputs:
            if name in self.cache:
                self.cache.weights(name, points)
        return self

    def fields(self, points: np.ndarray, theta: Value) -> dict[str, Value]:
        """Corrected fields at ``points`` as (n, 1) columns, density projected."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, self.mlp.input_dim)
        n = len(points)
        blocks = [points]
        spans: dict[str, tuple[int, int]] = {}
        offset = n
        for name in self.outputs:
            if name in self.cache:
                size = len(self.cache[name].data)
                spans[name] = (offset, offset + size)
                blocks.append(self.cache[name].data.points)
                offset += size

        means = mean_forward(np.vstack(blocks), theta, self.mlp)
        result: dict[str, Value] = {}
        for col, name in enumerate(self.outputs):
            z = means[:n, col : col + 1]
            if name in spans:
                lo, hi = spans[name]
                residual = self.cache[name].data.values.reshape(-1, 1) - means[lo:hi, col : col + 1]
                z = z + self.cache.weights(name, points) @ residual
            if name == self.density:
                z = project(z, self.projection)
            result[name] = z
        return result

    def evaluate(self, points: np.ndarray, theta: np.ndarray) -> dict[str, np.ndarray]:
        """Numeric fields for a plain parameter vector, each shaped (n,)."""
        values = self.fields(points, Tape().constant(theta))
        return {name: np.array(value.data).ravel() for name, value in values.items()}


def conditional_field(points: np.ndarray, theta: Value, model: FieldModel) -> Value:
    """All model outputs at ``points`` as an (n, n_outputs) block, ordered as ``model.outputs``."""
    columns = model.fields(points, theta)
    return ad.concat([columns[name] for name in model.outputs], axis=1)
