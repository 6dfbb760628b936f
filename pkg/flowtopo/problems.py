"""Benchmark problem definitions, boundary sampling and JSON problem files."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from flowtopo.config import write_json_atomic
from flowtopo.errors import ProblemError
from flowtopo.field_model import (
    DENSITY,
    DENSITY_FLUID_TARGET,
    BoundaryData,
    BoundaryDataSet,
    ProjectionConfig,
)
from flowtopo.physics import MaterialModel

logger = logging.getLogger(__name__)

FLUX_TOLERANCE = 1e-12


class BenchmarkId(str, Enum):
    RUGBY = "rugby"
    PIPE_BEND = "pipe-bend"
    DIFFUSER = "diffuser"
    DOUBLE_PIPE = "double-pipe"
    BURGERS = "burgers"


FLOW_BENCHMARKS = (BenchmarkId.RUGBY, BenchmarkId.PIPE_BEND, BenchmarkId.DIFFUSER, BenchmarkId.DOUBLE_PIPE)


class Edge(str, Enum):
    BOTTOM = "bottom"
    RIGHT = "right"
    TOP = "top"
    LEFT = "left"


# Sign turning (u, v) into the outward normal velocity, and which component that uses.
_OUTWARD = {
    Edge.BOTTOM: (1, -1.0),
    Edge.RIGHT: (0, 1.0),
    Edge.TOP: (1, 1.0),
    Edge.LEFT: (0, -1.0),
}


@dataclass(frozen=True)
class VelocityProfile:
    """Velocity component along one edge segment, as a function of the edge coordinate."""

    kind: str = "zero"
    peak: float = 0.0
    interval: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if self.kind not in ("parabolic", "uniform", "zero"):
            raise ProblemError(f"Unknown velocity profile '{self.kind}'")
        a, b = self.interval
        if not a < b:
            raise ProblemError(f"Profile interval must satisfy a < b, got {self.interval}")

    def __call__(self, s):
        s = np.asarray(s, dtype=np.float64)
        a, b = self.interval
        inside = (s >= a) & (s <= b)
        if self.kind == "parabolic":
            values = self.peak * 4.0 * (s - a) * (b - s) / (b - a) ** 2
        elif self.kind == "uniform":
            values = np.full(s.shape, float(self.peak))
        else:
            values = np.zeros(s.shape)
        return np.where(inside, values, 0.0)

    def integral(self) -> float:
        a, b = self.interval
        if self.kind == "parabolic":
            return 2.0 / 3.0 * self.peak * (b - a)
        if self.kind == "uniform":
            return self.peak * (b - a)
        return 0.0


@dataclass(frozen=True)
class BoundarySegment:
    edge: Edge
    interval: tuple[float, float]
    u: VelocityProfile
    v: VelocityProfile

    @classmethod
    def make(
        cls,
        edge: Edge | str,
        interval: tuple[float, float],
        u: tuple[str, float] = ("zero", 0.0),
        v: tuple[str, float] = ("zero", 0.0),
    ) -> BoundarySegment:
        interval = (float(interval[0]), float(interval[1]))
        return cls(Edge(edge), interval, VelocityProfile(*u, interval), VelocityProfile(*v, interval))

    def contains(self, s, *, strict: bool = False):
        a, b = self.interval
        s = np.asarray(s, dtype=np.float64)
        return (s > a) & (s < b) if strict else (s >= a) & (s <= b)

    def outward_flux(self) -> float:
        component, sign = _OUTWARD[self.edge]
        return sign * (self.u, self.v)[component].integral()


@dataclass(frozen=True)
class ProblemSpec:
    """Flow problem on the unit square: prescribed boundary velocities, no-slip elsewhere."""

    name: str
    segments: tuple[BoundarySegment, ...]
    volume_fraction: float
    material: MaterialModel = field(default_factory=MaterialModel)
    # corners are never strictly inside an opening
    pressure_pin: tuple[float, float] = (0.0, 0.0)

    def net_flux(self) -> float:
        return math.fsum(segment.outward_flux() for segment in self.segments)

    def validate(self) -> None:
        if not 0.0 < self.volume_fraction < 1.0:
            raise ProblemError(f"Volume fraction must lie in (0, 1), got {self.volume_fraction}")
        flux = self.net_flux()
        if abs(flux) > FLUX_TOLERANCE:
            raise ProblemError(f"Problem '{self.name}' is not flux balanced (net outflow {flux:.3e})")
        for segment in self.segments:
            a, b = segment.interval
            if a < 0.0 or b > 1.0:
                raise ProblemError(f"Segment interval {segment.interval} leaves the {segment.edge.value} edge")

    def velocity(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Prescribed (u, v) at boundary points; the first segment containing a point wins."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        u = np.zeros(len(points))
        v = np.zeros(len(points))
        assigned = np.zeros(len(points), dtype=bool)
        for segment in self.segments:
            on_edge, s = edge_coordinate(points, segment.edge)
            hit = on_edge & segment.contains(s) & ~assigned
            u[hit] = segment.u(s[hit])
            v[hit] = segment.v(s[hit])
            assigned |= hit
        return u, v

    def on_opening(self, points: np.ndarray) -> np.ndarray:
        return opening_mask(self.segments, points)


@dataclass(frozen=True)
class BurgersSpec:
    nu: float = 0.01 / math.pi
    x_range: tuple[float, float] = (-1.0, 1.0)
    t_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if self.nu <= 0:
            raise ProblemError(f"Viscosity must be positive, got {self.nu}")

    def initial_condition(self, x):
        return -np.sin(np.pi * np.asarray(x, dtype=np.float64))


# ── Geometry helpers ─────────────────────────────────────────


def edge_coordinate(points: np.ndarray, edge: Edge, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """(on-edge mask, coordinate along the edge) for points of the unit square."""
    x, y = points[:, 0], points[:, 1]
    if edge is Edge.BOTTOM:
        return np.abs(y) <= tol, x
    if edge is Edge.TOP:
        return np.abs(y - 1.0) <= tol, x
    if edge is Edge.LEFT:
        return np.abs(x) <= tol, y
    return np.abs(x - 1.0) <= tol, y


def edge_points(edge: Edge, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if edge is Edge.BOTTOM:
        return np.column_stack([s, np.zeros_like(s)])
    if edge is Edge.TOP:
        return np.column_stack([s, np.ones_like(s)])
    if edge is Edge.LEFT:
        return np.column_stack([np.zeros_like(s), s])
    return np.column_stack([np.ones_like(s), s])


def opening_mask(segments: tuple[BoundarySegment, ...], points: np.ndarray) -> np.ndarray:
    """Mask of points strictly inside an inlet/outlet interval."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    mask = np.zeros(len(points), dtype=bool)
    for segment in segments:
        on_edge, s = edge_coordinate(points, segment.edge)
        mask |= on_edge & segment.contains(s, strict=True)
    return mask


def perimeter_points(n_per_side: int) -> np.ndarray:
    """Equally spaced samples on each side, corners kept once, in bottom-right-top-left order."""
    if n_per_side < 2:
        raise ProblemError(f"Need at least 2 boundary samples per side, got {n_per_side}")
    s = np.linspace(0.0, 1.0, n_per_side)
    stacked = np.vstack([edge_points(edge, s) for edge in Edge])
    _, first = np.unique(stacked, axis=0, return_index=True)
    return stacked[np.sort(first)]


# ── Benchmarks ───────────────────────────────────────────────


def build_problem(benchmark: BenchmarkId | str) -> ProblemSpec:
    try:
        benchmark = BenchmarkId(benchmark)
    except ValueError:
        raise ProblemError(f"Unknown benchmark '{benchmark}'") from None

    if benchmark is BenchmarkId.RUGBY:
        segments = tuple(BoundarySegment.make(edge, (0.0, 1.0), u=("uniform", 1.0)) for edge in Edge)
        spec = ProblemSpec("rugby", segments, 0.9)
    elif benchmark is BenchmarkId.DIFFUSER:
        segments = (
            BoundarySegment.make(Edge.LEFT, (0.0, 1.0), u=("parabolic", 1.0)),
            BoundarySegment.make(Edge.RIGHT, (1.0 / 3.0, 2.0 / 3.0), u=("parabolic", 3.0)),
        )
        spec = ProblemSpec("diffuser", segments, 0.5)
    elif benchmark is BenchmarkId.PIPE_BEND:
        segments = (
            BoundarySegment.make(Edge.LEFT, (0.7, 0.9), u=("parabolic", 1.0)),
            BoundarySegment.make(Edge.BOTTOM, (0.7, 0.9), v=("parabolic", -1.0)),
        )
        spec = ProblemSpec("pipe-bend", segments, 0.08 * math.pi)
    elif benchmark is BenchmarkId.DOUBLE_PIPE:
        segments = tuple(
            BoundarySegment.make(edge, interval, u=("parabolic", 1.0))
            for edge in (Edge.LEFT, Edge.RIGHT)
            for interval in ((1.0 / 6.0, 1.0 / 3.0), (2.0 / 3.0, 5.0 / 6.0))
        )
        spec = ProblemSpec("double-pipe", segments, 1.0 / 3.0)
    else:
        raise ProblemError("The Burgers demo is not a flow problem; use flowtopo.burgers")

    spec.validate()
    return spec


def boundary_samples(
    spec: ProblemSpec,
    n_bc: int = 25,
    *,
    density: str = "inlet_outlet",
    projection: ProjectionConfig | None = None,
) -> BoundaryDataSet:
    """Velocity samples on every side, the pressure pin, and density data on the openings."""
    if density not in ("inlet_outlet", "none"):
        raise ProblemError(f"Unknown density conditioning '{density}'")
    points = perimeter_points(n_bc)
    u, v = spec.velocity(points)
    variables = {
        "u": BoundaryData(points, u),
        "v": BoundaryData(points, v),
        "p": BoundaryData(np.asarray([spec.pressure_pin]), [0.0]),
    }
    if density == "inlet_outlet":
        openings = points[spec.on_opening(points)]
        if len(openings):
            target = (projection or ProjectionConfig()).inverse(DENSITY_FLUID_TARGET)
            variables[DENSITY] = BoundaryData(openings, np.full(len(openings), target))

    data = BoundaryDataSet(variables)
    data.validate()
    logger.debug(f"Sampled {len(points)} boundary points for '{spec.name}'")
    return data


# ── JSON problem files ───────────────────────────────────────


def problem_to_dict(spec: ProblemSpec) -> dict[str, Any]:
    return {
        "name": spec.name,
        "volume_fraction": spec.volume_fraction,
        "pressure_pin": list(spec.pressure_pin),
        "material": {
            "kind": spec.material.kind,
            "inv_k_max": spec.material.inv_k_max,
            "inv_k_min": spec.material.inv_k_min,
            "q": spec.material.q,
        },
        "segments": [
            {
                "edge": segment.edge.value,
                "interval": list(segment.interval),
                "u": {"kind": segment.u.kind, "peak": segment.u.peak},
                "v": {"kind": segment.v.kind, "peak": segment.v.peak},
            }
            for segment in spec.segments
        ],
    }


def problem_from_dict(data: dict[str, Any]) -> ProblemSpec:
    try:
        segments = tuple(
            BoundarySegment.make(
                item["edge"],
                tuple(item["interval"]),
                u=(item.get("u", {}).get("kind", "zero"), float(item.get("u", {}).get("peak", 0.0))),
                v=(item.get("v", {}).get("kind", "zero"), float(item.get("v", {}).get("peak", 0.0))),
            )
            for item in data["segments"]
        )
        material = MaterialModel(**data.get("material", {}))
        pin = data.get("pressure_pin")
        spec = ProblemSpec(
            name=str(data.get("name", "custom")),
            segments=segments,
            volume_fraction=float(data["volume_fraction"]),
            material=material,
            pressure_pin=(float(pin[0]), float(pin[1])) if pin is not None else (0.0, 0.0),
        )
    except (KeyError, TypeError, IndexError, ValueError) as e:
        if isinstance(e, ProblemError):
            raise
        raise ProblemError(f"Malformed problem definition: {e}") from e
    spec.validate()
    return spec


def load_problem(path: str | Path) -> ProblemSpec:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ProblemError(f"Cannot read problem file {path}: {e}") from e
    return problem_from_dict(data)


def save_problem(spec: ProblemSpec, path: str | Path) -> bool:
    """Write a problem definition atomically; returns False on failure."""
    return write_json_atomic(Path(path), problem_to_dict(spec), mode=0o644)
