"""Brinkman residuals, dissipated power and the volume constraint on the collocation grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Generic, TypeVar

from flowtopo.grid import Field, Grid, PaddedField, fd_dx, fd_dy, fd_laplacian, integrate, interior

# Dynamic viscosity.
VISCOSITY = 1.0

F = TypeVar("F")


@dataclass(frozen=True)
class MaterialModel:
    """Density to inverse-permeability map."""

    inv_k_max: float = 2.5e4
    inv_k_min: float = 2.5e-4
    q: float = 0.1
    kind: str = "brinkman"

    def __post_init__(self) -> None:
        if self.kind not in ("brinkman", "simp"):
            raise ValueError(f"Unknown permeability model '{self.kind}'")
        if self.q <= 0:
            raise ValueError(f"Interpolation parameter q must be positive, got {self.q}")
        if not 0.0 <= self.inv_k_min < self.inv_k_max:
            raise ValueError(f"Need 0 <= inv_k_min < inv_k_max, got {self.inv_k_min}, {self.inv_k_max}")

    @classmethod
    def simp(cls) -> MaterialModel:
        return cls(inv_k_max=1e4, inv_k_min=0.0, q=0.2, kind="simp")

    def inverse_permeability(self, rho):
        if self.kind == "simp":
            return simp_inv_permeability(rho, self)
        return inv_permeability(rho, self)


def inv_permeability(rho, material: MaterialModel):
    return material.inv_k_max + (material.inv_k_min - material.inv_k_max) * (1.0 + material.q) * rho / (
        rho + material.q
    )


def simp_inv_permeability(rho, material: MaterialModel):
    return material.inv_k_min + (material.inv_k_max - material.inv_k_min) * material.q * (1.0 - rho) / (
        material.q + rho
    )


@dataclass(frozen=True)
class ResidualFields(Generic[F]):
    r1: F
    r2: F
    r3: F

    def __iter__(self):
        return iter((self.r1, self.r2, self.r3))


def residuals(
    u: PaddedField, v: PaddedField, p: PaddedField, rho: Field, material: MaterialModel, grid: Grid
) -> ResidualFields:
    """Momentum (x, y) and continuity residuals at the interior collocation points."""
    inv_k = material.inverse_permeability(rho)
    r1 = -fd_dx(p, grid) + VISCOSITY * fd_laplacian(u, grid) - inv_k * interior(u)
    r2 = -fd_dy(p, grid) + VISCOSITY * fd_laplacian(v, grid) - inv_k * interior(v)
    r3 = fd_dx(u, grid) + fd_dy(v, grid)
    return ResidualFields(r1, r2, r3)


def dissipated_power(u: PaddedField, v: PaddedField, rho: Field, material: MaterialModel, grid: Grid):
    inv_k = material.inverse_permeability(rho)
    ui, vi = interior(u), interior(v)
    gradients = fd_dx(u, grid) ** 2 + fd_dy(u, grid) ** 2 + fd_dx(v, grid) ** 2 + fd_dy(v, grid) ** 2
    return 0.5 * integrate(VISCOSITY * gradients + inv_k * (ui**2 + vi**2), grid)


def volume_constraint(rho: Field, volume_fraction: float, grid: Grid):
    return integrate(rho, grid) - volume_fraction


def squared_norm(field: Field, grid: Grid):
    """Domain integral of the squared field."""
    return integrate(field**2, grid)
