"""Exception types raised by flowtopo."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from flowtopo.optimizer import LossBreakdown


class ShapeError(ValueError):
    """An autodiff operation received inputs whose shapes do not conform."""


class FactorizationError(np.linalg.LinAlgError):
    """A kernel matrix could not be Cholesky-factorized."""

    def __init__(self, variable: str, smallest_pivot: float, nugget: float):
        self.variable = variable
        self.smallest_pivot = smallest_pivot
        self.nugget = nugget
        super().__init__(
            f"Kernel matrix for '{variable}' is not positive definite "
            f"(smallest pivot {smallest_pivot:.3e}, nugget {nugget:g}); raise the nugget delta"
        )


class NonFiniteLossError(FloatingPointError):
    """A loss term evaluated to NaN or infinity during training."""

    def __init__(self, term: str, epoch: int, breakdown: LossBreakdown | None = None):
        self.term = term
        self.epoch = epoch
        self.breakdown = breakdown
        dump = f": {breakdown.as_row()}" if breakdown is not None else ""
        super().__init__(f"Non-finite loss term '{term}' at epoch {epoch}{dump}")


class ProblemError(ValueError):
    """A problem definition violates a solvability or sampling requirement."""


class ConfigError(ValueError):
    """A run configuration is invalid."""
