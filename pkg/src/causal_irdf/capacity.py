"""Cell budget for sequence-space tensors.

Every tensor indexed by whole sequences grows exponentially in the horizon,
so all allocating operations check the requested cell count against a global
budget first.  The budget defaults to 2**24 cells and can be overridden with
the IRDF_MAX_CELLS environment variable (read at call time, not import time).
"""

from __future__ import annotations

import os

DEFAULT_MAX_CELLS = 2**24
ENV_VAR = "IRDF_MAX_CELLS"


class CapacityError(ValueError):
    """A requested tensor would exceed the configured cell budget."""


def max_cells() -> int:
    """Current cell budget; IRDF_MAX_CELLS overrides the default."""
    raw = os.environ.get(ENV_VAR)
    if raw is None:
        return DEFAULT_MAX_CELLS
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from exc
    if value <= 0:
        raise ValueError(f"{ENV_VAR} must be positive, got {value}")
    return value


def check_cells(n_cells: int, what: str) -> None:
    """Raise CapacityError if materializing ``what`` would blow the budget."""
    budget = max_cells()
    if n_cells > budget:
        raise CapacityError(
            f"{what} needs {n_cells} cells, over the budget of {budget} "
            f"(set {ENV_VAR} to raise it)"
        )
