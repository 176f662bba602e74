"""Finite-alphabet Markov sources of order kappa.

Index conventions used throughout the package:

- Time steps k are 1-based in formulas and docstrings; per-step table lists
  are indexed ``k - 1``.
- A pmf over a symbol block (x_1, ..., x_m) is an m-axis tensor whose axis j
  ranges over the alphabet of x_{j+1}.  Flattened in C order the leftmost
  symbol varies slowest.
- The transition table has kappa window axes (oldest to newest) followed by
  one axis for the next symbol; every window row is a pmf over that axis.
- Conditioning windows truncate at the left edge of the sequence: at step
  k the window holds the last min(k, kappa) symbols.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capacity import check_cells

PMF_ATOL = 1e-12


def window_len(k: int, kappa: int) -> int:
    """Number of source symbols conditioning step k (left-truncated window)."""
    return min(k, kappa)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Alphabet:
    """Finite alphabet; symbols are the indices 0 .. size-1."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError(f"alphabet size must be >= 1, got {self.size}")


@dataclass(frozen=True, eq=False)
class SourceModel:
    """Time-homogeneous Markov source of order ``kappa`` over ``horizon`` steps.

    ``initial_law`` is the pmf of the first kappa symbols, shape
    ``(size,) * kappa``.  ``transition`` maps each length-kappa window to a
    pmf over the next symbol, shape ``(size,) * kappa + (size,)``.
    """

    x_alphabet: Alphabet
    kappa: int
    horizon: int
    initial_law: np.ndarray
    transition: np.ndarray

    def __post_init__(self) -> None:
        lx = self.x_alphabet.size
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.horizon < self.kappa:
            raise ValueError(
                f"horizon must be >= kappa, got horizon={self.horizon} kappa={self.kappa}"
            )
        init = np.asarray(self.initial_law, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        if init.shape != (lx,) * self.kappa:
            raise ValueError(
                f"initial_law must have shape {(lx,) * self.kappa}, got {init.shape}"
            )
        if trans.shape != (lx,) * self.kappa + (lx,):
            raise ValueError(
                f"transition must have shape {(lx,) * self.kappa + (lx,)}, got {trans.shape}"
            )
        if np.any(init < 0) or np.any(~np.isfinite(init)):
            raise ValueError("initial_law entries must be finite and >= 0")
        if np.any(trans < 0) or np.any(~np.isfinite(trans)):
            raise ValueError("transition entries must be finite and >= 0")
        if abs(init.sum() - 1.0) > PMF_ATOL:
            raise ValueError(f"initial_law must sum to 1, got {init.sum()!r}")
        row_sums = trans.sum(axis=-1)
        worst = float(np.max(np.abs(row_sums - 1.0)))
        if worst > PMF_ATOL:
            raise ValueError(f"every transition row must sum to 1, worst error {worst!r}")
        object.__setattr__(self, "initial_law", _freeze(init))
        object.__setattr__(self, "transition", _freeze(trans))

    @classmethod
    def create(
        cls,
        x_size: int,
        kappa: int,
        horizon: int,
        initial_law,
        transition,
    ) -> "SourceModel":
        """Build from flat (row-major) or already shaped probability tables."""
        lx = int(x_size)
        init = np.asarray(initial_law, dtype=float).reshape((lx,) * kappa)
        trans = np.asarray(transition, dtype=float).reshape((lx,) * kappa + (lx,))
        return cls(Alphabet(lx), int(kappa), int(horizon), init, trans)

    @classmethod
    def from_dict(cls, doc: dict) -> "SourceModel":
        """Parse the JSON document form of a source model.

        Expected keys: x_alphabet (int), kappa (int), horizon (int),
        initial_law (flat list over X^kappa, leftmost symbol slowest),
        transition (list of rows, one per window in the same order).
        """
        for key in ("x_alphabet", "kappa", "horizon", "initial_law", "transition"):
            if key not in doc:
                raise ValueError(f"source model is missing field '{key}'")
        try:
            lx = int(doc["x_alphabet"])
            kappa = int(doc["kappa"])
            horizon = int(doc["horizon"])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"source model has a non-integer size field: {exc}") from exc
        try:
            init = np.asarray(doc["initial_law"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"field 'initial_law' is not numeric: {exc}") from exc
        try:
            trans = np.asarray(doc["transition"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"field 'transition' is not numeric: {exc}") from exc
        if init.size != lx**kappa:
            raise ValueError(
                f"field 'initial_law' must have |X|^kappa = {lx**kappa} entries, got {init.size}"
            )
        if trans.size != lx ** (kappa + 1):
            raise ValueError(
                f"field 'transition' must have |X|^kappa rows of |X| entries, got size {trans.size}"
            )
        try:
            return cls.create(lx, kappa, horizon, init, trans)
        except ValueError as exc:
            msg = str(exc)
            if "transition" in msg or "initial_law" in msg:
                raise
            raise ValueError(f"invalid source model: {msg}") from exc


def joint_source_pmf(model: SourceModel) -> np.ndarray:
    """Materialize the pmf of the whole sequence as an n-axis tensor.

    p(x_1^n) = initial_law(x_1^kappa) * prod_k transition(x_{k+1} | window).
    """
    lx = model.x_alphabet.size
    n = model.horizon
    kappa = model.kappa
    check_cells(lx**n, f"joint source pmf with |X|^n = {lx}^{n} = {lx**n}")
    p = np.ones((lx,) * n)
    p *= model.initial_law.reshape((lx,) * kappa + (1,) * (n - kappa))
    for k in range(kappa, n):
        # transition axes land on x_{k-kappa+1}..x_{k+1}, i.e. 0-based k-kappa..k
        shape = [1] * n
        shape[k - kappa : k + 1] = [lx] * (kappa + 1)
        p *= model.transition.reshape(shape)
    return p


def future_given_past(model: SourceModel, k: int) -> np.ndarray:
    """One-step conditional f(x_{k+1} | x_{k-kappa+1}^k) for kappa <= k < n.

    Time-homogeneous models return the transition table verbatim.
    """
    if not (model.kappa <= k < model.horizon):
        raise ValueError(
            f"step k must satisfy kappa <= k < horizon, got k={k} "
            f"(kappa={model.kappa}, horizon={model.horizon})"
        )
    return model.transition


def step_conditional(model: SourceModel, k: int) -> np.ndarray:
    """One-step conditional at any step 1 <= k < n, truncating early windows.

    For k >= kappa this is the transition table.  For k < kappa it is the
    conditional f(x_{k+1} | x_1^k) of the initial block law; windows with
    zero probability get uniform rows so downstream logs stay finite.
    """
    if not (1 <= k < model.horizon):
        raise ValueError(f"step k must satisfy 1 <= k < horizon, got k={k}")
    if k >= model.kappa:
        return model.transition
    lx = model.x_alphabet.size
    prefix = model.initial_law.sum(axis=tuple(range(k + 1, model.kappa)))
    denom = prefix.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = prefix / denom
    return np.where(denom > 0, cond, 1.0 / lx)
