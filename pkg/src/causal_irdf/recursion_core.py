"""Backward potential recursion and the tilted causal kernels it induces.

For a fixed output law q on Y^n and a multiplier s >= 0, the backward pass
builds log-domain potential tables, one per step k, indexed by the last
min(k, kappa) source symbols (the window) and the outputs y_1^k:

    pot_n(window, y_1^n) = log q(y_1^n)                     (constant in x)
    pot_k(window, y_1^k) = sum_{x_{k+1}} c_k(x_{k+1} | window) *
        log( sum_{y_{k+1}} exp(-s rho(x_{k+1}, y_{k+1}) + pot_{k+1}(window', y_1^{k+1})) )

where window' appends x_{k+1} to the window (dropping its oldest symbol once
the window is full) and c_k is the one-step source conditional.  The optimal
causal kernel at step k normalizes the exponential tilt of its potential:

    f(y_k | window, y_1^{k-1})  proportional to  exp(-s rho(x_k, y_k)) * exp(pot_k)

with x_k the newest window symbol.  Sums of exponentials go through
log-sum-exp; weighted sums of logs mask zero-weight terms so that -inf
entries on unreachable branches never poison a live row.  Potentials are
deliberately not normalized per step (the kernel normalization is scale
invariant); log storage is what prevents under/overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .distortion import DistortionSpec
from .source_model import Alphabet, SourceModel, step_conditional, window_len

OUTPUT_LAW_ATOL = 1e-10


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class OutputLaw:
    """Joint pmf over reproduction sequences Y^n, stored as log q."""

    log_q: np.ndarray
    y_alphabet: Alphabet
    horizon: int

    def __post_init__(self) -> None:
        ly = self.y_alphabet.size
        log_q = np.asarray(self.log_q, dtype=float)
        if log_q.shape != (ly,) * self.horizon:
            raise ValueError(
                f"output law must have shape {(ly,) * self.horizon}, got {log_q.shape}"
            )
        if np.any(np.isnan(log_q)):
            raise ValueError("output law contains NaN")
        total = float(np.exp(logsumexp(log_q)))
        if abs(total - 1.0) > OUTPUT_LAW_ATOL:
            raise ValueError(f"output law must normalize to 1, got {total!r}")
        object.__setattr__(self, "log_q", _freeze(log_q))

    @classmethod
    def uniform(cls, y_size: int, horizon: int) -> "OutputLaw":
        log_q = np.full((y_size,) * horizon, -horizon * np.log(y_size))
        return cls(log_q, Alphabet(y_size), horizon)

    @classmethod
    def from_probs(cls, q, y_size: int | None = None) -> "OutputLaw":
        q = np.asarray(q, dtype=float)
        ly = q.shape[0] if y_size is None else y_size
        with np.errstate(divide="ignore"):
            return cls(np.log(q), Alphabet(ly), q.ndim)


@dataclass(frozen=True, eq=False)
class PotentialSet:
    """Log-domain backward potentials, one table per step (index k-1).

    Table k has min(k, kappa) window axes followed by k output axes; the
    final table carries no actual x dependence (it is constant along its
    window axes).
    """

    log_tables: tuple[np.ndarray, ...]
    kappa: int
    x_size: int
    y_size: int
    horizon: int


@dataclass(frozen=True, eq=False)
class CausalKernelSet:
    """Per-step conditionals f(y_k | window, y_1^{k-1}) with their tilt parameter.

    ``tables`` hold probabilities, ``log_tables`` the matching log values
    (kept separately so heavily tilted rows retain precision).  Rows whose
    normalizer vanished were replaced by uniform rows; ``zero_support_rows``
    counts them.
    """

    tables: tuple[np.ndarray, ...]
    log_tables: tuple[np.ndarray, ...]
    s: float
    kappa: int
    x_size: int
    y_size: int
    horizon: int
    zero_support_rows: int


def _check_shapes(q: OutputLaw, model: SourceModel, spec: DistortionSpec) -> None:
    if spec.x_size != model.x_alphabet.size:
        raise ValueError(
            f"distortion table has {spec.x_size} rows but |X| = {model.x_alphabet.size}"
        )
    if spec.y_size != q.y_alphabet.size:
        raise ValueError(
            f"distortion table has {spec.y_size} columns but |Y| = {q.y_alphabet.size}"
        )
    if q.horizon != model.horizon:
        raise ValueError(
            f"output law horizon {q.horizon} does not match model horizon {model.horizon}"
        )


def _expected_log(cond: np.ndarray, log_k1: np.ndarray, w_k: int, w_next: int, k: int) -> np.ndarray:
    """Weighted sum of log_k1 over x_{k+1} against the one-step conditional.

    cond has w_k window axes plus the successor axis; log_k1 has w_next
    window axes plus k output axes.  Zero-weight successors contribute
    nothing even when their log value is -inf.
    """
    if w_next == w_k + 1:
        aligned = log_k1  # window grows: axes already (window, x_{k+1}, y...)
    else:
        aligned = np.expand_dims(log_k1, 0)  # full window: oldest symbol broadcasts
    weights = cond.reshape(cond.shape + (1,) * k)
    with np.errstate(invalid="ignore"):
        terms = np.where(weights > 0, weights * aligned, 0.0)
    return terms.sum(axis=w_k)


def backward_pass(
    q: OutputLaw, s: float, model: SourceModel, spec: DistortionSpec
) -> PotentialSet:
    """Run the backward recursion from the output law down to step 1."""
    if s < 0:
        raise ValueError(f"tilt parameter s must be >= 0, got {s}")
    _check_shapes(q, model, spec)
    if np.all(np.isneginf(q.log_q)):
        raise ValueError("output law has empty support")
    n, kappa = model.horizon, model.kappa
    lx, ly = model.x_alphabet.size, q.y_alphabet.size
    neg_tilt = -s * spec.table  # (lx, ly)

    tables: list[np.ndarray | None] = [None] * n
    w_n = window_len(n, kappa)
    tables[n - 1] = np.broadcast_to(q.log_q, (lx,) * w_n + (ly,) * n).copy()
    for k in range(n - 1, 0, -1):
        w_next = window_len(k + 1, kappa)
        w_k = window_len(k, kappa)
        tilt = neg_tilt.reshape((1,) * (w_next - 1) + (lx,) + (1,) * k + (ly,))
        log_k1 = logsumexp(tables[k] + tilt, axis=-1)
        cond = step_conditional(model, k)
        tables[k - 1] = _expected_log(cond, log_k1, w_k, w_next, k)
    return PotentialSet(tuple(map(_freeze, tables)), kappa, lx, ly, n)


def forward_kernels(pot: PotentialSet, s: float, spec: DistortionSpec) -> CausalKernelSet:
    """Normalize the tilted potentials into per-step causal kernels."""
    n, kappa = pot.horizon, pot.kappa
    lx, ly = pot.x_size, pot.y_size
    if spec.table.shape != (lx, ly):
        raise ValueError(
            f"distortion table shape {spec.table.shape} does not match potentials ({lx}, {ly})"
        )
    neg_tilt = -s * spec.table
    log_tables = []
    prob_tables = []
    zero_rows = 0
    for k in range(1, n + 1):
        w = window_len(k, kappa)
        tilt = neg_tilt.reshape((1,) * (w - 1) + (lx,) + (1,) * (k - 1) + (ly,))
        vals = pot.log_tables[k - 1] + tilt
        log_z = logsumexp(vals, axis=-1, keepdims=True)
        dead = np.isneginf(log_z)
        if dead.any():
            zero_rows += int(dead.sum())
            safe_z = np.where(dead, 0.0, log_z)
            with np.errstate(invalid="ignore"):
                log_ker = np.where(dead, -np.log(ly), vals - safe_z)
        else:
            log_ker = vals - log_z
        log_tables.append(_freeze(log_ker))
        prob_tables.append(_freeze(np.exp(log_ker)))
    return CausalKernelSet(
        tuple(prob_tables), tuple(log_tables), float(s), kappa, lx, ly, n, zero_rows
    )


def stationarity_residual(
    kernels: CausalKernelSet,
    q: OutputLaw,
    s: float,
    model: SourceModel,
    spec: DistortionSpec,
) -> float:
    """Max row-wise deviation of ``kernels`` from one fresh backward/forward pass at q.

    Zero (up to float determinism) exactly when the kernels were produced
    from this q with this s.
    """
    if kernels.horizon != model.horizon or kernels.x_size != model.x_alphabet.size:
        raise ValueError("kernel set does not match the model's shape")
    fresh = forward_kernels(backward_pass(q, s, model, spec), s, spec)
    worst = 0.0
    for have, want in zip(kernels.tables, fresh.tables):
        if have.shape != want.shape:
            raise ValueError(f"kernel table shape mismatch: {have.shape} vs {want.shape}")
        worst = max(worst, float(np.max(np.abs(have - want))))
    return worst
