"""Brute-force reference solvers over full-history causal channels.

The search space here is deliberately larger than the window-structured
kernels the recursion produces: step k draws on the whole prefix
(x_1^k, y_1^{k-1}) through an unconstrained table mapped to kernel rows by
softmax.  Agreement of the minima is what validates the window structure.

The objective at multiplier s is J = I(X_1^n; Y_1^n)/n + s * D with D the
per-sample expected distortion.  Its gradient with respect to the softmax
parameters has the closed form

    G_k = M_k - W_k * sum_{y_k} M_k,     M_k = marginal of p*(A) onto (x_1^k, y_1^k)
    A = (1/n) * (log p(y|x) - log q(y) + s * sum_i rho(x_i, y_i))

because the q- and normalization-dependent terms integrate to zero.  The
finite-difference checker below is the independent route used to verify it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .capacity import CapacityError
from .distortion import DistortionSpec, expected_distortion
from .solver import (
    Alphabet,
    JointRealization,
    SolverReport,
    embed_step_table,
    rate_of,
)
from .source_model import SourceModel, joint_source_pmf

ORACLE_CELL_CAP = 4096
GRAD_TOL = 1e-9
MAX_PARAMS_AFTER_REDUCTION = 6


def _check_cap(model: SourceModel, y_size: int) -> int:
    lx, n = model.x_alphabet.size, model.horizon
    cells = lx**n * y_size**n
    if cells >= ORACLE_CELL_CAP:
        raise CapacityError(
            f"oracle cap: instances need |X|^n * |Y|^n below {ORACLE_CELL_CAP}, "
            f"got {lx}^{n} * {y_size}^{n} = {cells}"
        )
    return cells


@dataclass(frozen=True, eq=False)
class CausalParametrization:
    """Unconstrained tables, one per step, softmaxed per (x_1^k, y_1^{k-1}) row."""

    thetas: tuple[np.ndarray, ...]
    x_size: int
    y_size: int
    horizon: int

    def __post_init__(self) -> None:
        lx, ly = self.x_size, self.y_size
        for k, theta in enumerate(self.thetas, start=1):
            want = (lx,) * k + (ly,) * k
            if theta.shape != want:
                raise ValueError(f"theta at step {k} must have shape {want}, got {theta.shape}")

    @classmethod
    def random(
        cls, x_size: int, y_size: int, horizon: int, rng: np.random.Generator, scale: float = 0.5
    ) -> "CausalParametrization":
        thetas = tuple(
            rng.normal(0.0, scale, size=(x_size,) * k + (y_size,) * k)
            for k in range(1, horizon + 1)
        )
        return cls(thetas, x_size, y_size, horizon)

    def log_kernels(self) -> list[np.ndarray]:
        return [t - logsumexp(t, axis=-1, keepdims=True) for t in self.thetas]

    def kernels(self) -> list[np.ndarray]:
        return [np.exp(lk) for lk in self.log_kernels()]


class _Instance:
    """Quantities of (model, spec, s) that the objective reuses across calls."""

    def __init__(self, model: SourceModel, spec: DistortionSpec, s: float):
        if spec.x_size != model.x_alphabet.size:
            raise ValueError("distortion table does not match the source alphabet")
        self.lx = model.x_alphabet.size
        self.ly = spec.y_size
        self.n = model.horizon
        self.s = float(s)
        self.px = joint_source_pmf(model)
        with np.errstate(divide="ignore"):
            self.log_px = np.log(self.px).reshape((self.lx,) * self.n + (1,) * self.n)
        self.x_axes = tuple(range(self.n))
        rho_sum = np.zeros((self.lx,) * self.n + (self.ly,) * self.n)
        for i in range(self.n):
            shape = [1] * (2 * self.n)
            shape[i] = self.lx
            shape[self.n + i] = self.ly
            rho_sum += spec.table.reshape(shape)
        self.rho_sum = rho_sum

    def joint_log(self, thetas: list[np.ndarray] | tuple[np.ndarray, ...]) -> np.ndarray:
        lx, ly, n = self.lx, self.ly, self.n
        log_p = np.broadcast_to(self.log_px, (lx,) * n + (ly,) * n).copy()
        for k, theta in enumerate(thetas, start=1):
            log_w = theta - logsumexp(theta, axis=-1, keepdims=True)
            log_p += embed_step_table(log_w, k, k, n, lx, ly)
        return log_p

    def objective(self, thetas) -> float:
        return self.objective_and_gradient(thetas)[0]

    def objective_and_gradient(self, thetas) -> tuple[float, list[np.ndarray]]:
        lx, ly, n = self.lx, self.ly, self.n
        log_p = self.joint_log(thetas)
        p = np.exp(log_p)
        log_q = logsumexp(log_p, axis=self.x_axes)
        with np.errstate(invalid="ignore"):
            weight = np.where(
                np.isneginf(log_p),
                0.0,
                p * (log_p - self.log_px - log_q + self.s * self.rho_sum) / n,
            )
        value = float(weight.sum())
        grads = []
        for k, theta in enumerate(thetas, start=1):
            log_w = theta - logsumexp(theta, axis=-1, keepdims=True)
            w = np.exp(log_w)
            drop = tuple(range(k, n)) + tuple(range(n + k, 2 * n))
            m = weight.sum(axis=drop) if drop else weight
            grads.append(m - w * m.sum(axis=-1, keepdims=True))
        return value, grads


def _require_finite(value: float, grads: list[np.ndarray], thetas) -> None:
    if np.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads):
        return
    dump = "; ".join(np.array2string(np.asarray(t), threshold=64) for t in thetas)
    raise FloatingPointError(f"non-finite oracle objective/gradient at parameters: {dump}")


def _descend(
    thetas: list[np.ndarray],
    inst: _Instance,
    max_steps: int,
    step_size: float,
) -> tuple[list[np.ndarray], float, float, int]:
    """Gradient descent with backtracking (Armijo) and mild step growth."""
    value, grads = inst.objective_and_gradient(thetas)
    _require_finite(value, grads, thetas)
    step = step_size
    taken = 0
    grad_inf = max(float(np.max(np.abs(g))) for g in grads)
    for _ in range(max_steps):
        if grad_inf < GRAD_TOL:
            break
        grad_sq = sum(float((g * g).sum()) for g in grads)
        while True:
            trial = [t - step * g for t, g in zip(thetas, grads)]
            trial_value, trial_grads = inst.objective_and_gradient(trial)
            _require_finite(trial_value, trial_grads, trial)
            if trial_value <= value - 1e-4 * step * grad_sq or step < 1e-14:
                break
            step *= 0.5
        if step < 1e-14:
            break
        thetas, value, grads = trial, trial_value, trial_grads
        grad_inf = max(float(np.max(np.abs(g))) for g in grads)
        taken += 1
        step = min(step * 1.5, 64.0 * step_size)
    return thetas, value, grad_inf, taken


def oracle_descent(
    model: SourceModel,
    spec: DistortionSpec,
    s: float,
    restarts: int = 8,
    max_steps: int = 4000,
    step_size: float = 0.5,
    seed: int = 0,
) -> tuple[SolverReport, JointRealization]:
    """Minimize J over full-history causal channels; best of ``restarts`` runs.

    Restart r is deterministic given seed + r.  Raises on cap violations and
    on non-finite objective values (with the offending parameters dumped).
    """
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    _check_cap(model, spec.y_size)
    inst = _Instance(model, spec, s)
    best: tuple[float, list[np.ndarray], float, int] | None = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        start = CausalParametrization.random(inst.lx, inst.ly, inst.n, rng)
        thetas, value, grad_inf, taken = _descend(
            list(start.thetas), inst, max_steps, step_size
        )
        if best is None or value < best[0]:
            best = (value, thetas, grad_inf, taken)
    value, thetas, grad_inf, taken = best
    joint = JointRealization(
        inst.joint_log(thetas), Alphabet(inst.lx), Alphabet(inst.ly), inst.n
    )
    report = SolverReport(
        s=float(s),
        rate=rate_of(joint),
        distortion=expected_distortion(joint, spec),
        iterations=taken,
        final_residual=grad_inf,
        converged=bool(grad_inf < 10 * GRAD_TOL),
        zero_support_events=0,
    )
    return report, joint


def finite_difference_gradient(func, thetas, h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of a scalar function of a theta list."""
    grads = [np.zeros_like(np.asarray(t, dtype=float)) for t in thetas]
    for which, theta in enumerate(thetas):
        flat = grads[which].reshape(-1)
        for j in range(flat.size):
            plus = [np.array(t, dtype=float) for t in thetas]
            minus = [np.array(t, dtype=float) for t in thetas]
            plus[which].reshape(-1)[j] += h
            minus[which].reshape(-1)[j] -= h
            flat[j] = (func(plus) - func(minus)) / (2.0 * h)
    return grads


def _flip_symmetric(model: SourceModel, spec: DistortionSpec) -> bool:
    """True when the binary instance is invariant under flipping every symbol."""
    if model.x_alphabet.size != 2 or spec.y_size != 2:
        return False
    return (
        np.array_equal(model.initial_law, np.flip(model.initial_law))
        and np.array_equal(model.transition, np.flip(model.transition))
        and np.array_equal(spec.table, np.flip(spec.table))
    )


def _histories(k: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All (x_1^k, y_1^{k-1}) kernel rows at step k, binary alphabets."""
    rows = []
    for xs in np.ndindex(*(2,) * k):
        for ys in np.ndindex(*(2,) * (k - 1)):
            rows.append((tuple(xs), tuple(ys)))
    return rows


def _flip_history(hist):
    xs, ys = hist
    return (tuple(1 - v for v in xs), tuple(1 - v for v in ys))


def exhaustive_grid(
    model: SourceModel,
    spec: DistortionSpec,
    s: float,
    grid_resolution: int,
    symmetric: bool | None = None,
) -> SolverReport:
    """Scan a dense grid over binary full-history kernel rows and return the best J.

    Each free row contributes one parameter f(y=0 | row).  When the instance
    is invariant under flipping every bit (detected automatically, or forced
    via ``symmetric``), rows tied by the flip share a parameter.  The result
    is the exact minimum over the scanned set, so it is within grid
    granularity of the optimum over that set.
    """
    if grid_resolution < 11:
        raise ValueError(f"grid_resolution must be >= 11, got {grid_resolution}")
    lx, ly, n = model.x_alphabet.size, spec.y_size, model.horizon
    if lx != 2 or ly != 2:
        raise ValueError("exhaustive_grid supports binary alphabets only")
    _check_cap(model, ly)
    if symmetric is None:
        symmetric = _flip_symmetric(model, spec)

    # map each kernel row to (parameter index, flipped?)
    row_param: list[dict] = []
    n_params = 0
    reps: dict = {}
    for k in range(1, n + 1):
        mapping = {}
        for hist in _histories(k):
            rep = min(hist, _flip_history(hist)) if symmetric else hist
            if rep not in reps:
                reps[rep] = n_params
                n_params += 1
            mapping[hist] = (reps[rep], hist != rep)
        row_param.append(mapping)
    if n_params > MAX_PARAMS_AFTER_REDUCTION:
        raise ValueError(
            f"parameter-count cap exceeded: {n_params} free kernel rows after "
            f"symmetry reduction (limit {MAX_PARAMS_AFTER_REDUCTION})"
        )

    grid = np.linspace(0.0, 1.0, grid_resolution)
    total = grid_resolution**n_params
    px = joint_source_pmf(model)
    with np.errstate(divide="ignore"):
        log_px = np.log(px).reshape((2,) * n + (1,) * n)
    rho_sum = np.zeros((2,) * n + (2,) * n)
    for i in range(n):
        shape = [1] * (2 * n)
        shape[i] = 2
        shape[n + i] = 2
        rho_sum += spec.table.reshape(shape)

    chunk = 1 << 16
    best_value = np.inf
    best_rate = best_dist = 0.0
    for lo in range(0, total, chunk):
        hi = min(lo + chunk, total)
        flat = np.arange(lo, hi)
        digits = np.unravel_index(flat, (grid_resolution,) * n_params)
        params = np.stack([grid[d] for d in digits], axis=1)  # (B, n_params)
        b = params.shape[0]
        p = np.broadcast_to(px.reshape((1,) + (2,) * n + (1,) * n), (b,) + (2,) * n + (2,) * n).copy()
        for k in range(1, n + 1):
            w = np.empty((b,) + (2,) * k + (2,) * k)
            for hist, (idx, flipped) in row_param[k - 1].items():
                t = params[:, idx]
                head = 1.0 - t if flipped else t
                xs, ys = hist
                w[(slice(None), *xs, *ys, 0)] = head
                w[(slice(None), *xs, *ys, 1)] = 1.0 - head
            shape = [b] + [1] * (2 * n)
            for j, ax in enumerate(range(k)):
                shape[1 + ax] = 2
            for ax in range(n, n + k):
                shape[1 + ax] = 2
            p *= w.reshape(shape)
        axes_x = tuple(range(1, n + 1))
        q = p.sum(axis=axes_x, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            info_terms = np.where(p > 0, p * (np.log(p) - log_px[None] - np.log(q)), 0.0)
        rate = info_terms.sum(axis=tuple(range(1, 2 * n + 1))) / n
        dist = (p * rho_sum[None]).sum(axis=tuple(range(1, 2 * n + 1))) / n
        values = rate + s * dist
        j = int(np.argmin(values))
        if values[j] < best_value:
            best_value = float(values[j])
            best_rate = float(rate[j])
            best_dist = float(dist[j])
    return SolverReport(
        s=float(s),
        rate=best_rate,
        distortion=best_dist,
        iterations=total,
        final_residual=1.0 / (grid_resolution - 1),
        converged=True,
        zero_support_events=0,
    )
