"""Outer fixed-point iteration over the output law and R(D) sweeps.

One iteration maps the current output law q to the marginal induced by its
optimal causal kernels:

    q  ->  backward_pass  ->  forward_kernels  ->  induced_joint  ->  Y-marginal

Both half-steps minimize the Lagrangian I/n + s*D exactly (kernels at fixed
q by dynamic programming, the marginal update at fixed kernels), so the
objective is monotonically nonincreasing; any numerical violation is logged.
Convergence is declared on the total-variation change of q.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .capacity import check_cells
from .distortion import DistortionSpec, expected_distortion
from .recursion_core import CausalKernelSet, OutputLaw, backward_pass, forward_kernels
from .source_model import Alphabet, SourceModel, joint_source_pmf, window_len

logger = logging.getLogger(__name__)

JOINT_ATOL = 1e-9
LOG_FLOOR = -690.0  # just under log(1e-300); keeps iterates strictly positive
DESCENT_SLACK = 1e-8


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class JointRealization:
    """Joint pmf over (X^n, Y^n) in log domain; axes are x_1..x_n, y_1..y_n."""

    log_p: np.ndarray
    x_alphabet: Alphabet
    y_alphabet: Alphabet
    horizon: int

    def __post_init__(self) -> None:
        lx, ly, n = self.x_alphabet.size, self.y_alphabet.size, self.horizon
        log_p = np.asarray(self.log_p, dtype=float)
        if log_p.shape != (lx,) * n + (ly,) * n:
            raise ValueError(
                f"joint must have shape {(lx,) * n + (ly,) * n}, got {log_p.shape}"
            )
        if np.any(np.isnan(log_p)):
            raise ValueError("joint contains NaN")
        total = float(np.exp(logsumexp(log_p)))
        if abs(total - 1.0) > JOINT_ATOL:
            raise ValueError(f"joint must normalize to 1, got {total!r}")
        object.__setattr__(self, "log_p", _freeze(log_p))

    @classmethod
    def from_probs(cls, p, x_size: int, y_size: int) -> "JointRealization":
        p = np.asarray(p, dtype=float)
        n = p.ndim // 2
        with np.errstate(divide="ignore"):
            return cls(np.log(p), Alphabet(x_size), Alphabet(y_size), n)

    @property
    def x_axes(self) -> tuple[int, ...]:
        return tuple(range(self.horizon))

    @property
    def y_axes(self) -> tuple[int, ...]:
        return tuple(range(self.horizon, 2 * self.horizon))


@dataclass(frozen=True)
class SolverReport:
    """Converged-point summary: rate in nats per sample, per-sample distortion."""

    s: float
    rate: float
    distortion: float
    iterations: int
    final_residual: float
    converged: bool
    zero_support_events: int
    lagrangian_trace: tuple[float, ...] | None = field(
        default=None, compare=False, repr=False
    )

    CSV_HEADER = "s,rate_nats,distortion,iterations,converged,residual"

    @property
    def lagrangian(self) -> float:
        return self.rate + self.s * self.distortion

    def csv_row(self) -> str:
        return ",".join(
            [
                repr(self.s),
                repr(self.rate),
                repr(self.distortion),
                str(self.iterations),
                str(self.converged),
                repr(self.final_residual),
            ]
        )

    def to_json_dict(self) -> dict:
        return {
            "s": self.s,
            "rate_nats": self.rate,
            "distortion": self.distortion,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.final_residual,
            "zero_support_events": self.zero_support_events,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SolverReport":
        return cls(
            s=float(doc["s"]),
            rate=float(doc["rate_nats"]),
            distortion=float(doc["distortion"]),
            iterations=int(doc["iterations"]),
            final_residual=float(doc["residual"]),
            converged=bool(doc["converged"]),
            zero_support_events=int(doc.get("zero_support_events", 0)),
        )


class SweepError(RuntimeError):
    """A sweep point failed; carries the offending multiplier."""

    def __init__(self, s: float, cause: Exception):
        super().__init__(f"sweep point s={s!r} failed: {cause}")
        self.s = s
        self.cause = cause


def embed_step_table(table: np.ndarray, k: int, w: int, n: int, lx: int, ly: int) -> np.ndarray:
    """Reshape a step-k table with w window axes and k output axes into the
    2n-axis joint layout (x_1..x_n, y_1..y_n) for broadcasting."""
    shape = [1] * (2 * n)
    shape[k - w : k] = [lx] * w
    shape[n : n + k] = [ly] * k
    return table.reshape(shape)


def induced_joint(model: SourceModel, kernels: CausalKernelSet) -> JointRealization:
    """Chain the source law with the causal kernels into the full joint pmf."""
    lx, n = model.x_alphabet.size, model.horizon
    ly = kernels.y_size
    if kernels.horizon != n or kernels.x_size != lx or kernels.kappa != model.kappa:
        raise ValueError("kernel set does not match the model's shape")
    check_cells(lx**n * ly**n, f"joint with |X|^n * |Y|^n = {lx}^{n} * {ly}^{n} = {lx**n * ly**n}")
    with np.errstate(divide="ignore"):
        log_p = np.log(joint_source_pmf(model)).reshape((lx,) * n + (1,) * n)
    log_p = np.broadcast_to(log_p, (lx,) * n + (ly,) * n).copy()
    for k in range(1, n + 1):
        w = window_len(k, model.kappa)
        log_p += embed_step_table(kernels.log_tables[k - 1], k, w, n, lx, ly)
    return JointRealization(log_p, Alphabet(lx), Alphabet(ly), n)


def update_output_law(joint: JointRealization) -> OutputLaw:
    """Marginalize the joint onto Y^n (the alternating-minimization q step)."""
    log_q = logsumexp(joint.log_p, axis=joint.x_axes)
    return OutputLaw(log_q, joint.y_alphabet, joint.horizon)


def rate_of(joint: JointRealization) -> float:
    """Mutual information I(X_1^n; Y_1^n) / n in nats, with 0 log 0 = 0."""
    n = joint.horizon
    log_p = joint.log_p
    log_px = logsumexp(log_p, axis=joint.y_axes).reshape(
        (joint.x_alphabet.size,) * n + (1,) * n
    )
    log_py = logsumexp(log_p, axis=joint.x_axes)
    with np.errstate(invalid="ignore"):
        contrib = np.where(
            np.isneginf(log_p), 0.0, np.exp(log_p) * (log_p - log_px - log_py)
        )
    total = float(contrib.sum())
    return max(total, 0.0) / n


def solve_fixed_point(
    model: SourceModel,
    spec: DistortionSpec,
    s: float,
    init_q: OutputLaw | None = None,
    tol: float = 1e-9,
    max_iter: int = 2000,
) -> tuple[SolverReport, CausalKernelSet, OutputLaw]:
    """Iterate the output law to self-consistency at fixed s.

    Stops when the total-variation change of q drops below ``tol`` or after
    ``max_iter`` iterations.  The returned kernels are recomputed once from
    the returned output law, so the reported triple is exactly
    self-consistent and the rate/distortion come from its induced joint.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    ly = spec.y_size
    n = model.horizon
    if init_q is None:
        init_q = OutputLaw.uniform(ly, n)
    if init_q.y_alphabet.size != ly or init_q.horizon != n:
        raise ValueError("init_q does not match the distortion table / horizon")

    # floor the seed as well: support that starts at zero can never regrow
    log_q = np.maximum(init_q.log_q, LOG_FLOOR)
    raw_log_q = init_q.log_q
    zero_events = 0
    trace: list[float] = []
    converged = False
    tv = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        q_obj = OutputLaw(log_q, Alphabet(ly), n)
        kernels = forward_kernels(backward_pass(q_obj, s, model, spec), s, spec)
        zero_events += kernels.zero_support_rows
        joint = induced_joint(model, kernels)
        raw_log_q = logsumexp(joint.log_p, axis=joint.x_axes)
        tv = 0.5 * float(np.abs(np.exp(raw_log_q) - np.exp(log_q)).sum())
        value = rate_of(joint) + s * expected_distortion(joint, spec)
        if trace and value > trace[-1] + DESCENT_SLACK:
            logger.warning(
                "Lagrangian ascent at s=%r iteration %d: %r -> %r",
                s,
                iterations,
                trace[-1],
                value,
            )
        trace.append(value)
        log_q = np.maximum(raw_log_q, LOG_FLOOR)
        if tv < tol:
            converged = True
            break

    # final refresh: make the returned triple exactly self-consistent, with
    # the true (unfloored) support of the last induced marginal
    q_final = OutputLaw(raw_log_q, Alphabet(ly), n)
    kernels = forward_kernels(backward_pass(q_final, s, model, spec), s, spec)
    zero_events += kernels.zero_support_rows
    joint = induced_joint(model, kernels)
    report = SolverReport(
        s=float(s),
        rate=rate_of(joint),
        distortion=expected_distortion(joint, spec),
        iterations=iterations,
        final_residual=tv,
        converged=converged,
        zero_support_events=zero_events,
        lagrangian_trace=tuple(trace),
    )
    return report, kernels, q_final


def sweep(
    model: SourceModel,
    spec: DistortionSpec,
    s_grid: list[float],
    tol: float = 1e-9,
    max_iter: int = 2000,
    warm_start: bool = True,
) -> list[SolverReport]:
    """Solve every s in the grid, warm-starting q from the previous point.

    Reports come back sorted by s.  With ``warm_start=False`` every point
    starts from the uniform output law (and points become independent).
    """
    if len(s_grid) == 0:
        raise ValueError("s_grid must be nonempty")
    if any(s < 0 for s in s_grid):
        raise ValueError(f"s_grid must be nonnegative, got {sorted(s_grid)[0]}")
    reports = []
    q_prev: OutputLaw | None = None
    for s in sorted(s_grid):
        try:
            report, _, q_prev_candidate = solve_fixed_point(
                model, spec, s, init_q=q_prev if warm_start else None,
                tol=tol, max_iter=max_iter,
            )
        except Exception as exc:
            raise SweepError(s, exc) from exc
        if warm_start:
            q_prev = q_prev_candidate
        reports.append(report)
    return reports
