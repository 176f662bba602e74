"""Exact conditional-independence checks on joint realizations.

All quantities are conditional mutual informations in nats, computed by
exact summation over the joint tensor.  The window check at step k asks how
much the output Y_k still learns from the distant past X_1^{k-ell} once the
recent window X_{k-ell+1}^k and all previous outputs are given:

    cmi(k, ell) = I(Y_k ; X_1^{k-ell} | Y_1^{k-1}, X_{k-ell+1}^k)

A Markov chain holds exactly when the corresponding cmi vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import JointRealization
from .source_model import SourceModel


@dataclass(frozen=True)
class CMIReport:
    """One window test: cmi at (k, ell) against a zero threshold."""

    k: int
    ell: int
    cmi_nats: float
    threshold: float
    holds: bool

    CSV_HEADER = "k,ell,cmi_nats,threshold,holds"

    def csv_row(self) -> str:
        return ",".join(
            [str(self.k), str(self.ell), repr(self.cmi_nats), repr(self.threshold), str(self.holds)]
        )


def _grouped(p: np.ndarray, a_axes, b_axes, c_axes) -> np.ndarray:
    """Marginalize onto the three axis groups and flatten to a (|A|,|B|,|C|) cube."""
    a_axes, b_axes, c_axes = tuple(a_axes), tuple(b_axes), tuple(c_axes)
    keep = a_axes + b_axes + c_axes
    if len(set(keep)) != len(keep):
        raise ValueError("axis groups must be disjoint")
    drop = tuple(ax for ax in range(p.ndim) if ax not in keep)
    reduced = p.sum(axis=drop) if drop else p
    # after the sum, remaining axes appear in their original order
    order = sorted(keep)
    perm = [order.index(ax) for ax in keep]
    reduced = np.transpose(reduced, perm)
    sizes = [int(np.prod([p.shape[ax] for ax in grp], dtype=int)) for grp in (a_axes, b_axes, c_axes)]
    return reduced.reshape(sizes)


def _cmi_cube(cube: np.ndarray, method: str) -> float:
    """I(A;B|C) on a (|A|,|B|,|C|) probability cube, 0 log 0 = 0."""
    pc = cube.sum(axis=(0, 1))
    pac = cube.sum(axis=1)
    pbc = cube.sum(axis=0)
    if method == "kl":
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = (
                np.log(cube)
                + np.log(pc)[None, None, :]
                - np.log(pac)[:, None, :]
                - np.log(pbc)[None, :, :]
            )
            contrib = np.where(cube > 0, cube * logs, 0.0)
        value = float(contrib.sum())
    elif method == "entropy":
        def ent(t: np.ndarray) -> float:
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(t > 0, t * np.log(t), 0.0)
            return -float(terms.sum())

        value = ent(pac) + ent(pbc) - ent(pc) - ent(cube)
    else:
        raise ValueError(f"unknown method {method!r}")
    return max(value, 0.0)


def conditional_mutual_information(
    joint: JointRealization, k: int, ell: int, method: str = "kl"
) -> float:
    """cmi(k, ell) = I(Y_k ; X_1^{k-ell} | Y_1^{k-1}, X_{k-ell+1}^k) in nats.

    ``method`` selects the direct KL sum ("kl") or the entropy combination
    H(AC)+H(BC)-H(C)-H(ABC) ("entropy"); the two agree up to roundoff.
    """
    n = joint.horizon
    if not (1 <= ell <= k <= n):
        raise ValueError(f"need 1 <= ell <= k <= horizon, got k={k}, ell={ell}, n={n}")
    a_axes = (n + k - 1,)                      # y_k
    b_axes = tuple(range(0, k - ell))          # x_1 .. x_{k-ell}
    c_axes = tuple(range(k - ell, k)) + tuple(range(n, n + k - 1))
    if not b_axes:
        return 0.0
    cube = _grouped(np.exp(joint.log_p), a_axes, b_axes, c_axes)
    return _cmi_cube(cube, method)


def scan_window(joint: JointRealization, k: int, threshold: float) -> list[CMIReport]:
    """Test windows ell = 1, 2, ... at step k until one holds (ell = k always does)."""
    if not (1 <= k <= joint.horizon):
        raise ValueError(f"step k must be in 1..{joint.horizon}, got {k}")
    rows = []
    for ell in range(1, k + 1):
        value = conditional_mutual_information(joint, k, ell)
        holds = value < threshold
        rows.append(CMIReport(k, ell, value, threshold, holds))
        if holds:
            break
    return rows


def smallest_window(joint: JointRealization, k: int, threshold: float) -> int:
    """Smallest ell whose window chain holds at step k (k itself is vacuous)."""
    return scan_window(joint, k, threshold)[-1].ell


def check_causality(joint: JointRealization, model: SourceModel | None = None) -> float:
    """Max over k of I(Y_1^k ; X_{k+1}^n | X_1^k); zero for causal realizations."""
    n = joint.horizon
    if model is not None and (
        model.horizon != n or model.x_alphabet.size != joint.x_alphabet.size
    ):
        raise ValueError("joint does not match the model's shape")
    p = np.exp(joint.log_p)
    worst = 0.0
    for k in range(1, n):
        a_axes = tuple(range(n, n + k))        # y_1 .. y_k
        b_axes = tuple(range(k, n))            # x_{k+1} .. x_n
        c_axes = tuple(range(0, k))            # x_1 .. x_k
        cube = _grouped(p, a_axes, b_axes, c_axes)
        worst = max(worst, _cmi_cube(cube, "kl"))
    return worst
