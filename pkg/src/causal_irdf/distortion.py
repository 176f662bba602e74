"""Single-letter distortion tables and per-sample sum distortion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # avoid a runtime cycle with solver
    from .solver import JointRealization


@dataclass(frozen=True, eq=False)
class DistortionSpec:
    """Per-letter distortion matrix rho[x][y], nonnegative and finite.

    The table may be rectangular: source and reproduction alphabets are
    allowed to differ in size.
    """

    table: np.ndarray

    def __post_init__(self) -> None:
        tab = np.asarray(self.table, dtype=float)
        if tab.ndim != 2:
            raise ValueError(f"distortion table must be 2-D, got shape {tab.shape}")
        if np.any(tab < 0) or np.any(~np.isfinite(tab)):
            raise ValueError("distortion entries must be finite and >= 0")
        tab = tab.copy()
        tab.setflags(write=False)
        object.__setattr__(self, "table", tab)

    @property
    def x_size(self) -> int:
        return self.table.shape[0]

    @property
    def y_size(self) -> int:
        return self.table.shape[1]

    @classmethod
    def from_dict(cls, doc: dict, x_size: int) -> "DistortionSpec":
        """Parse {"rho": [[...], ...]} or {"preset": "hamming"}."""
        if "rho" in doc:
            spec = cls(np.asarray(doc["rho"], dtype=float))
            if spec.x_size != x_size:
                raise ValueError(
                    f"field 'rho' has {spec.x_size} rows but the source alphabet has {x_size}"
                )
            return spec
        if "preset" in doc:
            if doc["preset"] != "hamming":
                raise ValueError(f"unknown distortion preset {doc['preset']!r}")
            return hamming(x_size)
        raise ValueError("distortion must provide field 'rho' or 'preset'")


def hamming(size: int) -> DistortionSpec:
    """0/1 distortion on a square alphabet: rho[x][y] = 0 iff x == y."""
    if size < 1:
        raise ValueError(f"alphabet size must be >= 1, got {size}")
    return DistortionSpec(1.0 - np.eye(size))


def expected_distortion(joint: "JointRealization", spec: DistortionSpec) -> float:
    """Average per-sample distortion (1/n) E[sum_i rho(X_i, Y_i)] of a joint law."""
    n = joint.horizon
    if joint.x_alphabet.size != spec.x_size or joint.y_alphabet.size != spec.y_size:
        raise ValueError(
            f"distortion table is {spec.x_size}x{spec.y_size} but the joint has "
            f"|X|={joint.x_alphabet.size}, |Y|={joint.y_alphabet.size}"
        )
    p = np.exp(joint.log_p)
    total = 0.0
    for i in range(n):
        keep = {i, n + i}
        pair = p.sum(axis=tuple(a for a in range(2 * n) if a not in keep))
        total += float((pair * spec.table).sum())
    return total / n
