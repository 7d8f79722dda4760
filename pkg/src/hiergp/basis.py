"""Multi-index enumeration, basis families and design matrices.

Column order is lexicographic over multi-indices and is shared by every
consumer (design matrices, coefficient vectors, chain files).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError

SINUSOIDAL = "sinusoidal"
MONOMIAL = "monomial"


@dataclass(frozen=True)
class TruncationVector:
    """Per-dimension truncation limits ``K`` with a shared start index.

    ``K[m]`` is the largest index in dimension ``m``; indices run from
    ``start`` to ``K[m]`` inclusive.
    """

    K: tuple[int, ...]
    start: int = 1

    def __post_init__(self):
        object.__setattr__(self, "K", tuple(int(k) for k in self.K))
        if self.start not in (0, 1):
            raise InvalidParameterError(f"start must be 0 or 1, got {self.start}")
        if not self.K or any(k < max(self.start, 1) for k in self.K):
            raise InvalidParameterError(f"invalid truncation {self.K} for start={self.start}")

    @property
    def dim(self) -> int:
        return len(self.K)

    @property
    def size(self) -> int:
        return math.prod(k - self.start + 1 for k in self.K)

    def values(self) -> list[np.ndarray]:
        """Index values per dimension."""
        return [np.arange(self.start, k + 1) for k in self.K]


@dataclass(frozen=True)
class BasisFamily:
    kind: str = SINUSOIDAL
    normalization: str = "unit"

    def __post_init__(self):
        if self.kind not in (SINUSOIDAL, MONOMIAL):
            raise InvalidParameterError(f"unknown basis kind {self.kind!r}")
        if self.normalization not in ("unit", "orthonormal"):
            raise InvalidParameterError(f"unknown normalization {self.normalization!r}")

    @property
    def default_start(self) -> int:
        # sin(0) vanishes, so sinusoidal indices begin at 1; x^0 is the intercept
        return 1 if self.kind == SINUSOIDAL else 0


def enumerate_indices(K: TruncationVector | Sequence[Sequence[int]]) -> np.ndarray:
    """All multi-indices in lexicographic order as an integer array (count, d).

    ``K`` may also be an explicit list of per-dimension index values, which is
    how adaptively resized layouts are described.
    """
    values = K.values() if isinstance(K, TruncationVector) else [np.asarray(v, dtype=int) for v in K]
    grid = list(itertools.product(*[list(v) for v in values]))
    return np.asarray(grid, dtype=int).reshape(len(grid), len(values))


def _factor(family: BasisFamily, k, x):
    if family.kind == SINUSOIDAL:
        out = np.sin(2.0 * np.pi * k * x)
        if family.normalization == "orthonormal":
            out = np.where(k > 0, math.sqrt(2.0) * out, out)
        return out
    return np.power(x, k)


def eval_basis(family: BasisFamily, k, x) -> float:
    k = np.asarray(k, dtype=int).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if k.size != x.size:
        raise InvalidParameterError(f"index of dimension {k.size} but point of dimension {x.size}")
    return float(np.prod(_factor(family, k, x)))


def design_from_indices(family: BasisFamily, indices: np.ndarray, points) -> np.ndarray:
    """Design matrix whose column j is phi_{indices[j]} evaluated at every point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    idx = np.asarray(indices, dtype=int)
    if pts.shape[1] != idx.shape[1]:
        raise InvalidParameterError(
            f"points have dimension {pts.shape[1]} but indices have dimension {idx.shape[1]}"
        )
    out = np.ones((pts.shape[0], idx.shape[0]))
    for m in range(idx.shape[1]):
        # evaluate each distinct index once per dimension, then gather
        uniq, inv = np.unique(idx[:, m], return_inverse=True)
        table = _factor(family, uniq[None, :], pts[:, m][:, None])
        out *= table[:, inv]
    return out


def build_design_matrix(family: BasisFamily, K: TruncationVector, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != K.dim:
        raise InvalidParameterError(f"points have dimension {pts.shape[1]}, truncation has {K.dim}")
    return design_from_indices(family, enumerate_indices(K), pts)


def index_labels(family: BasisFamily, indices: np.ndarray, names: Sequence[str] | None = None) -> list[str]:
    """Human-readable term names, e.g. ``x^3 y^0`` -> ``x^3`` for monomials."""
    d = indices.shape[1]
    names = list(names) if names else [f"x{m + 1}" for m in range(d)]
    labels = []
    for row in indices:
        if family.kind == MONOMIAL:
            parts = [n if p == 1 else f"{n}^{p}" for n, p in zip(names, row) if p > 0]
            labels.append("*".join(parts) if parts else "1")
        else:
            labels.append("*".join(f"sin(2pi*{p}*{n})" for n, p in zip(names, row)))
    return labels
