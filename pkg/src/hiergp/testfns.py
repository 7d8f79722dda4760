"""Emulation test functions and draws from the hierarchical prior."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from .basis import BasisFamily, TruncationVector, design_from_indices, enumerate_indices
from .model import Hyperparameters, cumulative_weights

BRANIN_DOMAIN = ((-5.0, 10.0), (0.0, 15.0))


def _to_branin_domain(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    (a0, a1), (b0, b1) = BRANIN_DOMAIN
    return a0 + (a1 - a0) * x[:, 0], b0 + (b1 - b0) * x[:, 1]


def branin_raw(x1, x2, as_printed: bool = False):
    """Branin on its conventional domain [-5, 10] x [0, 15].

    ``as_printed`` drops the square on the first ``b x1`` term, reproducing a
    typeset variant of the formula instead of the canonical function. Both
    variants use the canonical t = 1/(8 pi), which puts the global minimum at
    0.397887.
    """
    a, b, c, r, s, t = 1.0, 5.1 / (4 * math.pi ** 2), 5.0 / math.pi, 6.0, 10.0, 1.0 / (8 * math.pi)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    quad = x1 if as_printed else x1 ** 2
    return a * (x2 - b * quad + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s


def testfn_branin(x, as_printed: bool = False):
    """Branin evaluated at points of the unit square (rescaled affinely)."""
    x1, x2 = _to_branin_domain(x)
    out = branin_raw(x1, x2, as_printed)
    return float(out[0]) if np.ndim(x) == 1 else out


def testfn_cheng_sandu(x):
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    out = np.cos(pts[:, 0] + pts[:, 1]) * np.exp(pts[:, 0] * pts[:, 1])
    return float(out[0]) if x.ndim == 1 else out


@dataclass
class PriorFunction:
    """A coefficient set drawn from the hierarchical prior, callable on [0,1]^d."""

    K: TruncationVector
    family: BasisFamily
    lam: np.ndarray
    sigma_sq: np.ndarray
    nu: list[np.ndarray]
    w: list[np.ndarray]
    active: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return enumerate_indices(self.K)

    def weight(self, k) -> float:
        return float(np.prod([self.w[m][int(km)] for m, km in enumerate(k)]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        out = design_from_indices(self.family, self.indices, pts) @ self.lam
        return float(out[0]) if x.ndim == 1 else out


def simulate_from_prior(d: int, K, hyper: Hyperparameters, rng: Generator,
                        family: BasisFamily | None = None) -> PriorFunction:
    """Draw nu -> w -> sigma^2 -> lambda and return the resulting function.

    A zero spike variance gives coefficients that are exactly zero when
    inactive.
    """
    family = family or BasisFamily()
    if not isinstance(K, TruncationVector):
        K = TruncationVector(tuple(K), start=family.default_start)
    if K.dim != d:
        raise ValueError(f"truncation {K.K} does not have {d} dimensions")
    nu = [rng.beta(1.0, hyper.alpha, size=k) for k in K.K]
    w = [cumulative_weights(v) for v in nu]
    idx = enumerate_indices(K)
    wk = np.prod([w[m][idx[:, m]] for m in range(d)], axis=0)
    active = rng.random(idx.shape[0]) < wk
    sigma_sq = np.full(idx.shape[0], hyper.sigma_inf_sq)
    n_active = int(active.sum())
    if n_active:
        sigma_sq[active] = 1.0 / rng.gamma(hyper.a_sigma, 1.0 / hyper.b_sigma, size=n_active)
    lam = np.sqrt(sigma_sq) * rng.standard_normal(idx.shape[0])
    return PriorFunction(K, family, lam, sigma_sq, nu, w, active)
