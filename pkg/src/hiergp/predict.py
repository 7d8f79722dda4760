"""Posterior predictive draws, credible intervals and error metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from .basis import BasisFamily, design_from_indices, enumerate_indices
from .errors import InvalidParameterError
from .model import PosteriorChain


@dataclass
class PredictionResult:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    samples: np.ndarray | None = None


def eval_function_sample(state, family: BasisFamily, x, center: float = 0.0) -> np.ndarray:
    """f(x) = sum_k lambda_k phi_k(x) + offset + center for one retained state."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    design = design_from_indices(family, enumerate_indices(state.values), pts)
    return design @ state.lam + state.offset + center


def function_samples(chain: PosteriorChain, points) -> np.ndarray:
    """(draws, n_points) matrix of f evaluated at every retained state."""
    if len(chain) == 0:
        raise InvalidParameterError("chain has no retained states")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if chain.uniform_layout():
        s0 = chain.states[0]
        design = design_from_indices(chain.family, enumerate_indices(s0.values), pts)
        return chain.lambda_matrix() @ design.T + chain.offsets()[:, None] + chain.center
    cache: dict = {}
    rows = []
    for s in chain.states:
        key = tuple(tuple(v.tolist()) for v in s.values)
        if key not in cache:
            cache[key] = design_from_indices(chain.family, enumerate_indices(s.values), pts)
        rows.append(cache[key] @ s.lam + s.offset + chain.center)
    return np.vstack(rows)


def equal_tailed(samples: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Empirical (order-statistic) equal-tailed interval along axis 0."""
    if not 0 < level < 1:
        raise InvalidParameterError(f"level must lie in (0, 1), got {level}")
    tail = 0.5 * (1.0 - level)
    lo = np.quantile(samples, tail, axis=0, method="inverted_cdf")
    hi = np.quantile(samples, 1.0 - tail, axis=0, method="inverted_cdf")
    return lo, hi


def predict(chain: PosteriorChain, points, level: float = 0.95, include_noise: bool = False,
            rng: Generator | None = None, keep_samples: bool = False) -> PredictionResult:
    """Posterior mean and equal-tailed credible bounds at ``points``.

    With ``include_noise`` each draw gets N(0, theta^2) added, giving bounds
    for a new noisy response rather than for f.
    """
    f = function_samples(chain, points)
    mean = f.mean(axis=0)
    draws = f
    if include_noise:
        if rng is None:
            raise InvalidParameterError("include_noise needs an rng")
        sd = np.sqrt(chain.theta_sq())[:, None]
        draws = f + sd * rng.standard_normal(f.shape)
    lo, hi = equal_tailed(draws, level)
    return PredictionResult(mean, lo, hi, level, draws if keep_samples else None)


def rmse(predicted, truth) -> float:
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise InvalidParameterError(f"length mismatch: {p.shape} vs {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(predicted, truth) -> float:
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise InvalidParameterError(f"length mismatch: {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t)))


def empirical_coverage(lower, upper, truth) -> float:
    lower, upper, truth = (np.asarray(a, dtype=float) for a in (lower, upper, truth))
    if not lower.shape == upper.shape == truth.shape:
        raise InvalidParameterError("interval and truth lengths differ")
    return float(np.mean((truth >= lower) & (truth <= upper)))


def mean_interval_width(lower, upper) -> float:
    return float(np.mean(np.asarray(upper, dtype=float) - np.asarray(lower, dtype=float)))


def write_predictions_csv(path, points, result: PredictionResult, truth=None) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    header = [f"x{m + 1}" for m in range(pts.shape[1])] + ["mean", "lower", "upper"]
    if truth is not None:
        header.append("truth")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(pts.shape[0]):
            row = [repr(float(v)) for v in pts[i]]
            row += [repr(float(result.mean[i])), repr(float(result.lower[i])), repr(float(result.upper[i]))]
            if truth is not None:
                row.append(repr(float(truth[i])))
            writer.writerow(row)
