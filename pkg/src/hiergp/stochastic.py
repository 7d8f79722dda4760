"""Seeded random streams and the handful of distributions the samplers need."""
from __future__ import annotations

import math

import numpy as np
from numpy.random import Generator
from scipy.linalg import solve_triangular

from .errors import InvalidParameterError, NumericalError

JITTER_START = 1e-10
JITTER_MAX = 1e-4

_LOG_2PI = math.log(2.0 * math.pi)


def make_rng(seed: int, stream: int = 0) -> Generator:
    """Return a PCG64 generator keyed by ``(seed, stream)``.

    Distinct stream ids give statistically independent sequences for the same
    seed, which is how parallel chains and replications get their own RNG.
    """
    if seed < 0 or seed >= 2**64:
        raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidParameterError(f"{name} must be finite and > 0, got {value}")
    return value


def sample_normal(mean: float, sd: float, rng: Generator) -> float:
    sd = _positive("sd", sd)
    return float(mean + sd * rng.standard_normal())


def sample_inverse_gamma(shape, rate, rng: Generator, size=None):
    """Draw from IG(shape, rate), density proportional to x^(-shape-1) exp(-rate/x).

    Sampled as the reciprocal of a Gamma(shape, rate) draw. ``shape`` and
    ``rate`` broadcast against each other.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~np.isfinite(shape)) or np.any(shape <= 0):
        raise InvalidParameterError(f"inverse-gamma shape must be > 0, got {shape}")
    if np.any(~np.isfinite(rate)) or np.any(rate <= 0):
        raise InvalidParameterError(f"inverse-gamma rate must be > 0, got {rate}")
    g = rng.gamma(shape, 1.0 / rate, size=size)
    out = 1.0 / g
    return float(out) if np.ndim(out) == 0 else out


def sample_beta(a, b, rng: Generator, size=None):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a <= 0) or np.any(~np.isfinite(b)) or np.any(b <= 0):
        raise InvalidParameterError(f"beta parameters must be > 0, got a={a}, b={b}")
    out = rng.beta(a, b, size=size)
    return float(out) if np.ndim(out) == 0 else out


def sample_categorical(weights, rng: Generator) -> int:
    """Inverse-transform draw of an index with probability weights[l] / sum(weights)."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidParameterError("weights must be a non-empty vector")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise InvalidParameterError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise InvalidParameterError("at least one weight must be positive")
    cdf = np.cumsum(w)
    u = rng.random() * total
    idx = int(np.searchsorted(cdf, u, side="right"))
    # guard against u landing exactly on the final edge
    idx = min(idx, w.size - 1)
    while w[idx] == 0:
        idx -= 1
    return idx


def sample_categorical_log_rows(log_weights: np.ndarray, rng: Generator) -> np.ndarray:
    """Row-wise inverse-transform draws from unnormalized log weights.

    Each row is shifted by its max before exponentiation so rows whose
    weights differ by hundreds of orders of magnitude still normalize.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 2:
        raise InvalidParameterError("log_weights must be a 2-d array")
    top = lw.max(axis=1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise NumericalError("a row of categorical log-weights has no finite entry")
    p = np.exp(lw - top)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(lw.shape[0])[:, None] * cdf[:, -1:]
    idx = (cdf <= u).sum(axis=1)
    return np.minimum(idx, lw.shape[1] - 1)


def density_normal(x, mean, var):
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise InvalidParameterError("variance must be > 0")
    return np.exp(log_density_normal(x, mean, var))


def log_density_normal(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def log_density_student_t(x, dof: float, scale: float):
    """Log pdf of a location-0 Student-t whose *squared* scale is ``scale``."""
    dof = _positive("dof", dof)
    scale = _positive("scale", scale)
    x = np.asarray(x, dtype=float)
    const = (
        math.lgamma(0.5 * (dof + 1.0))
        - math.lgamma(0.5 * dof)
        - 0.5 * math.log(dof * math.pi * scale)
    )
    return const - 0.5 * (dof + 1.0) * np.log1p(x * x / (dof * scale))


def density_student_t(x, dof: float, scale: float):
    return np.exp(log_density_student_t(x, dof, scale))


def jittered_cholesky(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric matrix, adding diagonal jitter on failure.

    Jitter starts at ``1e-10 * trace/dim`` and grows tenfold up to
    ``1e-4 * trace/dim``. Returns the factor and the jitter actually used.
    """
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = np.trace(a) / n
    if not math.isfinite(scale) or scale <= 0:
        raise NumericalError(f"matrix is not positive definite (trace/dim = {scale})")
    try:
        return np.linalg.cholesky(a), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(n)
    while jitter <= JITTER_MAX * (1 + 1e-12):
        try:
            return np.linalg.cholesky(a + jitter * scale * eye), jitter * scale
        except np.linalg.LinAlgError:
            jitter *= 10.0
    cond = np.linalg.cond(a)
    raise NumericalError(
        f"Cholesky failed after jitter up to {JITTER_MAX:g}*trace/dim; condition number {cond:.3e}"
    )


def sample_mvn(mean, covariance, rng: Generator) -> np.ndarray:
    """Draw from N(mean, covariance) through a (jittered) lower Cholesky factor."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise InvalidParameterError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise InvalidParameterError("covariance must be symmetric")
    chol, _ = jittered_cholesky(cov)
    return mean + chol @ rng.standard_normal(mean.size)


def sample_mvn_precision(precision: np.ndarray, linear: np.ndarray, rng: Generator) -> np.ndarray:
    """Draw from N(Q^{-1} b, Q^{-1}) given precision Q and linear term b.

    Q is symmetrically rescaled to unit diagonal before factorization, so
    columns on wildly different scales (raw monomial libraries) stay
    factorizable; the jitter ladder then only has to absorb collinearity.
    """
    q = np.asarray(precision, dtype=float)
    b = np.asarray(linear, dtype=float)
    d = np.sqrt(np.diag(q))
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise NumericalError("precision matrix has a non-positive diagonal entry")
    a = q / d[:, None] / d[None, :]
    chol, _ = jittered_cholesky(a)
    # a = L L^T; x = D^{-1} y with y ~ N(a^{-1} D^{-1} b, a^{-1})
    rhs = b / d
    tmp = solve_triangular(chol, rhs, lower=True, check_finite=False)
    mean_scaled = solve_triangular(chol.T, tmp, lower=False, check_finite=False)
    noise = solve_triangular(chol.T, rng.standard_normal(b.size), lower=False, check_finite=False)
    return (mean_scaled + noise) / d
