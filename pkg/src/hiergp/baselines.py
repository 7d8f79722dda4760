"""Comparison models: least squares, cross-validated lasso and a Matern-3/2 GP."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .errors import InvalidParameterError, NumericalError
from .stochastic import make_rng


def ols_fit(design, responses) -> np.ndarray:
    """Minimum-norm least-squares coefficients (pseudo-inverse semantics)."""
    x = np.atleast_2d(np.asarray(design, dtype=float))
    y = np.asarray(responses, dtype=float).reshape(-1)
    if y.size < 1:
        raise InvalidParameterError("ols_fit needs at least one observation")
    coef, *_ = linalg.lstsq(x, y, lapack_driver="gelsd")
    return coef


# --------------------------------------------------------------------- lasso


@dataclass
class LassoFit:
    coef: np.ndarray
    intercept: float
    penalty: float
    penalty_grid: np.ndarray | None = None
    cv_mse: np.ndarray | None = None
    objective_trace: list = field(default_factory=list)
    converged: bool = True

    def predict(self, design) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coef + self.intercept


def lasso_objective(design, responses, coef, intercept, penalty) -> float:
    """(1 / 2n) ||y - X beta - b0||^2 + penalty ||beta||_1."""
    r = responses - design @ coef - intercept
    return 0.5 * float(r @ r) / responses.size + penalty * float(np.abs(coef).sum())


def lasso_path_point(design, responses, penalty: float, warm: np.ndarray | None = None,
                     max_sweeps: int = 10_000, tol: float = 1e-8, gap_tol: float = 1e-6,
                     track: bool = False) -> LassoFit:
    """Coordinate descent at a single penalty with an unpenalized intercept.

    Works on centered data via the Gram matrix, so every coordinate update is
    O(p). Stops when the largest coefficient change in a sweep falls below
    ``tol`` times the largest coefficient, or (for a positive penalty) when the
    duality gap falls below ``gap_tol`` times the objective at zero; warns and
    returns the last iterate if ``max_sweeps`` is reached.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(responses, dtype=float).reshape(-1)
    n, p = x.shape
    if penalty < 0:
        raise InvalidParameterError("penalty must be >= 0")
    xm, ym = x.mean(axis=0), y.mean()
    xc, yc = x - xm, y - ym
    gram = xc.T @ xc / n
    xty = xc.T @ yc / n
    diag = np.diag(gram).copy()
    beta = np.zeros(p) if warm is None else np.asarray(warm, dtype=float).copy()
    # grad_j = (X^T X beta)_j / n - (X^T y)_j / n, kept current incrementally
    g = gram @ beta
    cols = [gram[:, j] for j in range(p)]
    y0 = 0.5 * float(yc @ yc) / n
    trace = []
    converged = False
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            dj = diag[j]
            old = beta[j]
            if dj <= 0:
                new = 0.0
            else:
                rho = xty[j] - g[j] + dj * old
                new = (rho - penalty if rho > penalty else rho + penalty if rho < -penalty else 0.0) / dj
            if new != old:
                g += cols[j] * (new - old)
                beta[j] = new
                change = abs(new - old)
                if change > max_change:
                    max_change = change
        if track:
            trace.append(lasso_objective(xc, yc, beta, 0.0, penalty))
        if max_change <= tol * max(1.0, float(np.abs(beta).max(initial=0.0))):
            converged = True
            break
        if penalty > 0 and sweep % 10 == 9 and duality_gap(xc, yc, beta, penalty) <= gap_tol * y0:
            converged = True
            break
    if not converged:
        warnings.warn(f"lasso did not converge in {max_sweeps} sweeps at penalty {penalty:g}", stacklevel=2)
    return LassoFit(beta, float(ym - xm @ beta), float(penalty), objective_trace=trace, converged=converged)


def duality_gap(xc, yc, beta, penalty) -> float:
    """Primal minus dual objective for centered data; zero exactly at the optimum."""
    n = yc.size
    r = yc - xc @ beta
    primal = 0.5 * float(r @ r) / n + penalty * float(np.abs(beta).sum())
    # scale the residual into the dual-feasible set |X^T u| / n <= penalty
    corr = float(np.abs(xc.T @ r).max(initial=0.0)) / n
    u = r * min(1.0, penalty / corr) if corr > 0 else r
    dual = float(u @ yc) / n - 0.5 * float(u @ u) / n
    return primal - dual


def penalty_max(design, responses) -> float:
    """Smallest penalty at which every coefficient is zero."""
    x = np.asarray(design, dtype=float)
    y = np.asarray(responses, dtype=float).reshape(-1)
    xc = x - x.mean(axis=0)
    return float(np.abs(xc.T @ (y - y.mean())).max(initial=0.0) / y.size)


def default_penalty_grid(design, responses, size: int = 40, ratio: float | None = None) -> np.ndarray:
    """Log grid from the all-zero penalty down to ``ratio`` times it.

    The default ratio is 1e-2 when there are no more rows than columns and
    1e-4 otherwise, as in glmnet: tiny penalties on underdetermined problems
    only interpolate noise and converge slowly.
    """
    x = np.atleast_2d(design)
    if ratio is None:
        ratio = 1e-2 if x.shape[0] <= x.shape[1] else 1e-4
    top = max(penalty_max(design, responses), 1e-12)
    return np.geomspace(top, top * ratio, size)


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Seeded shuffle of 0..folds-1 labels, as balanced as n allows."""
    labels = np.arange(n) % folds
    make_rng(seed, 7).shuffle(labels)
    return labels


def lasso_fit(design, responses, penalty_grid=None, folds: int = 5, seed: int = 0,
              max_sweeps: int = 10_000) -> LassoFit:
    """Lasso at the penalty minimizing K-fold CV mean squared error.

    The grid is visited from large to small penalty with warm starts; the
    final model is refit on all data at the chosen penalty.
    """
    x = np.atleast_2d(np.asarray(design, dtype=float))
    y = np.asarray(responses, dtype=float).reshape(-1)
    if folds < 2:
        raise InvalidParameterError("lasso_fit needs folds >= 2")
    if y.size < folds:
        raise InvalidParameterError(f"{y.size} observations cannot fill {folds} folds")
    labels = fold_assignment(y.size, folds, seed)
    grid = default_penalty_grid(x, y) if penalty_grid is None else np.asarray(penalty_grid, dtype=float)
    grid = np.sort(grid)[::-1]
    sq_err = np.zeros(grid.size)
    for f in range(folds):
        tr, te = labels != f, labels == f
        warm = None
        for i, lam in enumerate(grid):
            fit = lasso_path_point(x[tr], y[tr], lam, warm, max_sweeps)
            warm = fit.coef
            r = y[te] - fit.predict(x[te])
            sq_err[i] += float(r @ r)
    cv = sq_err / y.size
    best = int(np.argmin(cv))
    warm = None
    for lam in grid[: best + 1]:
        final = lasso_path_point(x, y, lam, warm, max_sweeps, track=lam == grid[best])
        warm = final.coef
    final.penalty_grid = grid
    final.cv_mse = cv
    return final


# -------------------------------------------------------------------- Matern


SQRT3 = math.sqrt(3.0)


def matern32(a, b, lengthscale: float, amplitude: float) -> np.ndarray:
    """amp^2 (1 + sqrt(3) r / l) exp(-sqrt(3) r / l) with Euclidean r."""
    r = cdist(np.atleast_2d(a), np.atleast_2d(b)) * (SQRT3 / lengthscale)
    return amplitude ** 2 * (1.0 + r) * np.exp(-r)


@dataclass
class MaternFit:
    points: np.ndarray
    responses: np.ndarray
    mean_level: float
    lengthscale: float
    amplitude: float
    nugget: float
    log_marginal: float
    grid_log_marginal: np.ndarray | None = None
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None


def default_matern_grid(points, responses) -> dict:
    y = np.asarray(responses, dtype=float)
    sd = float(np.std(y)) or 1.0
    span = float(np.max(cdist(points, points))) if len(points) > 1 else 1.0
    span = span or 1.0
    return {
        "lengthscale": span * np.geomspace(0.02, 2.0, 25),
        "amplitude": sd * np.geomspace(0.1, 10.0, 21),
        "nugget": sd ** 2 * np.geomspace(1e-8, 1.0, 17),
    }


def _grid_log_marginal(corr_eig, rot_y, amps, nuggets) -> np.ndarray:
    """log N(y; 0, amp^2 C + nugget I) on an (amp, nugget) grid via C's eigenbasis."""
    n = rot_y.size
    ev = amps[:, None, None] ** 2 * corr_eig[None, None, :] + nuggets[None, :, None]
    ev = np.maximum(ev, 1e-300)
    quad = np.sum(rot_y[None, None, :] ** 2 / ev, axis=-1)
    logdet = np.sum(np.log(ev), axis=-1)
    return -0.5 * (quad + logdet + n * math.log(2 * math.pi))


def matern_gp_fit(points, responses, grid: dict | None = None) -> MaternFit:
    """Grid maximum marginal likelihood over lengthscale, amplitude and nugget.

    The responses are centered at their sample mean (a constant GP mean).
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(responses, dtype=float).reshape(-1)
    if y.size < 2:
        raise InvalidParameterError("matern_gp_fit needs at least 2 points")
    grid = grid or default_matern_grid(x, y)
    ls = np.atleast_1d(np.asarray(grid["lengthscale"], dtype=float))
    amps = np.atleast_1d(np.asarray(grid["amplitude"], dtype=float))
    nugs = np.atleast_1d(np.asarray(grid["nugget"], dtype=float))
    mu = float(y.mean())
    yc = y - mu
    table = np.empty((ls.size, amps.size, nugs.size))
    for i, ell in enumerate(ls):
        corr = matern32(x, x, ell, 1.0)
        eig, vec = linalg.eigh(corr)
        table[i] = _grid_log_marginal(np.maximum(eig, 0.0), vec.T @ yc, amps, nugs)
    i, j, k = np.unravel_index(int(np.argmax(table)), table.shape)
    fit = MaternFit(x, y, mu, float(ls[i]), float(amps[j]), float(nugs[k]), float(table[i, j, k]), table)
    _factorize(fit)
    return fit


def _factorize(fit: MaternFit, max_tries: int = 12) -> None:
    """Cholesky of the training covariance, raising the nugget floor on failure."""
    kxx = matern32(fit.points, fit.points, fit.lengthscale, fit.amplitude)
    n = kxx.shape[0]
    nug = fit.nugget
    floor = 1e-10 * fit.amplitude ** 2
    for _ in range(max_tries):
        try:
            fit.chol = linalg.cholesky(kxx + nug * np.eye(n), lower=True)
            break
        except linalg.LinAlgError:
            nug = max(nug * 10.0, floor)
            floor *= 10.0
    else:
        raise NumericalError("Matern covariance not positive definite even after nugget escalation")
    if nug != fit.nugget:
        warnings.warn(f"nugget raised from {fit.nugget:g} to {nug:g} for a stable factorization", stacklevel=3)
        fit.nugget = nug
    fit.alpha = linalg.cho_solve((fit.chol, True), fit.responses - fit.mean_level)


def matern_gp_predict(fit: MaternFit, points, include_nugget: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and variance; ``include_nugget`` gives the variance of a new noisy response."""
    q = np.atleast_2d(np.asarray(points, dtype=float))
    kqx = matern32(q, fit.points, fit.lengthscale, fit.amplitude)
    mean = fit.mean_level + kqx @ fit.alpha
    v = linalg.solve_triangular(fit.chol, kqx.T, lower=True)
    var = fit.amplitude ** 2 - np.sum(v * v, axis=0)
    if include_nugget:
        var = var + fit.nugget
    return mean, np.maximum(var, 0.0)
