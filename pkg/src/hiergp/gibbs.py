"""Data-augmented Gibbs sampler for the cumulative spike-and-slab basis model.

One sweep updates, in order: the latent cells z (all coefficients), the
variances sigma^2, the stick fractions nu with their cumulative weights w,
the noise variance theta^2 (using the previous coefficients) and finally the
coefficient vector from its Gaussian full conditional.
"""
from __future__ import annotations

import functools
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator

from .basis import SINUSOIDAL, BasisFamily, TruncationVector, design_from_indices, enumerate_indices
from .errors import InvalidParameterError, NumericalError
from .model import (
    THETA_FLOOR,
    ChainState,
    Dataset,
    Hyperparameters,
    PosteriorChain,
    cumulative_weights,
)
from .stochastic import (
    log_density_normal,
    log_density_student_t,
    make_rng,
    sample_beta,
    sample_categorical_log_rows,
    sample_inverse_gamma,
    sample_mvn_precision,
)

log = logging.getLogger(__name__)

NOTATION_FIXES = (
    "coefficient mean uses V theta^-2 X^T y",
    "theta^2 rate is b_theta + S^T S / 2",
    "residual S = y - X lambda",
)


@dataclass
class GibbsConfig:
    iterations: int = 2000
    burn_in: int | None = None
    thinning: int = 1
    K: TruncationVector | None = None
    adaptive: "AdaptiveConfig | None" = None
    seed: int = 0
    stream: int = 0
    deterministic: bool = False
    # conjugate-oracle mode: freeze the spike/slab variances and/or the noise
    fixed_sigma_sq: np.ndarray | None = None
    fixed_theta_sq: float | None = None
    init: ChainState | None = None
    # flat-prior offset sampled jointly with lambda; None = on for the sinusoidal family
    intercept: bool | None = None
    # divide design column j by column_scale[j] (fixed layouts only)
    column_scale: np.ndarray | None = None
    # extra Metropolis move per coefficient that redraws (z_k, sigma_k^2, lambda_k) jointly
    flip_moves: bool = True

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.iterations // 2
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise InvalidParameterError(
                f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}"
            )
        if self.thinning < 1:
            raise InvalidParameterError("thinning must be >= 1")
        if self.column_scale is not None and self.adaptive is not None:
            raise InvalidParameterError("column_scale needs a fixed layout; disable adaptive truncation")


@functools.lru_cache(maxsize=64)
def _layout(lengths: tuple[int, ...], start: int):
    """Rank grid, latent-cell grid and per-dimension slab comparisons for a layout."""
    ranks = enumerate_indices([np.arange(n) + start for n in lengths])
    max_ranks = [n - 1 + start for n in lengths]
    cells = enumerate_indices([np.arange(1, r + 2) for r in max_ranks])
    # slab[k, c] holds when every component of cell c exceeds the rank of column k
    slab = np.ones((ranks.shape[0], 1), dtype=bool)
    for m, r in enumerate(max_ranks):
        cmp = np.arange(1, r + 2)[None, :] > ranks[:, m][:, None]
        slab = (slab[:, :, None] & cmp[:, None, :]).reshape(ranks.shape[0], -1)
    for arr in (ranks, cells, slab):
        arr.setflags(write=False)
    return ranks, cells, slab


def layout_of(state: ChainState):
    return _layout(tuple(len(v) for v in state.values), state.start)


def cell_log_prior(state: ChainState) -> np.ndarray:
    """log prod_m nu_{l_m,m} w_{l_m-1,m} for every latent cell, lexicographic order."""
    total = np.zeros(1)
    for nu, w in zip(state.nu, state.w):
        with np.errstate(divide="ignore"):
            lp = np.concatenate([np.log(nu) + np.log(w[:-1]), [np.log(w[-1])]])
        total = (total[:, None] + lp[None, :]).reshape(-1)
    return total


def z_log_weights(state: ChainState, hyper: Hyperparameters) -> np.ndarray:
    """Unnormalized log full-conditional weights of z_k over all cells, one row per k."""
    _, _, slab = layout_of(state)
    log_spike = log_density_normal(state.lam, 0.0, hyper.sigma_inf_sq)
    log_slab = log_density_student_t(state.lam, 2.0 * hyper.a_sigma, hyper.b_sigma / hyper.a_sigma)
    dens = np.where(slab, log_slab[:, None], log_spike[:, None])
    return cell_log_prior(state)[None, :] + dens


def step_z(state: ChainState, hyper: Hyperparameters, rng: Generator, k: int | None = None) -> np.ndarray:
    """Resample the latent cells; ``k`` restricts the update to one column position."""
    _, cells, _ = layout_of(state)
    lw = z_log_weights(state, hyper)
    rows = slice(None) if k is None else slice(k, k + 1)
    idx = sample_categorical_log_rows(lw[rows], rng)
    state.z[rows] = cells[idx]
    return state.z[rows]


def step_sigma(state: ChainState, hyper: Hyperparameters, rng: Generator) -> np.ndarray:
    """Spike if some z_{k,m} <= rank k_m, otherwise IG(a+1/2, b + lambda^2/2)."""
    ranks, _, _ = layout_of(state)
    slab = np.all(state.z > ranks, axis=1)
    sig = np.full(state.lam.size, hyper.sigma_inf_sq)
    if slab.any():
        lam = state.lam[slab]
        sig[slab] = sample_inverse_gamma(hyper.a_sigma + 0.5, hyper.b_sigma + 0.5 * lam * lam, rng)
    state.sigma_sq = sig
    return sig


def nu_posterior_params(z_col: np.ndarray, max_rank: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Beta(1 + #{z = j}, alpha + #{z > j}) parameters for j = 1..max_rank."""
    counts = np.bincount(z_col, minlength=max_rank + 2)[: max_rank + 2]
    eq = counts[1 : max_rank + 1]
    gt = counts[::-1].cumsum()[::-1][2 : max_rank + 2]
    return 1.0 + eq, alpha + gt


def step_nu(state: ChainState, hyper: Hyperparameters, rng: Generator, m: int | None = None) -> None:
    dims = range(state.dim) if m is None else [m]
    for mm in dims:
        r = state.max_ranks[mm]
        if r == 0:
            continue
        a, b = nu_posterior_params(state.z[:, mm], r, hyper.alpha)
        state.nu[mm] = np.atleast_1d(sample_beta(a, b, rng))
        state.w[mm] = cumulative_weights(state.nu[mm])


def step_theta(state, design: np.ndarray, responses: np.ndarray, hyper: Hyperparameters,
               rng: Generator, deterministic: bool = False) -> float:
    """theta^2 ~ IG(a_theta + n/2, b_theta + S^T S / 2) with S = y - X lambda - offset."""
    resid = responses - design @ state.lam - state.offset
    shape = hyper.a_theta + 0.5 * responses.size
    rate = hyper.b_theta + 0.5 * float(resid @ resid)
    t2 = sample_inverse_gamma(shape, rate, rng)
    if deterministic:
        t2 = max(t2, THETA_FLOOR)
    state.theta_sq = t2
    return t2


def lambda_precision(sigma_sq, gram, xty, theta_sq):
    """Precision and linear term of the Gaussian coefficient full conditional.

    If ``gram`` has one more row than ``sigma_sq`` the extra leading entry is
    an offset with a flat prior (zero prior precision).
    """
    q = gram / theta_sq
    prior_prec = 1.0 / np.asarray(sigma_sq, dtype=float)
    if gram.shape[0] == prior_prec.size + 1:
        prior_prec = np.concatenate([[0.0], prior_prec])
    q[np.diag_indices_from(q)] += prior_prec
    return q, xty / theta_sq


def augment(design: np.ndarray) -> np.ndarray:
    """Prepend the constant column used for the offset."""
    return np.hstack([np.ones((design.shape[0], 1)), design])


def step_lambda(state, design: np.ndarray, responses: np.ndarray, rng: Generator,
                gram: np.ndarray | None = None, xty: np.ndarray | None = None,
                intercept: bool = False) -> np.ndarray:
    """lambda ~ N(V theta^-2 X^T y, V), V = (D^-1 + theta^-2 X^T X)^-1.

    With ``intercept`` the offset is drawn in the same Gaussian block; then
    ``gram``/``xty`` (if given) must already include the constant column.
    """
    x = augment(design) if intercept else design
    if gram is None:
        gram = x.T @ x
    if xty is None:
        xty = x.T @ responses
    q, b = lambda_precision(state.sigma_sq, gram, xty, state.theta_sq)
    draw = sample_mvn_precision(q, b, rng)
    if intercept:
        state.offset = float(draw[0])
        draw = draw[1:]
    state.lam = draw
    return state.lam


def _log_marginal(s, xtx, xr, theta_sq):
    """log of the integral of N(lambda; 0, s) exp(-|r - x lambda|^2 / (2 theta^2)), up to a constant."""
    return -0.5 * np.log1p(s * xtx / theta_sq) + 0.5 * xr * xr * s / (theta_sq * (theta_sq + s * xtx))


def step_flip(state: ChainState, design: np.ndarray, responses: np.ndarray, hyper: Hyperparameters,
              rng: Generator) -> np.ndarray:
    """Independence Metropolis move on (z_k, sigma_k^2, lambda_k), one k at a time.

    The proposal draws z'_k from its prior cell weights, sigma'^2 from its
    prior given z'_k, and lambda'_k from its exact Gaussian conditional given
    sigma'^2 and every other coefficient. The acceptance ratio then reduces to
    the ratio of the scalar marginal likelihoods M(sigma'^2) / M(sigma^2).
    This lets a coefficient leave the slab in one step even when a correlated
    partner holds it away from zero, which plain Gibbs cannot do.
    Returns the acceptance mask.
    """
    ranks, cells, _ = layout_of(state)
    p = state.lam.size
    lp = cell_log_prior(state)
    prob = np.exp(lp - lp.max())
    prob /= prob.sum()
    idx = np.minimum(np.searchsorted(np.cumsum(prob), rng.random(p) * (1 - 1e-15), side="right"), prob.size - 1)
    new_z = cells[idx]
    slab = np.all(new_z > ranks, axis=1)
    new_s = np.full(p, hyper.sigma_inf_sq)
    n_slab = int(slab.sum())
    if n_slab:
        new_s[slab] = sample_inverse_gamma(hyper.a_sigma, hyper.b_sigma, rng, size=n_slab)
    log_u = np.log(rng.random(p))
    noise = rng.standard_normal(p)
    t2 = state.theta_sq
    xtx = np.einsum("ij,ij->j", design, design)
    resid = responses - design @ state.lam - state.offset
    accept = np.zeros(p, dtype=bool)
    for k in range(p):
        x = design[:, k]
        rk = resid + x * state.lam[k]
        xr = float(x @ rk)
        log_ratio = _log_marginal(new_s[k], xtx[k], xr, t2) - _log_marginal(state.sigma_sq[k], xtx[k], xr, t2)
        if log_u[k] < log_ratio:
            accept[k] = True
            v = 1.0 / (1.0 / new_s[k] + xtx[k] / t2)
            state.lam[k] = v * xr / t2 + np.sqrt(v) * noise[k]
            state.sigma_sq[k] = new_s[k]
            state.z[k] = new_z[k]
            resid = rk - x * state.lam[k]
    return accept


def initial_state(values: list[np.ndarray], start: int, design: np.ndarray, responses: np.ndarray,
                  hyper: Hyperparameters, intercept: bool = False) -> ChainState:
    """Deterministic all-slab starting point with ridge coefficients.

    Starting every coefficient in the slab lets the first z sweep switch off
    what the data do not support; starting in the spike would pin active
    coefficients near zero.
    """
    d = len(values)
    max_ranks = [len(v) - 1 + start for v in values]
    p = design.shape[1]
    var_y = float(np.var(responses)) if responses.size > 1 else 1.0
    theta_sq = max(0.01 * var_y, THETA_FLOOR, 1e-12)
    sig0 = max(var_y, hyper.b_sigma / (hyper.a_sigma + 1.0))
    sigma_sq = np.full(p, sig0)
    nu = [np.full(r, 1.0 / (1.0 + hyper.alpha)) for r in max_ranks]
    w = [cumulative_weights(v) for v in nu]
    z = np.tile(np.array(max_ranks) + 1, (p, 1)).reshape(p, d)
    state = ChainState(np.zeros(p), sigma_sq, nu, w, z, theta_sq, [np.asarray(v, dtype=int) for v in values], start)
    if responses.size:
        state.lam = ridge_start(design, responses, sigma_sq, theta_sq, intercept)
        if intercept:
            state.offset, state.lam = float(state.lam[0]), state.lam[1:]
    return state


def ridge_start(design, responses, prior_var, theta_sq, intercept=False) -> np.ndarray:
    """Conditional posterior mean used as a deterministic starting point."""
    x = augment(design) if intercept else design
    q, b = lambda_precision(prior_var, x.T @ x, x.T @ responses, theta_sq)
    scale = np.sqrt(np.diag(q))
    a = q / scale[:, None] / scale[None, :]
    a[np.diag_indices_from(a)] += 1e-10
    return np.linalg.solve(a, b / scale) / scale


class _DesignCache:
    """Design matrix and sufficient statistics keyed by the current layout."""

    def __init__(self, family: BasisFamily, points: np.ndarray, responses: np.ndarray,
                 intercept: bool = False, column_scale: np.ndarray | None = None):
        self.family = family
        self.points = points
        self.responses = responses
        self.intercept = intercept
        self.column_scale = column_scale
        self._key = None

    def get(self, state):
        key = tuple(tuple(v.tolist()) for v in state.values)
        if key != self._key:
            self.design = design_from_indices(self.family, state.indices, self.points) if self.points.size else np.zeros((0, state.lam.size))
            if self.column_scale is not None:
                self.design = self.design / self.column_scale
            x = augment(self.design) if self.intercept else self.design
            self.gram = x.T @ x
            self.xty = x.T @ self.responses
            self._key = key
        return self.design, self.gram, self.xty


def prepare_responses(dataset: Dataset, family: BasisFamily) -> tuple[np.ndarray, float]:
    """Center responses for the sinusoidal family, which has no constant term."""
    y = dataset.responses
    if family.kind == SINUSOIDAL and y.size:
        dataset.check_unit_cube()
        c = float(np.mean(y))
        return y - c, c
    return y, 0.0


def sweep(state: ChainState, cache: _DesignCache, hyper: Hyperparameters, config: GibbsConfig,
          rng: Generator) -> None:
    """One full iteration in the order z, sigma^2, nu/w, theta^2, lambda, then the flip move."""
    design, gram, xty = cache.get(state)
    y = cache.responses
    if config.fixed_sigma_sq is None:
        step_z(state, hyper, rng)
        step_sigma(state, hyper, rng)
        step_nu(state, hyper, rng)
    if config.fixed_theta_sq is None:
        step_theta(state, design, y, hyper, rng, deterministic=config.deterministic)
    step_lambda(state, design, y, rng, gram, xty, intercept=cache.intercept)
    if config.flip_moves and config.fixed_sigma_sq is None:
        step_flip(state, design, y, hyper, rng)


def use_intercept(config: GibbsConfig, family: BasisFamily) -> bool:
    if config.intercept is None:
        return family.kind == SINUSOIDAL
    return bool(config.intercept)


def run_chain(dataset: Dataset, family: BasisFamily, config: GibbsConfig,
              hyper: Hyperparameters | None = None, rng: Generator | None = None) -> PosteriorChain:
    """Run the sampler for ``config.iterations`` sweeps and keep the thinned tail."""
    from .adaptive import maybe_adapt

    hyper = hyper or Hyperparameters()
    if hyper.sigma_inf_sq <= 0:
        raise InvalidParameterError("posterior sampling needs a strictly positive spike variance")
    K = config.K
    if K is None:
        raise InvalidParameterError("GibbsConfig.K is required")
    if K.dim != dataset.dim:
        raise InvalidParameterError(f"truncation has {K.dim} dims but data has {dataset.dim}")
    rng = rng or make_rng(config.seed, config.stream)
    y, center = prepare_responses(dataset, family)
    intercept = use_intercept(config, family) and dataset.n > 0
    scale = None if config.column_scale is None else np.asarray(config.column_scale, dtype=float)
    if scale is not None and (scale.shape != (K.size,) or np.any(scale <= 0)):
        raise InvalidParameterError(f"column_scale must be {K.size} positive numbers")
    cache = _DesignCache(family, dataset.points, y, intercept, scale)

    if config.init is not None:
        state = config.init.copy()
    else:
        values = K.values()
        design0 = design_from_indices(family, enumerate_indices(values), dataset.points) if dataset.n else np.zeros((0, K.size))
        if scale is not None:
            design0 = design0 / scale
        state = initial_state(values, K.start, design0, y, hyper, intercept)
    if config.fixed_sigma_sq is not None:
        state.sigma_sq = np.broadcast_to(np.asarray(config.fixed_sigma_sq, dtype=float), state.lam.shape).copy()
    if config.fixed_theta_sq is not None:
        state.theta_sq = float(config.fixed_theta_sq)

    kept, events = [], []
    t0 = time.perf_counter()
    for b in range(1, config.iterations + 1):
        try:
            sweep(state, cache, hyper, config, rng)
        except NumericalError as exc:
            raise NumericalError(f"iteration {b}: {exc}") from exc
        if config.adaptive is not None:
            state, new_events = maybe_adapt(state, b, hyper, config.adaptive, rng)
            events.extend(new_events)
        if b > config.burn_in and (b - config.burn_in) % config.thinning == 0:
            kept.append(state.copy())
    elapsed = time.perf_counter() - t0
    log.debug("hiergp chain: %d iterations in %.2fs", config.iterations, elapsed)

    metadata = {
        "seed": config.seed,
        "stream": config.stream,
        "K": list(K.K),
        "start": K.start,
        "iterations": config.iterations,
        "hyperparameters": hyper.to_dict(),
        "centering_constant": center,
        "intercept": intercept,
        "notation_fixes": list(NOTATION_FIXES),
        "deterministic": config.deterministic,
    }
    return PosteriorChain(kept, config.burn_in, config.thinning, family, "hiergp", center, metadata, events)


def run_chain_1d(x, y, K: int, config: GibbsConfig | None = None, hyper: Hyperparameters | None = None,
                 family: BasisFamily | None = None) -> PosteriorChain:
    """Univariate convenience wrapper: the d = 1 case of :func:`run_chain`."""
    family = family or BasisFamily()
    config = config or GibbsConfig()
    config.K = TruncationVector((K,), start=family.default_start)
    data = Dataset(np.asarray(x, dtype=float).reshape(-1, 1), y)
    return run_chain(data, family, config, hyper)

