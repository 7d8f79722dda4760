"""Blocked Metropolis-within-Gibbs sampler for the global-local (horseshoe) variant.

Local scales are carried as precision-like factors s_k: the coefficient prior
is lambda_k | s_k, theta^2 ~ N(0, theta^2 / (tau s_k)), and the horseshoe on
the standard deviation turns into p(s_k) proportional to s_k^(-1/2) / (1 + s_k).
Each sweep draws lambda, then every s_k by an independent log-scale random
walk, then theta^2.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from .basis import BasisFamily, design_from_indices, enumerate_indices
from .errors import InvalidParameterError, NumericalError
from .gibbs import GibbsConfig, augment, lambda_precision, prepare_responses, ridge_start, use_intercept
from .model import THETA_FLOOR, Dataset, Hyperparameters, HorseshoeState, PosteriorChain
from .stochastic import make_rng, sample_inverse_gamma, sample_mvn_precision

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.44
TUNE_EVERY = 50


def local_log_target(local: np.ndarray, lam: np.ndarray, theta_sq: float, tau: float) -> np.ndarray:
    """log of (1 / (1 + s)) exp(-lambda^2 tau s / (2 theta^2)), up to a constant."""
    return -np.log1p(local) - lam * lam * tau * local / (2.0 * theta_sq)


def hs_step_lambda(state: HorseshoeState, design: np.ndarray, responses: np.ndarray, hyper: Hyperparameters,
                   rng: Generator, gram=None, xty=None, intercept: bool = False) -> np.ndarray:
    """lambda ~ N(V theta^-2 X^T y, V) with D = diag(theta^2 / (tau s_k)).

    With ``intercept`` a flat-prior offset is drawn in the same block.
    """
    x = augment(design) if intercept else design
    if gram is None:
        gram = x.T @ x
    if xty is None:
        xty = x.T @ responses
    q, b = lambda_precision(state.prior_variance(hyper.tau), gram, xty, state.theta_sq)
    draw = sample_mvn_precision(q, b, rng)
    if intercept:
        state.offset = float(draw[0])
        draw = draw[1:]
    state.lam = draw
    return state.lam


def hs_step_local(state: HorseshoeState, hyper: Hyperparameters, rng: Generator, step: float = 1.0,
                  upper: float = math.inf) -> np.ndarray:
    """One random-walk Metropolis move on log s_k for every k.

    The proposal is log-normal, so the acceptance ratio carries the Jacobian
    s'/s. ``upper`` truncates the support, which is only needed when a
    coefficient is exactly zero and the target becomes improper.
    Returns the boolean acceptance mask.
    """
    cur = state.local
    prop = cur * np.exp(step * rng.standard_normal(cur.size))
    log_ratio = (
        local_log_target(prop, state.lam, state.theta_sq, hyper.tau)
        - local_log_target(cur, state.lam, state.theta_sq, hyper.tau)
        + np.log(prop) - np.log(cur)
    )
    u = rng.random(cur.size)
    accept = (np.log(u) < log_ratio) & (prop < upper) & (prop > 0)
    state.local = np.where(accept, prop, cur)
    return accept


def hs_step_theta(state: HorseshoeState, design: np.ndarray, responses: np.ndarray, hyper: Hyperparameters,
                  rng: Generator, deterministic: bool = False) -> float:
    """Full conditional of theta^2.

    Because the coefficient prior scales with theta^2, the conditional picks
    up the prior quadratic form next to the residual sum of squares:
    IG(a + (n + P)/2, b + S^T S / 2 + tau sum_k s_k lambda_k^2 / 2).
    """
    resid = responses - design @ state.lam - state.offset
    shape = hyper.a_theta + 0.5 * (responses.size + state.lam.size)
    rate = hyper.b_theta + 0.5 * float(resid @ resid) + 0.5 * hyper.tau * float(np.sum(state.local * state.lam ** 2))
    t2 = sample_inverse_gamma(shape, rate, rng)
    if deterministic:
        t2 = max(t2, THETA_FLOOR)
    state.theta_sq = t2
    return t2


@dataclass
class HorseshoeConfig(GibbsConfig):
    proposal_scale: float = 1.0
    tune: bool = True
    fixed_local: np.ndarray | None = None


def hs_initial_state(values, start, design, responses, hyper: Hyperparameters,
                     intercept: bool = False) -> HorseshoeState:
    p = design.shape[1]
    var_y = float(np.var(responses)) if responses.size > 1 else 1.0
    theta_sq = max(0.01 * var_y, 1e-8)
    local = np.ones(p)
    state = HorseshoeState(np.zeros(p), local, theta_sq, [np.asarray(v, dtype=int) for v in values], start)
    if responses.size:
        lam = ridge_start(design, responses, state.prior_variance(hyper.tau), theta_sq, intercept)
        if intercept:
            state.offset, lam = float(lam[0]), lam[1:]
        state.lam = lam
    return state


def hs_run_chain(dataset: Dataset, family: BasisFamily, config: HorseshoeConfig,
                 hyper: Hyperparameters | None = None, rng: Generator | None = None) -> PosteriorChain:
    hyper = hyper or Hyperparameters()
    K = config.K
    if K is None:
        raise InvalidParameterError("HorseshoeConfig.K is required")
    if K.dim != dataset.dim:
        raise InvalidParameterError(f"truncation has {K.dim} dims but data has {dataset.dim}")
    rng = rng or make_rng(config.seed, config.stream)
    y, center = prepare_responses(dataset, family)
    values = K.values()
    design = design_from_indices(family, enumerate_indices(values), dataset.points) if dataset.n else np.zeros((0, K.size))
    intercept = use_intercept(config, family) and dataset.n > 0
    x = augment(design) if intercept else design
    gram = x.T @ x
    xty = x.T @ y

    state = hs_initial_state(values, K.start, design, y, hyper, intercept)
    if config.fixed_local is not None:
        state.local = np.broadcast_to(np.asarray(config.fixed_local, dtype=float), state.lam.shape).copy()
    if config.fixed_theta_sq is not None:
        state.theta_sq = float(config.fixed_theta_sq)

    step = float(config.proposal_scale)
    kept = []
    window_acc = 0.0
    window_n = 0
    total_acc, total_n = 0.0, 0
    for b in range(1, config.iterations + 1):
        try:
            hs_step_lambda(state, design, y, hyper, rng, gram, xty, intercept)
        except NumericalError as exc:
            raise NumericalError(f"iteration {b}: {exc}") from exc
        if config.fixed_local is None:
            acc = hs_step_local(state, hyper, rng, step)
            window_acc += acc.mean()
            window_n += 1
            if b > config.burn_in:
                total_acc += acc.mean()
                total_n += 1
        if config.fixed_theta_sq is None:
            hs_step_theta(state, design, y, hyper, rng, deterministic=config.deterministic)
        if config.tune and b <= config.burn_in and window_n == TUNE_EVERY:
            rate = window_acc / window_n
            step *= math.exp(rate - TARGET_ACCEPT)
            window_acc, window_n = 0.0, 0
        if b > config.burn_in and (b - config.burn_in) % config.thinning == 0:
            kept.append(state.copy())

    metadata = {
        "seed": config.seed,
        "stream": config.stream,
        "K": list(K.K),
        "start": K.start,
        "iterations": config.iterations,
        "hyperparameters": hyper.to_dict(),
        "centering_constant": center,
        "intercept": intercept,
        "proposal_scale": step,
        "acceptance_rate": total_acc / total_n if total_n else None,
        "local_scale_parameterization": "precision: prior variance = theta_sq / (tau * local)",
        "deterministic": config.deterministic,
    }
    return PosteriorChain(kept, config.burn_in, config.thinning, family, "hiergp2", center, metadata)
