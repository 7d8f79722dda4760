"""Equation recovery: trajectories, monomial-library regression, forward ensembles.

The regression is Xdot = Theta(X) Xi with one independent spike-and-slab
chain per state coordinate; the library is a tensor product of monomials with
powers 0..K_m - 1 in each dimension, evaluated on raw (unscaled) states.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.random import Generator

from .basis import MONOMIAL, BasisFamily, TruncationVector, design_from_indices, enumerate_indices, index_labels
from .baselines import ols_fit
from .errors import InvalidParameterError
from .gibbs import GibbsConfig, run_chain
from .model import Dataset, Hyperparameters, PosteriorChain
from .stochastic import make_rng

log = logging.getLogger(__name__)

MONOMIAL_FAMILY = BasisFamily(MONOMIAL)
BLOWUP_BOUND = 1e8
SUBSTEPS = 10


# ------------------------------------------------------------------ systems


@dataclass
class DynSystem:
    name: str
    q: int
    rhs: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return self.rhs(np.asarray(x, dtype=float))


def cubic2d(a: float = 0.1, b: float = 2.0) -> DynSystem:
    """Damped cubic oscillator: x' = -a x^3 + b y^3, y' = -b x^3 - a y^3."""

    def rhs(s):
        x3, y3 = s[0] ** 3, s[1] ** 3
        return np.array([-a * x3 + b * y3, -b * x3 - a * y3])

    return DynSystem("cubic2d", 2, rhs, {"a": a, "b": b})


def lorenz(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> DynSystem:
    def rhs(s):
        x, y, z = s
        return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])

    return DynSystem("lorenz", 3, rhs, {"sigma": sigma, "rho": rho, "beta": beta})


def linear_decay(rate: float = 1.0, q: int = 1) -> DynSystem:
    return DynSystem("linear_decay", q, lambda s: -rate * s, {"rate": rate})


SYSTEMS = {"cubic2d": cubic2d, "lorenz": lorenz, "linear_decay": linear_decay}

# (x0, dt, n) used when a config does not override them
SYSTEM_DEFAULTS = {
    "cubic2d": {"x0": (2.0, 0.0), "dt": 0.04, "n": 500, "noise_var": 0.01},
    "lorenz": {"x0": (-8.0, 7.0, 27.0), "dt": 0.05, "n": 200, "noise_var": 0.01},
}


# --------------------------------------------------------------- containers


@dataclass
class TrajectoryData:
    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray
    noise_var: float = 0.0
    diagnostic: str | None = None

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def truncated(self) -> bool:
        return self.diagnostic is not None


class MonomialLibrary:
    """Fast evaluation of Theta(x) for a fixed list of monomial multi-indices."""

    def __init__(self, indices: np.ndarray):
        self.indices = np.asarray(indices, dtype=int)
        self.max_power = self.indices.max(axis=0)

    def __call__(self, points) -> np.ndarray:
        return design_from_indices(MONOMIAL_FAMILY, self.indices, points)

    def row(self, x: np.ndarray) -> np.ndarray:
        out = np.ones(self.indices.shape[0])
        for m in range(self.indices.shape[1]):
            powers = x[m] ** np.arange(self.max_power[m] + 1)
            out *= powers[self.indices[:, m]]
        return out


def library_indices(K: Sequence[int]) -> np.ndarray:
    """Monomial multi-indices for per-dimension counts K (powers 0..K_m - 1)."""
    return enumerate_indices(library_truncation(K))


def library_truncation(K: Sequence[int]) -> TruncationVector:
    K = tuple(int(k) for k in K)
    if any(k < 1 for k in K):
        raise InvalidParameterError(f"library sizes must be >= 1, got {K}")
    if any(k < 2 for k in K):
        raise InvalidParameterError("each dimension needs at least powers 0 and 1 (K_m >= 2)")
    return TruncationVector(tuple(k - 1 for k in K), start=0)


def library_matrix(states, K: Sequence[int]) -> np.ndarray:
    return design_from_indices(MONOMIAL_FAMILY, library_indices(K), states)


def column_scales(theta: np.ndarray) -> np.ndarray:
    """Root-mean-square of each library column (1 for an all-zero column)."""
    rms = np.sqrt(np.mean(theta * theta, axis=0))
    return np.where(rms > 0, rms, 1.0)


def prepared_library(states, K: Sequence[int], normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """The library matrix every regression consumes, and its column scales.

    With ``normalize`` each column is divided by its RMS; coefficients fitted
    on the scaled matrix map back to raw-state units by dividing by the same
    scales.
    """
    theta = library_matrix(states, K)
    scales = column_scales(theta) if normalize else np.ones(theta.shape[1])
    return theta / scales, scales


@dataclass
class CoefMatrix:
    """Xi with rows aligned to ``indices`` (monomial powers) and one column per coordinate."""

    xi: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.indices = np.asarray(self.indices, dtype=int)
        if self.xi.ndim != 2 or self.xi.shape[0] != self.indices.shape[0]:
            raise InvalidParameterError(f"Xi shape {self.xi.shape} does not match {self.indices.shape[0]} library terms")
        self._lib = MonomialLibrary(self.indices)

    @property
    def q(self) -> int:
        return self.xi.shape[1]

    def rhs(self, x) -> np.ndarray:
        return self._lib.row(np.asarray(x, dtype=float)) @ self.xi

    def labels(self, names: Sequence[str] | None = None) -> list[str]:
        return index_labels(MONOMIAL_FAMILY, self.indices, names)

    def as_system(self) -> DynSystem:
        return DynSystem("coef_matrix", self.q, self.rhs)

    @classmethod
    def zeros(cls, K: Sequence[int], q: int | None = None) -> "CoefMatrix":
        idx = library_indices(K)
        return cls(np.zeros((idx.shape[0], q or idx.shape[1])), idx)

    def set_term(self, powers: Sequence[int], coordinate: int, value: float) -> None:
        row = np.flatnonzero(np.all(self.indices == np.asarray(powers), axis=1))
        if row.size != 1:
            raise InvalidParameterError(f"term {tuple(powers)} not in library")
        self.xi[row[0], coordinate] = value

    def term(self, powers: Sequence[int], coordinate: int) -> float:
        row = np.flatnonzero(np.all(self.indices == np.asarray(powers), axis=1))
        if row.size != 1:
            raise InvalidParameterError(f"term {tuple(powers)} not in library")
        return float(self.xi[row[0], coordinate])


def true_coefficients(system: DynSystem, K: Sequence[int]) -> CoefMatrix:
    """Exact Xi of a builtin polynomial system in the monomial library."""
    cm = CoefMatrix.zeros(K, system.q)
    p = system.params
    if system.name == "cubic2d":
        a, b = p["a"], p["b"]
        cm.set_term((3, 0), 0, -a)
        cm.set_term((0, 3), 0, b)
        cm.set_term((3, 0), 1, -b)
        cm.set_term((0, 3), 1, -a)
    elif system.name == "lorenz":
        s, r, bt = p["sigma"], p["rho"], p["beta"]
        cm.set_term((1, 0, 0), 0, -s)
        cm.set_term((0, 1, 0), 0, s)
        cm.set_term((1, 0, 0), 1, r)
        cm.set_term((0, 1, 0), 1, -1.0)
        cm.set_term((1, 0, 1), 1, -1.0)
        cm.set_term((1, 1, 0), 2, 1.0)
        cm.set_term((0, 0, 1), 2, -bt)
    elif system.name == "linear_decay":
        for j in range(system.q):
            powers = [0] * system.q
            powers[j] = 1
            cm.set_term(powers, j, -p["rate"])
    else:
        raise InvalidParameterError(f"no closed-form coefficients for system {system.name!r}")
    return cm


# -------------------------------------------------------------- integration


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(system, x0, dt: float, steps: int, substeps: int = SUBSTEPS,
              bound: float = BLOWUP_BOUND) -> TrajectoryData:
    """Classical RK4 with ``substeps`` internal steps per recorded interval.

    A non-finite state or one exceeding ``bound`` in absolute value truncates
    the trajectory at the last good point and sets ``diagnostic``.
    """
    if dt <= 0:
        raise InvalidParameterError("dt must be > 0")
    if steps < 0 or substeps < 1:
        raise InvalidParameterError("steps must be >= 0 and substeps >= 1")
    f = system if callable(system) else system.rhs
    x = np.asarray(x0, dtype=float).copy()
    h = dt / substeps
    states = [x.copy()]
    diagnostic = None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, steps + 1):
            for _ in range(substeps):
                x = _rk4_step(f, x, h)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound:
                diagnostic = f"blow-up at step {i} (t={i * dt:g}); trajectory truncated"
                log.warning(diagnostic)
                break
            states.append(x.copy())
    states = np.asarray(states)
    derivs = np.asarray([f(s) for s in states])
    return TrajectoryData(np.arange(states.shape[0]) * dt, states, derivs, 0.0, diagnostic)


def make_training_data(system: DynSystem, x0, dt: float, n: int, noise_var: float, rng: Generator,
                       noisy_states: bool = False, substeps: int = SUBSTEPS) -> TrajectoryData:
    """n observations spaced dt apart; derivative targets carry N(0, noise_var) noise."""
    if noise_var < 0:
        raise InvalidParameterError("noise_var must be >= 0")
    traj = integrate(system, x0, dt, n - 1, substeps)
    sd = np.sqrt(noise_var)
    derivs = traj.derivatives + sd * rng.standard_normal(traj.derivatives.shape)
    states = traj.states
    if noisy_states:
        states = states + sd * rng.standard_normal(states.shape)
    return TrajectoryData(traj.times, states, derivs, float(noise_var), traj.diagnostic)


def forward_simulate(xi: CoefMatrix, x0, dt: float, steps: int, substeps: int = SUBSTEPS) -> TrajectoryData:
    return integrate(xi.rhs, x0, dt, steps, substeps)


# ------------------------------------------------------------------ fitting


@dataclass
class DynamicsPosterior:
    """Per-coordinate chains fitted on the scaled library.

    Chains hold coefficients in scaled units; ``xi_samples`` maps them back
    with ``response_scale[j] / column_scale``.
    """

    chains: list[PosteriorChain]
    indices: np.ndarray
    hyper: Hyperparameters
    column_scale: np.ndarray | None = None
    response_scale: np.ndarray | None = None

    @property
    def q(self) -> int:
        return len(self.chains)

    @property
    def forced(self) -> np.ndarray:
        """Terms whose prior inclusion probability is one (all powers zero)."""
        return np.all(self.indices == 0, axis=1)

    def _unit(self) -> np.ndarray:
        cs = np.ones(self.indices.shape[0]) if self.column_scale is None else self.column_scale
        rs = np.ones(self.q) if self.response_scale is None else self.response_scale
        return rs[None, :] / cs[:, None]

    def xi_samples(self, sparse: bool = True) -> np.ndarray:
        """(draws, terms, q) array in raw-state units; draw s pairs the s-th state of every chain.

        With ``sparse`` coefficients sitting in the spike are set to exactly
        zero, reading the narrow spike as the point mass it approximates.
        """
        lam = np.stack([c.lambda_matrix() for c in self.chains], axis=-1)
        if sparse:
            slab = np.stack([np.vstack([s.slab_mask(self.hyper.sigma_inf_sq) for s in c.states])
                             for c in self.chains], axis=-1)
            lam = np.where(slab, lam, 0.0)
        return lam * self._unit()[None]

    def inclusion(self) -> np.ndarray:
        """Slab frequency per (term, coordinate); forced terms read 1 by construction."""
        return np.stack([c.slab_frequency(self.hyper.sigma_inf_sq) for c in self.chains], axis=-1)

    def support(self, threshold: float = 0.5, level: float = 0.95) -> np.ndarray:
        """Selected terms: slab frequency above ``threshold``.

        Forced terms carry no indicator information, so they are selected when
        their equal-tailed ``level`` interval excludes zero.
        """
        sel = self.inclusion() > threshold
        if self.forced.any():
            xs = self.xi_samples()[:, self.forced, :]
            tail = 0.5 * (1 - level)
            lo = np.quantile(xs, tail, axis=0, method="inverted_cdf")
            hi = np.quantile(xs, 1 - tail, axis=0, method="inverted_cdf")
            sel[self.forced] = (lo > 0) | (hi < 0)
        return sel

    def median(self) -> CoefMatrix:
        return CoefMatrix(np.median(self.xi_samples(), axis=0), self.indices)

    def mean(self) -> CoefMatrix:
        return CoefMatrix(self.xi_samples().mean(axis=0), self.indices)

    def draw(self, s: int) -> CoefMatrix:
        return CoefMatrix(self.xi_samples()[s], self.indices)

    def summary(self, names: Sequence[str] | None = None) -> dict:
        """Term descriptor -> per-coordinate posterior summaries (JSON-ready)."""
        samples = self.xi_samples()
        incl = self.inclusion()
        sup = self.support()
        labels = index_labels(MONOMIAL_FAMILY, self.indices, names)
        out = {}
        for j in range(self.q):
            col = {}
            for t, lab in enumerate(labels):
                s = samples[:, t, j]
                col[lab] = {
                    "mean": float(s.mean()),
                    "median": float(np.median(s)),
                    "sd": float(s.std()),
                    "q025": float(np.quantile(s, 0.025, method="inverted_cdf")),
                    "q975": float(np.quantile(s, 0.975, method="inverted_cdf")),
                    "inclusion": float(incl[t, j]),
                    "selected": bool(sup[t, j]),
                }
            out[f"coordinate_{j + 1}"] = col
        return out


def fit_dynamics(data: TrajectoryData, K: Sequence[int], hyper: Hyperparameters | None = None,
                 config: GibbsConfig | None = None, normalize: bool = True) -> DynamicsPosterior:
    """One spike-and-slab chain per derivative column on a shared monomial library.

    With ``normalize`` the chains see RMS-scaled library columns and
    RMS-scaled responses, so a single spike variance means "negligible" for
    every term regardless of its raw magnitude. Coordinate j runs on RNG
    stream ``config.stream + j`` so chains are independent and individually
    reproducible.
    """
    hyper = hyper or Hyperparameters()
    config = config or GibbsConfig()
    trunc = library_truncation(K)
    if trunc.dim != data.states.shape[1]:
        raise InvalidParameterError(f"library has {trunc.dim} dims, states have {data.states.shape[1]}")
    _, scales = prepared_library(data.states, K, normalize)
    resp = np.ones(data.derivatives.shape[1])
    if normalize:
        rms = np.sqrt(np.mean(data.derivatives ** 2, axis=0))
        resp = np.where(rms > 0, rms, 1.0)
    chains = []
    for j in range(data.derivatives.shape[1]):
        cfg = replace(config, K=trunc, stream=config.stream + j, adaptive=None, intercept=False,
                      column_scale=scales if normalize else None)
        ds = Dataset(data.states, data.derivatives[:, j] / resp[j])
        chains.append(run_chain(ds, MONOMIAL_FAMILY, cfg, hyper))
    return DynamicsPosterior(chains, enumerate_indices(trunc), hyper, scales, resp)


# -------------------------------------------------------------------- SINDy


def stls(theta: np.ndarray, target: np.ndarray, threshold: float, max_iter: int = 50) -> np.ndarray:
    """Sequential thresholded least squares for one response column."""
    coef = ols_fit(theta, target)
    if threshold <= 0:
        return coef
    active = np.abs(coef) >= threshold
    for _ in range(max_iter):
        coef = np.zeros_like(coef)
        if active.any():
            coef[active] = ols_fit(theta[:, active], target)
        new_active = np.abs(coef) >= threshold
        coef[~new_active] = 0.0
        if np.array_equal(new_active, active):
            break
        active = new_active
    return coef


def default_threshold_grid(theta, target, size: int = 30) -> np.ndarray:
    top = float(np.abs(ols_fit(theta, target)).max(initial=0.0))
    if top == 0:
        return np.array([0.0])
    return np.concatenate([[0.0], np.geomspace(top * 1e-6, top, size)])


def sindy_baseline(data: TrajectoryData, K: Sequence[int], threshold_grid=None, holdout: float = 0.2,
                   seed: int = 0, normalize: bool = True) -> CoefMatrix:
    """STLS per coordinate; the threshold minimizes held-out derivative MSE.

    Runs on the same (optionally column-scaled) library as :func:`fit_dynamics`,
    so thresholds apply to scaled coefficients. The held-out rows are a
    seeded random ``holdout`` fraction; the chosen threshold is then refit on
    all rows.
    """
    theta, scales = prepared_library(data.states, K, normalize)
    idx = library_indices(K)
    n = theta.shape[0]
    rng = make_rng(seed, 11)
    test = np.zeros(n, dtype=bool)
    n_test = max(1, int(round(holdout * n))) if n > 2 else 0
    test[rng.permutation(n)[:n_test]] = True
    train = ~test if n_test else np.ones(n, dtype=bool)
    xi = np.zeros((theta.shape[1], data.derivatives.shape[1]))
    for j in range(data.derivatives.shape[1]):
        y = data.derivatives[:, j]
        grid = default_threshold_grid(theta[train], y[train]) if threshold_grid is None else np.asarray(threshold_grid, dtype=float)
        if n_test:
            errs = [np.mean((y[test] - theta[test] @ stls(theta[train], y[train], t)) ** 2) for t in grid]
            best = float(grid[int(np.argmin(errs))])
        else:
            best = float(grid[0])
        xi[:, j] = stls(theta, y, best)
        if not np.any(xi[:, j]):
            warnings.warn(f"SINDy selected an empty support for coordinate {j + 1}", stacklevel=2)
    return CoefMatrix(xi / scales[:, None], idx)


# ---------------------------------------------------------------- ensembles


def select_draws(n_draws: int, count: int, rng: Generator | None = None) -> np.ndarray:
    """Evenly thinned draw positions, or a random subset when ``rng`` is given."""
    if n_draws < 1:
        raise InvalidParameterError("posterior has no draws")
    count = min(count, n_draws)
    if rng is not None:
        return np.sort(rng.choice(n_draws, size=count, replace=False))
    return np.linspace(0, n_draws - 1, count).round().astype(int)


def _batch_library(indices: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Theta rows for a batch of states x (members, q) -> (members, terms)."""
    out = np.ones((x.shape[0], indices.shape[0]))
    for m in range(indices.shape[1]):
        powers = x[:, m : m + 1] ** np.arange(indices[:, m].max() + 1)[None, :]
        out *= powers[:, indices[:, m]]
    return out


def integrate_batch(xis: np.ndarray, indices: np.ndarray, x0, dt: float, steps: int,
                    substeps: int = SUBSTEPS, bound: float = BLOWUP_BOUND) -> tuple[np.ndarray, np.ndarray]:
    """RK4 for many coefficient matrices at once.

    ``xis`` is (members, terms, q). Returns the (members, steps + 1, q) state
    array (NaN after a member blows up) and each member's recorded length.
    """
    members = xis.shape[0]
    x = np.tile(np.asarray(x0, dtype=float), (members, 1))
    out = np.full((members, steps + 1, x.shape[1]), np.nan)
    out[:, 0] = x
    length = np.full(members, steps + 1)
    alive = np.ones(members, dtype=bool)
    h = dt / substeps

    def f(states, xi):
        return np.einsum("mp,mpq->mq", _batch_library(indices, states), xi)

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, steps + 1):
            if not alive.any():
                break
            xa, xi = x[alive], xis[alive]
            for _ in range(substeps):
                xa = _rk4_step(lambda v: f(v, xi), xa, h)
            bad = ~np.all(np.isfinite(xa), axis=1) | (np.max(np.abs(xa), axis=1) > bound)
            ids = np.flatnonzero(alive)
            length[ids[bad]] = i
            x[ids[~bad]] = xa[~bad]
            out[ids[~bad], i] = xa[~bad]
            alive[ids[bad]] = False
    return out, length


def ensemble_forward(posterior: DynamicsPosterior, count: int, x0, dt: float, steps: int,
                     rng: Generator | None = None, substeps: int = SUBSTEPS) -> list[TrajectoryData]:
    """Forward solves under ``count`` posterior draws; blow-ups are kept but marked.

    Members are integrated together; each one follows exactly the same
    arithmetic as :func:`forward_simulate` up to floating-point reassociation.
    """
    n_draws = len(posterior.chains[0])
    picks = select_draws(n_draws, count, rng)
    xis = posterior.xi_samples()[picks]
    states, length = integrate_batch(xis, posterior.indices, x0, dt, steps, substeps)
    members = []
    for i in range(len(picks)):
        st = states[i, : length[i]]
        cm = CoefMatrix(xis[i], posterior.indices)
        diag = None
        if length[i] < steps + 1:
            diag = f"blow-up at step {length[i]} (t={length[i] * dt:g}); trajectory truncated"
            log.warning("ensemble member %d: %s", i, diag)
        derivs = np.asarray([cm.rhs(v) for v in st])
        members.append(TrajectoryData(np.arange(st.shape[0]) * dt, st, derivs, 0.0, diag))
    return members


def ensemble_mean_trajectory(trajectories: list[TrajectoryData], steps: int, dt: float) -> TrajectoryData:
    """Pointwise mean over members that are still finite at each time."""
    arr = ensemble_array(trajectories, steps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(arr, axis=0)
    keep = np.all(np.isfinite(mean), axis=1)
    n = int(np.argmin(keep)) if not keep.all() else keep.size
    return TrajectoryData(np.arange(n) * dt, mean[:n], np.full((n, mean.shape[1]), np.nan), 0.0,
                          None if n == keep.size else "every member truncated")


def ensemble_array(trajectories: list[TrajectoryData], steps: int) -> np.ndarray:
    """(members, steps + 1, q) array with NaN after any truncation."""
    q = trajectories[0].states.shape[1]
    out = np.full((len(trajectories), steps + 1, q), np.nan)
    for i, tr in enumerate(trajectories):
        out[i, : tr.states.shape[0]] = tr.states[: steps + 1]
    return out


def ensemble_spread(trajectories: list[TrajectoryData], steps: int) -> np.ndarray:
    """Across-member standard deviation per time, averaged over coordinates."""
    arr = ensemble_array(trajectories, steps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(np.nanstd(arr, axis=0), axis=-1)


def trajectory_rmse(pred: TrajectoryData, truth: TrajectoryData) -> float:
    """RMSE over the common recorded horizon; inf if the prediction blew up first."""
    m = min(pred.n, truth.n)
    if pred.n < truth.n:
        return float("inf")
    d = pred.states[:m] - truth.states[:m]
    return float(np.sqrt(np.mean(d * d)))


def pointwise_error(pred: TrajectoryData, truth: TrajectoryData) -> np.ndarray:
    """Euclidean state error at each recorded time (inf beyond a truncation)."""
    out = np.full(truth.n, np.inf)
    m = min(pred.n, truth.n)
    out[:m] = np.linalg.norm(pred.states[:m] - truth.states[:m], axis=1)
    return out


def write_trajectories_csv(path, trajectories: list[TrajectoryData]) -> None:
    """Long format: t, x1..xq, sample_id."""
    q = trajectories[0].states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{m + 1}" for m in range(q)] + ["sample_id"])
        for sid, tr in enumerate(trajectories):
            for t, row in zip(tr.times, tr.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [sid])
