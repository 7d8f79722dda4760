"""Adaptive truncation: occasionally shrink or grow K with decaying probability."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from .basis import enumerate_indices
from .errors import InvalidParameterError
from .model import ChainState, Hyperparameters, cumulative_weights


@dataclass
class AdaptiveConfig:
    b_bar: int = 200
    alpha0: float = -1.0
    alpha1: float = -5e-4
    K_max: int = 20
    # "verbatim": K*_m = sum over all columns of 1(z_{k,m} > k_m)
    # "distinct": number of dimension-m positions carrying at least one active column
    count: str = "verbatim"

    def __post_init__(self):
        if self.alpha1 >= 0:
            raise InvalidParameterError("alpha1 must be negative for adaptation to diminish")
        if self.alpha0 > 0:
            raise InvalidParameterError("alpha0 must be <= 0 so that p(b) <= 1")
        if self.count not in ("verbatim", "distinct"):
            raise InvalidParameterError(f"unknown activity count {self.count!r}")
        if self.K_max < 1:
            raise InvalidParameterError("K_max must be >= 1")

    def probability(self, b: int) -> float:
        return min(1.0, math.exp(self.alpha0 + self.alpha1 * b))


def active_count(state: ChainState, m: int, hyper: Hyperparameters, count: str) -> int:
    ranks = enumerate_indices([np.arange(len(v)) + state.start for v in state.values])
    if count == "verbatim":
        return int(np.sum(state.z[:, m] > ranks[:, m]))
    slab = state.slab_mask(hyper.sigma_inf_sq)
    return len(np.unique(ranks[slab, m]))


def _active_positions(state: ChainState, m: int, hyper: Hyperparameters) -> np.ndarray:
    positions = enumerate_indices([np.arange(len(v)) for v in state.values])
    slab = state.slab_mask(hyper.sigma_inf_sq)
    return np.unique(positions[slab, m])


def _next_value(kept: np.ndarray, start: int) -> int:
    v = start
    taken = set(int(x) for x in kept)
    while v in taken:
        v += 1
    return v


def relayout(state: ChainState, m: int, source: list[int | None], new_value: int | None,
             hyper: Hyperparameters, rng: Generator, fresh: str) -> ChainState:
    """Rebuild ``state`` with dimension ``m`` re-indexed.

    ``source[j]`` is the old position that new position ``j`` inherits, or
    None for an appended position. Appended columns start in the spike
    (``fresh="spike"``) or are drawn from the spike-and-slab prior
    (``fresh="prior"``).
    """
    old_lengths = [len(v) for v in state.values]
    new_values = [v.copy() for v in state.values]
    kept_vals = [state.values[m][s] for s in source if s is not None]
    new_values[m] = np.asarray(kept_vals + ([new_value] if new_value is not None else []), dtype=int)
    new_lengths = [len(v) for v in new_values]

    new_pos = enumerate_indices([np.arange(n) for n in new_lengths])
    src_m = np.array([-1 if s is None else s for s in source])[new_pos[:, m]]
    old_pos = new_pos.copy()
    old_pos[:, m] = np.maximum(src_m, 0)
    flat_old = np.ravel_multi_index(tuple(old_pos.T), tuple(old_lengths))
    inherited = src_m >= 0
    p = new_pos.shape[0]

    # stick fractions follow ranks: truncate, or extend with prior draws
    r_new = new_lengths[m] - 1 + state.start
    nu = [v.copy() for v in state.nu]
    if r_new <= nu[m].size:
        nu[m] = nu[m][:r_new]
    else:
        extra = rng.beta(1.0, hyper.alpha, size=r_new - nu[m].size)
        nu[m] = np.concatenate([nu[m], extra])
    w = [cumulative_weights(v) for v in nu]

    lam = np.empty(p)
    sig = np.empty(p)
    z = np.empty((p, len(new_values)), dtype=int)
    lam[inherited] = state.lam[flat_old[inherited]]
    sig[inherited] = state.sigma_sq[flat_old[inherited]]
    z[inherited] = state.z[flat_old[inherited]]
    fresh_idx = np.flatnonzero(~inherited)
    max_ranks = [n - 1 + state.start for n in new_lengths]
    if fresh_idx.size:
        if fresh == "spike":
            slab = np.zeros(fresh_idx.size, dtype=bool)
        else:
            ranks = new_pos[fresh_idx] + state.start
            wk = np.prod([w[mm][ranks[:, mm]] for mm in range(len(new_values))], axis=0)
            slab = rng.random(fresh_idx.size) < wk
        s = np.full(fresh_idx.size, hyper.sigma_inf_sq)
        if slab.any():
            s[slab] = 1.0 / rng.gamma(hyper.a_sigma, 1.0 / hyper.b_sigma, size=int(slab.sum()))
        sig[fresh_idx] = s
        lam[fresh_idx] = np.sqrt(s) * rng.standard_normal(fresh_idx.size)
        z[fresh_idx] = np.where(slab[:, None], np.array(max_ranks) + 1, 1)
    for mm, r in enumerate(max_ranks):
        np.clip(z[:, mm], 1, r + 1, out=z[:, mm])
    return ChainState(lam, sig, nu, w, z, state.theta_sq, new_values, state.start, state.offset)


def maybe_adapt(state: ChainState, b: int, hyper: Hyperparameters, cfg: AdaptiveConfig,
                rng: Generator) -> tuple[ChainState, list[dict]]:
    """Possibly resize the truncation after iteration ``b``.

    Returns the (possibly new) state and the list of adaptation events.
    """
    if b < 1:
        raise InvalidParameterError("iteration index must be >= 1")
    if b < cfg.b_bar:
        return state, []
    if rng.random() >= cfg.probability(b):
        return state, []
    events = []
    for m in range(state.dim):
        k_cur = len(state.values[m])
        k_star = active_count(state, m, hyper, cfg.count)
        if k_star < k_cur:
            active = _active_positions(state, m, hyper)
            if cfg.count == "verbatim" and active.size != k_star:
                # keep k_star positions: active ones first, then the lowest inactive ranks
                rest = [p for p in range(k_cur) if p not in set(active.tolist())]
                keep = sorted(list(active[:k_star]) + rest[: max(0, k_star - active.size)])
            else:
                keep = list(active)
            keep = keep[: cfg.K_max - 1]
            kept_vals = state.values[m][keep]
            new_value = _next_value(kept_vals, state.start)
            state = relayout(state, m, list(keep) + [None], new_value, hyper, rng, fresh="prior")
            events.append(_event(b, m, k_cur, len(state.values[m]), "shrink"))
        elif k_cur + 1 > cfg.K_max:
            warnings.warn(f"dimension {m}: K_max={cfg.K_max} reached, growth skipped", stacklevel=2)
            events.append(_event(b, m, k_cur, k_cur, "cap"))
        else:
            new_value = _next_value(state.values[m], state.start)
            state = relayout(state, m, list(range(k_cur)) + [None], new_value, hyper, rng, fresh="spike")
            events.append(_event(b, m, k_cur, k_cur + 1, "grow"))
    return state, events


def _event(b, m, old, new, reason):
    return {"iteration": int(b), "dimension": int(m), "old_K": int(old), "new_K": int(new), "reason": reason}
