"""Hyperparameters, data containers, chain state and likelihood plumbing."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .basis import BasisFamily, enumerate_indices
from .errors import InvalidParameterError

THETA_FLOOR = 1e-8


@dataclass
class Hyperparameters:
    alpha: float = 6.0
    a_sigma: float = 1.0
    b_sigma: float = 1.0
    a_theta: float = 1.0
    b_theta: float = 1.0
    sigma_inf_sq: float = 1e-6
    tau: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "a_sigma", "b_sigma", "a_theta", "b_theta", "tau"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0:
                raise InvalidParameterError(f"{name} must be > 0, got {value}")
            setattr(self, name, value)
        self.sigma_inf_sq = float(self.sigma_inf_sq)
        if self.sigma_inf_sq < 0:
            raise InvalidParameterError("sigma_inf_sq must be >= 0")
        if self.sigma_inf_sq >= self.b_sigma / (self.a_sigma + 1.0):
            warnings.warn(
                "spike variance is not below the slab mode b_sigma/(a_sigma+1); "
                "spike and slab will be hard to tell apart",
                stacklevel=2,
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    points: np.ndarray
    responses: np.ndarray
    noisy: bool = True

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.responses = np.asarray(self.responses, dtype=float).reshape(-1)
        if self.points.shape[0] != self.responses.size:
            if self.points.shape[0] == 1 and self.points.shape[1] == self.responses.size:
                self.points = self.points.T
            else:
                raise InvalidParameterError(
                    f"{self.points.shape[0]} points but {self.responses.size} responses"
                )

    @property
    def n(self) -> int:
        return self.responses.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def check_unit_cube(self):
        if np.any(self.points < 0) or np.any(self.points > 1):
            raise InvalidParameterError("sinusoidal basis requires points in [0,1]^d")


@dataclass
class ChainState:
    """One Gibbs iterate.

    ``values[m]`` lists the basis index values kept in dimension ``m``; a
    value's position in that list fixes its hierarchy rank (position + start).
    ``nu[m]`` holds the stick fractions for ranks ``1..R_m`` and ``w[m]`` the
    cumulative weights for ranks ``0..R_m`` with ``w[m][0] == 1``. The latent
    ``z[:, m]`` takes values ``1..R_m + 1``; the final cell stands for every
    rank beyond the truncation and carries prior mass ``w[m][R_m]``.
    """

    lam: np.ndarray
    sigma_sq: np.ndarray
    nu: list[np.ndarray]
    w: list[np.ndarray]
    z: np.ndarray
    theta_sq: float
    values: list[np.ndarray]
    start: int = 1
    offset: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def indices(self) -> np.ndarray:
        return enumerate_indices(self.values)

    @property
    def ranks(self) -> np.ndarray:
        return enumerate_indices([np.arange(len(v)) + self.start for v in self.values])

    @property
    def max_ranks(self) -> list[int]:
        return [len(v) - 1 + self.start for v in self.values]

    def copy(self) -> "ChainState":
        return ChainState(
            lam=self.lam.copy(),
            sigma_sq=self.sigma_sq.copy(),
            nu=[v.copy() for v in self.nu],
            w=[v.copy() for v in self.w],
            z=self.z.copy(),
            theta_sq=float(self.theta_sq),
            values=[v.copy() for v in self.values],
            start=self.start,
            offset=float(self.offset),
        )

    def slab_mask(self, sigma_inf_sq: float) -> np.ndarray:
        return self.sigma_sq != sigma_inf_sq

    def check(self, sigma_inf_sq: float | None = None, atol: float = 0.0) -> None:
        """Raise AssertionError if any structural invariant is violated."""
        p = math.prod(len(v) for v in self.values)
        assert self.lam.shape == (p,), (self.lam.shape, p)
        assert self.sigma_sq.shape == (p,)
        assert self.z.shape == (p, self.dim)
        assert self.theta_sq > 0
        for m, r in enumerate(self.max_ranks):
            assert self.nu[m].shape == (r,), (self.nu[m].shape, r)
            assert self.w[m].shape == (r + 1,)
            expected = cumulative_weights(self.nu[m])
            assert np.all(np.abs(self.w[m] - expected) <= atol), "cumulative identity broken"
            assert np.all(np.diff(self.w[m]) <= 0), "weights must be non-increasing"
            assert np.all((self.z[:, m] >= 1) & (self.z[:, m] <= r + 1))
        if sigma_inf_sq is not None:
            slab = self.slab_mask(sigma_inf_sq)
            assert np.all(self.sigma_sq[slab] > 0)

    def to_record(self) -> dict:
        return {
            "lambda": self.lam.tolist(),
            "sigma_sq": self.sigma_sq.tolist(),
            "nu": [v.tolist() for v in self.nu],
            "w": [v.tolist() for v in self.w],
            "z": self.z.tolist(),
            "theta_sq": float(self.theta_sq),
            "values": [v.tolist() for v in self.values],
            "start": self.start,
            "offset": float(self.offset),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ChainState":
        return cls(
            lam=np.asarray(rec["lambda"], dtype=float),
            sigma_sq=np.asarray(rec["sigma_sq"], dtype=float),
            nu=[np.asarray(v, dtype=float) for v in rec["nu"]],
            w=[np.asarray(v, dtype=float) for v in rec["w"]],
            z=np.asarray(rec["z"], dtype=int).reshape(len(rec["lambda"]), len(rec["values"])),
            theta_sq=float(rec["theta_sq"]),
            values=[np.asarray(v, dtype=int) for v in rec["values"]],
            start=int(rec["start"]),
            offset=float(rec.get("offset", 0.0)),
        )


@dataclass
class HorseshoeState:
    """State of the global-local sampler.

    ``local`` enters the target as a precision-like factor; the implied prior
    variance of each coefficient is ``theta_sq / (tau * local)``.
    """

    lam: np.ndarray
    local: np.ndarray
    theta_sq: float
    values: list[np.ndarray]
    start: int = 1
    offset: float = 0.0

    @property
    def indices(self) -> np.ndarray:
        return enumerate_indices(self.values)

    def prior_variance(self, tau: float) -> np.ndarray:
        return self.theta_sq / (tau * self.local)

    def copy(self) -> "HorseshoeState":
        return HorseshoeState(
            self.lam.copy(), self.local.copy(), float(self.theta_sq), [v.copy() for v in self.values],
            self.start, float(self.offset),
        )

    def to_record(self) -> dict:
        return {
            "lambda": self.lam.tolist(),
            "local": self.local.tolist(),
            "theta_sq": float(self.theta_sq),
            "values": [v.tolist() for v in self.values],
            "start": self.start,
            "offset": float(self.offset),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "HorseshoeState":
        return cls(
            lam=np.asarray(rec["lambda"], dtype=float),
            local=np.asarray(rec["local"], dtype=float),
            theta_sq=float(rec["theta_sq"]),
            values=[np.asarray(v, dtype=int) for v in rec["values"]],
            start=int(rec["start"]),
            offset=float(rec.get("offset", 0.0)),
        )


@dataclass
class PosteriorChain:
    """Retained (post burn-in, thinned) states plus run metadata."""

    states: list
    burn_in: int
    thinning: int
    family: BasisFamily
    sampler: str = "hiergp"
    center: float = 0.0
    metadata: dict[str, Any] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def uniform_layout(self) -> bool:
        first = self.states[0].values
        return all(
            len(s.values) == len(first) and all(np.array_equal(a, b) for a, b in zip(s.values, first))
            for s in self.states
        )

    def lambda_matrix(self) -> np.ndarray:
        """(draws, P) coefficient matrix; requires a fixed layout."""
        if not self.uniform_layout():
            raise InvalidParameterError("chain layout changed during sampling; no common coefficient matrix")
        return np.vstack([s.lam for s in self.states])

    def theta_sq(self) -> np.ndarray:
        return np.array([s.theta_sq for s in self.states])

    def offsets(self) -> np.ndarray:
        return np.array([s.offset for s in self.states])

    def slab_frequency(self, sigma_inf_sq: float) -> np.ndarray:
        """Fraction of retained draws in which each coefficient sits in the slab."""
        if self.sampler != "hiergp":
            raise InvalidParameterError("slab indicators only exist for the spike-and-slab sampler")
        return np.mean([s.slab_mask(sigma_inf_sq) for s in self.states], axis=0)


def cumulative_weights(nu: np.ndarray) -> np.ndarray:
    """w_0 = 1, w_j = prod_{i<=j} (1 - nu_i)."""
    return np.concatenate([[1.0], np.cumprod(1.0 - np.asarray(nu, dtype=float))])


def log_likelihood(state, design: np.ndarray, responses: np.ndarray) -> float:
    """Gaussian log-likelihood sum_i log N(y_i; (X lambda)_i, theta^2)."""
    design = np.atleast_2d(design)
    y = np.asarray(responses, dtype=float).reshape(-1)
    if design.shape != (y.size, state.lam.size):
        raise InvalidParameterError(f"design {design.shape} incompatible with {y.size} responses, {state.lam.size} coefficients")
    resid = y - design @ state.lam - getattr(state, "offset", 0.0)
    t2 = float(state.theta_sq)
    return float(-0.5 * y.size * math.log(2 * math.pi * t2) - 0.5 * resid @ resid / t2)


def prior_weight(state, k) -> float:
    """w_k = prod_m w_{k_m, m}, with ``k`` given as hierarchy ranks."""
    k = np.asarray(k, dtype=int).reshape(-1)
    if k.size != len(state.w):
        raise InvalidParameterError(f"index of dimension {k.size} for a {len(state.w)}-dimensional state")
    return float(np.prod([state.w[m][k[m]] for m in range(k.size)]))


# ---------------------------------------------------------------------------
# dataset ingestion
# ---------------------------------------------------------------------------

def read_dataset_csv(path, noisy: bool = True) -> Dataset:
    """Read a CSV with header ``x1,...,xd,y``.

    Input columns are taken in the order x1..xd regardless of where they
    appear in the header; the response column must be named ``y``.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        xcols = sorted((c for c in header if c.startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
        if "y" not in header or not xcols:
            raise InvalidParameterError(f"{path}: expected header x1..xd,y, got {header}")
        if [int(c[1:]) for c in xcols] != list(range(1, len(xcols) + 1)):
            raise InvalidParameterError(f"{path}: input columns must be x1..x{len(xcols)} without gaps")
        rows = list(reader)
    pts = np.array([[float(r[c]) for c in xcols] for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    return Dataset(pts.reshape(len(rows), len(xcols)), y, noisy=noisy)


def read_dataset_json(path) -> Dataset:
    """Read ``{"points": [[...], ...], "responses": [...], "noisy": bool}``."""
    data = json.loads(Path(path).read_text())
    return Dataset(np.asarray(data["points"], dtype=float), np.asarray(data["responses"], dtype=float),
                   noisy=bool(data.get("noisy", True)))


def read_dataset(path, noisy: bool = True) -> Dataset:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_dataset_json(path)
    return read_dataset_csv(path, noisy=noisy)


def write_dataset_csv(path, dataset: Dataset, extra: dict[str, np.ndarray] | None = None) -> None:
    d = dataset.dim
    header = [f"x{m + 1}" for m in range(d)] + ["y"]
    extra = extra or {}
    header += list(extra)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.points[i]] + [repr(float(dataset.responses[i]))]
            row += [repr(float(extra[c][i])) for c in extra]
            writer.writerow(row)
