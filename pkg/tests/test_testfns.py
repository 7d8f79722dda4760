from __future__ import annotations

import math

import numpy as np
import pytest

from hiergp.basis import TruncationVector, enumerate_indices
from hiergp.model import Hyperparameters
from hiergp.stochastic import make_rng
from hiergp import testfns
from hiergp.testfns import branin_raw, simulate_from_prior


def test_branin_global_minimum():
    # oracle: dense grid over the conventional domain
    x1, x2 = np.meshgrid(np.linspace(-5, 10, 1501), np.linspace(0, 15, 1501))
    vals = branin_raw(x1, x2)
    assert vals.min() == pytest.approx(0.397887, abs=1e-3)
    assert branin_raw(math.pi, 2.275) == pytest.approx(0.397887, abs=1e-6)


def test_branin_as_printed_origin():
    # at x1 = 0 the dropped square is irrelevant: 36 + s(1 - t) + s with t = 1/(8 pi)
    expected = 36 + 10 * (1 - 1 / (8 * math.pi)) + 10
    assert branin_raw(0.0, 0.0, as_printed=True) == pytest.approx(55.60, abs=0.01)
    assert branin_raw(0.0, 0.0, as_printed=True) == pytest.approx(expected, abs=1e-12)
    # away from x1 = 0 the two variants differ
    assert branin_raw(3.0, 2.0, as_printed=True) != pytest.approx(branin_raw(3.0, 2.0))


def test_branin_unit_square_rescaling():
    # (1/3, 0) on the unit square is (0, 0) on the conventional domain
    assert testfns.testfn_branin([1 / 3, 0.0]) == pytest.approx(branin_raw(0.0, 0.0))
    x = np.random.default_rng(0).random((10, 2))
    assert np.array_equal(testfns.testfn_branin(x), testfns.testfn_branin(x))


def test_cheng_sandu_values():
    assert testfns.testfn_cheng_sandu([0.0, 0.0]) == pytest.approx(1.0)
    assert testfns.testfn_cheng_sandu([1.0, 1.0]) == pytest.approx(-1.1312, abs=1e-4)
    assert testfns.testfn_cheng_sandu([0.5, 0.5]) == pytest.approx(0.6938, abs=1e-4)


def test_prior_draw_is_sparse_with_zero_spike():
    hyper = Hyperparameters(sigma_inf_sq=0.0)
    f = simulate_from_prior(2, (8, 8), hyper, make_rng(0))
    assert np.any(f.lam == 0.0)
    assert np.all(f.lam[~f.active] == 0.0)


def test_prior_draw_heredity():
    hyper = Hyperparameters(sigma_inf_sq=0.0)
    for seed in range(20):
        f = simulate_from_prior(2, (4, 4), hyper, make_rng(seed))
        for k in enumerate_indices(TruncationVector((4, 4))):
            if k[0] >= 2 and k[1] >= 3:
                assert f.weight((1, k[1])) >= f.weight(k)
                assert f.weight((k[0], 1)) >= f.weight(k)


def test_prior_draw_callable():
    f = simulate_from_prior(1, (3,), Hyperparameters(sigma_inf_sq=0.0), make_rng(1))
    x = np.array([[0.25]])
    expected = f.lam @ np.sin(2 * np.pi * np.arange(1, 4) * 0.25)
    assert f(x)[0] == pytest.approx(expected)
