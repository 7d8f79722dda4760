from __future__ import annotations

import math

import numpy as np
import pytest

from hiergp.basis import BasisFamily, TruncationVector, build_design_matrix
from hiergp.errors import InvalidParameterError
from hiergp.model import ChainState, PosteriorChain, cumulative_weights
from hiergp.predict import (
    empirical_coverage,
    equal_tailed,
    eval_function_sample,
    function_samples,
    mae,
    mean_interval_width,
    predict,
    rmse,
    write_predictions_csv,
)
from hiergp.stochastic import make_rng

SIN = BasisFamily()


def state(lam, values=None, theta_sq=0.1, offset=0.0):
    lam = np.asarray(lam, dtype=float)
    values = values or [np.arange(1, lam.size + 1)]
    nu = [np.full(len(v), 0.2) for v in values]
    return ChainState(lam, np.ones(lam.size), nu, [cumulative_weights(v) for v in nu],
                      np.ones((lam.size, len(values)), dtype=int), theta_sq, values, 1, offset)


def test_eval_zero_is_center():
    assert eval_function_sample(state([0.0, 0.0]), SIN, [[0.3]], center=1.7)[0] == 1.7


def test_eval_single_active():
    assert eval_function_sample(state([2.0]), SIN, [[0.25]])[0] == pytest.approx(2.0)


def test_eval_random_state_dot_product():
    rng = np.random.default_rng(0)
    lam = rng.standard_normal(9)
    s = state(lam, values=[np.arange(1, 4), np.arange(1, 4)], offset=0.3)
    x = rng.random((5, 2))
    X = build_design_matrix(SIN, TruncationVector((3, 3)), x)
    assert np.allclose(eval_function_sample(s, SIN, x, center=1.0), X @ lam + 0.3 + 1.0, atol=1e-13)


def test_identical_states_zero_width():
    s = state([0.5, -0.2])
    chain = PosteriorChain([s.copy() for _ in range(10)], 0, 1, SIN, center=0.1)
    res = predict(chain, [[0.1], [0.7]])
    truth = eval_function_sample(s, SIN, [[0.1], [0.7]], 0.1)
    assert np.allclose(res.lower, truth) and np.allclose(res.upper, truth) and np.allclose(res.mean, truth)


def test_two_point_quantiles():
    chain = PosteriorChain([state([0.0]), state([2.0])], 0, 1, SIN)
    res = predict(chain, [[0.25]], level=0.95)
    assert res.mean[0] == pytest.approx(1.0)
    assert res.lower[0] == pytest.approx(0.0, abs=1e-12) and res.upper[0] == pytest.approx(2.0)


def _random_chain(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    states = [state(rng.standard_normal(4) * [1, 0.5, 0.2, 0.1], theta_sq=0.5 + 0.1 * rng.random()) for _ in range(n)]
    return PosteriorChain(states, 0, 1, SIN)


def test_levels_nested():
    chain = _random_chain()
    x = np.linspace(0, 1, 15)[:, None]
    lo50, hi50 = equal_tailed(function_samples(chain, x), 0.5)
    lo95, hi95 = equal_tailed(function_samples(chain, x), 0.95)
    assert np.all(lo95 <= lo50) and np.all(hi50 <= hi95)


def test_noise_widens():
    chain = _random_chain()
    x = np.linspace(0, 1, 15)[:, None]
    f = predict(chain, x)
    y = predict(chain, x, include_noise=True, rng=make_rng(0))
    assert np.all(y.upper - y.lower >= f.upper - f.lower)
    with pytest.raises(InvalidParameterError):
        predict(chain, x, include_noise=True)


def test_mean_is_average_of_samples():
    chain = _random_chain()
    x = np.random.default_rng(1).random((6, 1))
    manual = np.mean([eval_function_sample(s, SIN, x) for s in chain.states], axis=0)
    assert np.allclose(predict(chain, x).mean, manual, atol=1e-13)


def test_mixed_layout_chain():
    a = state([1.0, 0.0], values=[np.array([1, 2])])
    b = state([1.0, 0.0, 0.5], values=[np.array([1, 2, 3])])
    chain = PosteriorChain([a, b], 0, 1, SIN)
    x = np.array([[0.3]])
    f = function_samples(chain, x)
    assert f[0, 0] == pytest.approx(eval_function_sample(a, SIN, x)[0])
    assert f[1, 0] == pytest.approx(eval_function_sample(b, SIN, x)[0])
    with pytest.raises(InvalidParameterError):
        chain.lambda_matrix()


def test_empty_chain():
    with pytest.raises(InvalidParameterError):
        predict(PosteriorChain([], 0, 1, SIN), [[0.5]])


def test_metric_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0
    assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
    assert rmse(np.arange(5) + 0.7, np.arange(5)) == pytest.approx(0.7)
    assert mae([0, 0], [3, -4]) == 3.5
    with pytest.raises(InvalidParameterError):
        rmse([1, 2], [1])


def test_coverage_and_width():
    assert empirical_coverage([0, 0], [1, 1], [0.5, 0.2]) == 1.0
    truth = [0.5, 2.0, 0.5, 2.0]
    assert empirical_coverage(np.zeros(4), np.ones(4), truth) == 0.5
    assert mean_interval_width(np.zeros(4), np.ones(4)) == 1.0


def test_predictions_csv(tmp_path):
    chain = _random_chain(20)
    x = np.array([[0.1], [0.2]])
    res = predict(chain, x)
    path = tmp_path / "p.csv"
    write_predictions_csv(path, x, res, truth=[0.0, 1.0])
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,mean,lower,upper,truth"
    assert float(lines[1].split(",")[1]) == res.mean[0]
