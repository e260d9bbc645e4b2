import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cisr.bayesopt import (Discrete, GammaPrior, GPHyperparams, GPModel, GPPriors, Interval,
                           TeacherBO, UCBConfig, gp_posterior, kernel_rbf_ard, map_fit,
                           normalize_dataset, random_point, ucb_propose)
from cisr.errors import DimensionMismatch, EmptySpace


def hyper(sf=1.0, ls=(1.0,), sn=0.0):
    return GPHyperparams(sf, np.array(ls), sn)


def test_kernel_values():
    h = hyper(1.0, (1.0, 2.0))
    assert kernel_rbf_ard([0.3, 0.4], [0.3, 0.4], h) == 1.0
    assert abs(kernel_rbf_ard([0, 0], [1, 2], h) - math.exp(-1)) < 1e-15
    vals = [kernel_rbf_ard([0, 0], [d, 0], h) for d in (0.5, 1, 2, 4, 8)]
    assert all(a > b for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-10
    with pytest.raises(DimensionMismatch):
        kernel_rbf_ard([0], [0, 1], h)


def test_prior_posterior():
    m = GPModel.empty(1, hyper(2.0))
    assert gp_posterior(m, [0.3]) == (0.0, 2.0)


def test_single_point_interpolation():
    m = GPModel.empty(1, hyper(1.0, (0.4,), 0.0))
    m.add([0.2], 1.7)
    mu, var = gp_posterior(m, [0.2])
    assert mu == pytest.approx(1.7, abs=1e-12) and var == pytest.approx(0.0, abs=1e-12)


def test_normalisation_round_trip():
    m = GPModel.empty(2)
    for x, y in (([0.0, 5.0], 1.0), ([2.0, 5.0], 3.0), ([1.0, 5.0], -1.0)):
        m.add(x, y)
    n = normalize_dataset(m)
    assert np.allclose(n.inputs[:2, 0], [0.0, 1.0]) and np.all(n.inputs[:, 1] == 0)
    back = n.normalization.inputs_inverse(n.inputs)
    assert np.allclose(back[:, 0], m.inputs[:, 0], atol=1e-12)
    assert np.allclose(n.normalization.targets_inverse(n.targets), m.targets, atol=1e-12)
    one = GPModel.empty(1)
    one.add([3.0], 2.0)
    n1 = normalize_dataset(one)
    assert n1.inputs[0, 0] == 0.0 and n1.targets[0] == 0.0


def test_map_fit_recovers_lengthscale():
    rng = np.random.default_rng(0)
    X = np.sort(rng.uniform(0, 1, 30))
    h = hyper(1.0, (0.5,), 1e-4)
    K = np.exp(-0.5 * (X[:, None] - X[None, :]) ** 2 / 0.25) + 1e-4 * np.eye(30)
    y = np.linalg.cholesky(K) @ rng.standard_normal(30)
    vague = GPPriors(GammaPrior(1.0, 10.0), (GammaPrior(1.0, 10.0),), GammaPrior(0.1, 10.0))
    m = GPModel(X[:, None], y, h, vague)
    fit = map_fit(m, rng_seed=1)
    assert 0.25 <= fit.lengthscales[0] <= 1.0


def test_identical_inputs_keep_noise():
    m = GPModel.empty(1)
    m.add([0.5], 0.0)
    m.add([0.5], 1.0)
    fit = map_fit(m)
    assert fit.noise_variance > 1e-3


def test_tight_priors_pin_fit():
    pri = GPPriors(GammaPrior(1.0, 1e-4), (GammaPrior(0.3, 1e-4),), GammaPrior(0.05, 1e-4))
    m = GPModel(np.array([[0.0], [0.4], [1.0]]), np.array([0.0, 1.0, -1.0]), pri.means(), pri)
    fit = map_fit(m)
    for val, p in zip((fit.signal_variance, fit.lengthscales[0], fit.noise_variance), pri.all):
        assert abs(val - p.mean) <= 2 * math.sqrt(p.variance)


def test_empty_model_proposes_random_point():
    space = [Discrete(3), Interval(-1, 1)]
    x = ucb_propose(GPModel.empty(2), space, rng_seed=4)
    assert np.array_equal(x, random_point(space, 4))
    with pytest.raises(EmptySpace):
        ucb_propose(GPModel.empty(0), [], rng_seed=0)


def test_small_beta_exploits_best_point():
    bo = TeacherBO([Interval(0.0, 1.0)], ucb=UCBConfig(beta=1e-6))
    for x, y in ((0.1, 0.0), (0.5, 0.1), (0.72, 5.0), (0.95, 0.0)):
        bo.observe([x], y)
    x = bo.propose(0)
    assert abs(x[0] - 0.72) < 0.1


def test_quadratic_twenty_proposals():
    f = lambda x: -(x - 0.3) ** 2
    bo = TeacherBO([Interval(0.0, 1.0)])
    for i, x in enumerate((0.05, 0.9)):
        bo.observe([x], f(x), rng_seed=i)
    for i in range(20):
        x = bo.propose(100 + i)
        bo.observe(x, f(x[0]), rng_seed=i)
    best = bo.X[int(np.argmax(bo.y))][0]
    assert abs(best - 0.3) < 0.05


def test_mixed_space_stays_in_bounds():
    space = [Discrete(3), Interval(-1.0, 6.0)]
    bo = TeacherBO(space)
    for k in range(4):
        bo.observe(random_point(space, k), float(k))
    x = bo.propose(9)
    assert x[0] in (0, 1, 2) and -1.0 <= x[1] <= 6.0
    assert bo.dump_csv().splitlines()[0].startswith("round,raw_0,raw_1")


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_gamma_moments_round_trip(mean, var):
    p = GammaPrior(mean, var)
    assert abs(p.shape * p.scale - mean) <= 1e-12 * mean
    assert abs(p.shape * p.scale ** 2 - var) <= 1e-12 * var
