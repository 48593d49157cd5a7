import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brmm.batch import (DualModel, compute_r_max, decision_score, duality_gap,
                        brmm_primal_objective, fit_brmm, fit_csvm, fit_pubsve, fit_rfda,
                        map_brmm_to_svr, map_svr_to_brmm, rbf_linear_limit, refit_pubsve,
                        MappingParams)
from brmm.core import INF, Dataset, HyperParams, KernelSpec

from conftest import random_binary

TWO = Dataset([[1.0, 0.0], [-1.0, 0.0]], [1, -1])


def test_two_point_csvm():
    m = fit_brmm(TWO, HyperParams(C=1, R=INF, H=1))
    np.testing.assert_allclose(m.alphas, [0.5, 0.5], atol=1e-9)
    np.testing.assert_allclose(m.w, [1.0, 0.0], atol=1e-9)
    assert m.b == pytest.approx(0.0, abs=1e-12)
    for x in np.random.default_rng(0).normal(size=(10, 2)):
        assert decision_score(m, x) == pytest.approx(x[0], abs=1e-9)


def test_two_point_capped():
    m = fit_brmm(TWO, HyperParams(C=0.1))
    np.testing.assert_allclose(m.alphas, [0.1, 0.1], atol=1e-12)
    np.testing.assert_allclose(m.w, [0.2, 0.0], atol=1e-12)


def test_two_point_rfda_identical():
    a = fit_brmm(TWO, HyperParams(C=1, R=INF))
    b = fit_rfda(TWO, HyperParams(C=1))
    np.testing.assert_allclose(b.alphas, a.alphas, atol=1e-12)
    np.testing.assert_allclose(b.betas, 0.0, atol=1e-12)
    np.testing.assert_allclose(b.w, a.w, atol=1e-12)


def test_decision_score_examples():
    m = fit_brmm(TWO, HyperParams())
    assert decision_score(m, (2.0, 0.0)) == pytest.approx(2.0, abs=1e-9)
    assert decision_score(m, (0.0, 0.0)) == pytest.approx(0.0, abs=1e-12)
    zero = DualModel(np.zeros(0), np.zeros(0), np.zeros((0, 2)), np.zeros(0), KernelSpec())
    assert decision_score(zero, (3.0, 4.0)) == 0.0
    with pytest.raises(ValueError, match="dimension"):
        decision_score(m, (1.0, 2.0, 3.0))


def test_single_class_rejected():
    with pytest.raises(ValueError):
        fit_brmm(Dataset([[1.0], [2.0]], [1, 1]))


@given(seed=st.integers(0, 10_000), loss=st.sampled_from(["L1", "L2"]),
       C=st.sampled_from([0.05, 0.5, 5.0]), R=st.sampled_from([1.0, 1.5, 3.0, INF]))
def test_cap_laws_and_cache(seed, loss, C, R):
    rng = np.random.default_rng(seed)
    X, y = random_binary(rng, 30, 3)
    hp = HyperParams(C=C, R=R, H=2.0, loss_order=loss, tolerance=1e-8, max_iterations=5000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m = fit_brmm(Dataset(X, y), hp)
    assert np.all(m.alphas >= 0) and np.all(m.betas >= 0)
    if loss == "L1":
        assert np.all(m.alphas <= C + 1e-12) and np.all(m.betas <= C + 1e-12)
    if math.isinf(R):
        assert np.all(m.betas == 0.0)
    # never both duals active on one sample
    assert np.all(np.minimum(m.alphas, m.betas) <= 1e-8)
    np.testing.assert_allclose(m.w, m.coef @ m.support_X, atol=1e-9)
    assert m.b == pytest.approx(np.sum(m.coef) / 2.0, abs=1e-9)
    np.testing.assert_allclose(m.decision_function(X), m.expansion_scores(X), atol=1e-9)


@pytest.mark.parametrize("loss", ["L1", "L2"])
def test_duality_gap_small(loss, rng):
    for _ in range(10):
        X, y = random_binary(rng, 40, 4)
        hp = HyperParams(C=0.7, R=1.8, loss_order=loss, tolerance=1e-10, max_iterations=20000)
        data = Dataset(X, y)
        m = fit_brmm(data, hp)
        primal = brmm_primal_objective(m, data, hp)
        assert abs(duality_gap(m, data, hp)) <= 1e-4 * (1 + abs(primal))


def test_kernel_fit_consistency(rng):
    X, y = random_binary(rng, 40, 2)
    k = KernelSpec("rbf", sigma=1.5)
    m = fit_brmm(Dataset(X, y), HyperParams(C=1.0, R=2.0), k)
    assert m.w is None
    Xt = rng.normal(size=(5, 2))
    K = k.gram(m.support_X, Xt) + 1.0
    np.testing.assert_allclose(m.decision_function(Xt), m.coef @ K, atol=1e-12)


def test_deterministic(rng):
    X, y = random_binary(rng, 50, 3)
    hp = HyperParams(C=0.3, R=2.0, seed=7)
    a, b = fit_brmm(Dataset(X, y), hp), fit_brmm(Dataset(X, y), hp)
    assert a.alphas.tobytes() == b.alphas.tobytes()
    assert a.w.tobytes() == b.w.tobytes()


def test_nonconvergence_is_flagged(rng):
    X, y = random_binary(rng, 60, 3, shift=0.2)
    with pytest.warns(RuntimeWarning, match="stopped"):
        m = fit_brmm(Dataset(X * 50, y), HyperParams(C=100.0, max_iterations=1, tolerance=1e-12))
    assert not m.info.converged


def test_mappings():
    assert map_brmm_to_svr(1.0, 3.0) == (0.5, 0.5)
    assert map_brmm_to_svr(0.7, 1.0) == (0.0, 0.7)
    C, R = map_svr_to_brmm(0.25, 2.0)
    np.testing.assert_allclose(map_brmm_to_svr(C, R), (0.25, 2.0), rtol=1e-15)
    p = MappingParams.from_brmm(1.0, 3.0)
    assert p.epsilon == (p.R_brmm - 1) / (p.R_brmm + 1)
    for bad in ((1.0, 0.5), (0.0, 2.0), (1.0, INF)):
        with pytest.raises(ValueError):
            map_brmm_to_svr(*bad)
    with pytest.raises(ValueError):
        map_svr_to_brmm(1.0, 1.0)


@given(st.floats(0.0, 0.99), st.floats(1e-3, 1e3))
def test_mapping_round_trip(eps, C):
    e2, c2 = map_brmm_to_svr(*map_svr_to_brmm(eps, C))
    assert e2 == pytest.approx(eps, abs=1e-12) and c2 == pytest.approx(C, rel=1e-12)


def test_mapped_models_bitwise_identical(rng):
    # dyadic parameters survive the round trip exactly, so both fits see identical inputs
    X, y = random_binary(rng, 40, 3)
    for C, R in ((1.0, 3.0), (0.5, 7.0), (2.0, 1.0), (0.25, 15.0)):
        C2, R2 = map_svr_to_brmm(*map_brmm_to_svr(C, R))
        assert (C2, R2) == (C, R)
        a = fit_brmm(Dataset(X, y), HyperParams(C=C, R=R))
        b = fit_brmm(Dataset(X, y), HyperParams(C=C2, R=R2))
        assert a.alphas.tobytes() == b.alphas.tobytes()
        assert a.betas.tobytes() == b.betas.tobytes()


def test_r_max_examples():
    assert compute_r_max(TWO) == pytest.approx(1.0, abs=1e-9)
    data = Dataset([[1.0, 0.0], [-1.0, 0.0], [10.0, 0.0]], [1, -1, -1])
    hp = HyperParams(C=0.01)
    m = fit_csvm(data, hp)
    assert compute_r_max(data, hp) == pytest.approx(np.max(np.abs(m.decision_function(data.X))))


def test_r_max_at_least_one_with_margin_points(rng):
    X, y = random_binary(rng, 40, 2)
    data = Dataset(X, y)
    m = fit_csvm(data, HyperParams(C=1.0, tolerance=1e-10, max_iterations=10000))
    yf = data.y * m.decision_function(X)
    if np.any(yf <= 1 + 1e-6):
        assert compute_r_max(data, HyperParams(C=1.0, tolerance=1e-10,
                                               max_iterations=10000)) >= 1 - 1e-6


def test_rbf_linear_limit():
    assert rbf_linear_limit(1, 100) == 100
    assert rbf_linear_limit(0.5, 1) == 0.5
    assert rbf_linear_limit(2, 4) == 8
    with pytest.raises(ValueError):
        rbf_linear_limit(0, 1)


def test_pubsve_examples():
    one = Dataset([[1.0]], [1.0])
    m = fit_pubsve(one, C=INF, H=1.0, loss_order="L1")
    assert m.alphas[0] == pytest.approx(0.5, abs=1e-9) and m.b == pytest.approx(0.5, abs=1e-9)
    assert m.predict([[1.0]])[0] == pytest.approx(1.0, abs=1e-9)
    m2 = fit_pubsve(one, C=0.5, H=1.0, loss_order="L2")
    assert m2.alphas[0] == pytest.approx(1 / 3, abs=1e-9) and m2.b == pytest.approx(1 / 3, abs=1e-9)
    f = m2.predict([[1.0]])[0]
    assert f == pytest.approx(2 / 3, abs=1e-9)
    assert 1.0 - f == pytest.approx(m2.alphas[0] / (2 * 0.5), abs=1e-9)
    zero = fit_pubsve(Dataset(np.random.default_rng(1).normal(size=(5, 2)), np.zeros(5)))
    assert zero.alphas.size == 0
    assert np.all(zero.predict(np.ones((3, 2))) == 0)


def test_pubsve_degenerate_flag():
    with pytest.warns(RuntimeWarning, match="degenerate|normalise"):
        m = fit_pubsve(Dataset([[1.0], [2.0]], [-1.0, -2.0]))
    assert m.degenerate


@given(seed=st.integers(0, 10_000), dim=st.sampled_from([1, 2]))
def test_pubsve_upper_boundary(seed, dim):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(15, dim))
    y = np.abs(rng.normal(size=15))
    m = fit_pubsve(Dataset(X, y), kernel=KernelSpec("rbf", sigma=0.7))
    assert np.all(m.predict(X) >= y - 1e-6)
    assert m.b == pytest.approx(np.sum(m.alphas) / m.H, rel=1e-12)


def test_pubsve_refit_keeps_support(rng):
    X = rng.uniform(size=(10, 1))
    y = np.abs(rng.normal(size=10))
    m = fit_pubsve(Dataset(X, y))
    X2 = rng.uniform(size=(5, 1))
    y2 = np.abs(rng.normal(size=5))
    m2 = refit_pubsve(m, Dataset(X2, y2))
    pool_X = np.vstack([m.support_X, X2])
    pool_y = np.concatenate([m.support_y, y2])
    assert np.all(m2.predict(pool_X) >= pool_y - 1e-6)
