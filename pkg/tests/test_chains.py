import numpy as np
import pytest

from brmm.batch import fit_brmm
from brmm.chains import (
    AffineNode,
    DifferentiableNode,
    ProcessingChain,
    backtransform,
    backtransform_affine_analytic,
    backtransform_affine_probe,
    backtransform_numeric,
    chain_apply,
    chain_apply_until,
    covariance_forward_model,
    decimation_node,
    feature_scaling_node,
    finite_difference_step,
    linear_decision_node,
    recursive_backward_elimination,
    reinit_classifier,
    sensor_ranking,
    spatial_filter_node,
    standardization_node,
    temporal_fir_node,
    translation_node,
)
from brmm.core import Dataset, HyperParams, KernelSpec

from conftest import random_affine_chain, random_anchor, random_binary


def scaling_chain():
    return ProcessingChain((feature_scaling_node([2.0, 3.0]), linear_decision_node([1.0, 1.0])))


def identity_chain():
    return ProcessingChain((AffineNode(np.eye(2), np.zeros(2)), linear_decision_node([1.0, 2.0])))


def translation_chain():
    return ProcessingChain((translation_node([1.0, 1.0]), linear_decision_node([1.0, 2.0])))


EXAMPLES = [(scaling_chain, [2.0, 3.0], 0.0), (identity_chain, [1.0, 2.0], 0.0),
            (translation_chain, [1.0, 2.0], 3.0)]


# --- application ---------------------------------------------------------------

def test_apply_examples():
    assert chain_apply(identity_chain(), [3.0, 4.0]) == 11.0
    bare = ProcessingChain((linear_decision_node([1.0, -1.0], 0.5),))
    assert chain_apply(bare, [2.0, 1.0]) == 1.5
    c = ProcessingChain((feature_scaling_node([2.0, 3.0]), linear_decision_node([1.0, 1.0], 1.0)))
    assert chain_apply(c, [1.0, 1.0]) == 6.0
    assert np.array_equal(chain_apply_until(c, [1.0, 1.0], 1), [2.0, 3.0])
    assert np.array_equal(chain_apply_until(c, [1.0, 1.0], 0), [1.0, 1.0])


def test_dimension_errors():
    with pytest.raises(ValueError):
        ProcessingChain((AffineNode(np.eye(3), np.zeros(3)), linear_decision_node([1.0, 2.0])))
    with pytest.raises(ValueError):
        ProcessingChain((AffineNode(np.eye(2), np.zeros(2)),))
    with pytest.raises(ValueError):
        chain_apply(identity_chain(), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        AffineNode(np.ones((2, 2)), np.zeros(2), kind="linear_decision")


# --- affine backtransformation ---------------------------------------------------

@pytest.mark.parametrize("make, w, b", EXAMPLES)
def test_analytic_examples(make, w, b):
    res = backtransform_affine_analytic(make())
    assert np.array_equal(res.weights, w) and res.offset == b
    assert not res.local


@pytest.mark.parametrize("make, w, b", EXAMPLES)
def test_probe_examples(make, w, b):
    res = backtransform_affine_probe(make())
    assert np.array_equal(res.weights, w) and res.offset == b


def test_probe_constant_chain():
    res = backtransform_affine_probe(lambda x: 5.0, 3)
    assert np.array_equal(res.weights, np.zeros(3)) and res.offset == 5.0


def test_probe_rejects_nonaffine():
    with pytest.raises(ValueError, match="non-affine"):
        backtransform_affine_probe(lambda x: float(x[0] ** 2), 2)


def test_analytic_rejects_nonaffine():
    node = DifferentiableNode(lambda x: np.array([x @ x]), 2, 1)
    with pytest.raises(ValueError):
        backtransform_affine_analytic(ProcessingChain((node,)))


def test_stage_weights(rng):
    chain = random_affine_chain(rng, n_nodes=4)
    res = backtransform_affine_analytic(chain)
    assert len(res.stage_weights) == 4
    for stage, w in enumerate(res.stage_weights):
        x = rng.normal(size=chain.in_dim)
        xs = chain_apply_until(chain, x, stage)
        inner = ProcessingChain(chain.nodes[stage:])
        offset = backtransform_affine_analytic(inner).offset
        assert chain_apply(chain, x) == pytest.approx(offset + w @ xs, abs=1e-10)


def test_affine_identity_and_probe_agreement(rng):
    for _ in range(30):
        chain = random_affine_chain(rng)
        a = backtransform_affine_analytic(chain)
        p = backtransform_affine_probe(chain)
        assert np.max(np.abs(a.weights - p.weights)) <= 1e-9
        assert abs(a.offset - p.offset) <= 1e-9
        for x in rng.normal(size=(100, chain.in_dim)):
            f = chain_apply(chain, x)
            assert abs(f - (a.offset + a.weights @ x)) <= 1e-9
            assert abs(f - (p.offset + p.weights @ x)) <= 1e-9


def test_node_order_sensitivity(rng):
    d = 4
    for _ in range(20):
        n1 = AffineNode(rng.normal(size=(d, d)), rng.normal(size=d))
        n2 = AffineNode(rng.normal(size=(d, d)), rng.normal(size=d))
        dec = linear_decision_node(rng.normal(size=d))
        w12 = backtransform_affine_analytic(ProcessingChain((n1, n2, dec))).weights
        w21 = backtransform_affine_analytic(ProcessingChain((n2, n1, dec))).weights
        differ = not np.allclose(n2.homogeneous() @ n1.homogeneous(),
                                 n1.homogeneous() @ n2.homogeneous())
        assert differ == (not np.allclose(w12, w21))
    # diagonal scalings commute, so the order does not matter
    s1, s2 = feature_scaling_node([2.0, 3.0]), feature_scaling_node([5.0, 7.0])
    dec = linear_decision_node([1.0, -1.0])
    assert np.array_equal(backtransform_affine_analytic(ProcessingChain((s1, s2, dec))).weights,
                          backtransform_affine_analytic(ProcessingChain((s2, s1, dec))).weights)


# --- numeric backtransformation --------------------------------------------------

def test_step_rule():
    assert finite_difference_step(0.0) == 1.5e-8
    assert finite_difference_step(2.0) == pytest.approx(3e-8, rel=1e-8)
    assert finite_difference_step(1e-6, floor=1.0) == pytest.approx(1.5e-8, rel=1e-6)
    h = finite_difference_step(0.3)
    assert (0.3 + h) - 0.3 == h


def test_numeric_square():
    f = lambda x: float(x[0] ** 2)
    assert backtransform_numeric(f, [3.0]).weights[0] == pytest.approx(6.0, abs=1e-4)
    assert backtransform_numeric(f, [3.0], "four_point").weights[0] == pytest.approx(6.0, abs=1e-7)
    res = backtransform_numeric(f, [3.0])
    assert res.local and res.offset is None and np.array_equal(res.anchor, [3.0])


@pytest.mark.parametrize("order, tol", [("two_point", 1e-5), ("four_point", 1e-7)])
def test_numeric_matches_affine(rng, order, tol):
    for _ in range(30):
        chain = random_affine_chain(rng)
        exact = backtransform_affine_analytic(chain).weights
        x0 = random_anchor(rng, chain.in_dim)
        num = backtransform_numeric(chain, x0, order).weights
        assert np.max(np.abs(num - exact)) <= tol


def test_numeric_zero_component():
    chain = ProcessingChain((linear_decision_node([1.5, -2.0], 0.3),))
    w = backtransform_numeric(chain, [0.0, 0.0]).weights
    assert np.allclose(w, [1.5, -2.0], atol=1e-6)


def test_numeric_rejects_nonfinite():
    with pytest.raises(ValueError):
        backtransform_numeric(lambda x: np.inf if x[0] <= 0 else 1.0, [0.0])
    with pytest.raises(ValueError):
        backtransform_numeric(lambda x: 1.0, [0.0], "centered")


def rbf_gradient(model, x0, sigma):
    diff = x0[None, :] - model.support_X
    k = np.exp(-np.sum(diff**2, axis=1) / (2 * sigma**2))
    return (model.coef * k) @ (-diff / sigma**2)


def test_numeric_rbf_gradient(rng):
    X, y = random_binary(rng, 40, 3)
    sigma = 1.3
    model = fit_brmm(Dataset(X, y), HyperParams(C=1.0, R=2.0), KernelSpec("rbf", sigma=sigma))
    chain = ProcessingChain((DifferentiableNode.from_model(model),))
    for x0 in rng.normal(size=(100, 3)):
        num = backtransform_numeric(chain, x0).weights
        assert np.max(np.abs(num - rbf_gradient(model, x0, sigma))) <= 1e-4


def test_backtransform_dispatch(rng):
    chain = scaling_chain()
    assert backtransform(chain).offset == 0.0
    smooth = ProcessingChain((DifferentiableNode(lambda x: np.array([x @ x]), 2, 1),))
    with pytest.raises(ValueError):
        backtransform(smooth)
    assert np.allclose(backtransform(smooth, [1.0, 2.0]).weights, [2.0, 4.0], atol=1e-6)


# --- forward model and reinitialisation ---------------------------------------------

def data_with_covariance(rng, cov, n=200):
    Z = rng.normal(size=(n, len(cov)))
    Z -= Z.mean(axis=0)
    Z = Z @ np.linalg.inv(np.linalg.cholesky(np.cov(Z, rowvar=False)).T)
    return Z @ np.linalg.cholesky(cov).T


def test_covariance_forward_model(rng):
    X = data_with_covariance(rng, np.diag([4.0, 1.0]))
    assert np.allclose(covariance_forward_model([1.0, 1.0], X), [4.0, 1.0], atol=1e-10)
    I = data_with_covariance(rng, np.eye(3))
    w = rng.normal(size=3)
    assert np.allclose(covariance_forward_model(w, Dataset(I, np.ones(len(I)))), w, atol=1e-10)
    assert np.array_equal(covariance_forward_model(np.zeros(2), X), np.zeros(2))
    with pytest.raises(ValueError):
        covariance_forward_model([1.0], np.ones((1, 1)))


def test_reinit_examples():
    double = lambda x: 2.0 * np.asarray(x)
    assert np.array_equal(reinit_classifier(double, [1.0, 1.0], 3.7), [2.0, 2.0])
    shifted = lambda x: 2.0 * np.asarray(x) + np.array([1.0, 0.0])
    assert np.array_equal(reinit_classifier(shifted, [1.0, 1.0], 2.0), [4.0, 2.0])
    assert np.array_equal(reinit_classifier(shifted, [0.0, 0.0], 0.0), [0.0, 0.0])
    with pytest.raises(ValueError):
        reinit_classifier(lambda x: 1.0, [1.0, 1.0], 0.0)


def test_reinit_random_affine(rng):
    for _ in range(100):
        a, b = rng.integers(1, 8, size=2)
        node = AffineNode(rng.normal(size=(b, a)), rng.normal(size=b))
        w0, b_sum = rng.normal(size=a), float(rng.normal())
        expect = node.A @ w0 + node.T * b_sum
        assert np.max(np.abs(reinit_classifier(node, w0, b_sum) - expect)) <= 1e-12


def test_reinit_literal_mode():
    shifted = lambda x: 2.0 * np.asarray(x) + np.array([1.0, 0.0])
    assert np.array_equal(reinit_classifier(shifted, [1.0, 1.0], 2.0, "literal"), [1.0, 2.0])


# --- sensor ranking ----------------------------------------------------------------

def test_ranking_examples():
    r = sensor_ranking([[1.0, -2.0], [0.0, 3.0]])
    assert np.array_equal(r.scores, [1.0, 5.0]) and r.order == (0, 1)
    r = sensor_ranking([[1.0, 0.0, 2.0], [1.0, 0.0, -1.0]])
    assert r.order[0] == 1
    assert sensor_ranking([[4.0], [1.0]]).order == (0,)
    with pytest.raises(ValueError):
        sensor_ranking(np.zeros((0, 0)))


def test_ranking_from_backtransform():
    chain = ProcessingChain((feature_scaling_node([1.0, 4.0, 0.5, 1.0]),
                             linear_decision_node([1.0, 1.0, 1.0, -1.0])), input_shape=(2, 2))
    r = sensor_ranking(backtransform(chain), "backtrans_stage")
    assert np.array_equal(r.scores, [1.5, 5.0])


def linear_chain_builder(data, sensors):
    m = fit_brmm(data, HyperParams(C=1.0))
    return ProcessingChain((linear_decision_node(m.w, m.b),))


def noisy_sensor_data(seed, n=60, n_time=2):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = np.empty((n, n_time * 2))
    for g in range(n_time):
        X[:, 2 * g] = 1.5 * y + rng.normal(size=n)
        X[:, 2 * g + 1] = rng.normal(size=n)
    return Dataset(X, y)


def test_elimination_drops_noise_sensor():
    hits = 0
    for seed in range(100):
        res = recursive_backward_elimination(noisy_sensor_data(seed), linear_chain_builder,
                                             (2, 2), target_count=1)
        hits += res.order == (1,)
    assert hits >= 95


def test_elimination_edge_cases():
    data = noisy_sensor_data(0)
    res = recursive_backward_elimination(data, linear_chain_builder, (2, 2), target_count=2)
    assert res.order == () and res.retained == ((0, 1),)
    again = recursive_backward_elimination(data, linear_chain_builder, (2, 2), target_count=1)
    res = recursive_backward_elimination(data, linear_chain_builder, (2, 2), target_count=1)
    assert res.order == again.order and np.array_equal(res.scores[0], again.scores[0])
    with pytest.raises(ValueError):
        recursive_backward_elimination(data, linear_chain_builder, (2, 2), target_count=0)


# --- node constructors -------------------------------------------------------------

def test_node_constructors():
    st = standardization_node([1.0, 2.0], [2.0, 4.0])
    assert np.allclose(st([3.0, 6.0]), [1.0, 1.0])
    fir = temporal_fir_node([0.5, 0.5], n_time=3, n_sensors=2)
    x = np.arange(6.0)  # rows (t0: 0, 1), (t1: 2, 3), (t2: 4, 5)
    assert np.allclose(fir(x), [0.0, 0.5, 1.0, 2.0, 3.0, 4.0])
    dec = decimation_node(2, n_time=3, n_sensors=2)
    assert np.array_equal(dec(x), [0.0, 1.0, 4.0, 5.0]) and dec.out_shape == (2, 2)
    sf = spatial_filter_node([[1.0], [1.0]], n_time=3)
    assert np.array_equal(sf(x), [1.0, 5.0, 9.0]) and sf.out_shape == (3, 1)
    with pytest.raises(ValueError):
        standardization_node([0.0], [0.0])
    with pytest.raises(ValueError):
        decimation_node(0, 3, 2)
