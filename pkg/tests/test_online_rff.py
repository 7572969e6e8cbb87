import math
import threading

import numpy as np
import pytest

from ggsp_krr.errors import NoPolyDegree, StepTooLarge, UnsupportedKernel
from ggsp_krr.graph import path_graph
from ggsp_krr.kernels import (
    Bandlimited,
    GaussianRbf,
    LaplacianRbf,
    ProductKernel,
    build_graph_kernel_quadratic,
    build_graph_kernel_spectral,
    build_graph_kernel_squared_linear,
    identity_graph_kernel,
)
from ggsp_krr.online_rff import (
    RffPredictor,
    build_feature_map,
    checkpoint_from_json,
    checkpoint_to_json,
    default_step,
    feature_matrix,
    objective,
    per_sample_objectives,
    predict_rff_localized,
    ridge_optimum,
    sgd_step,
)
from ggsp_krr.reconstruct import SampleSet


def _kernel(gk=None, time=None, n=4):
    g = path_graph(n)
    return ProductKernel(gk(g) if gk else build_graph_kernel_quadratic(g, 0.5),
                         time or GaussianRbf(0.2))


def _samples(rng, M=30, N=4):
    return SampleSet(rng.integers(0, N, M), rng.uniform(0, 1, M), rng.normal(size=M))


def test_same_seed_same_features():
    k = _kernel()
    a, b = build_feature_map(k, 32, 7), build_feature_map(k, 32, 7)
    np.testing.assert_array_equal(a.frequencies, b.frequencies)
    np.testing.assert_array_equal(a.phases, b.phases)
    assert not np.array_equal(a.frequencies, build_feature_map(k, 32, 8).frequencies)


def test_unsupported_time_kernel():
    with pytest.raises(UnsupportedKernel):
        build_feature_map(_kernel(time=Bandlimited((1.0,))), 8, 0)


def test_self_inner_product_unbiased():
    k = _kernel()
    vals = np.array([np.sum(build_feature_map(k, 1, s).z(0.37) ** 2) for s in range(100_000)])
    assert abs(vals.mean() - 1.0) <= 0.01


@pytest.mark.parametrize("time, d", [(GaussianRbf(0.3), 0.4), (LaplacianRbf(0.3), 0.4)])
def test_time_feature_expectation(time, d):
    k = _kernel(time=time)
    vals = []
    for s in range(10_000):
        fm = build_feature_map(k, 4, s)
        vals.append(fm.z(0.1) @ fm.z(0.1 + d))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - time(0.1, 0.1 + d)) <= 3 * se


def test_identity_kernel_single_block():
    fm = build_feature_map(_kernel(gk=identity_graph_kernel), 16, 0)
    eta = fm.features(2, 0.4).reshape(4, 16)
    np.testing.assert_array_equal(eta[2], fm.z(0.4))
    assert np.all(eta[[0, 1, 3]] == 0.0)


def test_local_square_root_zero_blocks():
    fm = build_feature_map(_kernel(gk=lambda g: build_graph_kernel_squared_linear(g, 0.2)), 8, 0)
    assert fm.poly_degree_sqrt == 1
    eta = fm.features(0, 0.5).reshape(4, 8)
    assert np.all(eta[3] == 0.0) and np.all(eta[2] == 0.0)
    # dense oracle for the nonzero blocks
    P = fm.kernel.graph.sqrt_poly
    np.testing.assert_allclose(eta[1], P[1, 0] * fm.z(0.5))


def test_first_step_and_fixed_point():
    fm = build_feature_map(_kernel(), 16, 3)
    p = RffPredictor(fm, mu=0.5, horizon=10, theta=0.01)
    pred, err = sgd_step(p, 1, 0.3, 2.0)
    assert pred == 0.0 and err == 2.0
    np.testing.assert_allclose(p.weights, 2 * 0.01 * 2.0 * fm.features(1, 0.3), rtol=1e-15)
    q = RffPredictor(fm, mu=0.0, horizon=10, theta=0.01, weights=p.weights)
    before = q.weights.copy()
    y = q.predict(2, 0.8)
    _, e = q.sgd_step(2, 0.8, y)
    assert e == 0.0
    np.testing.assert_array_equal(q.weights, before)
    assert q.update_count == 1


def test_step_too_large():
    fm = build_feature_map(_kernel(), 4, 0)
    with pytest.raises(StepTooLarge):
        RffPredictor(fm, mu=1.0, horizon=2, theta=1.0)


def test_penalty_contraction():
    fm = build_feature_map(_kernel(), 8, 0)
    rng = np.random.default_rng(0)
    p = RffPredictor(fm, mu=2.0, horizon=5, theta=0.1, weights=rng.normal(size=fm.dim))
    n0 = np.linalg.norm(p.weights)
    for k in range(1, 6):
        p.sgd_step(0, 0.5, p.predict(0, 0.5))
        assert np.linalg.norm(p.weights) == pytest.approx(n0 * p.theta1**k, rel=1e-12)


def test_objective_identities(rng):
    fm = build_feature_map(_kernel(), 8, 1)
    S = _samples(rng)
    p = RffPredictor(fm, mu=0.3, horizon=len(S), theta=0.01)
    assert objective(p, S) == pytest.approx(np.sum(S.values**2))
    p = RffPredictor(fm, mu=0.3, horizon=len(S), theta=0.01, weights=rng.normal(size=fm.dim))
    assert objective(p, SampleSet.empty()) == pytest.approx(0.3 * p.weights @ p.weights)
    assert per_sample_objectives(p, S).sum() == pytest.approx(objective(p, S), rel=1e-12)


def test_full_batch_gradient_descent_reaches_ridge_optimum(rng):
    fm = build_feature_map(_kernel(), 16, 2)  # N*F = 64
    S = _samples(rng, M=40)
    mu = 0.5
    H = feature_matrix(fm, S)
    c_star = ridge_optimum(fm, S, mu)
    A = H.T @ H + mu * np.eye(fm.dim)
    step = 1.0 / np.linalg.eigvalsh(A).max()
    c = np.zeros(fm.dim)
    for _ in range(20_000):
        c -= step * (A @ c - H.T @ S.values)
    assert np.abs(c - c_star).max() <= 1e-6


def test_sgd_trajectory_deterministic(rng):
    S = _samples(rng)
    runs = []
    for _ in range(2):
        fm = build_feature_map(_kernel(), 16, 11)
        p = RffPredictor(fm, 0.1, len(S), default_step(fm, S))
        for v, t, y in S:
            p.sgd_step(v, t, y)
        runs.append(p.weights.copy())
    np.testing.assert_array_equal(*runs)


def test_localized_rff_prediction(rng):
    fm = build_feature_map(_kernel(gk=lambda g: build_graph_kernel_squared_linear(g, 0.3)), 16, 5)
    p = RffPredictor(fm, 0.1, 10, 0.01, weights=rng.normal(size=fm.dim))
    for v in range(4):
        for t in (0.0, 0.45, 1.0):
            assert abs(predict_rff_localized(p, v, t) - p.predict(v, t)) <= 1e-12
    fi = build_feature_map(_kernel(gk=identity_graph_kernel), 8, 0)
    pi = RffPredictor(fi, 0.1, 10, 0.01, weights=rng.normal(size=fi.dim))
    assert predict_rff_localized(pi, 1, 0.2) == pytest.approx(pi.predict(1, 0.2), abs=1e-12)
    fs = build_feature_map(_kernel(gk=lambda g: build_graph_kernel_spectral(
        g, [1.0, 0.5, 0.3, 0.1])), 8, 0)
    with pytest.raises(NoPolyDegree):
        predict_rff_localized(RffPredictor(fs, 0.1, 10, 0.01), 0, 0.5)


def test_checkpoint_resume_is_bit_exact(rng):
    S = _samples(rng, M=20)
    fm = build_feature_map(_kernel(), 16, 4)
    a = RffPredictor(fm, 0.1, 40, 0.01)
    for v, t, y in S:
        a.sgd_step(v, t, y)
    b = checkpoint_from_json(checkpoint_to_json(a))
    np.testing.assert_array_equal(a.weights, b.weights)
    assert b.update_count == a.update_count
    for v, t, y in S:
        a.sgd_step(v, t, y)
        b.sgd_step(v, t, y)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_concurrent_updates_are_serialized(rng):
    fm = build_feature_map(_kernel(), 8, 0)
    p = RffPredictor(fm, 0.1, 1000, 0.001)
    S = _samples(rng, M=50)
    seen = []

    def writer():
        for v, t, y in S:
            p.sgd_step(v, t, y)

    def reader():
        for _ in range(200):
            c = p.weights
            assert c.shape == (fm.dim,) and not c.flags.writeable
            seen.append(float(c @ fm.features(0, 0.5)))

    threads = [threading.Thread(target=writer) for _ in range(3)] + [threading.Thread(target=reader)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert p.update_count == 150
    assert all(np.isfinite(seen))
