import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_connected_edges
from ggsp_krr.errors import (
    DegenerateSpectrum,
    NegativeSpectrum,
    NonMonotoneSpectrum,
    NonOrthonormalBasis,
    OutOfDomain,
    UnsupportedKernel,
    ZeroSpectralWeight,
)
from ggsp_krr.graph import load_graph, path_graph, ring_graph
from ggsp_krr.kernels import (
    Bandlimited,
    GaussianRbf,
    GtrssDifference,
    LaplacianRbf,
    ProductKernel,
    bandlimited_expansion,
    build_graph_kernel_polynomial,
    build_graph_kernel_quadratic,
    build_graph_kernel_sobolev,
    build_graph_kernel_spectral,
    build_graph_kernel_squared_linear,
    cosine_basis,
    difference_operator,
    graph_kernel_sqrt,
    gtrss_prior_correlation,
    identity_graph_kernel,
    inverse_jft,
    jft_coefficients,
    kernel_from_spec,
    rkhs_norm_sq,
    trapezoid_weights,
)

HALF = np.full((2, 2), 0.5)


def test_spectral_p2_projector():
    k = build_graph_kernel_spectral(path_graph(2), [1.0, 0.0])
    np.testing.assert_allclose(k.matrix, HALF, atol=1e-15)
    assert k.poly_degree is None


def test_spectral_all_ones_is_identity():
    g = ring_graph(5)
    np.testing.assert_allclose(build_graph_kernel_spectral(g, np.ones(5)).matrix, np.eye(5),
                               atol=1e-14)


def test_spectral_ordering_and_sign():
    with pytest.raises(NonMonotoneSpectrum):
        build_graph_kernel_spectral(path_graph(2), [0.0, 1.0])
    with pytest.raises(NegativeSpectrum):
        build_graph_kernel_spectral(path_graph(2), [1.0, -0.1])


def test_spectral_callable():
    g = path_graph(3)
    k = build_graph_kernel_spectral(g, lambda lam: np.exp(-lam))
    phi = g.eigenvectors
    np.testing.assert_allclose(k.matrix, phi @ np.diag(np.exp(-g.eigenvalues)) @ phi.T,
                               atol=1e-14)


def test_quadratic_p2_b0():
    k = build_graph_kernel_quadratic(path_graph(2), 0.0)
    np.testing.assert_allclose(k.matrix, HALF, atol=1e-15)
    assert k.poly_degree == 2


def test_quadratic_b1_identity():
    k = build_graph_kernel_quadratic(ring_graph(6), 1.0)
    np.testing.assert_allclose(k.matrix, np.eye(6), atol=1e-15)
    assert k.poly_degree == 2


def test_quadratic_single_vertex():
    with pytest.raises(DegenerateSpectrum):
        build_graph_kernel_quadratic(load_graph([], n_vertices=1), 0.5)


def test_quadratic_p2_general_b():
    # hand algebra: K = [[(1+b)/2, (1-b)/2], [(1-b)/2, (1+b)/2]]
    b = 0.3
    k = build_graph_kernel_quadratic(path_graph(2), b)
    np.testing.assert_allclose(k.matrix, [[0.65, 0.35], [0.35, 0.65]], atol=1e-15)


@given(st.integers(2, 8), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_quadratic_invariants(n, b, seed):
    rng = np.random.default_rng(seed)
    g = load_graph(random_connected_edges(rng, n), n_vertices=n)
    k = build_graph_kernel_quadratic(g, b)
    r = k.spectral_values
    assert r[0] == pytest.approx(1.0, abs=1e-10)
    assert r[-1] == pytest.approx(b, abs=1e-10)
    phi = g.eigenvectors
    np.testing.assert_allclose(k.matrix, (phi * r) @ phi.T, atol=1e-10)
    far = g.hops > 2
    assert np.all(np.abs(k.matrix[far]) <= 1e-10)
    S = k.sqrt_columns
    np.testing.assert_allclose(S @ S, k.matrix, atol=1e-8)


def test_polynomial_locality_exact_zeros():
    g = path_graph(6)
    k = build_graph_kernel_polynomial(g, [2.0, -0.5, 0.05])
    assert k.poly_degree == 2
    assert np.all(k.matrix[g.hops > 2] == 0.0)


def test_sqrt_examples():
    g = path_graph(2)
    np.testing.assert_allclose(graph_kernel_sqrt(identity_graph_kernel(g)), np.eye(2))
    np.testing.assert_allclose(graph_kernel_sqrt(build_graph_kernel_spectral(g, [1, 0])),
                               HALF, atol=1e-15)


def test_sqrt_random_psd(rng):
    g = load_graph(random_connected_edges(rng, 4), n_vertices=4)
    r = np.sort(rng.uniform(0, 3, 4))[::-1]
    k = build_graph_kernel_spectral(g, r)
    S = graph_kernel_sqrt(k)
    np.testing.assert_allclose(S @ S, k.matrix, atol=1e-8)
    np.testing.assert_allclose(S, S.T)


def test_squared_linear_sqrt_is_local():
    g = path_graph(5)
    k = build_graph_kernel_squared_linear(g, 0.2)
    assert k.sqrt_poly_degree == 1
    P = k.sqrt_columns
    assert np.all(P[g.hops > 1] == 0.0)
    np.testing.assert_allclose(P @ P, k.matrix, atol=1e-12)
    assert k.spectral_values[-1] == pytest.approx(0.04)


def test_sobolev_kernel():
    g = path_graph(4)
    k = build_graph_kernel_sobolev(g, 1.0, 2.0)
    A = g.laplacian + np.eye(4)
    np.testing.assert_allclose(k.matrix, np.linalg.inv(A @ A), atol=1e-12)


# time kernels ----------------------------------------------------------------


def test_gaussian_and_laplacian_values():
    assert GaussianRbf(1.0)(0.3, 0.3) == 1.0
    assert GaussianRbf(0.5)(0.1, 0.6) == pytest.approx(math.exp(-0.25 / 0.5))
    assert LaplacianRbf(0.5)(0.1, 0.6) == pytest.approx(math.exp(-0.5 / 0.5))


def test_time_kernel_domain():
    with pytest.raises(OutOfDomain):
        GaussianRbf(1.0)(1.5, 0.0)
    with pytest.raises(OutOfDomain):
        GtrssDifference(4, 1e-3)(2.5, 1)
    with pytest.raises(OutOfDomain):
        GtrssDifference(4, 1e-3)(5, 1)


def test_bandlimited_constant_mode():
    k = Bandlimited((2.0,))
    np.testing.assert_allclose(k.gram(np.linspace(0, 1, 7)), 2.0)


def test_cosine_basis_orthonormal():
    # Gauss-Legendre quadrature is exact for these low-degree trig products
    x, w = np.polynomial.legendre.leggauss(80)
    t = 0.5 * (x + 1.0)
    vals = cosine_basis(6, (0.0, 1.0))(t)
    np.testing.assert_allclose((vals * (0.5 * w)[:, None]).T @ vals, np.eye(6), atol=1e-12)


def test_gtrss_matrix_matches_dense_inverse():
    T, d0 = 6, 1e-3
    D = np.zeros((T, T - 1))
    for j in range(T - 1):
        D[j, j], D[j + 1, j] = -1.0, 1.0
    np.testing.assert_array_equal(difference_operator(T), D)
    np.testing.assert_allclose(GtrssDifference(T, d0).matrix,
                               np.linalg.inv(D @ D.T + d0 * np.eye(T)), rtol=1e-10)


def test_gtrss_two_step_correlation():
    d0 = 1e-5
    k = GtrssDifference(2, d0)
    corr = k(1, 2) / math.sqrt(k(1, 1) * k(2, 2))
    assert corr == pytest.approx(1.0 / (1.0 + d0), rel=1e-12)
    assert gtrss_prior_correlation(2, d0) == pytest.approx(1.0 / (1.0 + d0), rel=1e-12)


@pytest.mark.parametrize("T", [2, 3, 8, 17, 64, 256])
def test_gtrss_correlation_dense_oracle(T):
    d0 = 1e-5
    D = np.diff(np.eye(T), axis=0).T
    C = np.linalg.inv(D @ D.T + d0 * np.eye(T))
    expected = C[0, -1] / math.sqrt(C[0, 0] * C[-1, -1])
    assert abs(gtrss_prior_correlation(T, d0) - expected) <= 1e-10


def test_gtrss_correlation_large_delta():
    assert gtrss_prior_correlation(8, 1e8) < 1e-12


def _time_kernels():
    return [GaussianRbf(0.2), LaplacianRbf(0.3), Bandlimited((1.0, 0.5, 0.25))]


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.integers(0, 2))
def test_time_kernel_symmetric_psd(ts, which):
    k = _time_kernels()[which]
    K = k.gram(np.array(ts))
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    w = np.linalg.eigvalsh(K)
    assert w.min() >= -1e-8 * max(w.max(), 1e-300)


# product kernel --------------------------------------------------------------


def test_product_kernel_is_product():
    g = path_graph(3)
    k = ProductKernel(build_graph_kernel_quadratic(g, 0.4), GaussianRbf(0.3))
    for u, s, v, t in [(0, 0.1, 2, 0.9), (1, 0.5, 1, 0.5), (2, 0.0, 0, 1.0)]:
        assert k(u, s, v, t) == k.graph.matrix[u, v] * k.time(s, t)


def test_product_gram_kronecker(rng):
    g = ring_graph(4)
    k = ProductKernel(build_graph_kernel_quadratic(g, 0.2), LaplacianRbf(0.5))
    U = [0, 2, 3]
    T0 = rng.uniform(0, 1, 5)
    us = np.repeat(U, T0.size)
    ts = np.tile(T0, len(U))
    expected = np.kron(k.graph.matrix[np.ix_(U, U)], k.time.gram(T0))
    np.testing.assert_allclose(k.gram(us, ts), expected, atol=1e-15)


@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
def test_product_gram_psd(seed, M):
    rng = np.random.default_rng(seed)
    g = load_graph(random_connected_edges(rng, 5), n_vertices=5)
    k = ProductKernel(build_graph_kernel_quadratic(g, rng.uniform()), GaussianRbf(0.1))
    K = k.gram(rng.integers(0, 5, M), rng.uniform(0, 1, M))
    w = np.linalg.eigvalsh(K)
    assert w.min() >= -1e-8 * max(w.max(), 1e-300)


def test_kernel_spec_round_trip():
    g = path_graph(4)
    specs = [
        {"graph": {"type": "quadratic", "b": 0.3}, "time": {"type": "gaussian", "gamma": 0.2},
         "domain": [0.0, 2.0]},
        {"graph": {"type": "spectral", "r": [1.0, 0.5, 0.2, 0.1]},
         "time": {"type": "laplacian", "gamma": 0.5}, "domain": [0.0, 1.0]},
        {"graph": {"type": "identity"}, "time": {"type": "bandlimited", "gamma": [1.0, 0.5],
                                                 "B": 2}, "domain": [0.0, 1.0]},
        {"graph": {"type": "sobolev", "alpha": 1.0, "beta": 1.5},
         "time": {"type": "gtrss", "T": 5, "delta0": 1e-5}},
    ]
    for spec in specs:
        k = kernel_from_spec(spec, g)
        k2 = kernel_from_spec(k.to_spec(), g)
        np.testing.assert_array_equal(k.graph.matrix, k2.graph.matrix)
        assert k.to_spec() == k2.to_spec()
    with pytest.raises(UnsupportedKernel):
        kernel_from_spec({"graph": {"type": "nope"}, "time": {"type": "gaussian", "gamma": 1}}, g)


# RKHS norm and JFT -----------------------------------------------------------


def test_rkhs_norm_trivial_cases():
    g = path_graph(2)
    gk = build_graph_kernel_spectral(g, [1.0, 0.5])
    tk = Bandlimited((2.0, 1.0))
    assert rkhs_norm_sq(np.zeros((2, 2)), gk, tk) == 0.0
    assert rkhs_norm_sq({(0, 0): 1.0}, gk, tk) == pytest.approx(0.5)
    gz = build_graph_kernel_spectral(g, [1.0, 0.0])
    with pytest.raises(ZeroSpectralWeight):
        rkhs_norm_sq({(1, 0): 1.0}, gz, tk)
    assert rkhs_norm_sq({(0, 1): 0.0}, gz, tk) == 0.0


@given(st.integers(0, 2**32 - 1))
def test_rkhs_norm_matches_gram_form(seed):
    rng = np.random.default_rng(seed)
    N, B, M = int(rng.integers(2, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 10))
    g = load_graph(random_connected_edges(rng, N), n_vertices=N)
    k = ProductKernel(build_graph_kernel_quadratic(g, rng.uniform(0.05, 1.0)),
                      Bandlimited(tuple(rng.uniform(0.1, 2.0, B))))
    v, t, a = rng.integers(0, N, M), rng.uniform(0, 1, M), rng.normal(size=M)
    C = bandlimited_expansion(k, v, t, a)
    quad = a @ k.gram(v, t) @ a
    assert abs(rkhs_norm_sq(C, k.graph, k.time) - quad) <= 1e-8 * max(1.0, abs(quad))


def _complete_trapezoid_basis(G):
    """Cosine modes 0..G-1 sampled on a uniform grid; orthonormal under trapezoid weights
    once the top mode is rescaled."""
    grid = np.linspace(0, 1, G)
    w = trapezoid_weights(grid)
    psi = cosine_basis(G, (0.0, 1.0))(grid).T
    psi[-1] /= math.sqrt(w @ psi[-1] ** 2)
    return grid, w, psi


def test_jft_basis_function_picks_one_coefficient():
    g = ring_graph(4)
    grid, w, psi = _complete_trapezoid_basis(64)
    f = np.outer(g.eigenvectors[:, 2], psi[5])
    C = jft_coefficients(f, g, psi[:10], w)
    expected = np.zeros((4, 10))
    expected[2, 5] = 1.0
    np.testing.assert_allclose(C, expected, atol=1e-10)
    np.testing.assert_array_equal(jft_coefficients(np.zeros((4, 64)), g, psi[:10], w), 0.0)


def test_jft_round_trip(rng):
    g = load_graph(random_connected_edges(rng, 4), n_vertices=4)
    grid, w, psi = _complete_trapezoid_basis(64)
    f = rng.normal(size=(4, 64))
    C = jft_coefficients(f, g, psi, w)
    assert np.abs(inverse_jft(C, g, psi) - f).max() <= 1e-4


def test_jft_rejects_non_orthonormal_basis():
    g = path_graph(2)
    grid = np.linspace(0, 1, 16)
    with pytest.raises(NonOrthonormalBasis):
        jft_coefficients(np.zeros((2, 16)), g, np.ones((2, 16)), trapezoid_weights(grid))
