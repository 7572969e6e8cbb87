"""Graph kernels, time kernels and their product.

A graph kernel is ``K_G = Phi diag(r(lambda)) Phi^T`` with ``r`` nonnegative
and non-increasing along the (ascending) graph frequencies.  Kernels built
from a polynomial in the GSO remember their degree, which is what makes
localized evaluation exact: ``K_G[u, v] == 0`` once ``u`` and ``v`` are
more than ``poly_degree`` hops apart.

Time kernels all evaluate elementwise with numpy broadcasting, ``k(s, t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg

from .errors import (
    DegenerateSpectrum,
    InvalidVertex,
    NegativeSpectrum,
    NonMonotoneSpectrum,
    NonOrthonormalBasis,
    OutOfDomain,
    UnsupportedKernel,
    ZeroSpectralWeight,
)
from .graph import Graph

_MONO_TOL = 1e-12


# ---------------------------------------------------------------------------
# graph kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GraphKernel:
    """Spectral graph kernel bound to a :class:`Graph`.

    ``sqrt_poly`` holds an explicit polynomial square root when the kernel
    was built as the square of a polynomial in the GSO; otherwise the
    square root is the spectral one and is computed on first use.
    """

    graph: Graph
    matrix: np.ndarray
    spectral_values: np.ndarray
    poly_degree: int | None = None
    sqrt_poly: np.ndarray | None = field(default=None, repr=False)
    sqrt_poly_degree: int | None = None
    spec: dict | None = None
    _sqrt: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def sqrt_columns(self) -> np.ndarray:
        if self._sqrt is None:
            object.__setattr__(self, "_sqrt", graph_kernel_sqrt(self))
        return self._sqrt


def _check_spectrum(r: np.ndarray) -> None:
    if np.any(r < 0):
        raise NegativeSpectrum(f"spectral weights must be >= 0, min is {r.min():g}")
    scale = max(1.0, float(np.abs(r).max()))
    if np.any(np.diff(r) > _MONO_TOL * scale):
        raise NonMonotoneSpectrum("spectral weights must be non-increasing in frequency")


def _freeze(*arrays):
    for a in arrays:
        if a is not None:
            a.setflags(write=False)


def build_graph_kernel_spectral(
    g: Graph, r: Sequence[float] | Callable[[np.ndarray], np.ndarray]
) -> GraphKernel:
    """``K_G = Phi diag(r) Phi^T`` from per-eigenvalue weights.

    ``r`` is either a length-N sequence aligned with the ascending
    eigenvalues or a callable applied to the eigenvalue array.
    """
    if callable(r):
        rv = np.asarray(r(np.asarray(g.eigenvalues)), dtype=float)
        spec = None
    else:
        rv = np.asarray(r, dtype=float)
        spec = {"type": "spectral", "r": rv.tolist()}
    if rv.shape != (g.N,):
        raise ValueError(f"need {g.N} spectral weights, got shape {rv.shape}")
    _check_spectrum(rv)
    phi = g.eigenvectors
    K = (phi * rv) @ phi.T
    K = 0.5 * (K + K.T)
    _freeze(K, rv)
    return GraphKernel(g, K, rv, spec=spec)


def _shifted_powers(g: Graph, degree: int) -> list[np.ndarray]:
    """``[(L - lam_N I)^j for j = 0..degree]`` by repeated multiplication."""
    A = g.laplacian - g.eigenvalues[-1] * np.eye(g.N)
    out = [np.eye(g.N)]
    for _ in range(degree):
        out.append(out[-1] @ A)
    return out


def _poly_values(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    return sum(c * x**j for j, c in enumerate(coeffs))


def _trim(coeffs) -> np.ndarray:
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    nz = np.flatnonzero(c)
    return c[: nz[-1] + 1] if nz.size else c[:1]


def build_graph_kernel_polynomial(g: Graph, coeffs: Sequence[float]) -> GraphKernel:
    """``K_G = sum_j coeffs[j] (L - lam_N I)^j``; records ``poly_degree``."""
    c = _trim(coeffs)
    deg = len(c) - 1
    powers = _shifted_powers(g, deg)
    K = sum(cj * P for cj, P in zip(c, powers))
    K = 0.5 * (K + K.T)
    r = _poly_values(c, g.eigenvalues - g.eigenvalues[-1])
    _check_spectrum(r)
    _freeze(K, r)
    return GraphKernel(g, K, r, poly_degree=deg,
                       spec={"type": "polynomial", "coeffs": c.tolist()})


def build_graph_kernel_squared_polynomial(g: Graph, coeffs: Sequence[float]) -> GraphKernel:
    """``K_G = p(L)^2`` with ``p(x) = sum_j coeffs[j] (x - lam_N)^j``.

    ``p`` must be nonnegative on the spectrum so that ``p(L)`` is the PSD
    square root; then the random-feature map inherits the locality of
    ``p`` (``sqrt_poly_degree = deg p``).
    """
    c = _trim(coeffs)
    deg = len(c) - 1
    powers = _shifted_powers(g, deg)
    P = sum(cj * Pj for cj, Pj in zip(c, powers))
    P = 0.5 * (P + P.T)
    pv = _poly_values(c, g.eigenvalues - g.eigenvalues[-1])
    if np.any(pv < -_MONO_TOL * max(1.0, np.abs(pv).max())):
        raise NegativeSpectrum("square-root polynomial must be nonnegative on the spectrum")
    K = P @ P
    K = 0.5 * (K + K.T)
    r = pv**2
    _check_spectrum(r)
    _freeze(K, r, P)
    return GraphKernel(g, K, r, poly_degree=2 * deg, sqrt_poly=P, sqrt_poly_degree=deg,
                       spec={"type": "squared_polynomial", "coeffs": c.tolist()})


def build_graph_kernel_quadratic(g: Graph, b: float) -> GraphKernel:
    """``K_G = a (L - lam_N I)^2 + b I`` with ``a = (1 - b) / (lam_1 - lam_N)^2``.

    Gives ``r(lam_1) = 1`` and ``r(lam_N) = b``.
    """
    b = float(b)
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"b must lie in [0, 1], got {b}")
    lam = g.eigenvalues
    spread = lam[0] - lam[-1]
    if g.N < 2 or abs(spread) <= 1e-12 * max(1.0, abs(lam[-1])):
        raise DegenerateSpectrum("quadratic kernel needs lambda_1 != lambda_N")
    a = (1.0 - b) / spread**2
    k = build_graph_kernel_polynomial(g, [b, 0.0, a])
    # b == 1 trims to degree 0; still report 2 so callers see one contract
    return GraphKernel(g, k.matrix, k.spectral_values, poly_degree=2,
                       spec={"type": "quadratic", "b": b})


def build_graph_kernel_squared_linear(g: Graph, end: float) -> GraphKernel:
    """``K_G = p(L)^2`` with ``p`` linear, ``p(lam_1) = 1`` and ``p(lam_N) = end``."""
    lam = g.eigenvalues
    spread = lam[0] - lam[-1]
    if g.N < 2 or abs(spread) <= 1e-12 * max(1.0, abs(lam[-1])):
        raise DegenerateSpectrum("needs lambda_1 != lambda_N")
    k = build_graph_kernel_squared_polynomial(g, [end, (1.0 - end) / spread])
    return GraphKernel(g, k.matrix, k.spectral_values, k.poly_degree, k.sqrt_poly,
                       k.sqrt_poly_degree, spec={"type": "squared_linear", "end": float(end)})


def identity_graph_kernel(g: Graph) -> GraphKernel:
    K = np.eye(g.N)
    r = np.ones(g.N)
    _freeze(K, r)
    return GraphKernel(g, K, r, poly_degree=0, sqrt_poly=K, sqrt_poly_degree=0,
                       spec={"type": "identity"})


def build_graph_kernel_sobolev(g: Graph, alpha: float, beta: float) -> GraphKernel:
    """``K_G = (L + alpha I)^(-beta)``, the prior implied by GTRSS."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lam = np.clip(g.eigenvalues, 0.0, None)
    k = build_graph_kernel_spectral(g, (lam + alpha) ** (-float(beta)))
    return GraphKernel(g, k.matrix, k.spectral_values,
                       spec={"type": "sobolev", "alpha": float(alpha), "beta": float(beta)})


def graph_kernel_sqrt(k: GraphKernel) -> np.ndarray:
    """Symmetric PSD square root; columns are the vectors ``p_v``."""
    if k.sqrt_poly is not None:
        return k.sqrt_poly
    phi = k.graph.eigenvectors
    S = (phi * np.sqrt(np.clip(k.spectral_values, 0.0, None))) @ phi.T
    S = 0.5 * (S + S.T)
    S.setflags(write=False)
    return S


# ---------------------------------------------------------------------------
# time kernels
# ---------------------------------------------------------------------------


class TimeKernel:
    """Base class; subclasses implement ``_eval(s, t)`` on validated arrays."""

    shift_invariant = False
    domain: tuple[float, float] = (0.0, 1.0)

    def check(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        lo, hi = self.domain
        bad = ~((t >= lo) & (t <= hi))
        if np.any(bad):
            raise OutOfDomain(f"time {t[bad].ravel()[0]!r} outside [{lo}, {hi}]")
        return t

    def __call__(self, s, t):
        return self._eval(self.check(s), self.check(t))

    def gram(self, s, t=None) -> np.ndarray:
        s = np.atleast_1d(self.check(s))
        t = s if t is None else np.atleast_1d(self.check(t))
        return self._eval(s[:, None], t[None, :])

    def diag(self, t) -> np.ndarray:
        t = np.atleast_1d(self.check(t))
        return self._eval(t, t)

    def to_spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianRbf(TimeKernel):
    """``exp(-(s - t)^2 / gamma)``."""

    gamma: float
    domain: tuple[float, float] = (0.0, 1.0)
    shift_invariant = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def _eval(self, s, t):
        d = np.subtract(s, t, dtype=float)
        if np.ndim(d) == 0:
            return np.exp(-d * d / self.gamma)
        d *= d
        d *= -1.0 / self.gamma
        return np.exp(d, out=d)

    def to_spec(self):
        return {"type": "gaussian", "gamma": self.gamma}


@dataclass(frozen=True)
class LaplacianRbf(TimeKernel):
    """``exp(-|s - t| / gamma)``."""

    gamma: float
    domain: tuple[float, float] = (0.0, 1.0)
    shift_invariant = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def _eval(self, s, t):
        return np.exp(-np.abs(s - t) / self.gamma)

    def to_spec(self):
        return {"type": "laplacian", "gamma": self.gamma}


def cosine_basis(B: int, domain: tuple[float, float]) -> Callable[[np.ndarray], np.ndarray]:
    """Orthonormal cosine functions on ``domain``; returns ``t -> (..., B)`` values."""
    lo, hi = domain
    length = hi - lo
    idx = np.arange(B)
    scale = np.where(idx == 0, np.sqrt(1.0 / length), np.sqrt(2.0 / length))

    def basis(t):
        t = np.asarray(t, dtype=float)
        return scale * np.cos(np.pi * idx * (t[..., None] - lo) / length)

    return basis


@dataclass(frozen=True, eq=False)
class Bandlimited(TimeKernel):
    """``sum_i gammas[i] xi_i(s) xi_i(t)`` for a finite orthonormal family.

    ``basis`` maps an array of times to an array with a trailing axis of
    length ``B``.  Without one, the cosine basis on ``domain`` is used.
    """

    gammas: tuple[float, ...]
    domain: tuple[float, float] = (0.0, 1.0)
    basis: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        g = tuple(float(x) for x in self.gammas)
        if not g or any(x <= 0 for x in g):
            raise ValueError("bandlimited eigenvalues must be positive")
        object.__setattr__(self, "gammas", g)
        if self.basis is None:
            object.__setattr__(self, "basis", cosine_basis(len(g), self.domain))
            object.__setattr__(self, "_default_basis", True)
        else:
            object.__setattr__(self, "_default_basis", False)

    @property
    def B(self) -> int:
        return len(self.gammas)

    def _eval(self, s, t):
        s, t = np.broadcast_arrays(s, t)
        xs = self.basis(s)
        xt = self.basis(t)
        return np.einsum("...i,i,...i->...", xs, np.asarray(self.gammas), xt)

    def to_spec(self):
        if not self._default_basis:
            raise UnsupportedKernel("a custom bandlimited basis cannot be serialized")
        return {"type": "bandlimited", "gamma": list(self.gammas), "B": self.B}


def difference_operator(T: int) -> np.ndarray:
    """First-order difference matrix ``D_h`` of shape ``(T, T-1)``."""
    D = np.zeros((T, T - 1))
    j = np.arange(T - 1)
    D[j, j] = -1.0
    D[j + 1, j] = 1.0
    return D


@dataclass(frozen=True, eq=False)
class GtrssDifference(TimeKernel):
    """Discrete-time kernel ``(D_h D_h^T + delta0 I)^{-1}`` on indices ``1..T``."""

    T: int
    delta0: float

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 2:
            raise ValueError("T must be an integer >= 2")
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        D = difference_operator(self.T)
        A = D @ D.T + self.delta0 * np.eye(self.T)
        M = linalg.cho_solve(linalg.cho_factor(A), np.eye(self.T))
        M = 0.5 * (M + M.T)
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)
        object.__setattr__(self, "domain", (1.0, float(self.T)))

    def check(self, t):
        t = super().check(t)
        if np.any(t != np.round(t)):
            raise OutOfDomain("GTRSS kernel takes integer time indices 1..T")
        return t

    def _eval(self, s, t):
        return self.matrix[s.astype(int) - 1, t.astype(int) - 1]

    def to_spec(self):
        return {"type": "gtrss", "T": int(self.T), "delta0": self.delta0}


def gtrss_prior_correlation(T: int, delta0: float) -> float:
    """Prior correlation between the first and last step under the GTRSS kernel.

    Solves the two needed columns of the tridiagonal system directly, so
    long horizons stay cheap.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    # banded storage of D D^T + delta0 I (upper form): path Laplacian
    diag = np.full(T, 2.0 + delta0)
    diag[0] = diag[-1] = 1.0 + delta0
    ab = np.zeros((2, T))
    ab[0, 1:] = -1.0
    ab[1] = diag
    rhs = np.zeros((T, 2))
    rhs[0, 0] = 1.0
    rhs[-1, 1] = 1.0
    cols = linalg.solveh_banded(ab, rhs)
    k11, k1T, kTT = cols[0, 0], cols[0, 1], cols[-1, 1]
    return float(k1T / np.sqrt(k11 * kTT))


# ---------------------------------------------------------------------------
# product kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProductKernel:
    """``k((u, s), (v, t)) = K_G[u, v] * k_T(s, t)``."""

    graph: GraphKernel
    time: TimeKernel

    @property
    def N(self) -> int:
        return self.graph.N

    @property
    def domain(self) -> tuple[float, float]:
        return self.time.domain

    def check_vertices(self, v) -> np.ndarray:
        v = np.asarray(v)
        if v.size and (not np.all(v == np.round(v)) or v.min() < 0 or v.max() >= self.N):
            raise InvalidVertex(f"vertices must lie in 0..{self.N - 1}")
        return v.astype(int)

    def __call__(self, u, s, v, t):
        u, v = self.check_vertices(u), self.check_vertices(v)
        return self.graph.matrix[u, v] * self.time(s, t)

    def gram(self, us, ss, vs=None, ts=None) -> np.ndarray:
        us = np.atleast_1d(self.check_vertices(us))
        if vs is None:
            vs, ts = us, ss
        vs = np.atleast_1d(self.check_vertices(vs))
        out = self.time.gram(ss, ts)
        out *= self.graph.matrix[np.ix_(us, vs)]
        return out

    def diag(self, us, ss) -> np.ndarray:
        us = np.atleast_1d(self.check_vertices(us))
        return self.graph.matrix[us, us] * self.time.diag(ss)

    def to_spec(self) -> dict:
        if self.graph.spec is None:
            raise UnsupportedKernel("graph kernel built from a callable cannot be serialized")
        spec = {"graph": dict(self.graph.spec), "time": self.time.to_spec()}
        if not isinstance(self.time, GtrssDifference):
            spec["domain"] = list(self.time.domain)
        return spec


def graph_kernel_from_spec(spec: Mapping, g: Graph) -> GraphKernel:
    kind = spec.get("type", "quadratic")
    if kind == "quadratic":
        return build_graph_kernel_quadratic(g, spec["b"])
    if kind == "spectral":
        return build_graph_kernel_spectral(g, spec["r"])
    if kind == "polynomial":
        return build_graph_kernel_polynomial(g, spec["coeffs"])
    if kind == "squared_polynomial":
        return build_graph_kernel_squared_polynomial(g, spec["coeffs"])
    if kind == "squared_linear":
        return build_graph_kernel_squared_linear(g, spec["end"])
    if kind == "identity":
        return identity_graph_kernel(g)
    if kind == "sobolev":
        return build_graph_kernel_sobolev(g, spec["alpha"], spec["beta"])
    raise UnsupportedKernel(f"unknown graph kernel type {kind!r}")


def time_kernel_from_spec(spec: Mapping, domain=(0.0, 1.0)) -> TimeKernel:
    kind = spec.get("type", "gaussian")
    domain = tuple(float(x) for x in domain)
    if kind == "gaussian":
        return GaussianRbf(float(spec["gamma"]), domain)
    if kind == "laplacian":
        return LaplacianRbf(float(spec["gamma"]), domain)
    if kind == "bandlimited":
        gam = spec["gamma"]
        if np.isscalar(gam):
            gam = [gam] * int(spec["B"])
        if "B" in spec and len(gam) != int(spec["B"]):
            raise ValueError("bandlimited 'gamma' length disagrees with 'B'")
        return Bandlimited(tuple(gam), domain)
    if kind == "gtrss":
        return GtrssDifference(int(spec["T"]), float(spec["delta0"]))
    raise UnsupportedKernel(f"unknown time kernel type {kind!r}")


def kernel_from_spec(spec: Mapping, g: Graph) -> ProductKernel:
    """Materialize the JSON kernel document against a graph."""
    domain = spec.get("domain", (0.0, 1.0))
    return ProductKernel(graph_kernel_from_spec(spec["graph"], g),
                         time_kernel_from_spec(spec["time"], domain))


# ---------------------------------------------------------------------------
# RKHS norm and joint Fourier transform
# ---------------------------------------------------------------------------


def rkhs_norm_sq(coeffs, graph: GraphKernel, time: Bandlimited) -> float:
    """``sum c[n, i]^2 / (r(lambda_n) gamma_i)`` over the joint spectrum.

    ``coeffs`` is an ``(N, B)`` array (zero-based graph mode, time mode) or
    a mapping ``{(n, i): c}``.  A nonzero coefficient on a zero weight has
    infinite norm and raises :class:`ZeroSpectralWeight`.
    """
    if not isinstance(time, Bandlimited):
        raise UnsupportedKernel("RKHS norm in coefficient form needs a bandlimited time kernel")
    r = np.asarray(graph.spectral_values)
    gam = np.asarray(time.gammas)
    if isinstance(coeffs, Mapping):
        total = 0.0
        for (n, i), c in coeffs.items():
            w = r[n] * gam[i]
            if w <= 0:
                raise ZeroSpectralWeight(f"zero spectral weight at ({n}, {i})")
            total += c * c / w
        return float(total)
    C = np.asarray(coeffs, dtype=float)
    if C.shape != (len(r), len(gam)):
        raise ValueError(f"coefficient array must have shape {(len(r), len(gam))}")
    W = np.outer(r, gam)
    live = C != 0
    if np.any(W[live] <= 0):
        raise ZeroSpectralWeight("nonzero coefficient on a zero spectral weight")
    return float(np.sum(C[live] ** 2 / W[live]))


def bandlimited_expansion(kernel: ProductKernel, vertices, times, a) -> np.ndarray:
    """Joint-spectrum coefficients of ``f = sum_m a_m k(., (v_m, t_m))``.

    Closed form for a bandlimited time kernel:
    ``c[n, i] = r_n gamma_i sum_m a_m phi_n(v_m) xi_i(t_m)``.
    """
    time = kernel.time
    if not isinstance(time, Bandlimited):
        raise UnsupportedKernel("needs a bandlimited time kernel")
    phi = kernel.graph.graph.eigenvectors
    v = kernel.check_vertices(vertices)
    xi = time.basis(time.check(times))  # (M, B)
    a = np.asarray(a, dtype=float)
    C = phi[v].T @ (a[:, None] * xi)  # (N, B)
    return C * np.outer(kernel.graph.spectral_values, time.gammas)


def trapezoid_weights(grid) -> np.ndarray:
    x = np.asarray(grid, dtype=float)
    w = np.zeros_like(x)
    if x.size < 2:
        return w
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def jft_coefficients(f, graph: Graph, basis, weights, tol: float = 1e-6) -> np.ndarray:
    """Joint Fourier coefficients of grid samples ``f`` (shape ``(N, G)``).

    ``basis`` holds the time functions sampled on the grid, shape
    ``(B, G)``; ``weights`` are quadrature weights.  Returns ``(N, B)``
    with ``out[n, i] = sum_v int f(v, t) phi_n(v) psi_i(t) dt``.
    """
    f = np.asarray(f, dtype=float)
    psi = np.atleast_2d(np.asarray(basis, dtype=float))
    w = np.asarray(weights, dtype=float)
    if f.shape != (graph.N, w.size) or psi.shape[1] != w.size:
        raise ValueError("shape mismatch between signal, basis and weights")
    gram = (psi * w) @ psi.T
    err = np.abs(gram - np.eye(psi.shape[0])).max() if psi.size else 0.0
    if err > tol:
        raise NonOrthonormalBasis(f"basis Gram deviates from identity by {err:.3g}")
    return graph.eigenvectors.T @ f @ (psi * w).T


def inverse_jft(coeffs, graph: Graph, basis) -> np.ndarray:
    """Grid values ``sum c[n, i] phi_n(v) psi_i(t)``."""
    return graph.eigenvectors @ np.asarray(coeffs) @ np.atleast_2d(basis)
