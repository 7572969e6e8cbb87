"""Posterior-variance behaviour under uniform exclusive sampling.

Everything here lives on a finite time grid: the GP prior restricted to
``V x grid`` is a Gaussian vector with covariance ``K_G (x) K_T(grid)``
in vertex-major order (flat index ``v * G + g``).  Conditioning on every
grid value away from ``v0`` is the discrete stand-in for conditioning on
the whole signal off ``v0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import (
    EigensolveFailure,
    EmptyNeighborhood,
    FactorizationFailure,
    InvalidParameter,
    SingularSubmatrix,
)
from .graph import Graph, hop_neighborhood
from .kernels import GraphKernel, ProductKernel, trapezoid_weights
from .reconstruct import GaussianPosterior, PosteriorQuery, SampleSet

PINV_RTOL = 1e-10
_CHOL_JITTER = 1e-10
_CHOL_RETRIES = 3


@dataclass(frozen=True, eq=False)
class GpGrid:
    kernel: ProductKernel
    time_grid: np.ndarray
    weights: np.ndarray
    joint_cov: np.ndarray
    _factor: np.ndarray | None = field(default=None, repr=False)

    @property
    def graph(self) -> Graph:
        return self.kernel.graph.graph

    @property
    def G(self) -> int:
        return self.time_grid.size

    def index(self, v: int, g: int) -> int:
        return v * self.G + g

    @property
    def factor(self) -> np.ndarray:
        """Lower Cholesky factor of ``joint_cov`` (+ escalating jitter)."""
        if self._factor is None:
            object.__setattr__(self, "_factor", _jittered_cholesky(self.joint_cov))
        return self._factor

    def grid_index(self, t0: float) -> int:
        hit = np.flatnonzero(np.isclose(self.time_grid, t0, rtol=0, atol=1e-12))
        if not hit.size:
            raise InvalidParameter(f"t0={t0} is not a grid point")
        return int(hit[0])


def make_grid(kernel: ProductKernel, G: int = 64, domain=None) -> GpGrid:
    """Uniform grid of ``G`` points over the kernel's time domain."""
    lo, hi = kernel.time.domain if domain is None else domain
    grid = np.linspace(lo, hi, G)
    KT = kernel.time.gram(grid)
    C = np.kron(kernel.graph.matrix, KT)
    C = 0.5 * (C + C.T)
    for a in (grid, C):
        a.setflags(write=False)
    return GpGrid(kernel, grid, trapezoid_weights(grid), C)


def _jittered_cholesky(C: np.ndarray) -> np.ndarray:
    n = C.shape[0]
    jitter = _CHOL_JITTER * np.trace(C) / n
    for _ in range(_CHOL_RETRIES + 1):
        try:
            return np.linalg.cholesky(C + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationFailure("joint covariance could not be factored")


def sample_gp(grid: GpGrid, seed, size: int | None = None) -> np.ndarray:
    """Draw(s) from GP(0, k) on the grid; shape ``(N*G,)`` or ``(size, N*G)``."""
    rng = np.random.default_rng(seed)
    n = grid.joint_cov.shape[0]
    xi = rng.standard_normal(n if size is None else (size, n))
    return xi @ grid.factor.T


# ---------------------------------------------------------------------------
# sampling plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExclusiveSamplePlan:
    excluded_vertex: int
    M0: int
    seed: int
    samples: SampleSet
    nested: bool


def draw_exclusive_plan(graph: Graph, v0: int, M0: int, domain=(0.0, 1.0), seed: int = 0,
                        nested: bool = True, values=None) -> ExclusiveSamplePlan:
    """``M0`` i.i.d. uniform times on every vertex except ``v0``.

    With ``nested=True`` each vertex draws from its own stream, so a plan
    with larger ``M0`` extends the smaller one.  ``values`` optionally
    assigns observations (defaults to zeros; variances do not need them).
    """
    if graph.N < 2:
        raise InvalidParameter("exclusive sampling needs at least two vertices")
    if M0 < 1:
        raise InvalidParameter("M0 must be >= 1")
    v0 = graph.check_vertex(v0)
    lo, hi = domain
    others = [v for v in range(graph.N) if v != v0]
    if nested:
        times = np.concatenate([
            np.random.default_rng([seed, v]).uniform(lo, hi, size=M0) for v in others
        ])
    else:
        times = np.random.default_rng(seed).uniform(lo, hi, size=M0 * len(others))
    verts = np.repeat(others, M0)
    y = np.zeros(verts.size) if values is None else np.asarray(values, dtype=float)
    return ExclusiveSamplePlan(v0, int(M0), int(seed), SampleSet(verts, times, y), nested)


# ---------------------------------------------------------------------------
# limit variance (conditioning on everything off v0)
# ---------------------------------------------------------------------------


def _psd_pinv(A: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    try:
        w, U = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from exc
    cut = rtol * max(w.max(), 0.0)
    inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
    return (U * inv) @ U.T


def _split(grid: GpGrid, v0: int):
    v0 = grid.graph.check_vertex(v0)
    G = grid.G
    target = np.arange(v0 * G, (v0 + 1) * G)
    rest = np.setdiff1d(np.arange(grid.joint_cov.shape[0]), target)
    return target, rest


def limit_conditional_cov(grid: GpGrid, v0: int, rtol: float = PINV_RTOL) -> np.ndarray:
    """Covariance of ``f(v0, grid)`` given all grid values on other vertices."""
    target, rest = _split(grid, v0)
    C = grid.joint_cov
    Czz = C[np.ix_(rest, rest)]
    Czx = C[np.ix_(rest, target)]
    return C[np.ix_(target, target)] - Czx.T @ _psd_pinv(Czz, rtol) @ Czx


def limit_variance_discretized(grid: GpGrid, v0: int, t0: float,
                               rtol: float = PINV_RTOL) -> float:
    """``Var(f(v0, t0) | f on other vertices)`` via a thresholded pseudo-inverse."""
    g0 = grid.grid_index(t0)
    target, rest = _split(grid, v0)
    C = grid.joint_cov
    i0 = target[g0]
    c = C[rest, i0]
    val = C[i0, i0] - c @ _psd_pinv(C[np.ix_(rest, rest)], rtol) @ c
    return float(max(val, 0.0))


def integrated_limit_variance(grid: GpGrid, v0: int, sub=None,
                              rtol: float = PINV_RTOL) -> float:
    """Trapezoid integral of the limit variance over a contiguous sub-grid.

    ``sub`` is an index slice/array into the grid (default: the whole grid).
    """
    cov = limit_conditional_cov(grid, v0, rtol)
    var = np.clip(np.diag(cov), 0.0, None)
    idx = np.arange(grid.G) if sub is None else np.arange(grid.G)[sub]
    w = trapezoid_weights(grid.time_grid[idx])
    return float(w @ var[idx])


# ---------------------------------------------------------------------------
# neighbourhood bound
# ---------------------------------------------------------------------------


def l_value(graph_kernel: GraphKernel, v0: int, d: int, hops=None) -> float:
    """Schur-complement residual of ``K_G`` at ``v0`` given its open d-hop ball."""
    g = graph_kernel.graph
    v0 = g.check_vertex(v0)
    if hops is None:
        nbrs = sorted(hop_neighborhood(g, v0, d))
    else:
        row = np.asarray(hops)[v0]
        nbrs = [int(u) for u in np.flatnonzero(row <= d) if u != v0]
    if not nbrs:
        raise EmptyNeighborhood(f"vertex {v0} has no neighbours within {d} hops")
    K = graph_kernel.matrix
    Knn = K[np.ix_(nbrs, nbrs)]
    k = K[nbrs, v0]
    try:
        factor = linalg.cho_factor(Knn, lower=True)
    except np.linalg.LinAlgError:
        raise SingularSubmatrix("K_G restricted to the neighbourhood is singular") from None
    if np.min(np.abs(np.diag(factor[0]))) ** 2 <= 1e-14 * np.max(np.diag(Knn)):
        raise SingularSubmatrix("K_G restricted to the neighbourhood is singular")
    val = K[v0, v0] - k @ linalg.cho_solve(factor, k)
    return float(min(max(val, 0.0), K[v0, v0]))


def var_bound(kt_t0: float, l: float, M0: float, c0: float, D: int = 1, C_D: float = 1.0,
              C1: float = 0.0, C2: float = 0.0, C3: float = 0.0,
              N_d: int = 1) -> tuple[float, float]:
    """Asymptotic posterior-variance bound and the probability it holds with.

    bound = kt*l + (C1/c0 + C2 c0^2) M0^(-1/(3D+1)) + C3 c0 M0^(-2/(3D+1))
    prob  = (1 - 1 / (2 (1-c0)^2 C_D M0^(1/(3D+1))))^N_d, floored at 0
    """
    if not 0.0 < c0 < 1.0:
        raise InvalidParameter("c0 must lie in (0, 1)")
    if M0 < 1 or D < 1 or N_d < 0:
        raise InvalidParameter("need M0 >= 1, D >= 1, N_d >= 0")
    if min(C1, C2, C3) < 0 or C_D <= 0:
        raise InvalidParameter("constants must be nonnegative and C_D positive")
    e1 = 1.0 / (3 * D + 1)
    e2 = 2.0 / (3 * D + 1)
    bound = kt_t0 * l + (C1 / c0 + C2 * c0**2) * M0 ** (-e1) + C3 * c0 * M0 ** (-e2)
    base = 1.0 - 0.5 / ((1.0 - c0) ** 2 * C_D * M0**e1)
    prob = max(base, 0.0) ** N_d
    return float(bound), float(prob)


def interval_ball_ratio(t0: float, domain=(0.0, 1.0)) -> float:
    """Measure of the unit ball around ``t0`` inside ``domain`` over the domain length."""
    lo, hi = domain
    inside = min(hi, t0 + 1.0) - max(lo, t0 - 1.0)
    return inside / (hi - lo)


def empirical_posterior_variance(plan_or_samples, kernel: ProductKernel, sigma2: float,
                                 v0: int, t0) -> float | np.ndarray:
    """Posterior variance at ``(v0, t0)`` given a plan's samples (analytic kernel)."""
    samples = (plan_or_samples.samples if isinstance(plan_or_samples, ExclusiveSamplePlan)
               else plan_or_samples)
    return GaussianPosterior(kernel, samples, PosteriorQuery(sigma2)).variance(v0, t0)


def integrated_posterior_variance(samples: SampleSet, kernel: ProductKernel, sigma2: float,
                                  v0: int, time_grid) -> float:
    t = np.asarray(time_grid, dtype=float)
    var = GaussianPosterior(kernel, samples, PosteriorQuery(sigma2)).variance(
        np.full(t.shape, v0), t)
    return float(trapezoid_weights(t) @ var)


# ---------------------------------------------------------------------------
# law of total covariance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TotalVarianceCheck:
    prior_variance: float
    expected_conditional_variance: float
    variance_of_conditional_mean: float
    mc_total: float
    standard_error: float

    @property
    def discrepancy(self) -> float:
        return self.mc_total - self.prior_variance

    @property
    def z_score(self) -> float:
        return abs(self.discrepancy) / self.standard_error if self.standard_error > 0 else 0.0


def total_variance_check(grid: GpGrid, v0: int, t0: float, draws: int = 10_000,
                         seed: int = 0) -> TotalVarianceCheck:
    """Monte Carlo check of ``Var(x0) = E[Var(x0 | z)] + Var(E[x0 | z])``.

    ``x0 = f(v0, t0)`` and ``z`` is every grid value off ``v0``.  The
    conditional variance is deterministic; the variance of the conditional
    mean is estimated from joint draws and compared to the prior variance.
    """
    g0 = grid.grid_index(t0)
    target, rest = _split(grid, v0)
    C = grid.joint_cov
    i0 = target[g0]
    weights = _psd_pinv(C[np.ix_(rest, rest)]) @ C[rest, i0]
    cond_var = float(C[i0, i0] - C[rest, i0] @ weights)
    F = sample_gp(grid, seed, size=draws)
    m = F[:, rest] @ weights
    var_m = float(np.var(m, ddof=1))
    # standard error of a Gaussian sample variance
    se = var_m * math.sqrt(2.0 / (draws - 1))
    return TotalVarianceCheck(float(C[i0, i0]), cond_var, var_m, cond_var + var_m, se)
