"""GTRSS reconstruction (batch and online) and isolated per-vertex KRR.

Matrices are ``N x T`` (vertices by time steps).  ``vec`` stacks columns,
so the vertex index runs fastest and ``kron(A_time, B_graph)`` acts on
``vec(X)`` with ``A`` on time and ``B`` on vertices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import InvalidParameter, SingularSystem
from .graph import Graph, load_graph, read_edge_list
from .kernels import (
    GtrssDifference,
    ProductKernel,
    TimeKernel,
    build_graph_kernel_sobolev,
    difference_operator,
    identity_graph_kernel,
)
from .reconstruct import SampleSet, fit_krr, predict


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, N: int, T: int) -> np.ndarray:
    return np.asarray(x).reshape((N, T), order="F")


def sobolev_power(g: Graph, alpha: float, beta: float) -> np.ndarray:
    """``(L + alpha I)^beta`` by eigendecomposition; fractional ``beta`` allowed."""
    if not alpha > 0:
        raise InvalidParameter("alpha must be positive")
    lam = np.clip(g.eigenvalues, 0.0, None) + alpha
    phi = g.eigenvectors
    S = (phi * lam**beta) @ phi.T
    return 0.5 * (S + S.T)


@dataclass(frozen=True, eq=False)
class GtrssProblem:
    graph: Graph
    mask: np.ndarray
    observations: np.ndarray
    mu_tv: float
    alpha: float
    beta: float
    delta0: float

    def __post_init__(self):
        P = np.asarray(self.mask, dtype=float)
        X = np.asarray(self.observations, dtype=float)
        if P.shape != X.shape or P.shape[0] != self.graph.N or P.ndim != 2:
            raise ValueError("mask and observations must both be N x T")
        if P.shape[1] < 2:
            raise ValueError("need at least two time steps")
        if not np.all((P == 0) | (P == 1)):
            raise ValueError("mask entries must be 0 or 1")
        if np.any(X[P == 0] != 0):
            raise ValueError("observations must be zero off the mask")
        for name in ("mu_tv", "alpha", "delta0"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be positive")
        object.__setattr__(self, "mask", P)
        object.__setattr__(self, "observations", X)

    @property
    def N(self) -> int:
        return self.mask.shape[0]

    @property
    def T(self) -> int:
        return self.mask.shape[1]

    def penalty_matrix(self) -> np.ndarray:
        """``(D_h D_h^T + delta0 I) (x) (L + alpha I)^beta``."""
        D = difference_operator(self.T)
        return np.kron(D @ D.T + self.delta0 * np.eye(self.T),
                       sobolev_power(self.graph, self.alpha, self.beta))

    def system(self) -> tuple[np.ndarray, np.ndarray]:
        A = np.diag(vec(self.mask)) + self.mu_tv * self.penalty_matrix()
        return 0.5 * (A + A.T), vec(self.observations)

    def objective(self, X: np.ndarray) -> float:
        r = self.mask * X - self.observations
        x = vec(X)
        return float(np.sum(r**2) + self.mu_tv * x @ self.penalty_matrix() @ x)


def solve_gtrss(p: GtrssProblem) -> np.ndarray:
    """Minimizer of the delta0-regularized GTRSS objective, as an ``N x T`` matrix."""
    A, b = p.system()
    try:
        factor = linalg.cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        raise SingularSystem("GTRSS system matrix is not positive definite") from None
    if np.min(np.diag(factor[0])) ** 2 <= 1e-15 * np.max(np.diag(A)):
        raise SingularSystem("GTRSS system matrix is numerically singular")
    return unvec(linalg.cho_solve(factor, b), p.N, p.T)


def gtrss_equivalent_kernel(p: GtrssProblem) -> ProductKernel:
    """KRR kernel whose ridge solution equals GTRSS: Sobolev graph x GTRSS time."""
    return ProductKernel(build_graph_kernel_sobolev(p.graph, p.alpha, p.beta),
                         GtrssDifference(p.T, p.delta0))


def observed_samples(p: GtrssProblem) -> SampleSet:
    v, t = np.nonzero(p.mask)
    return SampleSet(v, t + 1.0, p.observations[v, t])


def gtrss_as_krr(p: GtrssProblem) -> np.ndarray:
    kernel = gtrss_equivalent_kernel(p)
    model = fit_krr(kernel, observed_samples(p), p.mu_tv)
    vv, tt = np.meshgrid(np.arange(p.N), np.arange(1, p.T + 1), indexing="ij")
    return predict(model, vv.ravel(), tt.ravel().astype(float)).reshape(p.N, p.T)


def gtrss_as_krr_check(p: GtrssProblem) -> float:
    """Max abs difference between the GTRSS solution and its KRR counterpart."""
    return float(np.max(np.abs(gtrss_as_krr(p) - solve_gtrss(p))))


def load_gtrss_instance(path: str | Path) -> GtrssProblem:
    """Read the JSON instance format (graph path relative to the file)."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if "graph" in doc:
        gpath = Path(doc["graph"])
        if not gpath.is_absolute():
            gpath = path.parent / gpath
        g = read_edge_list(gpath)
    else:
        g = load_graph([tuple(e) for e in doc["edges"]], n_vertices=doc.get("n"))
    return GtrssProblem(g, np.array(doc["mask"], dtype=float),
                        np.array(doc["observations"], dtype=float),
                        float(doc["mu_tv"]), float(doc["alpha"]), float(doc["beta"]),
                        float(doc.get("delta0", 1e-5)))


# ---------------------------------------------------------------------------
# online GTRSS
# ---------------------------------------------------------------------------


def online_gtrss_step(state, prev, mask, obs, mu: float, lam: float, alpha: float,
                      beta: float, graph: Graph, sobolev: np.ndarray | None = None) -> np.ndarray:
    """One gradient step on the current date.

    ``state - mu (mask*state - obs) - mu lam (L + alpha I)^beta (state - prev)``
    """
    S = sobolev_power(graph, alpha, beta) if sobolev is None else sobolev
    f = np.asarray(state, dtype=float)
    return (f - mu * (np.asarray(mask) * f - np.asarray(obs))
            - mu * lam * S @ (f - np.asarray(prev, dtype=float)))


def online_gtrss(graph: Graph, stream, mu: float, lam: float, alpha: float, beta: float,
                 iterations: int = 1):
    """Run the online GTRSS baseline over a stream of ``(date, vertex, value)``.

    Dates must arrive in non-decreasing order.  Each date starts from the
    previous date's final estimate.  Before each sample is folded in, the
    current estimate at its vertex is reported.  ``iterations`` repeats the
    update per sample (the per-date iteration count is a free choice).

    Yields ``(date, vertex, value, prediction, error)``.
    """
    S = sobolev_power(graph, alpha, beta)
    N = graph.N
    prev = np.zeros(N)
    state = prev.copy()
    date = None
    mask = np.zeros(N)
    obs = np.zeros(N)
    for t, v, y in stream:
        v = graph.check_vertex(v)
        if date is None or t != date:
            if date is not None and t < date:
                raise ValueError("online GTRSS stream must be ordered by date")
            if date is not None:
                prev = state.copy()
            date = t
            mask[:] = 0.0
            obs[:] = 0.0
            state = prev.copy()
        pred = float(state[v])
        mask[v] = 1.0
        obs[v] = y
        for _ in range(iterations):
            state = online_gtrss_step(state, prev, mask, obs, mu, lam, alpha, beta, graph, S)
        yield t, v, y, pred, y - pred


# ---------------------------------------------------------------------------
# isolated KRR
# ---------------------------------------------------------------------------


class IsolatedKrr:
    """One scalar-kernel KRR per vertex, each fitted on that vertex's samples only."""

    def __init__(self, samples: SampleSet, time_kernel: TimeKernel, mu: float, n_vertices: int):
        self.time_kernel = time_kernel
        self.mu = mu
        single = ProductKernel(identity_graph_kernel(load_graph([], n_vertices=1)), time_kernel)
        self.models = {}
        for v in range(n_vertices):
            sel = samples.vertices == v
            sub = SampleSet(np.zeros(int(sel.sum()), dtype=int), samples.times[sel],
                            samples.values[sel])
            self.models[v] = fit_krr(single, sub, mu)
        if len(samples) and (samples.vertices.min() < 0 or samples.vertices.max() >= n_vertices):
            raise InvalidParameter("sample vertex outside the graph")

    def predict(self, v, t):
        scalar = np.ndim(v) == 0 and np.ndim(t) == 0
        vv, tt = np.broadcast_arrays(np.atleast_1d(v), np.atleast_1d(np.asarray(t, dtype=float)))
        out = np.empty(vv.shape)
        for u in np.unique(vv):
            sel = vv == u
            out[sel] = predict(self.models[int(u)], np.zeros(int(sel.sum()), dtype=int), tt[sel])
        return float(out[0]) if scalar else out


def isolated_krr(samples: SampleSet, time_kernel: TimeKernel, mu: float,
                 n_vertices: int | None = None) -> IsolatedKrr:
    if n_vertices is None:
        n_vertices = int(samples.vertices.max()) + 1 if len(samples) else 1
    return IsolatedKrr(samples, time_kernel, mu, n_vertices)


__all__ = [
    "GtrssProblem",
    "IsolatedKrr",
    "gtrss_as_krr",
    "gtrss_as_krr_check",
    "isolated_krr",
    "load_gtrss_instance",
    "online_gtrss",
    "online_gtrss_step",
    "solve_gtrss",
    "sobolev_power",
]
