"""Batch kernel ridge regression on (vertex, time) samples.

The fitted predictor is the finite kernel expansion

    f_hat(v, t) = sum_m c_m K_G[v, v_m] k_T(t, t_m),   c = (K(S, S) + mu I)^{-1} y

and, read as a Gaussian-process posterior with noise variance ``sigma2 ==
mu``, the same linear system gives the posterior variance.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import linalg

from .errors import InvalidParameter, NoPolyDegree, SolveFailure
from .graph import Graph, load_graph
from .kernels import ProductKernel, kernel_from_spec

_JITTER_START = 1e-12
_JITTER_RETRIES = 3
_VAR_SLACK = 1e-10


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Ordered (vertex, time, value) observations."""

    vertices: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices).reshape(-1)
        t = np.asarray(self.times, dtype=float).reshape(-1)
        y = np.asarray(self.values, dtype=float).reshape(-1)
        if not (v.size == t.size == y.size):
            raise ValueError("vertices, times and values must have equal length")
        if v.size and not np.all(v == np.round(v)):
            raise ValueError("vertex ids must be integers")
        v = v.astype(int)
        for name, arr in (("vertices", v), ("times", t), ("values", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls) -> "SampleSet":
        return cls(np.zeros(0, dtype=int), np.zeros(0), np.zeros(0))

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[int, float, float]]) -> "SampleSet":
        rows = list(triples)
        if not rows:
            return cls.empty()
        v, t, y = zip(*rows)
        return cls(np.array(v, dtype=int), np.array(t, dtype=float), np.array(y, dtype=float))

    def __len__(self) -> int:
        return self.vertices.size

    @property
    def M(self) -> int:
        return len(self)

    def __iter__(self):
        return zip(self.vertices.tolist(), self.times.tolist(), self.values.tolist())

    def subset(self, index) -> "SampleSet":
        return SampleSet(self.vertices[index], self.times[index], self.values[index])

    def concat(self, other: "SampleSet") -> "SampleSet":
        return SampleSet(np.concatenate([self.vertices, other.vertices]),
                         np.concatenate([self.times, other.times]),
                         np.concatenate([self.values, other.values]))

    def validate(self, kernel: ProductKernel) -> None:
        kernel.check_vertices(self.vertices)
        kernel.time.check(self.times)


@dataclass(frozen=True)
class PosteriorQuery:
    noise_variance: float

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise InvalidParameter("noise variance must be positive")


def assemble_gram(kernel: ProductKernel, samples: SampleSet) -> np.ndarray:
    """``K(S, S)`` with entries ``k((v_m, t_m), (v_m', t_m'))``."""
    G = kernel.gram(samples.vertices, samples.times)
    G += G.T
    G *= 0.5
    return G


def spd_factor(A: np.ndarray):
    """Cholesky factor of a symmetric positive-definite matrix.

    On failure, retries with diagonal jitter ``1e-12 * tr(A) / M``, growing
    tenfold, up to three times.
    """
    M = A.shape[0]
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        pass
    jitter = _JITTER_START * max(np.trace(A), 1e-300) / max(M, 1)
    for _ in range(_JITTER_RETRIES):
        try:
            return linalg.cho_factor(A + jitter * np.eye(M), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise SolveFailure("system matrix is not positive definite even after jitter")


@dataclass(frozen=True, eq=False)
class KrrModel:
    kernel: ProductKernel
    samples: SampleSet
    coefficients: np.ndarray
    ridge: float
    _factor: tuple | None = field(default=None, repr=False)

    def predict(self, v, t):
        return predict(self, v, t)

    def residual(self) -> float:
        """``||(K + mu I) c - y||``, the post-fit check."""
        if not len(self.samples):
            return 0.0
        K = assemble_gram(self.kernel, self.samples)
        return float(np.linalg.norm(K @ self.coefficients + self.ridge * self.coefficients
                                    - self.samples.values))


def fit_krr(kernel: ProductKernel, samples: SampleSet, mu: float) -> KrrModel:
    """Solve ``(K(S, S) + mu I) c = y``; ``M == 0`` gives the zero model."""
    if not mu > 0:
        raise InvalidParameter("ridge parameter mu must be positive")
    samples.validate(kernel)
    if not len(samples):
        return KrrModel(kernel, samples, np.zeros(0), float(mu))
    A = assemble_gram(kernel, samples)
    A[np.diag_indices_from(A)] += mu
    factor = spd_factor(A)
    c = linalg.cho_solve(factor, samples.values)
    c.setflags(write=False)
    return KrrModel(kernel, samples, c, float(mu), factor)


def _cross(kernel: ProductKernel, samples: SampleSet, v, t) -> np.ndarray:
    """Cross-covariance rows, shape ``(Q, M)`` for broadcast query arrays."""
    v = np.atleast_1d(kernel.check_vertices(v))
    t = np.atleast_1d(kernel.time.check(t))
    v, t = np.broadcast_arrays(v, t)
    return kernel.gram(v, t, samples.vertices, samples.times)


def predict(model: KrrModel, v, t):
    """Evaluate the fitted expansion; scalar in, scalar out."""
    scalar = np.ndim(v) == 0 and np.ndim(t) == 0
    if not len(model.samples):
        out = np.zeros(np.broadcast(np.atleast_1d(v), np.atleast_1d(t)).shape)
        model.kernel.check_vertices(v)
        model.kernel.time.check(t)
    else:
        out = _cross(model.kernel, model.samples, v, t) @ model.coefficients
    return float(out[0]) if scalar else out


def predict_localized(model: KrrModel, v: int, t: float) -> float:
    """Prediction that touches only samples within ``poly_degree`` hops of ``v``."""
    gk = model.kernel.graph
    if gk.poly_degree is None:
        raise NoPolyDegree("graph kernel has no recorded polynomial degree")
    v = gk.graph.check_vertex(v)
    t = float(model.kernel.time.check(t))
    near = gk.graph.hops[v, model.samples.vertices] <= gk.poly_degree
    if not np.any(near):
        return 0.0
    vm = model.samples.vertices[near]
    tm = model.samples.times[near]
    kv = gk.matrix[v, vm] * model.kernel.time(np.full(tm.shape, t), tm)
    return float(kv @ model.coefficients[near])


class GaussianPosterior:
    """GP(0, k) posterior given noisy samples; factorizes once, queries many."""

    def __init__(self, kernel: ProductKernel, samples: SampleSet, q: PosteriorQuery | float):
        if not isinstance(q, PosteriorQuery):
            q = PosteriorQuery(float(q))
        self.kernel = kernel
        self.samples = samples
        self.query = q
        self.model = fit_krr(kernel, samples, q.noise_variance)

    def mean(self, v, t):
        return predict(self.model, v, t)

    def variance(self, v, t):
        scalar = np.ndim(v) == 0 and np.ndim(t) == 0
        k = self.kernel
        vv = np.atleast_1d(k.check_vertices(v))
        tt = np.atleast_1d(k.time.check(t))
        vv, tt = np.broadcast_arrays(vv, tt)
        prior = k.diag(vv, tt)
        if len(self.samples):
            C = _cross(k, self.samples, vv, tt)  # (Q, M)
            W = linalg.cho_solve(self.model._factor, C.T)
            var = prior - np.einsum("qm,mq->q", C, W)
        else:
            var = prior.copy()
        slack = _VAR_SLACK * np.maximum(1.0, prior)
        if np.any(var < -slack) or np.any(var > prior + slack):
            raise SolveFailure("posterior variance left [0, prior] beyond roundoff slack")
        var = np.clip(var, 0.0, prior)
        return float(var[0]) if scalar else var


def posterior_variance(kernel: ProductKernel, samples: SampleSet, q: PosteriorQuery | float,
                       v, t):
    return GaussianPosterior(kernel, samples, q).variance(v, t)


def posterior_mean(kernel: ProductKernel, samples: SampleSet, q: PosteriorQuery | float, v, t):
    """Identical to ``predict(fit_krr(kernel, samples, mu=sigma2), v, t)``."""
    sigma2 = q.noise_variance if isinstance(q, PosteriorQuery) else PosteriorQuery(q).noise_variance
    return predict(fit_krr(kernel, samples, sigma2), v, t)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def hexlist(a) -> list[str]:
    return [float(x).hex() for x in np.asarray(a, dtype=float).ravel()]


def unhexlist(xs) -> np.ndarray:
    return np.array([float.fromhex(x) if isinstance(x, str) else float(x) for x in xs])


def graph_to_json(g: Graph) -> dict:
    return {"n": g.n_vertices, "gso": g.gso,
            "edges": [[u, v, float(w).hex()] for u, v, w in g.edges]}


def graph_from_json(doc: dict) -> Graph:
    edges = [(u, v, float.fromhex(w) if isinstance(w, str) else float(w))
             for u, v, w in doc["edges"]]
    return load_graph(edges, n_vertices=doc["n"], gso=doc.get("gso", "laplacian"))


def samples_to_json(s: SampleSet) -> dict:
    return {"vertices": s.vertices.tolist(), "times": hexlist(s.times),
            "values": hexlist(s.values)}


def samples_from_json(doc: dict) -> SampleSet:
    return SampleSet(np.array(doc["vertices"], dtype=int), unhexlist(doc["times"]),
                     unhexlist(doc["values"]))


def model_to_json(model: KrrModel) -> str:
    """Self-contained JSON: graph, kernel spec, samples, mu and hex-float coefficients."""
    doc = {
        "format": "ggsp-krr-model/1",
        "graph": graph_to_json(model.kernel.graph.graph),
        "kernel": model.kernel.to_spec(),
        "samples": samples_to_json(model.samples),
        "mu": float(model.ridge).hex(),
        "coefficients": hexlist(model.coefficients),
    }
    return json.dumps(doc)


def model_from_json(text: str) -> KrrModel:
    doc = json.loads(text)
    g = graph_from_json(doc["graph"])
    kernel = kernel_from_spec(doc["kernel"], g)
    samples = samples_from_json(doc["samples"])
    samples.validate(kernel)
    mu = float.fromhex(doc["mu"]) if isinstance(doc["mu"], str) else float(doc["mu"])
    c = unhexlist(doc["coefficients"])
    if c.size != len(samples):
        raise ValueError("coefficient count does not match sample count")
    c.setflags(write=False)
    return KrrModel(kernel, samples, c, mu)
