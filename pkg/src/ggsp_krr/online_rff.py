"""Random Fourier features for the product kernel and a streaming SGD learner.

The feature of a sample is ``eta(v, t) = p_v (x) z(t)`` where ``p_v`` is
column ``v`` of ``K_G^{1/2}`` and ``z`` is a cosine random-feature map of
the (shift-invariant) time kernel.  The weight vector is stored vertex
block by vertex block: block ``u`` is ``c[u*F:(u+1)*F]``.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, NoPolyDegree, StepTooLarge, UnsupportedKernel
from .kernels import GaussianRbf, LaplacianRbf, ProductKernel, kernel_from_spec
from .reconstruct import SampleSet, graph_from_json, graph_to_json, hexlist, unhexlist


@dataclass(frozen=True, eq=False)
class RffFeatureMap:
    kernel: ProductKernel
    F: int
    frequencies: np.ndarray
    phases: np.ndarray
    seed: int

    @property
    def sqrt_graph(self) -> np.ndarray:
        return self.kernel.graph.sqrt_columns

    @property
    def poly_degree_sqrt(self) -> int | None:
        return self.kernel.graph.sqrt_poly_degree

    @property
    def N(self) -> int:
        return self.kernel.N

    @property
    def dim(self) -> int:
        return self.N * self.F

    def z(self, t) -> np.ndarray:
        """Time features; shape ``(F,)`` for scalar ``t``, ``(..., F)`` otherwise."""
        t = np.asarray(self.kernel.time.check(t), dtype=float)
        arg = t[..., None] * self.frequencies + self.phases
        return np.sqrt(2.0 / self.F) * np.cos(arg)

    def features(self, v, t) -> np.ndarray:
        v = self.kernel.graph.graph.check_vertex(v)
        return np.kron(self.sqrt_graph[:, v], self.z(t))


def build_feature_map(kernel: ProductKernel, F: int, seed: int) -> RffFeatureMap:
    """Draw frequencies from the spectral measure of the time kernel.

    Gaussian ``exp(-d^2/gamma)`` pairs with ``N(0, 2/gamma)`` frequencies;
    Laplacian ``exp(-|d|/gamma)`` with Cauchy frequencies of scale ``1/gamma``.
    """
    if F < 1:
        raise InvalidParameter("feature count F must be >= 1")
    rng = np.random.default_rng(seed)
    time = kernel.time
    if isinstance(time, GaussianRbf):
        omega = rng.normal(0.0, np.sqrt(2.0 / time.gamma), size=F)
    elif isinstance(time, LaplacianRbf):
        omega = rng.standard_cauchy(size=F) / time.gamma
    else:
        raise UnsupportedKernel(f"{type(time).__name__} is not shift-invariant")
    b = rng.uniform(0.0, 2.0 * np.pi, size=F)
    omega.setflags(write=False)
    b.setflags(write=False)
    return RffFeatureMap(kernel, int(F), omega, b, int(seed))


def features(fmap: RffFeatureMap, v, t) -> np.ndarray:
    return fmap.features(v, t)


def default_step(fmap: RffFeatureMap, samples: SampleSet) -> float:
    """``0.05 / max_m ||eta(v_m, t_m)||^2``."""
    if not len(samples):
        raise InvalidParameter("need samples to size the default step")
    zn = np.sum(fmap.z(samples.times) ** 2, axis=-1)
    pn = np.sum(fmap.sqrt_graph[:, samples.vertices] ** 2, axis=0)
    return 0.05 / float(np.max(zn * pn))


@dataclass(eq=False)
class RffPredictor:
    """Linear model ``c^T eta(v, t)`` updated one sample at a time.

    ``horizon`` is the stream length used to split the ridge penalty over
    samples (``mu / horizon`` per step).  ``sgd_step`` calls are serialized
    by a lock; the weight array is replaced, never mutated, so readers
    always see a whole vector.
    """

    feature_map: RffFeatureMap
    mu: float
    horizon: int
    theta: float
    weights: np.ndarray | None = None
    update_count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.mu < 0:
            raise InvalidParameter("mu must be nonnegative")
        if self.horizon < 1:
            raise InvalidParameter("horizon must be a positive integer")
        if not self.theta > 0:
            raise InvalidParameter("step size theta must be positive")
        if self.theta1 <= 0:
            raise StepTooLarge(f"theta1 = 1 - 2 theta mu / M = {self.theta1:g} <= 0")
        if self.weights is None:
            self.weights = np.zeros(self.feature_map.dim)
        else:
            self.weights = np.array(self.weights, dtype=float)
            if self.weights.shape != (self.feature_map.dim,):
                raise ValueError("weight vector has the wrong length")
        self.weights.setflags(write=False)

    @property
    def theta1(self) -> float:
        return 1.0 - 2.0 * self.theta * self.mu / self.horizon

    @property
    def theta2(self) -> float:
        return 2.0 * self.theta

    def predict(self, v, t) -> float:
        c = self.weights
        return float(c @ self.feature_map.features(v, t))

    def sgd_step(self, v, t, y) -> tuple[float, float]:
        """Predict, observe ``y``, then update; returns ``(prediction, error)``."""
        eta = self.feature_map.features(v, t)
        with self._lock:
            c = self.weights
            p = float(c @ eta)
            e = float(y) - p
            new = self.theta1 * c + (self.theta2 * e) * eta
            new.setflags(write=False)
            self.weights = new
            self.update_count += 1
        return p, e

    def objective(self, samples: SampleSet) -> float:
        return objective(self, samples)


def sgd_step(pred: RffPredictor, v, t, y) -> tuple[float, float]:
    return pred.sgd_step(v, t, y)


def feature_matrix(fmap: RffFeatureMap, samples: SampleSet) -> np.ndarray:
    """Rows ``eta(v_m, t_m)``, shape ``(M, N*F)``."""
    if not len(samples):
        return np.zeros((0, fmap.dim))
    Z = fmap.z(samples.times)  # (M, F)
    P = fmap.sqrt_graph[:, samples.vertices].T  # (M, N)
    return (P[:, :, None] * Z[:, None, :]).reshape(len(samples), -1)


def objective(pred: RffPredictor, samples: SampleSet) -> float:
    """``q(c) = sum_m (c^T eta_m - y_m)^2 + mu ||c||^2``."""
    c = pred.weights
    H = feature_matrix(pred.feature_map, samples)
    r = H @ c - samples.values
    return float(r @ r + pred.mu * (c @ c))


def per_sample_objectives(pred: RffPredictor, samples: SampleSet) -> np.ndarray:
    """``q_m(c) = (c^T eta_m - y_m)^2 + (mu / M) ||c||^2`` with ``M = len(samples)``."""
    c = pred.weights
    H = feature_matrix(pred.feature_map, samples)
    r = H @ c - samples.values
    return r**2 + pred.mu / len(samples) * (c @ c)


def ridge_optimum(fmap: RffFeatureMap, samples: SampleSet, mu: float) -> np.ndarray:
    """Closed-form minimizer of ``q``: ``(H^T H + mu I)^{-1} H^T y``."""
    H = feature_matrix(fmap, samples)
    A = H.T @ H + mu * np.eye(fmap.dim)
    return np.linalg.solve(A, H.T @ samples.values)


def predict_rff_localized(pred: RffPredictor, v: int, t: float) -> float:
    """``sum_{u in closed L0-hop ball of v} c_u^T p_{u,v} z(t)``."""
    fmap = pred.feature_map
    L0 = fmap.poly_degree_sqrt
    if L0 is None:
        raise NoPolyDegree("square root of the graph kernel has no polynomial form")
    g = fmap.kernel.graph.graph
    v = g.check_vertex(v)
    z = fmap.z(t)
    C = pred.weights.reshape(fmap.N, fmap.F)
    near = np.flatnonzero(g.hops[v] <= L0)
    P = fmap.sqrt_graph
    return float(sum(P[u, v] * (C[u] @ z) for u in near))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_to_json(pred: RffPredictor) -> str:
    fmap = pred.feature_map
    doc = {
        "format": "ggsp-krr-rff/1",
        "graph": graph_to_json(fmap.kernel.graph.graph),
        "kernel": fmap.kernel.to_spec(),
        "seed": fmap.seed,
        "F": fmap.F,
        "mu": float(pred.mu).hex(),
        "horizon": pred.horizon,
        "theta": float(pred.theta).hex(),
        "update_count": pred.update_count,
        "weights": hexlist(pred.weights),
    }
    return json.dumps(doc)


def checkpoint_from_json(text: str) -> RffPredictor:
    doc = json.loads(text)
    g = graph_from_json(doc["graph"])
    kernel = kernel_from_spec(doc["kernel"], g)
    fmap = build_feature_map(kernel, int(doc["F"]), int(doc["seed"]))

    def num(x):
        return float.fromhex(x) if isinstance(x, str) else float(x)

    return RffPredictor(fmap, num(doc["mu"]), int(doc["horizon"]), num(doc["theta"]),
                        weights=unhexlist(doc["weights"]),
                        update_count=int(doc["update_count"]))
