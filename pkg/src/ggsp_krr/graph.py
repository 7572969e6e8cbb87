"""Weighted undirected graphs with a cached Laplacian eigendecomposition.

Vertices are integers ``0..N-1``.  The graph shift operator (GSO) is the
combinatorial Laplacian ``L = D - W`` by default; the symmetric normalized
Laplacian can be selected with ``gso="normalized"``.  Eigenvalues are kept
in ascending order, so ``eigenvectors[:, 0]`` is the smoothest mode.

Hop distances are computed on the unweighted skeleton.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import (
    DisconnectedGraph,
    DuplicateEdge,
    EigensolveFailure,
    InvalidVertex,
    ParseError,
    SelfLoop,
)

GSO_CHOICES = ("laplacian", "normalized")


@dataclass(frozen=True, eq=False)
class Graph:
    n_vertices: int
    edges: tuple[tuple[int, int, float], ...]
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    gso: str = "laplacian"
    _hops: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.n_vertices

    @property
    def adjacency(self) -> np.ndarray:
        W = np.zeros((self.n_vertices, self.n_vertices))
        for u, v, w in self.edges:
            W[u, v] = W[v, u] = w
        return W

    @property
    def hops(self) -> np.ndarray:
        """Integer hop-distance table (see :func:`hop_table`)."""
        if self._hops is None:
            object.__setattr__(self, "_hops", hop_table(self))
        return self._hops

    def check_vertex(self, v) -> int:
        try:
            iv = int(v)
        except (TypeError, ValueError):
            raise InvalidVertex(f"vertex {v!r} is not an integer") from None
        if iv != v or not 0 <= iv < self.n_vertices:
            raise InvalidVertex(f"vertex {v!r} outside 0..{self.n_vertices - 1}")
        return iv

    def diameter(self) -> int:
        return int(self.hops.max())


def _laplacian(n: int, edges: Sequence[tuple[int, int, float]], gso: str) -> np.ndarray:
    W = np.zeros((n, n))
    for u, v, w in edges:
        W[u, v] = W[v, u] = w
    deg = W.sum(axis=1)
    L = np.diag(deg) - W
    if gso == "laplacian":
        return L
    # isolated vertices only occur for N=1
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[:, None] * L * inv_sqrt[None, :]


def load_graph(
    edge_list: Iterable[Sequence],
    n_vertices: int | None = None,
    gso: str = "laplacian",
) -> Graph:
    """Build a :class:`Graph` from ``(u, v, w)`` triples.

    ``w`` defaults to 1 when a pair is given.  ``n_vertices`` defaults to
    ``1 + max id`` (or 1 for an empty list).
    """
    if gso not in GSO_CHOICES:
        raise ValueError(f"gso must be one of {GSO_CHOICES}, got {gso!r}")
    edges: list[tuple[int, int, float]] = []
    seen: set[tuple[int, int]] = set()
    max_id = -1
    for item in edge_list:
        if len(item) == 2:
            u, v = item
            w = 1.0
        else:
            u, v, w = item
        if int(u) != u or int(v) != v or u < 0 or v < 0:
            raise InvalidVertex(f"bad vertex id in edge ({u}, {v})")
        u, v, w = int(u), int(v), float(w)
        if u == v:
            raise SelfLoop(f"self-loop at vertex {u}")
        if not w > 0 or not np.isfinite(w):
            raise ValueError(f"edge ({u}, {v}) has non-positive weight {w}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdge(f"duplicate edge {key}")
        seen.add(key)
        edges.append((u, v, w))
        max_id = max(max_id, u, v)

    n = max_id + 1 if n_vertices is None else int(n_vertices)
    if n < 1:
        n = 1
    if max_id >= n:
        raise InvalidVertex(f"vertex {max_id} outside 0..{n - 1}")

    if n > 1:
        rows = [e[0] for e in edges] + [e[1] for e in edges]
        cols = [e[1] for e in edges] + [e[0] for e in edges]
        skel = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        n_comp, _ = connected_components(skel, directed=False)
        if n_comp != 1:
            raise DisconnectedGraph(f"graph has {n_comp} connected components")

    L = _laplacian(n, edges, gso)
    try:
        lam, phi = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from exc
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(phi))):
        raise EigensolveFailure("non-finite eigendecomposition")
    lam = np.asarray(lam)
    # exact zero for the constant mode of the combinatorial Laplacian
    if gso == "laplacian" and abs(lam[0]) <= 1e-10 * max(1.0, abs(lam[-1])):
        lam[0] = 0.0
    for arr in (L, lam, phi):
        arr.setflags(write=False)
    return Graph(n, tuple(edges), L, lam, phi, gso)


def read_edge_list(path: str | Path, gso: str = "laplacian") -> Graph:
    """Parse the ``u v w`` text format (``#`` comments, optional ``n <N>``)."""
    n_vertices = None
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "n":
                if len(parts) != 2:
                    raise ParseError("header must be 'n <N>'", lineno)
                try:
                    n_vertices = int(parts[1])
                except ValueError:
                    raise ParseError(f"bad vertex count {parts[1]!r}", lineno) from None
                continue
            if len(parts) not in (2, 3):
                raise ParseError(f"expected 'u v w', got {line!r}", lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise ParseError(f"cannot parse {line!r}", lineno) from None
            edges.append((u, v, w))
    return load_graph(edges, n_vertices=n_vertices, gso=gso)


def write_edge_list(g: Graph, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"n {g.n_vertices}\n")
        for u, v, w in g.edges:
            fh.write(f"{u} {v} {w!r}\n")


def hop_table(g: Graph) -> np.ndarray:
    """Unweighted shortest-path hop counts; unreachable pairs encoded as N."""
    n = g.n_vertices
    if n == 1:
        return np.zeros((1, 1), dtype=int)
    rows = [e[0] for e in g.edges]
    cols = [e[1] for e in g.edges]
    skel = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    dist = shortest_path(skel, directed=False, unweighted=True)
    dist[~np.isfinite(dist)] = n
    out = dist.astype(int)
    out.setflags(write=False)
    return out


def hop_neighborhood(g: Graph, v: int, d: int, closed: bool = False) -> set[int]:
    """Vertices within ``d`` hops of ``v``, excluding ``v`` unless ``closed``."""
    v = g.check_vertex(v)
    if d < 0:
        raise ValueError("hop radius must be nonnegative")
    row = g.hops[v]
    out = {int(u) for u in np.flatnonzero(row <= d)}
    if not closed:
        out.discard(v)
    return out


def path_graph(n: int, weight: float = 1.0) -> Graph:
    return load_graph([(i, i + 1, weight) for i in range(n - 1)], n_vertices=n)


def ring_graph(n: int, weight: float = 1.0) -> Graph:
    return load_graph([(i, (i + 1) % n, weight) for i in range(n)], n_vertices=n)
