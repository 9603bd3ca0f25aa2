"""Weighted digraphs, Laplacians and the spectral quantities used by the gain conditions.

Orientation convention: an edge ``(i, j, w)`` means unit ``j`` can send
information to unit ``i``. The weight is stored at row ``i``, column ``j`` of
the adjacency matrix, so the out-degree of ``i`` is its row sum and
``L = D_out - A``.

Vertices carry integer labels (unit ids). A freshly built graph uses labels
``1..n``; structural edits keep the surviving labels, so the graph obtained by
removing units from a 54-unit network still refers to units by their original
ids. Matrix rows/columns follow the sorted label order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

TABLE1_N = 54
TABLE1_WEIGHT = 0.1
TABLE1_OFFSETS = (5, 10, 15, 20)


class GraphError(ValueError):
    """Malformed graph or a graph that violates a connectivity/balance requirement."""


@dataclass(frozen=True)
class WeightedDigraph:
    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        verts = tuple(sorted(int(v) for v in self.vertices))
        if len(set(verts)) != len(verts):
            raise GraphError("duplicate vertex labels")
        vset = set(verts)
        merged: dict[tuple[int, int], float] = {}
        for i, j, w in self.edges:
            i, j, w = int(i), int(j), float(w)
            if i == j:
                raise GraphError(f"self-loop at vertex {i}")
            if i not in vset or j not in vset:
                raise GraphError(f"edge ({i}, {j}) references an unknown vertex")
            if not w > 0:
                raise GraphError(f"edge ({i}, {j}) has non-positive weight {w}")
            if (i, j) in merged:
                raise GraphError(f"duplicate edge ({i}, {j})")
            merged[(i, j)] = w
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "edges", tuple((i, j, w) for (i, j), w in sorted(merged.items())))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[float]]) -> "WeightedDigraph":
        """Graph on vertices ``1..n``."""
        if n < 1:
            raise GraphError("a graph needs at least one vertex")
        return cls(tuple(range(1, n + 1)), tuple(tuple(e) for e in edges))

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def position(self) -> dict[int, int]:
        return {v: k for k, v in enumerate(self.vertices)}

    @cached_property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        pos = self.position
        for i, j, w in self.edges:
            A[pos[i], pos[j]] = w
        A.flags.writeable = False
        return A

    def out_degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def in_neighbors(self, v: int) -> list[int]:
        """Units ``w`` with an edge ``(w, v)``, i.e. the units ``v`` can send to."""
        return sorted(i for i, j, _ in self.edges if j == v)

    def incident_edges(self, v: int) -> list[tuple[int, int, float]]:
        return [e for e in self.edges if v in (e[0], e[1])]

    def to_dict(self) -> dict:
        out: dict = {"n": self.n, "edges": [[i, j, w] for i, j, w in self.edges]}
        if self.vertices != tuple(range(1, self.n + 1)):
            out["vertices"] = list(self.vertices)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "WeightedDigraph":
        if "vertices" in d:
            verts = tuple(d["vertices"])
            if "n" in d and int(d["n"]) != len(verts):
                raise GraphError("'n' disagrees with the vertex list")
        else:
            n = int(d["n"])
            if n < 1:
                raise GraphError("a graph needs at least one vertex")
            verts = tuple(range(1, n + 1))
        return cls(verts, tuple(tuple(e) for e in d.get("edges", [])))


@dataclass(frozen=True)
class LaplacianBundle:
    L: np.ndarray
    lambda2_sym: float
    lambda_max_LtL: float
    is_strongly_connected: bool
    is_weight_balanced: bool


@dataclass(frozen=True)
class GraphBounds:
    n_max: int
    d_max_out: float
    a_min: float


def _reachable(A: np.ndarray, start: int, transpose: bool) -> set[int]:
    M = A.T if transpose else A
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in np.flatnonzero(M[u]):
            w = int(w)
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def is_strongly_connected(g: WeightedDigraph) -> bool:
    if g.n <= 1:
        return True
    A = g.adjacency
    return len(_reachable(A, 0, False)) == g.n and len(_reachable(A, 0, True)) == g.n


def balance_tolerance(g: WeightedDigraph) -> float:
    d = g.out_degrees()
    return 1e-9 * max(1.0, float(d.max()) if d.size else 0.0)


def build_laplacian(g: WeightedDigraph) -> LaplacianBundle:
    """Laplacian and its spectral summary.

    ``lambda2_sym`` is the second-smallest eigenvalue of ``L + L^T``; for a
    single vertex it is reported as the sentinel ``0.0``.
    """
    if g.n == 0:
        raise GraphError("empty graph")
    A = np.array(g.adjacency)
    L = -A
    # diagonal from the same row: L @ 1 vanishes up to summation round-off
    np.fill_diagonal(L, A.sum(axis=1))
    L.flags.writeable = False

    balanced = bool(np.abs(L.sum(axis=0)).max() <= balance_tolerance(g))
    connected = is_strongly_connected(g)
    if g.n == 1:
        lam2 = 0.0
    else:
        lam2 = float(np.linalg.eigvalsh(L + L.T)[1])
    lam_max = float(np.linalg.eigvalsh(L.T @ L)[-1])
    return LaplacianBundle(L, lam2, lam_max, connected, balanced)


def require_connected_balanced(bundle: LaplacianBundle, what: str = "graph") -> None:
    if not bundle.is_strongly_connected:
        raise GraphError(f"{what} is not strongly connected")
    if not bundle.is_weight_balanced:
        raise GraphError(f"{what} is not weight-balanced")


def _wrap(x: int, n: int = TABLE1_N) -> int:
    return x if x <= n else x - n


def table1_graph(which: str) -> WeightedDigraph:
    """The four communication graphs of the 54-unit study: ``G``, ``Ghat``, ``Gi``, ``Gf``."""
    if which not in ("G", "Ghat", "Gi", "Gf"):
        raise ValueError(f"unknown Table-1 graph {which!r}")
    w = TABLE1_WEIGHT
    edges: dict[tuple[int, int], float] = {}
    for i in range(1, TABLE1_N + 1):
        nxt = _wrap(i + 1)
        # cycle edge (i, i+1): unit i+1 sends to unit i
        edges[(i, nxt)] = w
        if which != "G":
            edges[(nxt, i)] = w
        for k in TABLE1_OFFSETS:
            j = _wrap(i + k)
            edges[(i, j)] = w
            edges[(j, i)] = w
    g = WeightedDigraph.from_edges(TABLE1_N, [(i, j, v) for (i, j), v in edges.items()])
    if which == "Gi":
        return remove_vertices(g, (4, 11, 25, 45))
    if which == "Gf":
        return remove_vertices(g, (4, 25, 27))
    return g


def remove_vertices(g: WeightedDigraph, vs: Iterable[int]) -> WeightedDigraph:
    drop = set(int(v) for v in vs)
    missing = drop - set(g.vertices)
    if missing:
        raise GraphError(f"cannot remove unknown vertices {sorted(missing)}")
    keep = tuple(v for v in g.vertices if v not in drop)
    if not keep:
        raise GraphError("removing every vertex leaves an empty graph")
    return WeightedDigraph(keep, tuple(e for e in g.edges if e[0] not in drop and e[1] not in drop))


def add_vertex(g: WeightedDigraph, v: int, edges: Iterable[Sequence[float]]) -> WeightedDigraph:
    """Add vertex ``v`` with the given edges (each must touch ``v``)."""
    v = int(v)
    if v in g.vertices:
        raise GraphError(f"vertex {v} already present")
    new = []
    for i, j, w in edges:
        if v not in (int(i), int(j)):
            raise GraphError(f"edge ({i}, {j}) does not touch the added vertex {v}")
        new.append((int(i), int(j), float(w)))
    return WeightedDigraph(g.vertices + (v,), g.edges + tuple(new))


def spectral_lower_bound(b: GraphBounds) -> float:
    """Lower bound on the algebraic connectivity of ``L + L^T`` from local bounds."""
    return 4.0 * b.a_min / b.n_max**2


def spectral_upper_bound(b: GraphBounds) -> float:
    """Upper bound on ``lambda_max(L^T L)`` from local bounds."""
    return 4.0 * b.n_max * b.d_max_out**2


def local_bound_values(g: WeightedDigraph) -> list[tuple[int, float, float]]:
    """What each unit knows about itself: (n, its out-degree, its smallest edge weight)."""
    A = g.adjacency
    out = []
    for k in range(g.n):
        row = A[k][A[k] > 0]
        out.append((g.n, float(A[k].sum()), float(row.min()) if row.size else float("inf")))
    return out


def consensus_bounds(
    g: WeightedDigraph, local: Sequence[tuple[int, float, float]] | None = None
) -> GraphBounds:
    """Max/min consensus on the local bounds.

    Each round, every unit takes the max (for ``n`` and out-degree) or min
    (for edge weight) over itself and the units it hears from. After
    ``n - 1`` rounds on a strongly connected digraph every unit holds the
    global value; unit 0's copy is returned.
    """
    if not is_strongly_connected(g):
        raise GraphError("consensus needs a strongly connected graph")
    if local is None:
        local = local_bound_values(g)
    if len(local) != g.n:
        raise ValueError("one local triple per vertex expected")
    nn = np.array([x[0] for x in local], dtype=float)
    dd = np.array([x[1] for x in local], dtype=float)
    aa = np.array([x[2] for x in local], dtype=float)
    hears = [np.flatnonzero(row) for row in g.adjacency]
    for _ in range(max(g.n - 1, 0)):
        nn = np.array([max(nn[k], nn[h].max()) if h.size else nn[k] for k, h in enumerate(hears)])
        dd = np.array([max(dd[k], dd[h].max()) if h.size else dd[k] for k, h in enumerate(hears)])
        aa = np.array([min(aa[k], aa[h].min()) if h.size else aa[k] for k, h in enumerate(hears)])
    return GraphBounds(int(nn[0]), float(dd[0]), float(aa[0]))


def graph_from_config(spec) -> WeightedDigraph:
    """A Table-1 name (``"G"``, ``"Ghat"``, ``"Gi"``, ``"Gf"``) or an inline ``{n, edges}`` object."""
    if isinstance(spec, str):
        return table1_graph(spec)
    return WeightedDigraph.from_dict(spec)
