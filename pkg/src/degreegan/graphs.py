"""Discrete and relaxed graph tensors, degree statistics and canonical forms."""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor


class InvalidGraphError(ValueError):
    pass


class EmptySetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GraphSample:
    """One-hot node matrix ``X`` (N x T) and adjacency tensor ``A`` (N x N x B).

    ``empty_type`` indexes the padding node type, ``no_edge_type`` the
    absent-edge type.
    """

    node_features: np.ndarray
    adjacency: np.ndarray
    empty_type: int
    no_edge_type: int

    @classmethod
    def from_types(
        cls,
        node_types: Sequence[int],
        edge_types: np.ndarray,
        n_node_types: int,
        n_edge_types: int,
        empty_type: int,
        no_edge_type: int,
    ) -> GraphSample:
        node_types = np.asarray(node_types, dtype=np.int64)
        edge_types = np.asarray(edge_types, dtype=np.int64)
        x = np.eye(n_node_types, dtype=np.uint8)[node_types]
        a = np.eye(n_edge_types, dtype=np.uint8)[edge_types]
        return cls(x, a, int(empty_type), int(no_edge_type))

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_node_types(self) -> int:
        return self.node_features.shape[1]

    @property
    def n_edge_types(self) -> int:
        return self.adjacency.shape[2]

    @functools.cached_property
    def node_types(self) -> np.ndarray:
        return np.argmax(self.node_features, axis=-1)

    @functools.cached_property
    def edge_types(self) -> np.ndarray:
        return np.argmax(self.adjacency, axis=-1)

    def permuted(self, perm: Sequence[int]) -> GraphSample:
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        p = np.asarray(perm)
        return GraphSample(
            self.node_features[p],
            self.adjacency[p][:, p],
            self.empty_type,
            self.no_edge_type,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphSample):
            return NotImplemented
        return (
            self.empty_type == other.empty_type
            and self.no_edge_type == other.no_edge_type
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.adjacency, other.adjacency)
        )

    def __hash__(self) -> int:
        return hash((self.node_features.tobytes(), self.adjacency.tobytes()))


@dataclass(frozen=True, eq=False)
class RelaxedGraph:
    """Simplex-valued graph tensors as emitted by the generator.

    ``nodes`` has shape (..., N, T) and ``adjacency`` (..., N, N, B); leading
    axes index a batch.
    """

    nodes: Tensor
    adjacency: Tensor
    empty_type: int
    no_edge_type: int

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.nodes.shape[:-2]


def check_graph(g: GraphSample) -> None:
    """Raise :class:`InvalidGraphError` if ``g`` breaks a one-hot graph invariant."""
    x, a = g.node_features, g.adjacency
    if x.ndim != 2 or a.ndim != 3 or a.shape[:2] != (x.shape[0], x.shape[0]):
        raise InvalidGraphError(f"inconsistent shapes X{x.shape} A{a.shape}")
    if not (0 <= g.empty_type < x.shape[1] and 0 <= g.no_edge_type < a.shape[2]):
        raise InvalidGraphError("empty/no-edge index out of range")
    if not np.isin(x, (0, 1)).all() or not (x.sum(axis=1) == 1).all():
        raise InvalidGraphError("node rows are not one-hot")
    if not np.isin(a, (0, 1)).all() or not (a.sum(axis=2) == 1).all():
        raise InvalidGraphError("adjacency fibers are not one-hot")
    if not np.array_equal(a, a.transpose(1, 0, 2)):
        raise InvalidGraphError("adjacency is not symmetric")
    e = g.edge_types
    if (np.diag(e) != g.no_edge_type).any():
        raise InvalidGraphError("self-loop on the diagonal")
    empty = g.node_types == g.empty_type
    if (e[empty] != g.no_edge_type).any():
        raise InvalidGraphError("edge incident to an empty node")


def check_relaxed(rg: RelaxedGraph, atol: float = 1e-6) -> None:
    x, a = rg.nodes.data, rg.adjacency.data
    for name, arr in (("nodes", x), ("adjacency", a)):
        if not np.isfinite(arr).all():
            raise InvalidGraphError(f"{name} has non-finite entries")
        if (arr < 0).any() or (arr > 1).any():
            raise InvalidGraphError(f"{name} has entries outside [0, 1]")
        if not np.allclose(arr.sum(axis=-1), 1.0, rtol=0, atol=atol):
            raise InvalidGraphError(f"{name} rows do not sum to 1")
    if not np.array_equal(a, np.swapaxes(a, -3, -2)):
        raise InvalidGraphError("adjacency is not exactly symmetric")


def average_node_degree(g: GraphSample) -> float:
    """Mean number of neighbours per non-empty node; bond order is not counted."""
    n_real = int((g.node_types != g.empty_type).sum())
    if n_real == 0:
        return 0.0
    edges = np.triu(g.edge_types != g.no_edge_type, k=1).sum()
    return 2.0 * float(edges) / n_real


def mean_degree_over_set(gs: Sequence[GraphSample]) -> float:
    if len(gs) == 0:
        raise EmptySetError("mean degree of an empty set")
    return float(np.mean([average_node_degree(g) for g in gs]))


# ------------------------------------------------------------ canonical form


def _refine(cells: list[list[int]], edges: np.ndarray) -> list[list[int]]:
    """Split ordered cells by neighbourhood signature until stable.

    Signatures only mention cell positions and edge types, so the result is
    invariant under relabelling and new cells keep a canonical order.
    """
    n = edges.shape[0]
    while True:
        cell_of = [0] * n
        for ci, cell in enumerate(cells):
            for v in cell:
                cell_of[v] = ci
        out: list[list[int]] = []
        for cell in cells:
            if len(cell) == 1:
                out.append(cell)
                continue
            sigs = {}
            for v in cell:
                row = edges[v]
                sigs[v] = tuple(sorted((cell_of[w], int(row[w])) for w in range(n) if w != v))
            for sig in sorted(set(sigs.values())):
                out.append([v for v in cell if sigs[v] == sig])
        if len(out) == len(cells):
            return out
        cells = out


def _twin_classes(cell: list[int], types: np.ndarray, edges: np.ndarray) -> list[int]:
    """One representative per class of interchangeable vertices in ``cell``.

    ``u`` and ``v`` are twins when swapping them is an automorphism; branching
    on either leads to the same set of leaf encodings.
    """
    n = edges.shape[0]
    reps: list[int] = []
    for v in cell:
        for u in reps:
            if types[u] != types[v]:
                continue
            others = [w for w in range(n) if w != u and w != v]
            if (edges[u, others] == edges[v, others]).all():
                break
        else:
            reps.append(v)
    return reps


def _encode(order: list[int], types: np.ndarray, edges: np.ndarray) -> bytes:
    o = np.asarray(order)
    sub = edges[np.ix_(o, o)]
    iu = np.triu_indices(len(o), k=1)
    return types[o].astype(np.uint8).tobytes() + sub[iu].astype(np.uint8).tobytes()


def _canonical_code(types: np.ndarray, edges: np.ndarray) -> bytes:
    n = len(types)
    initial = [[v for v in range(n) if types[v] == t] for t in sorted(set(types.tolist()))]
    best: list[bytes | None] = [None]

    def search(cells: list[list[int]]) -> None:
        cells = _refine(cells, edges)
        if len(cells) == n:
            code = _encode([c[0] for c in cells], types, edges)
            if best[0] is None or code < best[0]:
                best[0] = code
            return
        target = min(
            (k for k, c in enumerate(cells) if len(c) > 1), key=lambda k: (len(cells[k]), k)
        )
        cell = cells[target]
        for v in _twin_classes(cell, types, edges):
            rest = [w for w in cell if w != v]
            search(cells[:target] + [[v], rest] + cells[target + 1 :])

    search(initial)
    return best[0]


def canonicalize(g: GraphSample) -> bytes:
    """Byte string equal for two graphs iff they are isomorphic as labelled graphs."""
    header = struct.pack(
        "<HHHHH", g.n_nodes, g.n_node_types, g.n_edge_types, g.empty_type, g.no_edge_type
    )
    return header + _canonical_code(g.node_types, g.edge_types)


def percent_unique(gs: Sequence[GraphSample]) -> float:
    """Share (in percent) of distinct isomorphism classes in ``gs``."""
    if len(gs) == 0:
        raise EmptySetError("percent unique of an empty set")
    seen: dict[bytes, bytes] = {}
    forms = set()
    for g in gs:
        raw = g.node_features.tobytes() + g.adjacency.tobytes()
        form = seen.get(raw)
        if form is None:
            form = seen[raw] = canonicalize(g)
        forms.add(form)
    return 100.0 * len(forms) / len(gs)


# ------------------------------------------------------------ discretization


def discretize_arrays(
    nodes: np.ndarray, adjacency: np.ndarray, empty_type: int, no_edge_type: int
) -> tuple[np.ndarray, np.ndarray]:
    """Argmax node and edge types for a batch; returns integer type arrays.

    ``nodes`` is (b, N, T) and ``adjacency`` (b, N, N, B).  Ties go to the
    lowest index; only the upper triangle is read and then mirrored.
    """
    node_types = np.argmax(nodes, axis=-1)
    raw = np.argmax(adjacency, axis=-1)
    n = nodes.shape[-2]
    iu = np.triu_indices(n, k=1)
    edges = np.full(raw.shape, no_edge_type, dtype=np.int64)
    edges[:, iu[0], iu[1]] = raw[:, iu[0], iu[1]]
    edges[:, iu[1], iu[0]] = raw[:, iu[0], iu[1]]
    empty = node_types == empty_type
    edges[empty[:, :, None] | empty[:, None, :]] = no_edge_type
    return node_types, edges


def discretize(rg: RelaxedGraph) -> list[GraphSample]:
    """Hard one-hot graphs for every item of a (possibly unbatched) relaxed graph."""
    nodes, adj = rg.nodes.data, rg.adjacency.data
    single = nodes.ndim == 2
    if single:
        nodes, adj = nodes[None], adj[None]
    nodes = nodes.reshape((-1,) + nodes.shape[-2:])
    adj = adj.reshape((-1,) + adj.shape[-3:])
    node_types, edges = discretize_arrays(nodes, adj, rg.empty_type, rg.no_edge_type)
    t, b = nodes.shape[-1], adj.shape[-1]
    return [
        GraphSample.from_types(nt, et, t, b, rg.empty_type, rg.no_edge_type)
        for nt, et in zip(node_types, edges)
    ]


def stack_graphs(gs: Sequence[GraphSample]) -> tuple[np.ndarray, np.ndarray]:
    """Lift one-hot graphs to float batches (b, N, T) and (b, N, N, B)."""
    x = np.stack([g.node_features for g in gs]).astype(np.float64)
    a = np.stack([g.adjacency for g in gs]).astype(np.float64)
    return x, a
