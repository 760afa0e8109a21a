"""Immutable undirected graphs, edge-list IO and the normalized connectivity operator."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

TRAIN, TEST, UNLABELED = 0, 1, 2


class GraphInputError(ValueError):
    """Raised for invalid node ids, empty graphs and malformed input files."""


class ParseError(GraphInputError):
    def __init__(self, path, lineno: int, line: str, reason: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}: {line.rstrip()!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Undirected graph with dense integer node ids ``0..num_nodes-1``.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``,
    sorted lexicographically. ``adjacency`` is the binary symmetric CSR
    matrix without self-loops.
    """

    num_nodes: int
    edges: np.ndarray
    adjacency: sp.csr_matrix
    node_labels: Optional[np.ndarray] = None
    label_mask: Optional[np.ndarray] = None

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[node]:a.indptr[node + 1]]

    def with_labels(self, labels, mask=None) -> "Graph":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (self.num_nodes,):
            raise GraphInputError(
                f"expected {self.num_nodes} labels, got shape {labels.shape}")
        if mask is None:
            mask = np.where(labels >= 0, TRAIN, UNLABELED)
        mask = np.asarray(mask, dtype=np.int8)
        return Graph(self.num_nodes, self.edges, self.adjacency,
                     _frozen(labels.copy()), _frozen(mask.copy()))


def build_graph(edge_list: Union[Iterable[Sequence[int]], np.ndarray], num_nodes: int,
                directed: bool = False) -> Graph:
    """Build a deduplicated, symmetrized graph.

    Both orientations and repeated edges collapse to one binary edge.
    Self-loops are dropped since the normalized operator adds its own.
    """
    if num_nodes <= 0:
        raise GraphInputError("num_nodes must be positive")
    e = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list,
                   dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        bad = e[(e < 0).any(axis=1) | (e >= num_nodes).any(axis=1)][0]
        raise GraphInputError(
            f"edge {tuple(int(x) for x in bad)} references a node outside 0..{num_nodes - 1}")
    if directed:
        log.warning("directed edge list symmetrized; the model treats graphs as undirected")
    loops = e[:, 0] == e[:, 1]
    if loops.any():
        log.warning("dropping %d self-loop(s)", int(loops.sum()))
        e = e[~loops]
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0) if e.size else e.reshape(0, 2)

    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(num_nodes, num_nodes))
    adj.sort_indices()
    adj.data[:] = 1.0
    return Graph(int(num_nodes), _frozen(e), adj)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` with ``source_degrees`` the diagonal of ``D``."""

    matrix: sp.csr_matrix
    source_degrees: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    d_hat = (g.degrees + 1).astype(np.float64)
    a = (g.adjacency + sp.identity(g.num_nodes, format="csr")).tocoo()
    # product form keeps (i, j) and (j, i) bit-identical
    vals = 1.0 / np.sqrt(d_hat[a.row] * d_hat[a.col])
    m = sp.csr_matrix((vals, (a.row, a.col)), shape=a.shape)
    m.sort_indices()
    return NormalizedAdjacency(m, _frozen(d_hat))


def _as_csr(op) -> sp.csr_matrix:
    if isinstance(op, NormalizedAdjacency):
        return op.matrix
    membership = getattr(op, "membership", None)
    if membership is not None:
        return membership
    if sp.issparse(op):
        return op.tocsr()
    raise TypeError(f"expected a sparse operator, got {type(op).__name__}")


def spmm(adj, dense: np.ndarray) -> np.ndarray:
    """Sparse-dense product for a normalized adjacency, a role membership or a raw CSR matrix."""
    m = _as_csr(adj)
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim == 1:
        dense = dense[:, None]
    if m.shape[1] != dense.shape[0]:
        raise ValueError(f"spmm dimension mismatch: {m.shape} x {dense.shape}")
    return np.asarray(m @ dense)


# -- files -----------------------------------------------------------------

def _is_header(tokens) -> bool:
    try:
        [int(t) for t in tokens]
        return False
    except ValueError:
        return True


def read_edge_list(path) -> np.ndarray:
    """One edge per line, two whitespace-separated integer ids; ``#`` lines are comments."""
    path = Path(path)
    edges = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tok = s.split()
            if len(tok) < 2:
                raise ParseError(path, lineno, line, "expected two node ids")
            try:
                edges.append((int(tok[0]), int(tok[1])))
            except ValueError:
                raise ParseError(path, lineno, line, "node ids must be integers") from None
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def read_labels(path) -> dict[int, int]:
    """``node_id<TAB>label_id`` per line. A single non-numeric first line is taken as a header."""
    path = Path(path)
    out: dict[int, int] = {}
    seen_data = False
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tok = s.split()
            if not seen_data and len(tok) == 2 and _is_header(tok) and lineno == 1:
                continue
            seen_data = True
            if len(tok) != 2:
                raise ParseError(path, lineno, line, "expected node_id and label_id")
            try:
                node, lab = int(tok[0]), int(tok[1])
            except ValueError:
                raise ParseError(path, lineno, line, "ids must be integers") from None
            if node in out and out[node] != lab:
                raise ParseError(path, lineno, line, f"conflicting label for node {node}")
            out[node] = lab
    return out


def write_edge_list(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")
