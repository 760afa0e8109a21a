"""Structural features, topology-role discovery and role membership operators."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import Graph

log = logging.getLogger(__name__)

DEFAULT_HOPS = 2
DEFAULT_BINS = 12
DEFAULT_ROLES = 100
THRESHOLD_ORACLE_LIMIT = 2000


@dataclass(frozen=True)
class StructFeatures:
    matrix: np.ndarray
    hops: int
    description: str = "khop-degree-histogram"

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class RoleAssignment:
    """Non-overlapping node-to-role assignment.

    ``membership`` is the ``m x n`` row-normalized matrix (mean over members);
    ``sharing`` is the ``n x m`` 0/1 matrix that copies a role's embedding to
    each of its members.
    """

    num_roles: int
    member_of: np.ndarray
    membership: sp.csr_matrix
    sharing: sp.csr_matrix

    @property
    def num_nodes(self) -> int:
        return int(self.member_of.shape[0])

    def role_sizes(self) -> np.ndarray:
        return np.bincount(self.member_of, minlength=self.num_roles)


@dataclass(frozen=True)
class ThresholdAdjacency:
    matrix: sp.csr_matrix
    threshold: float


def _degree_bins(deg: np.ndarray, bins: int) -> np.ndarray:
    # bin b holds degrees in [2^b, 2^(b+1)); degree 0 gets -1 (no bin), overflow clamps
    b = np.full(deg.shape, -1, dtype=np.int64)
    pos = deg > 0
    b[pos] = np.minimum(np.floor(np.log2(deg[pos])).astype(np.int64), bins - 1)
    return b


def _shell_matrices(adj: sp.csr_matrix, hops: int) -> list[sp.csr_matrix]:
    """Boolean matrices whose row i marks the nodes exactly k hops from i, k = 0..hops."""
    n = adj.shape[0]
    step = (adj + sp.identity(n, format="csr")).astype(bool).tocsr()
    reach = sp.identity(n, format="csr", dtype=bool)
    shells = [reach]
    for _ in range(hops):
        nxt = (reach @ step).astype(bool).tocsr()
        shells.append((nxt.astype(np.int8) - reach.astype(np.int8)).astype(bool).tocsr())
        reach = nxt
    return shells


def extract_struct_features(g: Graph, hops: int = DEFAULT_HOPS,
                            bins: int = DEFAULT_BINS) -> StructFeatures:
    """Rooted k-hop degree-histogram profile per node.

    Column 0 is ``log(1 + degree)``; then for k = 0..hops a block of ``bins``
    counts of nodes exactly k hops away falling in each log2 degree bin,
    each block L1-normalized (empty blocks stay zero).
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    deg = g.degrees.astype(np.int64)
    n = g.num_nodes
    b = _degree_bins(deg, bins)
    has = b >= 0
    onehot = sp.csr_matrix((np.ones(int(has.sum())), (np.nonzero(has)[0], b[has])),
                           shape=(n, bins))
    blocks = [np.log1p(deg.astype(np.float64))[:, None]]
    for shell in _shell_matrices(g.adjacency, hops):
        counts = np.asarray((shell.astype(np.float64) @ onehot).todense())
        s = counts.sum(axis=1, keepdims=True)
        blocks.append(np.divide(counts, s, out=np.zeros_like(counts), where=s > 0))
    return StructFeatures(np.hstack(blocks), hops, f"khop-degree-histogram(hops={hops},bins={bins})")


# -- clustering -------------------------------------------------------------

def _sqdist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = _sqdist(x, x[idx])[:, 0]
    for _ in range(1, k):
        tot = d2.sum()
        if tot <= 0:
            break
        nxt = int(rng.choice(n, p=d2 / tot))
        idx.append(nxt)
        d2 = np.minimum(d2, _sqdist(x, x[[nxt]])[:, 0])
    return x[idx].copy()


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator, max_iters: int, tol: float):
    centroids = _kmeanspp(x, k, rng)
    for _ in range(max_iters):
        d = _sqdist(x, centroids)
        labels = d.argmin(1)
        new = np.empty_like(centroids)
        counts = np.bincount(labels, minlength=len(centroids))
        for j in range(len(centroids)):
            if counts[j]:
                new[j] = x[labels == j].mean(0)
            else:
                far = int(d[np.arange(len(x)), labels].argmax())
                new[j] = x[far]
                labels[far] = j
        shift = np.sqrt(((new - centroids) ** 2).sum(1)).max()
        centroids = new
        if shift < tol:
            break
    labels = _sqdist(x, centroids).argmin(1)
    inertia = float(((x - centroids[labels]) ** 2).sum())
    return labels, centroids, inertia


def kmeans_labels(x: np.ndarray, k: int, seed: int = 0, max_iters: int = 300,
                  tol: float = 1e-8, n_init: int = 10) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` restarts.

    Returns ``(labels, centroids, inertia)``. ``k`` is clamped to the number of
    distinct rows. Empty clusters are re-seeded at the point farthest from its
    centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    if k < 1 or n_init < 1:
        raise ValueError("k and n_init must be >= 1")
    distinct = np.unique(x, axis=0).shape[0]
    if k > distinct:
        log.warning("kmeans: k=%d exceeds %d distinct rows; clamping", k, distinct)
        k = distinct
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(x, k, rng, max_iters, tol)
        if best is None or run[2] < best[2]:
            best = run
    return best


def kmeans(features: StructFeatures, k: int = DEFAULT_ROLES, seed: int = 0,
           max_iters: int = 300, tol: float = 1e-8, n_init: int = 10) -> RoleAssignment:
    labels, _, _ = kmeans_labels(features.matrix, k, seed, max_iters, tol, n_init)
    return build_membership(labels)


def build_membership(member_of) -> RoleAssignment:
    """Compact role ids (dropping empty roles) and build both role operators."""
    member_of = np.asarray(member_of, dtype=np.int64)
    if member_of.ndim != 1 or member_of.size == 0:
        raise ValueError("member_of must be a non-empty 1-D array")
    if member_of.min() < 0:
        raise ValueError("every node needs a role")
    _, dense = np.unique(member_of, return_inverse=True)
    dense = dense.astype(np.int64)
    n = dense.size
    m = int(dense.max()) + 1
    sizes = np.bincount(dense, minlength=m).astype(np.float64)
    nodes = np.arange(n)
    membership = sp.csr_matrix((1.0 / sizes[dense], (dense, nodes)), shape=(m, n))
    sharing = sp.csr_matrix((np.ones(n), (nodes, dense)), shape=(n, m))
    membership.sort_indices()
    sharing.sort_indices()
    dense.setflags(write=False)
    return RoleAssignment(m, dense, membership, sharing)


def discover_roles(g: Graph, k: int = DEFAULT_ROLES, hops: int = DEFAULT_HOPS,
                   bins: int = DEFAULT_BINS, seed: int = 0) -> tuple[RoleAssignment, StructFeatures]:
    feats = extract_struct_features(g, hops, bins)
    return kmeans(feats, k, seed), feats


# -- threshold oracle -----------------------------------------------------

def cosine_similarity(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=1)
    safe = np.where(norm == 0, 1.0, norm)
    u = x / safe[:, None]
    return u @ u.T


def build_threshold_adjacency(features: StructFeatures, tau: float,
                              limit: Optional[int] = THRESHOLD_ORACLE_LIMIT) -> ThresholdAdjacency:
    """Augmented-path adjacency: connect i != j when cosine similarity >= tau.

    Quadratic in the number of nodes, so it refuses graphs above ``limit``.
    """
    n = features.num_nodes
    if limit is not None and n > limit:
        raise ValueError(
            f"threshold adjacency is O(n^2); {n} nodes exceeds the limit of {limit}. "
            "Use role-based convolution (kmeans + build_membership) instead.")
    sim = cosine_similarity(features.matrix)
    a = sim >= tau
    a = a & a.T
    np.fill_diagonal(a, False)
    m = sp.csr_matrix(a.astype(np.float64))
    m.sort_indices()
    return ThresholdAdjacency(m, float(tau))
