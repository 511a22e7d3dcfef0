"""Graph container, GCN propagation matrix, node-pair similarities, the
per-class relational structure over support nodes, and label propagation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .tensor import stable_sigmoid

SIMILARITY_METHODS = ("top-k-cn", "jaccard", "adamic-adar", "pagerank")


@dataclass(frozen=True, eq=False)
class Graph:
    """One task graph: symmetric binary adjacency, features, labels."""

    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    graph_id: int = 0

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=np.float64)
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim == 1:
            X = X[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got {A.shape}")
        n = A.shape[0]
        if n == 0:
            raise ValueError("graph must have at least one node")
        if X.shape[0] != n or y.shape != (n,):
            raise ValueError(f"features {X.shape} / labels {y.shape} do not match n={n}")
        if not np.isin(A, (0.0, 1.0)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(A) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if y.min() < 0:
            raise ValueError("labels must be nonnegative class indices")
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> np.ndarray:
        """Upper-triangle edge list, shape (E, 2), sorted."""
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return np.stack([i, j], axis=1).astype(np.int64)

    @classmethod
    def from_edges(cls, n: int, edges, features, labels, graph_id: int = 0) -> "Graph":
        A = np.zeros((n, n))
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            A[e[:, 0], e[:, 1]] = 1.0
            A[e[:, 1], e[:, 0]] = 1.0
        return cls(A, features, labels, graph_id)

    @cached_property
    def propagation(self) -> np.ndarray:
        return normalize_adjacency(self)

    def hop_neighborhoods(self, k: int) -> np.ndarray:
        """Boolean matrix: entry (u, w) is True when 0 < dist(u, w) <= k."""
        cache = self.__dict__.setdefault("_hops", {})
        if k not in cache:
            step = (self.adjacency + np.eye(self.n)) > 0
            reach = step.copy()
            for _ in range(k - 1):
                reach = (reach.astype(np.float64) @ step) > 0
            np.fill_diagonal(reach, False)
            cache[k] = reach
        return cache[k]

    def personalized_pagerank(self, damping: float = 0.85, tol: float = 1e-8) -> np.ndarray:
        """Row u holds the PageRank vector with restarts at node u."""
        cache = self.__dict__.setdefault("_ppr", {})
        key = (damping, tol)
        if key not in cache:
            cache[key] = _personalized_pagerank(self.adjacency, damping, tol)
        return cache[key]


def normalize_adjacency(g: Graph) -> np.ndarray:
    """Symmetric GCN propagation D^{-1/2}(A + I)D^{-1/2}."""
    S = g.adjacency + np.eye(g.n)
    r = 1.0 / np.sqrt(S.sum(axis=1))
    P = r[:, None] * S * r[None, :]
    # exact symmetry regardless of rounding
    return np.triu(P) + np.triu(P, 1).T


def _personalized_pagerank(A: np.ndarray, damping: float, tol: float) -> np.ndarray:
    n = A.shape[0]
    deg = A.sum(axis=1)
    dangling = deg == 0
    T = np.divide(A, deg[:, None], out=np.zeros_like(A), where=~dangling[:, None])
    eye = np.eye(n)
    Pi = eye.copy()
    for _ in range(10_000):
        # mass sitting on a dangling node teleports back to the source
        back = Pi[:, dangling].sum(axis=1)
        new = (1 - damping) * eye + damping * (Pi @ T + np.diag(back))
        delta = np.abs(new - Pi).sum(axis=1).max()
        Pi = new
        if delta < tol:
            break
    return Pi


@dataclass(frozen=True)
class SimilarityConfig:
    """How support-node pairs are scored and thresholded.

    ``top_k=None`` means ``min(3, m - 1)`` for a support set of size m.
    """

    method: str = "top-k-cn"
    hop_k: int = 3
    top_k: int | None = None
    mu: float = 0.5
    mu0: float = 0.1

    def __post_init__(self):
        if self.method not in SIMILARITY_METHODS:
            raise ValueError(f"unknown similarity method {self.method!r}; "
                             f"expected one of {SIMILARITY_METHODS}")
        if self.hop_k < 1:
            raise ValueError("hop_k must be >= 1")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not self.mu0 < self.mu:
            raise ValueError(f"mu0 ({self.mu0}) must be smaller than mu ({self.mu})")


def similarity_matrix(g: Graph, nodes: Sequence[int], cfg: SimilarityConfig) -> np.ndarray:
    """Pairwise scores among ``nodes``; the diagonal is left at 0."""
    idx = np.asarray(nodes, dtype=np.intp)
    m = idx.size
    if cfg.method == "top-k-cn":
        R = g.hop_neighborhoods(cfg.hop_k)[idx].astype(np.float64)
        # N_k(u) excludes u, so u and v never count as their own common neighbour
        S = stable_sigmoid(R @ R.T)
    elif cfg.method == "jaccard":
        N = g.adjacency[idx]
        inter = N @ N.T
        sizes = N.sum(axis=1)
        union = sizes[:, None] + sizes[None, :] - inter
        S = np.divide(inter, union, out=np.zeros((m, m)), where=union > 0)
    elif cfg.method == "adamic-adar":
        deg = g.degrees
        # a common neighbour has degree >= 2, so the clip never changes a used weight
        w = np.where(deg > 1, 1.0 / np.log(np.maximum(deg, 2.0)), 0.0)
        N = g.adjacency[idx]
        S = stable_sigmoid((N * w[None, :]) @ N.T)
    else:
        Pi = g.personalized_pagerank()[np.ix_(idx, idx)]
        S = stable_sigmoid(0.5 * (Pi + Pi.T))
    S = np.array(S, dtype=np.float64)
    np.fill_diagonal(S, 0.0)
    return S


def similarity(g: Graph, u: int, v: int, cfg: SimilarityConfig) -> float:
    if u == v:
        raise ValueError("similarity of a node with itself is undefined")
    for x in (u, v):
        if not 0 <= x < g.n:
            raise IndexError(f"node {x} out of range for n={g.n}")
    return float(similarity_matrix(g, [u, v], cfg)[0, 1])


@dataclass(frozen=True, eq=False)
class RelationalStructure:
    node_ids: np.ndarray
    weights: np.ndarray

    @property
    def m(self) -> int:
        return int(self.node_ids.size)

    def propagation(self) -> np.ndarray:
        """D^{-1/2} W D^{-1/2}; the unit diagonal of W serves as self-loop."""
        r = 1.0 / np.sqrt(self.weights.sum(axis=1))
        return r[:, None] * self.weights * r[None, :]


def build_relational_structure(g: Graph, support_nodes: Sequence[int],
                               cfg: SimilarityConfig) -> RelationalStructure:
    """Weighted graph over one class's support nodes.

    Each node keeps its ``top_k`` best partners among those scoring at least
    ``mu`` (ties go to the lower position); kept pairs are symmetrized by
    union.  Every other off-diagonal entry is set to ``mu0``.
    """
    idx = np.asarray(support_nodes, dtype=np.int64).reshape(-1)
    m = idx.size
    if m == 0:
        raise ValueError("support set is empty")
    if np.unique(idx).size != m:
        raise ValueError("support nodes must be distinct")
    if m == 1:
        return RelationalStructure(idx, np.ones((1, 1)))
    S = similarity_matrix(g, idx, cfg)
    top_k = cfg.top_k if cfg.top_k is not None else min(3, m - 1)
    keep = np.zeros((m, m), dtype=bool)
    for i in range(m):
        cand = [j for j in range(m) if j != i and S[i, j] >= cfg.mu]
        cand.sort(key=lambda j: (-S[i, j], j))
        keep[i, cand[:top_k]] = True
    keep |= keep.T
    W = np.where(keep, S, cfg.mu0)
    np.fill_diagonal(W, 1.0)
    return RelationalStructure(idx, W)


@dataclass
class PropagationResult:
    predictions: np.ndarray
    scores: np.ndarray
    iterations: int
    converged: bool
    unlabeled_component: np.ndarray = field(repr=False)

    @property
    def warning(self) -> bool:
        """True when some component had no labeled node (its nodes get 0)."""
        return bool(self.unlabeled_component.any())


def label_propagation(g: Graph, support_nodes: Sequence[int], support_labels: Sequence[int],
                      num_classes: int | None = None, max_iters: int = 1000,
                      tol: float = 1e-9) -> PropagationResult:
    """Iterate Y <- Â Y, re-clamping labeled rows to one-hot each sweep."""
    nodes = np.asarray(support_nodes, dtype=np.int64)
    labs = np.asarray(support_labels, dtype=np.int64)
    if nodes.shape != labs.shape or nodes.size == 0:
        raise ValueError("need matching, nonempty support nodes and labels")
    K = int(num_classes if num_classes is not None else g.num_classes)
    missing = sorted(set(range(K)) - set(labs.tolist()))
    if missing:
        raise ValueError(f"no labeled node for classes {missing}")
    clamp = np.zeros((nodes.size, K))
    clamp[np.arange(nodes.size), labs] = 1.0
    P = g.propagation
    Y = np.zeros((g.n, K))
    Y[nodes] = clamp
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        new = P @ Y
        new[nodes] = clamp
        change = np.abs(new - Y).max()
        Y = new
        if change < tol:
            converged = True
            break
    _, comp = connected_components(g.adjacency, directed=False)
    labeled_comps = np.unique(comp[nodes])
    orphan = ~np.isin(comp, labeled_comps)
    Y[orphan] = 0.0
    # argmax returns the first maximum: ties go to the lower class
    return PropagationResult(np.argmax(Y, axis=1), Y, it, converged, orphan)
