"""Episodes, prototypes, distances and the episodic matching loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .graph import RelationalStructure
from .models import pgnn_forward
from .tensor import Tensor

DISTANCES = ("inner-product", "cosine")
POOLS = ("mean", "max")


@dataclass(frozen=True, eq=False)
class Episode:
    """Support/query split of one graph; ``support[k]`` and ``query[k]``
    hold the node indices of class k."""

    graph_id: int
    support: tuple[np.ndarray, ...]
    query: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.support) != len(self.query):
            raise ValueError("support and query must cover the same classes")
        if any(s.size == 0 for s in self.support):
            raise ValueError("every class needs at least one support node")
        s = np.concatenate(self.support)
        q = np.concatenate(self.query) if self.query else np.zeros(0, np.int64)
        if np.intersect1d(s, q).size:
            raise ValueError("support and query sets overlap")

    @property
    def num_classes(self) -> int:
        return len(self.support)

    @property
    def disjoint(self) -> bool:
        return True

    @property
    def support_nodes(self) -> np.ndarray:
        return np.concatenate(self.support)

    @property
    def support_labels(self) -> np.ndarray:
        return np.concatenate([np.full(s.size, k) for k, s in enumerate(self.support)])

    @property
    def query_nodes(self) -> np.ndarray:
        return np.concatenate(self.query)

    @property
    def query_labels(self) -> np.ndarray:
        return np.concatenate([np.full(q.size, k) for k, q in enumerate(self.query)])

    def check_labels(self, labels: np.ndarray) -> None:
        for k, (s, q) in enumerate(zip(self.support, self.query)):
            if np.any(labels[s] != k) or np.any(labels[q] != k):
                raise ValueError(f"episode bucket {k} holds nodes of another class")


def mean_prototype(support_embeddings: Tensor) -> Tensor:
    if support_embeddings.shape[0] == 0:
        raise ValueError("mean_prototype: no support embeddings")
    return T.mean_rows(support_embeddings)


def graph_structured_prototype(structure: RelationalStructure, support_embeddings: Tensor,
                               weight: Tensor, activation: str = "none",
                               pool: str = "mean") -> Tensor:
    rows = pgnn_forward(structure, support_embeddings, weight, activation)
    if pool == "mean":
        return T.mean_rows(rows)
    if pool == "max":
        return T.max_rows(rows)
    raise ValueError(f"unknown pool {pool!r}")


def distance(a, c, kind: str = "inner-product") -> float:
    """-<a, c> for the inner-product kind, -cos(a, c) for cosine."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64).reshape(-1)
    c = np.asarray(c.data if isinstance(c, Tensor) else c, dtype=np.float64).reshape(-1)
    if a.shape != c.shape:
        raise ValueError(f"distance: length mismatch {a.size} vs {c.size}")
    if kind == "inner-product":
        return -float(a @ c)
    if kind == "cosine":
        na, nc = np.linalg.norm(a), np.linalg.norm(c)
        if na == 0 or nc == 0:
            raise ValueError("cosine distance with a zero vector")
        return -float(a @ c) / (na * nc)
    raise ValueError(f"unknown distance {kind!r}")


def neg_distances(queries: Tensor, prototypes: Tensor, kind: str = "inner-product") -> Tensor:
    """(n_q, K) matrix of -d(query, prototype): the logits of the loss."""
    if queries.shape[1] != prototypes.shape[1]:
        raise T.ShapeError(f"neg_distances: widths {queries.shape} vs {prototypes.shape}")
    if kind == "inner-product":
        return T.matmul(queries, T.transpose(prototypes))
    if kind == "cosine":
        try:
            qn, cn = T.row_l2_normalize(queries), T.row_l2_normalize(prototypes)
        except T.TapeError as exc:
            raise ValueError("cosine distance with a zero vector") from exc
        return T.matmul(qn, T.transpose(cn))
    raise ValueError(f"unknown distance {kind!r}")


def stack_prototypes(prototypes: Sequence[Tensor]) -> Tensor:
    if len(prototypes) == 0:
        raise ValueError("empty prototype set")
    return T.concat_rows(list(prototypes)) if len(prototypes) > 1 else prototypes[0]


def episode_loss(query_embeddings: Tensor, query_labels, prototypes: Tensor,
                 kind: str = "inner-product"):
    """Summed cross-entropy of the softmax over -d; returns (loss, probs)."""
    y = np.asarray(query_labels, dtype=np.intp)
    K = prototypes.shape[0]
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"query label {int(y.max())} has no prototype among {K} classes")
    logp = T.row_log_softmax(neg_distances(query_embeddings, prototypes, kind))
    onehot = np.zeros(logp.shape)
    onehot[np.arange(y.size), y] = 1.0
    loss = T.scale(T.tsum(T.mul(logp, onehot)), -1.0)
    return loss, np.exp(logp.data)


def classify(query_embeddings, prototypes, kind: str = "inner-product") -> np.ndarray:
    """Index of the nearest prototype per query row; ties go to the lower
    class index."""
    Q = query_embeddings if isinstance(query_embeddings, Tensor) else Tensor(np.atleast_2d(query_embeddings))
    C = prototypes if isinstance(prototypes, Tensor) else Tensor(np.atleast_2d(prototypes))
    if C.shape[0] == 0:
        raise ValueError("empty prototype set")
    scores = neg_distances(Tensor(Q.data), Tensor(C.data), kind).data
    return np.argmax(scores, axis=1)
