"""Hierarchical graph representation and the gate that tailors the prototype
GNN weights to each graph.

Level 1 is the input graph itself.  Each transition r -> r+1 soft-assigns the
K^r level-r nodes to K^{r+1} communities, pools the adjacency as P^T A P and
the fused features as P^T FGNN(A, X), and reads out a level vector by mean
pooling.  The level vectors are aggregated (mean or attention) into one
graph vector, which drives an elementwise sigmoid gate on the PGNN weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import ModelParams, activate
from .tensor import Tensor

AGGREGATORS = ("mean", "attention")


@dataclass(frozen=True)
class HierarchyConfig:
    levels: int = 3
    communities: tuple[int, ...] = (8, 2)
    aggregator: str = "mean"
    fgnn_activation: str = "relu"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if len(self.communities) < self.levels - 1:
            raise ValueError(f"{self.levels} levels need {self.levels - 1} community counts")
        if any(c < 1 for c in self.communities):
            raise ValueError("community counts must be positive")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")


def _conv(adj, X, weight, activation="none") -> Tensor:
    if X.shape[1] != weight.shape[0]:
        raise T.ShapeError(f"hierarchy GNN: features {X.shape} do not match weight {weight.shape}")
    return activate(T.matmul(T.matmul(T.gcn_normalize(adj), X), weight), activation)


def assign(adj, X, weight) -> Tensor:
    """Row-softmax of the assignment GNN logits: a K^r x K^{r+1} matrix."""
    adj = adj if isinstance(adj, Tensor) else Tensor(adj)
    if adj.shape[0] != X.shape[0]:
        raise T.ShapeError(f"assign: adjacency {adj.shape} vs features {X.shape}")
    return T.row_softmax(_conv(adj, X, weight))


def fuse(adj, X, P: Tensor, weight, activation: str = "relu"):
    """Coarsen one level: returns (P^T A P, P^T FGNN(A, X), mean-pooled vector)."""
    adj = adj if isinstance(adj, Tensor) else Tensor(adj)
    if P.shape[0] != adj.shape[0]:
        raise T.ShapeError(f"fuse: assignment {P.shape} vs adjacency {adj.shape}")
    Pt = T.transpose(P)
    adj_next = T.matmul(T.matmul(Pt, adj), P)
    X_next = T.matmul(Pt, _conv(adj, X, weight, activation))
    return adj_next, X_next, T.mean_rows(X_next)


def hierarchical_representation(adjacency, features, params: ModelParams,
                                cfg: HierarchyConfig) -> list[Tensor]:
    """Level vectors h^1..h^R, each of shape (1, hidden)."""
    adj = Tensor(adjacency) if not isinstance(adjacency, Tensor) else adjacency
    X = features if isinstance(features, Tensor) else Tensor(features)
    levels = [T.mean_rows(_conv(adj, X, params["hier.fgnn0"], cfg.fgnn_activation))]
    for r in range(1, cfg.levels):
        P = assign(adj, X, params[f"hier.agnn{r}"])
        adj, X, h = fuse(adj, X, P, params[f"hier.fgnn{r}"], cfg.fgnn_activation)
        levels.append(h)
    return levels


def aggregate(levels: list[Tensor], aggregator: str = "mean", query: Tensor | None = None):
    """Combine level vectors into one graph vector.

    Returns ``(h, beta)`` where ``beta`` holds the level weights.  The
    attention weights are a softmax over the scores q^T h^r.
    """
    if not levels:
        raise ValueError("aggregate: no level vectors")
    H = T.concat_rows(levels) if len(levels) > 1 else levels[0]
    R = len(levels)
    if aggregator == "mean":
        return T.mean_rows(H), np.full(R, 1.0 / R)
    if aggregator == "attention":
        if query is None:
            raise ValueError("attention aggregator needs a query vector")
        beta = T.row_softmax(T.transpose(T.matmul(H, query)))
        return T.matmul(beta, H), beta.data.reshape(-1).copy()
    raise ValueError(f"unknown aggregator {aggregator!r}")


def gate_values(h: Tensor, gate_w: Tensor, gate_b: Tensor) -> Tensor:
    """sigmoid(W_g h + b_g) as a (1, P) row."""
    return T.sigmoid(T.add(T.matmul(h, T.transpose(gate_w)), gate_b))


def gate_modulate(h: Tensor, gate_w: Tensor, gate_b: Tensor, phi: Tensor):
    """Elementwise gate on the flattened PGNN weight; returns (phi_i, g)."""
    size = phi.data.size
    if gate_w.shape != (size, h.shape[1]) or gate_b.shape != (1, size):
        raise T.ShapeError(f"gate_modulate: gate shapes {gate_w.shape}, {gate_b.shape} "
                           f"do not fit phi {phi.shape} and h {h.shape}")
    g = gate_values(h, gate_w, gate_b)
    phi_i = T.reshape(T.mul(g, T.reshape(phi, (1, size))), phi.shape)
    return phi_i, g
