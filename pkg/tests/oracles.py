"""Independent reference implementations used as test oracles.

Written directly in numpy without the autodiff engine or the package's
model code.
"""

import math
from collections import deque

import numpy as np


def gcn_propagation(A):
    M = A + np.eye(A.shape[0])
    d = M.sum(axis=1)
    return M / np.sqrt(np.outer(d, d))


def protonet_forward(A, X, w1, w2, support, query, kind="inner-product"):
    """Plain prototypical network: GCN encoder, mean prototypes, softmax
    over negative distances.  Returns (loss, probs, predictions)."""
    P = gcn_propagation(A)
    Z = P @ np.maximum(P @ X @ w1, 0.0) @ w2
    C = np.array([Z[s].mean(axis=0) for s in support])
    qs = np.concatenate(query)
    y = np.concatenate([[k] * len(q) for k, q in enumerate(query)])
    Q = Z[qs]
    if kind == "cosine":
        Q = Q / np.linalg.norm(Q, axis=1, keepdims=True)
        C = C / np.linalg.norm(C, axis=1, keepdims=True)
    logits = Q @ C.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(y)), y].sum()
    return loss, np.exp(logp), logits.argmax(axis=1)


def knn_scan(S, labels, Q, k):
    """Brute-force k-NN under the negative inner product."""
    K = labels.max() + 1
    out = []
    for q in Q:
        order = sorted(range(len(S)), key=lambda i: (-(q @ S[i]), i))[:k]
        votes = [sum(labels[i] == c for i in order) for c in range(K)]
        out.append(max(range(K), key=lambda c: (votes[c], -c)))
    return np.array(out)


def bfs_dist(A, src):
    n = A.shape[0]
    dist = [math.inf] * n
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in range(n):
            if A[u, v] and dist[v] == math.inf:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def nbrs(A, u):
    return {v for v in range(A.shape[0]) if A[u, v]}


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


def common_hop_neighbors(A, u, v, k):
    du, dv = bfs_dist(A, u), bfs_dist(A, v)
    return [w for w in range(A.shape[0]) if w not in (u, v) and du[w] <= k and dv[w] <= k]


def oracle_similarity(g, u, v, cfg, squash=logistic):
    A = g.adjacency
    if cfg.method == "top-k-cn":
        return squash(len(common_hop_neighbors(A, u, v, cfg.hop_k)))
    if cfg.method == "jaccard":
        a, b = nbrs(A, u), nbrs(A, v)
        return len(a & b) / len(a | b) if a | b else 0.0
    if cfg.method == "adamic-adar":
        total = sum(1.0 / math.log(len(nbrs(A, w))) for w in nbrs(A, u) & nbrs(A, v))
        return squash(total)
    # personalized PageRank by a direct linear solve (graphs without isolated nodes)
    deg = A.sum(axis=1)
    Tm = A / deg[:, None]
    Pi = 0.15 * np.linalg.inv(np.eye(g.n) - 0.85 * Tm)
    return squash(0.5 * (Pi[u, v] + Pi[v, u]))


def oracle_structure(g, nodes, cfg, squash=logistic):
    """All pairs scored one at a time, thresholded, top-k per node, union."""
    m = len(nodes)
    S = {(i, j): oracle_similarity(g, nodes[i], nodes[j], cfg, squash)
         for i in range(m) for j in range(m) if i != j}
    k = cfg.top_k if cfg.top_k is not None else min(3, m - 1)
    kept = set()
    for i in range(m):
        ranked = sorted((j for j in range(m) if j != i and S[i, j] >= cfg.mu), key=lambda j: (-S[i, j], j))
        for j in ranked[:k]:
            kept.add((i, j))
            kept.add((j, i))
    W = np.ones((m, m))
    for (i, j), s in S.items():
        W[i, j] = s if (i, j) in kept else cfg.mu0
    return W
