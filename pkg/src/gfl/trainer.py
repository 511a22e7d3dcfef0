"""Episodic meta-training, evaluation and the k-NN / label-propagation
baselines.

One training step samples a batch of meta-train graphs, draws an episode on
each, averages the per-graph objective (matching loss + gamma times the
reconstruction loss) over the batch and takes one optimizer step.  The
parameters with the best meta-validation accuracy are returned.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .graph import Graph, SimilarityConfig, build_relational_structure, label_propagation
from .hierarchy import HierarchyConfig, aggregate, gate_modulate, hierarchical_representation
from .models import ModelParams, decode_reconstruction_loss, encode
from .proto import (DISTANCES, POOLS, Episode, classify, distance, episode_loss,
                    graph_structured_prototype, mean_prototype, stack_prototypes)
from .tensor import Tensor

ABLATIONS = {
    "GFL": {},
    "M1a": {"mean_prototype": True},
    "M2a": {"no_gate": True},
    "M2b": {"flat_r1": True},
    "M3": {"no_reconstruction": True},
}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.01
    gamma: float = 1.0
    shots: int = 10
    batch_graphs: int = 4
    steps: int = 1500
    seed: int = 0
    optimizer: str = "adam"
    # ablations
    mean_prototype: bool = False
    no_gate: bool = False
    flat_r1: bool = False
    no_reconstruction: bool = False
    # relational structure
    sim_method: str = "top-k-cn"
    hop_k: int = 3
    top_k: int | None = None
    mu: float = 0.5
    mu0: float = 0.1
    # metric and prototype
    distance: str = "inner-product"
    pool: str = "mean"
    pgnn_activation: str = "none"
    # hierarchy and gate
    aggregator: str = "mean"
    levels: int = 3
    communities: tuple[int, ...] = (8, 2)
    fgnn_activation: str = "relu"
    hierarchy_input: str = "features"
    # architecture
    hidden: int = 32
    encoder: str = "gcn"
    decoder_propagate: bool = True
    # bookkeeping
    val_every: int = 25
    val_episodes: int = 4
    max_queries: int | None = None
    knn_k: int = 5
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "communities", tuple(int(c) for c in self.communities))
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.batch_graphs < 1 or self.steps < 0 or self.val_every < 1:
            raise ValueError("batch_graphs and val_every must be >= 1, steps >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.pool not in POOLS:
            raise ValueError(f"unknown pool {self.pool!r}")
        if self.hierarchy_input not in ("features", "embedding"):
            raise ValueError(f"unknown hierarchy_input {self.hierarchy_input!r}")
        if self.encoder not in ("gcn", "identity"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.encoder == "identity" and not self.mean_prototype:
            raise ValueError("the identity encoder only supports the mean prototype")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.similarity  # validates mu / mu0 / method
        self.hierarchy

    @property
    def similarity(self) -> SimilarityConfig:
        return SimilarityConfig(self.sim_method, self.hop_k, self.top_k, self.mu, self.mu0)

    @property
    def hierarchy(self) -> HierarchyConfig:
        levels = 1 if self.flat_r1 else self.levels
        return HierarchyConfig(levels, self.communities[: levels - 1], self.aggregator,
                               self.fgnn_activation)

    @property
    def uses_reconstruction(self) -> bool:
        return not self.no_reconstruction and self.encoder == "gcn"

    def with_ablation(self, name: str) -> "TrainConfig":
        return replace(self, **ABLATIONS[name])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["communities"] = list(d["communities"])
        return d


def init_params(in_dim: int, cfg: TrainConfig, rng: np.random.Generator) -> ModelParams:
    hcfg = cfg.hierarchy
    hier_in = cfg.hidden if cfg.hierarchy_input == "embedding" else in_dim
    return ModelParams.init(in_dim, rng, hidden=cfg.hidden, levels=hcfg.levels,
                            communities=hcfg.communities, hier_in_dim=hier_in)


# ---------------------------------------------------------------------------
# episodes

def sample_episode(g: Graph, shots: int, rng: np.random.Generator,
                   num_classes: int | None = None, max_queries: int | None = None) -> Episode:
    """N support nodes per class without replacement; the rest are queries."""
    K = g.num_classes if num_classes is None else num_classes
    support, query = [], []
    for k in range(K):
        nodes = np.flatnonzero(g.labels == k)
        if nodes.size < shots + 1:
            raise ValueError(f"class {k} of graph {g.graph_id} has {nodes.size} nodes; "
                             f"{shots}-shot episodes need at least {shots + 1}")
        s = np.sort(rng.choice(nodes, size=shots, replace=False))
        q = np.setdiff1d(nodes, s)
        if max_queries is not None and q.size > max_queries:
            q = np.sort(rng.choice(q, size=max_queries, replace=False))
        support.append(s)
        query.append(q)
    return Episode(g.graph_id, tuple(support), tuple(query))


# ---------------------------------------------------------------------------
# forward pass

@dataclass
class EpisodeOutput:
    loss: Tensor
    recon: Tensor | None
    objective: Tensor
    accuracy: float
    probs: np.ndarray
    predictions: np.ndarray
    beta: np.ndarray | None = None
    gate: np.ndarray | None = None


def _embeddings(g: Graph, params: ModelParams, cfg: TrainConfig) -> Tensor:
    if cfg.encoder == "identity":
        return Tensor(g.features)
    return encode(g, params)


def forward_episode(g: Graph, episode: Episode, params: ModelParams, cfg: TrainConfig,
                    fixed_gate: np.ndarray | None = None) -> EpisodeOutput:
    """Full pipeline for one episode.

    ``fixed_gate`` replaces the learned gate by the given values (used to
    check that disabling the gate equals a gate of ones).
    """
    Z = _embeddings(g, params, cfg)
    beta = gate = None
    if cfg.mean_prototype:
        protos = [mean_prototype(T.gather_rows(Z, s)) for s in episode.support]
    else:
        phi = params["pgnn.w"]
        if fixed_gate is not None:
            size = phi.data.size
            phi = T.reshape(T.mul(Tensor(np.reshape(fixed_gate, (1, size))),
                                  T.reshape(phi, (1, size))), phi.shape)
        elif not cfg.no_gate:
            X1 = Z if cfg.hierarchy_input == "embedding" else g.features
            levels = hierarchical_representation(g.adjacency, X1, params, cfg.hierarchy)
            h, beta = aggregate(levels, cfg.aggregator, params["gate.q"])
            phi, g_vals = gate_modulate(h, params["gate.w"], params["gate.b"], phi)
            gate = g_vals.data.reshape(-1).copy()
        protos = []
        for s in episode.support:
            structure = build_relational_structure(g, s, cfg.similarity)
            emb = T.gather_rows(Z, s)
            protos.append(graph_structured_prototype(structure, emb, phi,
                                                     cfg.pgnn_activation, cfg.pool))
    C = stack_prototypes(protos)
    Q = T.gather_rows(Z, episode.query_nodes)
    y = episode.query_labels
    loss, probs = episode_loss(Q, y, C, cfg.distance)
    recon = None
    objective = loss
    if cfg.uses_reconstruction:
        recon = decode_reconstruction_loss(g, Z, params["dec.w"], cfg.decoder_propagate)
        objective = T.add(loss, T.scale(recon, cfg.gamma))
    pred = classify(Q.data, C.data, cfg.distance)
    acc = float(np.mean(pred == y))
    return EpisodeOutput(loss, recon, objective, acc, probs, pred, beta, gate)


def objective_function(g: Graph, episode: Episode, params: ModelParams, cfg: TrainConfig,
                       names: Sequence[str] | None = None) -> tuple[Callable[..., Tensor], list[Tensor]]:
    """Return ``f(*tensors) -> objective`` over the named parameters, plus
    their current values; other parameters stay fixed."""
    names = list(params) if names is None else list(names)

    def f(*values):
        p = ModelParams()
        p.tensors.update(params.tensors)
        for name, v in zip(names, values):
            p.tensors[name] = v
        return forward_episode(g, episode, p, cfg).objective

    return f, [params[n] for n in names]


# ---------------------------------------------------------------------------
# optimizers

class SGD:
    def __init__(self, alpha: float):
        self.alpha = alpha

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            params[name] = params[name].data - self.alpha * g


class Adam:
    def __init__(self, alpha: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.alpha, self.beta1, self.beta2, self.eps = alpha, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m.get(name, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(name, 0.0) * b2 + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params[name] = params[name].data - self.alpha * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return SGD(cfg.alpha) if cfg.optimizer == "sgd" else Adam(cfg.alpha)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    best_step: int
    best_val: float | None
    final_params: ModelParams = field(repr=False, default=None)

    def log_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)


def _episode_grads(g, ep, params, cfg, names):
    out = forward_episode(g, ep, params, cfg)
    grads = T.grad(out.objective, [params[n] for n in names])
    return out, grads


def _map(fn, items, workers: int):
    if workers == 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def train(train_graphs: Sequence[Graph], cfg: TrainConfig, val_graphs: Sequence[Graph] = (),
          log_file=None) -> TrainResult:
    """Meta-train on ``train_graphs``; select by accuracy on ``val_graphs``.

    ``log_file`` (an open text handle) receives one JSON record per step.
    """
    if not train_graphs:
        raise ValueError("meta-train split is empty")
    train_graphs = list(train_graphs)
    init_seq, ep_seq, val_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_params(train_graphs[0].features.shape[1], cfg, np.random.default_rng(init_seq))
    names = list(params)
    opt = make_optimizer(cfg)
    rng = np.random.default_rng(ep_seq)
    K = max(g.num_classes for g in train_graphs)
    val_eps = sample_eval_episodes(val_graphs, cfg.shots, cfg.val_episodes,
                                   np.random.default_rng(val_seq), cfg.max_queries) if val_graphs else []
    best = params.copy()
    best_val, best_step = None, 0
    log: list[dict] = []
    B = min(cfg.batch_graphs, len(train_graphs))

    def emit(rec):
        log.append(rec)
        if log_file is not None:
            log_file.write(json.dumps(rec, sort_keys=True) + "\n")

    for step in range(1, cfg.steps + 1):
        batch = rng.choice(len(train_graphs), size=B, replace=False)
        items = []
        for i in batch:
            g = train_graphs[int(i)]
            items.append((g, sample_episode(g, cfg.shots, rng, K, cfg.max_queries), params, cfg, names))
        results = _map(_episode_grads, items, cfg.workers)
        total = {n: np.zeros(params[n].shape) for n in names}
        for _, grads in results:
            for n, gr in zip(names, grads):
                total[n] += gr
        for n in names:
            total[n] /= B
        loss = sum(o.loss.item() for o, _ in results) / B
        recon = (sum(o.recon.item() for o, _ in results) / B) if cfg.uses_reconstruction else None
        objective = sum(o.objective.item() for o, _ in results) / B
        acc = sum(o.accuracy for o, _ in results) / B
        if not (math.isfinite(objective) and all(np.all(np.isfinite(v)) for v in total.values())):
            raise TrainingError(f"non-finite loss or gradient at step {step} "
                                f"(loss={loss!r}, recon={recon!r})")
        opt.step(params, total)
        rec = {"step": step, "loss": loss, "recon_loss": recon, "objective": objective,
               "train_acc": acc, "val_acc": None}
        if val_eps and (step % cfg.val_every == 0 or step == cfg.steps):
            val = evaluate_episodes(val_eps, params, cfg).mean
            rec["val_acc"] = val
            if best_val is None or val > best_val:
                best_val, best_step, best = val, step, params.copy()
        emit(rec)
    if not val_eps:
        best, best_step = params.copy(), cfg.steps
    return TrainResult(best, log, best_step, best_val, params.copy())


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    mean: float
    ci: float
    accuracies: np.ndarray = field(repr=False)

    def __str__(self) -> str:
        return f"{100 * self.mean:.2f} ± {100 * self.ci:.2f}%"


def confidence_interval(acc: Sequence[float]) -> EvalResult:
    a = np.asarray(acc, dtype=np.float64)
    if a.size == 0:
        raise ValueError("no accuracies")
    ci = 1.96 * a.std(ddof=1) / np.sqrt(a.size) if a.size > 1 else 0.0
    return EvalResult(float(a.mean()), float(ci), a)


def sample_eval_episodes(graphs: Sequence[Graph], shots: int, per_graph: int,
                         rng: np.random.Generator, max_queries: int | None = None):
    K = max(g.num_classes for g in graphs)
    return [(g, sample_episode(g, shots, rng, K, max_queries))
            for g in graphs for _ in range(per_graph)]


def evaluate_episodes(episodes, params: ModelParams, cfg: TrainConfig) -> EvalResult:
    accs = _map(lambda g, ep: forward_episode(g, ep, params, cfg).accuracy, episodes, cfg.workers)
    return confidence_interval(accs)


def evaluate(graphs: Sequence[Graph], params: ModelParams, cfg: TrainConfig,
             episodes_per_graph: int = 10, seed: int | None = None) -> EvalResult:
    """Mean episode accuracy over ``graphs`` with a normal 95% interval."""
    rng = np.random.default_rng(cfg.seed + 7919 if seed is None else seed)
    eps = sample_eval_episodes(graphs, cfg.shots, episodes_per_graph, rng, cfg.max_queries)
    return evaluate_episodes(eps, params, cfg)


def knn_predict(support_emb: np.ndarray, support_labels: np.ndarray, query_emb: np.ndarray,
                k: int, kind: str = "inner-product") -> np.ndarray:
    """Majority vote over the k nearest supports; ties go to the lower class.
    Neighbour ordering is by distance, then by support position."""
    m = support_emb.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k={k} must lie in [1, {m}]")
    K = int(support_labels.max()) + 1
    preds = np.empty(query_emb.shape[0], dtype=np.int64)
    for i, q in enumerate(query_emb):
        d = np.array([distance(q, s, kind) for s in support_emb])
        nearest = np.argsort(d, kind="stable")[:k]
        votes = np.bincount(support_labels[nearest], minlength=K)
        preds[i] = int(np.argmax(votes))
    return preds


def knn_baseline(g: Graph, episode: Episode, params: ModelParams, k: int,
                 kind: str = "inner-product", cfg: TrainConfig | None = None) -> float:
    """Accuracy of k-NN over encoder embeddings of the support nodes."""
    Z = (_embeddings(g, params, cfg) if cfg is not None else encode(g, params)).data
    pred = knn_predict(Z[episode.support_nodes], episode.support_labels,
                       Z[episode.query_nodes], k, kind)
    return float(np.mean(pred == episode.query_labels))


def label_propagation_baseline(g: Graph, episode: Episode, max_iters: int = 1000,
                               tol: float = 1e-9) -> float:
    res = label_propagation(g, episode.support_nodes, episode.support_labels,
                            episode.num_classes, max_iters, tol)
    return float(np.mean(res.predictions[episode.query_nodes] == episode.query_labels))


def config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise KeyError(f"unknown TrainConfig keys: {sorted(unknown)}")
    return TrainConfig(**d)
