"""Finite-difference checks of every tensor op and of the full objective.

Each op is wrapped in a scalar function and checked at random points of a
few sizes up to 16 x 16.  The objective check uses a fixed 8-node, 2-class,
2-shot episode and probes every parameter coordinate, except the gate
weight (1024 x 32), where a seeded subset covering every row and column is
probed to keep the check under a minute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import Graph
from .tensor import Tensor, gradcheck
from .trainer import TrainConfig, init_params, objective_function, sample_episode

TOLERANCE = 1e-5


def _weights(shape):
    return Tensor(np.linspace(-1.0, 1.0, int(np.prod(shape))).reshape(shape))


# name -> (scalar function of the inputs, input shapes for an m x n case)
OPS = {
    "matmul": (lambda a, b: T.frobenius_sq(T.matmul(a, b)), lambda m, n: [(m, n), (n, m)]),
    "transpose": (lambda a: T.tsum(T.mul(T.transpose(a), _weights(a.shape[::-1]))),
                  lambda m, n: [(m, n)]),
    "add": (lambda a, b: T.frobenius_sq(T.add(a, b)), lambda m, n: [(m, n)] * 2),
    "sub": (lambda a, b: T.frobenius_sq(T.sub(a, b)), lambda m, n: [(m, n)] * 2),
    "mul": (lambda a, b: T.frobenius_sq(T.mul(a, b)), lambda m, n: [(m, n)] * 2),
    "scale": (lambda a: T.frobenius_sq(T.scale(a, -1.7)), lambda m, n: [(m, n)]),
    "relu": (lambda a: T.frobenius_sq(T.relu(a)), lambda m, n: [(m, n)]),
    "sigmoid": (lambda a: T.frobenius_sq(T.sigmoid(a)), lambda m, n: [(m, n)]),
    "exp": (lambda a: T.tsum(T.exp(a)), lambda m, n: [(m, n)]),
    "log": (lambda a: T.tsum(T.log(a)), lambda m, n: [(m, n)]),
    "row_softmax": (lambda a: T.frobenius_sq(T.row_softmax(a)), lambda m, n: [(m, n)]),
    "row_log_softmax": (lambda a: T.frobenius_sq(T.row_log_softmax(a)), lambda m, n: [(m, n)]),
    "gather_rows": (lambda a: T.frobenius_sq(T.gather_rows(a, [0, a.shape[0] - 1, 0])),
                    lambda m, n: [(m, n)]),
    "mean_rows": (lambda a: T.frobenius_sq(T.mean_rows(a)), lambda m, n: [(m, n)]),
    "max_rows": (lambda a: T.frobenius_sq(T.max_rows(a)), lambda m, n: [(m, n)]),
    "sum": (lambda a: T.tsum(T.mul(a, a)), lambda m, n: [(m, n)]),
    "frobenius_sq": (T.frobenius_sq, lambda m, n: [(m, n)]),
    "reshape": (lambda a: T.frobenius_sq(T.matmul(T.reshape(a, (1, a.data.size)),
                                                  _weights((a.data.size, 1)))),
                lambda m, n: [(m, n)]),
    "concat_rows": (lambda a, b: T.frobenius_sq(T.sigmoid(T.concat_rows([a, b]))),
                    lambda m, n: [(m, n), (2, n)]),
    "gcn_normalize": (lambda a: T.frobenius_sq(T.matmul(T.gcn_normalize(a), _weights((a.shape[0], 2)))),
                      lambda m, n: [(m, m)]),
    "row_l2_normalize": (lambda a: T.tsum(T.mul(T.row_l2_normalize(a), _weights(a.shape))),
                         lambda m, n: [(m, n)]),
}

SIZES = ((1, 1), (3, 5), (16, 16))


def _point(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name in ("log", "gcn_normalize"):
        return np.abs(rng.normal(size=shape)) + 0.5
    x = rng.normal(size=shape)
    if name in ("relu", "max_rows"):
        x[np.abs(x) < 0.05] = 0.3  # away from the kink
        if name == "max_rows":
            x += np.linspace(0.0, 1.0, x.size).reshape(shape)
    return x


def check_op(name: str, m: int, n: int, rng: np.random.Generator) -> float:
    f, shapes = OPS[name]
    return gradcheck(f, [Tensor(_point(name, s, rng)) for s in shapes(m, n)])


def check_ops(seed: int = 0, sizes=SIZES) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    return {name: max(check_op(name, m, n, rng) for m, n in sizes) for name in OPS}


@dataclass
class ObjectiveInstance:
    graph: Graph
    episode: object
    params: object
    config: TrainConfig


def objective_instance(seed: int = 0, config: TrainConfig | None = None) -> ObjectiveInstance:
    """8 nodes in two 4-cycles joined by two edges, 4 features, 2 shots."""
    rng = np.random.default_rng(seed)
    A = np.zeros((8, 8))
    for i, j in [(0, 1), (1, 2), (2, 3), (0, 3), (4, 5), (5, 6), (6, 7), (4, 7), (3, 4), (1, 6)]:
        A[i, j] = A[j, i] = 1.0
    labels = np.repeat([0, 1], 4)
    g = Graph(A, rng.normal(size=(8, 4)), labels)
    cfg = config or TrainConfig(shots=2)
    params = init_params(4, cfg, rng)
    # nonzero gate bias so the bias path is exercised away from g = 0.5
    params["gate.b"] = 0.5 * rng.normal(size=params["gate.b"].shape)
    return ObjectiveInstance(g, sample_episode(g, 2, rng), params, cfg)


def gate_coords(shape, rng: np.random.Generator, extra: int = 1024) -> np.ndarray:
    rows, cols = shape
    cover = np.arange(rows) * cols + (np.arange(rows) * 7) % cols
    more = rng.choice(rows * cols, size=min(extra, rows * cols), replace=False)
    return np.unique(np.concatenate([cover, more]))


def check_objective(seed: int = 0, config: TrainConfig | None = None) -> dict[str, float]:
    """Max relative error per parameter of the full objective."""
    inst = objective_instance(seed, config)
    names = list(inst.params)
    f, values = objective_function(inst.graph, inst.episode, inst.params, inst.config, names)
    rng = np.random.default_rng(seed + 1)
    out = {}
    for i, name in enumerate(names):
        def fi(v, i=i):
            args = list(values)
            args[i] = v
            return f(*args)

        coords = None
        if name == "gate.w":
            coords = {0: gate_coords(values[i].shape, rng)}
        out[name] = gradcheck(fi, values[i], coords=coords)
    return out
