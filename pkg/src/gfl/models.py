"""Parameterized networks: GCN node encoder, prototype GNN, hierarchy GNNs,
reconstruction decoder, and the parameter registry with its checkpoint
container.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic  b"GFLCKPT\\0"
    uint32    format version (1)
    uint32    header length H
    H bytes   UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape"}, ...]}
    ...       float64 little-endian data of each tensor, in header order

Writing is a pure function of the parameter values, so identical
parameters give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .graph import Graph, RelationalStructure
from .tensor import Tensor

CKPT_MAGIC = b"GFLCKPT\x00"
CKPT_VERSION = 1
ACTIVATIONS = ("relu", "none")


def glorot(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return T.relu(x)
    if activation == "none":
        return x
    raise ValueError(f"unknown activation {activation!r}")


def gcn_layer(propagation, H, weight, activation: str = "none") -> Tensor:
    """activation(P H W) for a propagation matrix P."""
    H = H if isinstance(H, Tensor) else Tensor(H)
    if H.shape[1] != weight.shape[0]:
        raise T.ShapeError(f"gcn_layer: features {H.shape} do not match weight {weight.shape}")
    return activate(T.matmul(T.matmul(propagation, H), weight), activation)


class ModelParams:
    """Ordered registry of every learnable matrix.

    Names: ``enc.w1``, ``enc.w2`` (node encoder), ``pgnn.w`` (prototype GNN),
    ``dec.w`` (reconstruction decoder), ``hier.fgnn0`` (level-1 readout),
    ``hier.agnn{r}`` / ``hier.fgnn{r}`` (transition r -> r+1), ``gate.w``,
    ``gate.b`` and ``gate.q`` (attention query).
    """

    def __init__(self, tensors: "OrderedDict[str, Tensor] | None" = None):
        self.tensors: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (tensors or {}).items():
            self[name] = t

    @classmethod
    def init(cls, in_dim: int, rng: np.random.Generator, hidden: int = 32, levels: int = 3,
             communities: Sequence[int] = (8, 2), hier_in_dim: int | None = None) -> "ModelParams":
        if levels < 1:
            raise ValueError("levels must be >= 1")
        communities = tuple(int(c) for c in communities)
        if len(communities) < levels - 1:
            raise ValueError(f"{levels} levels need {levels - 1} community counts, got {communities}")
        communities = communities[: levels - 1]
        if any(c < 1 for c in communities) or any(
                a <= b for a, b in zip(communities, communities[1:])):
            raise ValueError(f"community counts must be positive and strictly decreasing: {communities}")
        hier_in = in_dim if hier_in_dim is None else hier_in_dim
        p = cls()
        p["enc.w1"] = glorot(rng, in_dim, hidden)
        p["enc.w2"] = glorot(rng, hidden, hidden)
        p["pgnn.w"] = glorot(rng, hidden, hidden)
        p["dec.w"] = glorot(rng, hidden, hidden)
        p["hier.fgnn0"] = glorot(rng, hier_in, hidden)
        d = hier_in
        for r, k_next in enumerate(communities, start=1):
            p[f"hier.agnn{r}"] = glorot(rng, d, k_next)
            p[f"hier.fgnn{r}"] = glorot(rng, d, hidden)
            d = hidden
        P = hidden * hidden
        p["gate.w"] = glorot(rng, P, hidden)
        p["gate.b"] = np.zeros((1, P))
        p["gate.q"] = glorot(rng, hidden, 1)
        return p

    def __setitem__(self, name: str, value) -> None:
        data = value.data if isinstance(value, Tensor) else value
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name} has non-finite entries")
        self.tensors[name] = Tensor(arr, grad_enabled=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def levels(self) -> int:
        return 1 + sum(1 for k in self.tensors if k.startswith("hier.agnn"))

    @property
    def hidden(self) -> int:
        return self.tensors["enc.w2"].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(OrderedDict((k, v.data.copy()) for k, v in self.tensors.items()))

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        if list(self) != list(other):
            return False
        return all(np.allclose(self[k].data, other[k].data, rtol=0, atol=atol) for k in self)


def save_checkpoint(params: ModelParams, path, meta: dict | None = None) -> None:
    header = {
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(t.shape)} for k, t in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic at offset 0)")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version} at offset 8")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    params = ModelParams()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(raw):
            raise ValueError(f"{path}: truncated data for {entry['name']} at offset {offset}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8,
                                              offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes at offset {offset}")
    return params, header["meta"]


# ---------------------------------------------------------------------------
# networks

def encode(g: Graph, params: ModelParams, features=None) -> Tensor:
    """Two GCN layers: Z = Â relu(Â X W1) W2."""
    X = g.features if features is None else features
    w1 = params["enc.w1"]
    if X.shape[1] != w1.shape[0]:
        raise T.ShapeError(f"encode: feature width {X.shape[1]} does not match "
                           f"layer-1 input width {w1.shape[0]}")
    P = g.propagation
    H = gcn_layer(P, X, w1, "relu")
    return gcn_layer(P, H, params["enc.w2"], "none")


def pgnn_forward(structure: RelationalStructure, support_embeddings: Tensor, weight: Tensor,
                 activation: str = "none") -> Tensor:
    """One GCN layer over the weighted relational graph of a support set."""
    if support_embeddings.shape[0] != structure.m:
        raise T.ShapeError(f"pgnn_forward: {support_embeddings.shape[0]} embeddings for "
                           f"a structure over {structure.m} nodes")
    return gcn_layer(structure.propagation(), support_embeddings, weight, activation)


def decoder_output(g: Graph, Z: Tensor, weight: Tensor, propagate: bool = True) -> Tensor:
    if propagate:
        return gcn_layer(g.propagation, Z, weight, "none")
    return T.matmul(Z, weight)


def decode_reconstruction_loss(g: Graph, Z: Tensor, weight: Tensor, propagate: bool = True) -> Tensor:
    """||A - U U^T||_F^2 with U the decoder GCN applied to Z."""
    if Z.shape[0] != g.n:
        raise T.ShapeError(f"decode_reconstruction_loss: Z has {Z.shape[0]} rows, graph has {g.n} nodes")
    U = decoder_output(g, Z, weight, propagate)
    return T.frobenius_sq(T.sub(g.adjacency, T.matmul(U, T.transpose(U))))
