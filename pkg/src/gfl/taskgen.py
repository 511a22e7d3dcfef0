"""Synthetic graph families: stochastic block models with class-dependent
Gaussian features, plus a versioned binary container for whole families.

Container layout (little-endian)::

    8 bytes   magic b"GFLDATA\\0"
    uint32    format version
    uint32    manifest length M
    M bytes   UTF-8 JSON manifest: format_version, config, splits, num_graphs
    records   one per graph:
                4 bytes  b"GREC"
                uint32   graph_id, n, num_edges, feature_dim
                int64    edges (num_edges x 2, i < j)
                float64  features (n x feature_dim)
                int64    labels (n)
                uint32   CRC-32 of everything after the record magic

Any inconsistency raises :class:`FormatError` naming the byte offset.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph

DATA_MAGIC = b"GFLDATA\x00"
RECORD_MAGIC = b"GREC"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class FamilyConfig:
    num_classes: int = 4
    nodes_per_class: tuple[int, int] = (20, 30)
    p_in: float = 0.08
    p_out: float = 0.01
    feature_dim: int = 8
    separation: float = 3.0
    noise: float = 1.0
    rotate: bool = True
    n_train: int = 40
    n_val: int = 5
    n_test: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes_per_class", tuple(int(v) for v in self.nodes_per_class))
        lo, hi = self.nodes_per_class
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if lo < 1 or hi < lo:
            raise ValueError(f"nodes_per_class range {self.nodes_per_class} yields empty blocks")
        if not 0 <= self.p_out < self.p_in <= 1:
            raise ValueError("need 0 <= p_out < p_in <= 1")
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.feature_dim < self.num_classes:
            raise ValueError("feature_dim must be at least num_classes")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("split counts must be positive")


@dataclass
class Family:
    train: list[Graph]
    val: list[Graph]
    test: list[Graph]
    config: FamilyConfig | None = None
    class_means: np.ndarray | None = field(default=None, repr=False)

    @property
    def graphs(self) -> list[Graph]:
        return self.train + self.val + self.test


def class_means(cfg: FamilyConfig, rng: np.random.Generator) -> np.ndarray:
    """Vertices of a regular simplex with pairwise distance ``separation``,
    placed in feature space by a random orthonormal map."""
    K, h = cfg.num_classes, cfg.feature_dim
    E = np.eye(K) - 1.0 / K
    E *= cfg.separation / np.sqrt(2.0)
    Q = random_orthogonal(h, rng)[:, :K]
    return E @ Q.T


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))[None, :]


def sbm_graph(sizes, p_in: float, p_out: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Adjacency and block labels for a stochastic block model."""
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = labels.size
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, 1)
    A = (upper | upper.T).astype(np.float64)
    return A, labels


def generate_family(cfg: FamilyConfig) -> Family:
    root = np.random.SeedSequence(cfg.seed)
    total = cfg.n_train + cfg.n_val + cfg.n_test
    mean_seq, *graph_seqs = root.spawn(1 + total)
    means = class_means(cfg, np.random.default_rng(mean_seq))
    lo, hi = cfg.nodes_per_class
    graphs = []
    for gid, seq in enumerate(graph_seqs):
        rng = np.random.default_rng(seq)
        sizes = rng.integers(lo, hi + 1, size=cfg.num_classes)
        A, labels = sbm_graph(sizes, cfg.p_in, cfg.p_out, rng)
        X = means[labels] + cfg.noise * rng.standard_normal((labels.size, cfg.feature_dim))
        if cfg.rotate:
            X = X @ random_orthogonal(cfg.feature_dim, rng).T
        perm = rng.permutation(labels.size)
        graphs.append(Graph(A[np.ix_(perm, perm)], X[perm], labels[perm], graph_id=gid))
    a, b = cfg.n_train, cfg.n_train + cfg.n_val
    return Family(graphs[:a], graphs[a:b], graphs[b:], cfg, means)


# ---------------------------------------------------------------------------
# serialization

def _config_to_json(cfg: FamilyConfig | None):
    if cfg is None:
        return None
    d = asdict(cfg)
    d["nodes_per_class"] = list(d["nodes_per_class"])
    return d


def _encode_graph(g: Graph) -> bytes:
    edges = g.edges()
    body = b"".join([
        struct.pack("<IIII", g.graph_id, g.n, edges.shape[0], g.features.shape[1]),
        np.ascontiguousarray(edges, dtype="<i8").tobytes(),
        np.ascontiguousarray(g.features, dtype="<f8").tobytes(),
        np.ascontiguousarray(g.labels, dtype="<i8").tobytes(),
    ])
    return RECORD_MAGIC + body + struct.pack("<I", zlib.crc32(body))


def save_family(family: Family, path) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": _config_to_json(family.config),
        "splits": {
            "train": [g.graph_id for g in family.train],
            "val": [g.graph_id for g in family.val],
            "test": [g.graph_id for g in family.test],
        },
        "num_graphs": len(family.graphs),
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for g in family.graphs:
            fh.write(_encode_graph(g))


def _take(raw: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(raw):
        raise FormatError(f"truncated {what} at offset {offset}")
    return raw[offset:offset + size]


def load_family(path) -> Family:
    raw = Path(path).read_bytes()
    if _take(raw, 0, 8, "magic") != DATA_MAGIC:
        raise FormatError("bad magic at offset 0")
    version, mlen = struct.unpack("<II", _take(raw, 8, 8, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} at offset 8")
    try:
        manifest = json.loads(_take(raw, 16, mlen, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupted manifest at offset 16: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"manifest declares unknown format_version "
                          f"{manifest.get('format_version')!r} at offset 16")
    offset = 16 + mlen
    by_id: dict[int, Graph] = {}
    for _ in range(int(manifest["num_graphs"])):
        start = offset
        if _take(raw, offset, 4, "record magic") != RECORD_MAGIC:
            raise FormatError(f"bad record magic at offset {offset}")
        offset += 4
        gid, n, ne, h = struct.unpack("<IIII", _take(raw, offset, 16, "record header"))
        size = 16 + 16 * ne + 8 * n * h + 8 * n
        body = _take(raw, offset, size, "record body")
        (crc,) = struct.unpack("<I", _take(raw, offset + size, 4, "record checksum"))
        if zlib.crc32(body) != crc:
            raise FormatError(f"checksum mismatch in record starting at offset {start}")
        pos = 16
        edges = np.frombuffer(body, "<i8", 2 * ne, pos).reshape(ne, 2)
        pos += 16 * ne
        X = np.frombuffer(body, "<f8", n * h, pos).reshape(n, h)
        pos += 8 * n * h
        y = np.frombuffer(body, "<i8", n, pos)
        try:
            by_id[gid] = Graph.from_edges(n, edges, X.copy(), y.copy(), graph_id=gid)
        except (ValueError, IndexError) as exc:
            raise FormatError(f"invalid graph in record at offset {start}: {exc}") from exc
        offset += size + 4
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} unexpected trailing bytes at offset {offset}")
    cfg = manifest.get("config")
    config = FamilyConfig(**cfg) if cfg is not None else None
    splits = manifest["splits"]
    try:
        pick = lambda ids: [by_id[i] for i in ids]  # noqa: E731
        return Family(pick(splits["train"]), pick(splits["val"]), pick(splits["test"]), config)
    except KeyError as exc:
        raise FormatError(f"split refers to missing graph {exc}") from exc
