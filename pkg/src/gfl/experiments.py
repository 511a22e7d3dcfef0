"""Run configuration and the experiment drivers shared by the command line
and the acceptance suite.

A run config is a JSON object with three sections::

    {"family": {...FamilyConfig...}, "train": {...TrainConfig...},
     "eval": {"episodes_per_graph": 4, "seed": 1000}}

Missing keys take the module defaults; unknown keys are errors.  Every
driver here trains through :func:`run_training`, so ablation and sweep rows
are produced by exactly the code path ``gfl train`` uses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .taskgen import Family, FamilyConfig, generate_family, load_family
from .trainer import (ABLATIONS, EvalResult, TrainConfig, TrainResult, confidence_interval,
                      evaluate_episodes, knn_baseline, label_propagation_baseline,
                      sample_eval_episodes, train)


class ConfigError(ValueError):
    """Bad run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class EvalConfig:
    episodes_per_graph: int = 4
    seed: int = 1000

    def __post_init__(self):
        if self.episodes_per_graph < 1:
            raise ValueError("episodes_per_graph must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    family: FamilyConfig = field(default_factory=FamilyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        fam = asdict(self.family)
        fam["nodes_per_class"] = list(fam["nodes_per_class"])
        return {"family": fam, "train": self.train.to_dict(), "eval": asdict(self.eval)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


SECTIONS = {"family": FamilyConfig, "train": TrainConfig, "eval": EvalConfig}


def _build(section: str, values: dict):
    cls = SECTIONS[section]
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        bad = next(iter(values), section)
        raise ConfigError(f"{section}.{_guess_key(str(exc), values) or bad}", str(exc)) from exc


def _guess_key(message: str, values: dict) -> str | None:
    for key in values:
        if key in message:
            return key
    return None


def config_from_mapping(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in data:
        if key not in SECTIONS:
            raise ConfigError(key, "unknown section")
        if not isinstance(data[key], dict):
            raise ConfigError(key, "section must be an object")
    parts = {name: _build(name, dict(data.get(name, {}))) for name in SECTIONS}
    return RunConfig(**parts)


def parse_override(text: str) -> tuple[str, str, Any]:
    """``section.key=value``; the value is read as JSON, else as a string."""
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    dotted, raw = text.split("=", 1)
    if "." not in dotted:
        raise ConfigError(dotted, "override key must be section.key")
    section, key = dotted.split(".", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


def load_run_config(path=None, overrides=()) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for text in overrides:
        section, key, value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(f"{section}.{key}", "unknown section")
        data.setdefault(section, {})[key] = value
    return config_from_mapping(data)


# ---------------------------------------------------------------------------
# drivers

def load_data(cfg: RunConfig, data_path=None) -> Family:
    if data_path is not None:
        return load_family(data_path)
    return generate_family(cfg.family)


# results keyed by (family object, config); a run is a pure function of both
_RUNS: dict = {}


def run_training(family: Family, tcfg: TrainConfig, log_file=None) -> TrainResult:
    """Meta-train on the family's train split, selecting on its val split.

    Without a log file, repeated calls with the same family object and
    config return the memoized result of the first call.
    """
    key = (id(family), tcfg)
    if log_file is None and key in _RUNS and _RUNS[key][0] is family:
        return _RUNS[key][1]
    result = train(family.train, tcfg, family.val, log_file=log_file)
    if log_file is None:
        _RUNS[key] = (family, result)
    return result


def clear_runs() -> None:
    _RUNS.clear()


def metrics_digest(result: TrainResult) -> str:
    return hashlib.sha256(result.log_lines().encode("utf-8")).hexdigest()


def eval_episodes(family: Family, shots: int, ecfg: EvalConfig, max_queries=None):
    rng = np.random.default_rng(ecfg.seed)
    return sample_eval_episodes(family.test, shots, ecfg.episodes_per_graph, rng, max_queries)


def lp_accuracy(episodes) -> EvalResult:
    return confidence_interval([label_propagation_baseline(g, ep) for g, ep in episodes])


def knn_accuracy(episodes, params, tcfg: TrainConfig) -> EvalResult:
    return confidence_interval([knn_baseline(g, ep, params, tcfg.knn_k, tcfg.distance, tcfg)
                                for g, ep in episodes])


@dataclass
class Row:
    name: str
    result: EvalResult
    digest: str | None = None
    extra: dict = field(default_factory=dict)

    def record(self) -> dict:
        rec = {"setting": self.name, "accuracy": self.result.mean, "ci95": self.result.ci,
               "episodes": int(self.result.accuracies.size)}
        if self.digest is not None:
            rec["metrics_sha256"] = self.digest
        rec.update(self.extra)
        return rec


def train_and_evaluate(family: Family, tcfg: TrainConfig, ecfg: EvalConfig, name: str,
                       episodes=None) -> tuple[Row, TrainResult]:
    res = run_training(family, tcfg)
    eps = episodes if episodes is not None else eval_episodes(family, tcfg.shots, ecfg,
                                                              tcfg.max_queries)
    return Row(name, evaluate_episodes(eps, res.params, tcfg), metrics_digest(res)), res


def ablation_rows(family: Family, cfg: RunConfig, baselines: bool = True) -> list[Row]:
    """GFL and its four ablations, then label propagation and k-NN on the
    embeddings of the mean-prototype model."""
    eps = eval_episodes(family, cfg.train.shots, cfg.eval, cfg.train.max_queries)
    rows = []
    for name in ABLATIONS:
        tcfg = cfg.train.with_ablation(name)
        row, res = train_and_evaluate(family, tcfg, cfg.eval, name, eps)
        rows.append(row)
        if baselines and name == "M1a":
            knn = Row("kNN", knn_accuracy(eps, res.params, tcfg), extra={"k": tcfg.knn_k})
    if baselines:
        rows.append(Row("LP", lp_accuracy(eps)))
        rows.append(knn)
    return rows


SWEEP_AXES = {
    "mu": ("mu", (0.5, 0.6, 0.7, 0.8)),
    "similarity": ("sim_method", ("top-k-cn", "jaccard", "adamic-adar", "pagerank")),
    "distance": ("distance", ("inner-product", "cosine")),
    "shots": ("shots", (3, 5, 10)),
}


def sweep_rows(family: Family, cfg: RunConfig, axis: str, values=None) -> list[Row]:
    """One trained-and-evaluated row per value of ``axis``; the row whose
    value equals the base config is flagged ``base``."""
    if axis not in SWEEP_AXES:
        raise ConfigError(axis, f"unknown sweep axis; choose from {sorted(SWEEP_AXES)}")
    key, default_values = SWEEP_AXES[axis]
    values = default_values if values is None else values
    base_value = getattr(cfg.train, key)
    rows = []
    for v in values:
        tcfg = replace(cfg.train, **{key: v})
        row, _ = train_and_evaluate(family, tcfg, cfg.eval, f"{key}={v}")
        row.extra = {"axis": axis, "value": v, "base": v == base_value}
        rows.append(row)
    return rows


def format_table(rows: list[Row], title: str) -> str:
    width = max([len(r.name) for r in rows] + [7])
    lines = [title, f"{'setting':<{width}}  {'acc %':>7}  {'± 95% CI':>8}"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {100 * r.result.mean:7.2f}  {100 * r.result.ci:8.2f}")
    return "\n".join(lines)
