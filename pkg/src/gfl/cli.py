"""Command-line interface: ``gfl <command> [options]``.

Commands
--------
gen        generate a synthetic family and write the dataset container
train      meta-train; writes ``model.ckpt``, ``metrics.jsonl`` and ``config.json``
eval       evaluate a checkpoint on the meta-test split (with an LP baseline)
ablate     GFL against its four ablations plus LP and k-NN baselines
sweep      sensitivity over one axis: mu, similarity, distance or shots
gradcheck  finite-difference check of every op and of the full objective
embed      dump node embeddings of one graph to CSV

Every command accepts ``--config FILE`` (JSON, see :mod:`gfl.experiments`)
and repeated ``--set section.key=value`` overrides.  Text output starts with
a ``#`` header holding the resolved config; structured records go to
``<out-dir>/<command>.jsonl`` with the same header as their first record.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import checks
from .experiments import (SWEEP_AXES, ConfigError, Row, RunConfig, ablation_rows, eval_episodes,
                          format_table, load_data, load_run_config, lp_accuracy, metrics_digest,
                          run_training, sweep_rows)
from .models import encode, load_checkpoint, save_checkpoint
from .taskgen import FormatError, save_family
from .trainer import TrainingError, evaluate_episodes


def _header(command: str, cfg: RunConfig) -> dict:
    return {"command": command, "seed": cfg.train.seed, "family_seed": cfg.family.seed,
            "config": cfg.to_dict()}


class Output:
    """Aligned text to stdout, JSON records to ``<out_dir>/<command>.jsonl``."""

    def __init__(self, command: str, cfg: RunConfig, out_dir: Path, stream=None):
        self.stream = stream or sys.stdout
        out_dir.mkdir(parents=True, exist_ok=True)
        self.path = out_dir / f"{command}.jsonl"
        self.fh = open(self.path, "w")
        head = _header(command, cfg)
        self.fh.write(json.dumps({"header": head}, sort_keys=True) + "\n")
        self.text(f"# gfl {command} seed={cfg.train.seed} config={cfg.dumps()}")

    def text(self, line: str) -> None:
        print(line, file=self.stream)

    def record(self, rec: dict) -> None:
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self) -> None:
        self.fh.close()


def _rows_out(out: Output, rows: list[Row], title: str) -> None:
    out.text(format_table(rows, title))
    for r in rows:
        out.record(r.record())


def cmd_gen(args, cfg: RunConfig, out: Output) -> int:
    family = load_data(cfg)
    path = Path(args.out) if args.out else Path(args.out_dir) / "family.gfl"
    save_family(family, path)
    out.text(f"wrote {path}: {len(family.train)} train / {len(family.val)} val / "
             f"{len(family.test)} test graphs")
    out.record({"path": str(path), "train": len(family.train), "val": len(family.val),
                "test": len(family.test)})
    return 0


def cmd_train(args, cfg: RunConfig, out: Output) -> int:
    family = load_data(cfg, args.data)
    out_dir = Path(args.out_dir)
    head = json.dumps({"header": _header("train", cfg)}, sort_keys=True)
    with open(out_dir / "metrics.jsonl", "w") as log:
        log.write(head + "\n")
        result = run_training(family, cfg.train, log_file=log)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    save_checkpoint(result.params, out_dir / "model.ckpt",
                    {"config": cfg.to_dict(), "best_step": result.best_step})
    rec = {"checkpoint": str(out_dir / "model.ckpt"), "best_step": result.best_step,
           "best_val_acc": result.best_val, "metrics_sha256": metrics_digest(result)}
    out.text(f"best step {result.best_step}, val acc {result.best_val}, "
             f"metrics sha256 {rec['metrics_sha256']}")
    out.record(rec)
    return 0


def _need_checkpoint(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint", "this command needs a checkpoint")
    params, _ = load_checkpoint(args.checkpoint)
    return params


def cmd_eval(args, cfg: RunConfig, out: Output) -> int:
    params = _need_checkpoint(args)
    family = load_data(cfg, args.data)
    eps = eval_episodes(family, cfg.train.shots, cfg.eval, cfg.train.max_queries)
    rows = [Row("model", evaluate_episodes(eps, params, cfg.train)), Row("LP", lp_accuracy(eps))]
    _rows_out(out, rows, f"meta-test accuracy, {cfg.train.shots}-shot, {len(eps)} episodes")
    return 0


def cmd_ablate(args, cfg: RunConfig, out: Output) -> int:
    family = load_data(cfg, args.data)
    _rows_out(out, ablation_rows(family, cfg), "ablation study")
    return 0


def cmd_sweep(args, cfg: RunConfig, out: Output) -> int:
    family = load_data(cfg, args.data)
    values = None
    if args.values:
        values = [json.loads(v) if args.axis in ("mu", "shots") else v
                  for v in args.values.split(",")]
    _rows_out(out, sweep_rows(family, cfg, args.axis, values), f"sweep over {args.axis}")
    return 0


def cmd_gradcheck(args, cfg: RunConfig, out: Output) -> int:
    failed = 0
    results = [("op", k, v) for k, v in checks.check_ops(args.check_seed).items()]
    results += [("objective", k, v) for k, v in checks.check_objective(args.check_seed).items()]
    width = max(len(k) for _, k, _ in results)
    for kind, name, err in results:
        ok = err < checks.TOLERANCE
        failed += not ok
        out.text(f"{'PASS' if ok else 'FAIL'}  {kind:<9}  {name:<{width}}  max rel err {err:.3e}")
        out.record({"kind": kind, "name": name, "max_rel_error": float(err), "pass": bool(ok)})
    out.text(f"{len(results) - failed}/{len(results)} passed at tolerance {checks.TOLERANCE:g}")
    return 1 if failed else 0


def cmd_embed(args, cfg: RunConfig, out: Output) -> int:
    params = _need_checkpoint(args)
    family = load_data(cfg, args.data)
    graphs = getattr(family, args.split)
    if not 0 <= args.index < len(graphs):
        raise ConfigError("--index", f"{args.split} split has {len(graphs)} graphs")
    g = graphs[args.index]
    Z = encode(g, params).data
    path = Path(args.out) if args.out else Path(args.out_dir) / "embeddings.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "label"] + [f"z{j}" for j in range(Z.shape[1])])
        for i in range(g.n):
            w.writerow([i, int(g.labels[i])] + [repr(float(v)) for v in Z[i]])
    out.text(f"wrote {path}: {g.n} nodes x {Z.shape[1]} dims (graph {g.graph_id})")
    out.record({"path": str(path), "graph_id": g.graph_id, "nodes": g.n})
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "sweep": cmd_sweep, "gradcheck": cmd_gradcheck, "embed": cmd_embed}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfl", description="graph few-shot learning experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config entry (repeatable)")
    common.add_argument("--out-dir", default="runs", help="directory for outputs")
    common.add_argument("--workers", type=int, help="parallel episode workers (train.workers)")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset container; generated from the config if omitted")
    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--checkpoint", help="model checkpoint")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common])
    p.add_argument("--out", help="dataset path (default <out-dir>/family.gfl)")
    sub.add_parser("train", parents=[common, data])
    sub.add_parser("eval", parents=[common, data, ckpt])
    sub.add_parser("ablate", parents=[common, data])
    p = sub.add_parser("sweep", parents=[common, data])
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", help="comma-separated values replacing the axis defaults")
    p = sub.add_parser("gradcheck", parents=[common])
    p.add_argument("--check-seed", type=int, default=0)
    p = sub.add_parser("embed", parents=[common, data, ckpt])
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", help="CSV path (default <out-dir>/embeddings.csv)")
    return parser


def main(argv=None, stream=None) -> int:
    args = build_parser().parse_args(argv)
    err = sys.stderr
    try:
        overrides = list(args.set)
        if args.workers is not None:
            overrides.append(f"train.workers={args.workers}")
        cfg = load_run_config(args.config, overrides)
    except ConfigError as exc:
        print(f"gfl: config error in {exc.key}: {exc}", file=err)
        return 2
    except OSError as exc:
        print(f"gfl: cannot read config: {exc}", file=err)
        return 2
    out = Output(args.command, cfg, Path(args.out_dir), stream)
    try:
        return COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"gfl: config error in {exc.key}: {exc}", file=err)
        return 2
    except TrainingError as exc:
        print(f"gfl: numerical abort: {exc}", file=err)
        return 3
    except (FormatError, ValueError, OSError) as exc:
        print(f"gfl: {exc}", file=err)
        return 1
    finally:
        out.close()


if __name__ == "__main__":
    sys.exit(main())
