import csv
import hashlib
import io
import json
from pathlib import Path

import pytest

from gfl.cli import main
from gfl.experiments import (ConfigError, load_data, load_run_config, metrics_digest,
                             parse_override, run_training)
from gfl.models import load_checkpoint
from gfl.taskgen import FamilyConfig
from gfl.trainer import TrainConfig

FIXTURES = Path(__file__).parent / "fixtures"
CONFIG = str(FIXTURES / "tiny_run.json")


def run(argv, tmp_path, name="out"):
    buf = io.StringIO()
    code = main(list(argv) + ["--config", CONFIG, "--out-dir", str(tmp_path / name)], stream=buf)
    return code, buf.getvalue()


def records(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


def test_defaults_match_module_defaults():
    cfg = load_run_config()
    assert cfg.family == FamilyConfig() and cfg.train == TrainConfig()


def test_overrides_are_json_literals():
    cfg = load_run_config(CONFIG, ["train.mu=0.7", "train.sim_method=jaccard", "family.seed=9"])
    assert cfg.train.mu == 0.7 and cfg.train.sim_method == "jaccard" and cfg.family.seed == 9
    assert parse_override("train.top_k=null") == ("train", "top_k", None)


@pytest.mark.parametrize("override,key", [
    ("train.bogus=1", "train.bogus"), ("nosuch.x=1", "nosuch.x"), ("train.alpha=-1", "train.alpha"),
    ("family.p_in=0.0", "family.p_in"),
])
def test_bad_config_exits_nonzero_naming_key(override, key, tmp_path, capsys):
    code = main(["train", "--set", override, "--out-dir", str(tmp_path)])
    assert code == 2
    assert key in capsys.readouterr().err


def test_unknown_key_in_file_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"stepz": 3}}))
    with pytest.raises(ConfigError) as err:
        load_run_config(path)
    assert err.value.key == "train.stepz"


def test_gen_matches_golden_dataset(tmp_path):
    code, text = run(["gen", "--out", str(tmp_path / "d.gfl")], tmp_path)
    assert code == 0 and text.startswith("# gfl gen seed=0 config=")
    assert (tmp_path / "d.gfl").read_bytes() == (FIXTURES / "tiny_family.gfl").read_bytes()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    code, text = run(["train"], tmp, "run")
    assert code == 0
    return tmp / "run", text


def test_train_writes_golden_metrics(trained):
    out, text = trained
    assert (out / "metrics.jsonl").read_bytes() == (FIXTURES / "tiny_metrics.jsonl").read_bytes()
    header = records(out / "metrics.jsonl")[0]["header"]
    assert header["config"] == load_run_config(CONFIG).to_dict() and header["seed"] == 0
    _, meta = load_checkpoint(out / "model.ckpt")
    assert meta["config"] == header["config"]
    assert json.loads((out / "config.json").read_text()) == header["config"]


def test_resolved_config_reproduces_run(trained, tmp_path):
    out, _ = trained
    code = main(["train", "--config", str(out / "config.json"), "--out-dir", str(tmp_path)],
                stream=io.StringIO())
    assert code == 0
    assert (tmp_path / "metrics.jsonl").read_bytes() == (out / "metrics.jsonl").read_bytes()
    assert (tmp_path / "model.ckpt").read_bytes() == (out / "model.ckpt").read_bytes()


def test_eval_reports_table_and_records(trained, tmp_path):
    out, _ = trained
    code, text = run(["eval", "--checkpoint", str(out / "model.ckpt")], tmp_path)
    assert code == 0 and "model" in text and "LP" in text
    recs = records(tmp_path / "out" / "eval.jsonl")
    assert "header" in recs[0] and [r["setting"] for r in recs[1:]] == ["model", "LP"]


def test_eval_without_checkpoint_fails(tmp_path, capsys):
    code, _ = run(["eval"], tmp_path)
    assert code == 2 and "--checkpoint" in capsys.readouterr().err


def test_embed_matches_golden_csv(trained, tmp_path):
    out, _ = trained
    code, _ = run(["embed", "--checkpoint", str(out / "model.ckpt"), "--out",
                   str(tmp_path / "e.csv")], tmp_path)
    assert code == 0
    assert (tmp_path / "e.csv").read_bytes() == (FIXTURES / "tiny_embeddings.csv").read_bytes()
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0][:2] == ["node_id", "label"] and len(rows[0]) == 34


def test_ablate_rows_and_shared_training_path(trained, tmp_path):
    out, _ = trained
    code, text = run(["ablate"], tmp_path)
    assert code == 0
    recs = records(tmp_path / "out" / "ablate.jsonl")[1:]
    assert [r["setting"] for r in recs] == ["GFL", "M1a", "M2a", "M2b", "M3", "LP", "kNN"]
    for r in recs:
        assert r["accuracy"] >= 0.5  # chance for K = 2
    lines = (out / "metrics.jsonl").read_text().splitlines(keepends=True)[1:]
    assert recs[0]["metrics_sha256"] == hashlib.sha256("".join(lines).encode()).hexdigest()


def test_sweep_emits_one_row_per_setting(trained, tmp_path):
    code, text = run(["sweep", "--axis", "distance"], tmp_path)
    assert code == 0
    recs = records(tmp_path / "out" / "sweep.jsonl")[1:]
    assert [r["value"] for r in recs] == ["inner-product", "cosine"]
    assert [r["base"] for r in recs] == [True, False]
    code, _ = run(["sweep", "--axis", "mu", "--values", "0.5,0.9"], tmp_path, "mu")
    assert code == 0
    assert [r["value"] for r in records(tmp_path / "mu" / "sweep.jsonl")[1:]] == [0.5, 0.9]


def test_sweep_base_digest_equals_train(trained, tmp_path):
    out, _ = trained
    code, _ = run(["sweep", "--axis", "shots", "--values", "3"], tmp_path)
    assert code == 0
    rec = records(tmp_path / "out" / "sweep.jsonl")[1]
    lines = (out / "metrics.jsonl").read_text().splitlines(keepends=True)[1:]
    assert rec["base"] and rec["metrics_sha256"] == hashlib.sha256("".join(lines).encode()).hexdigest()


def test_memoized_run_equals_fresh_run():
    cfg = load_run_config(CONFIG)
    family = load_data(cfg)
    first = run_training(family, cfg.train)
    assert run_training(family, cfg.train) is first
    assert metrics_digest(first) == metrics_digest(run_training(load_data(cfg), cfg.train))


def test_gradcheck_command_passes(tmp_path):
    code, text = run(["gradcheck"], tmp_path)
    assert code == 0
    recs = records(tmp_path / "out" / "gradcheck.jsonl")[1:]
    assert all(r["pass"] for r in recs) and len(recs) > 20
    assert "FAIL" not in text


def test_training_abort_exit_code(tmp_path, capsys):
    code, _ = run(["train", "--set", "train.optimizer=sgd", "--set", "train.alpha=1e6"], tmp_path)
    assert code == 3 and "step" in capsys.readouterr().err


def test_corrupt_dataset_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.gfl"
    bad.write_bytes(b"not a dataset")
    code, _ = run(["train", "--data", str(bad)], tmp_path)
    assert code == 1 and "offset" in capsys.readouterr().err
