import json
import subprocess
import sys
import time

import pytest

from bearingda import cli
from bearingda import datastore as ds


def metrics_line(path):
    return [l for l in path.read_text().splitlines() if not l.startswith("#")]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["demo-data", "--seed", "0", "--output", str(out), "--seconds", "3"]) == 0
    assert cli.main(["generate", "--seed", "0", "--output", str(out), "--recordings",
                     str(out / "recordings.json"), "--per-class", "10"]) == 0
    return out


def test_generate_smoke_dataset(run_dir):
    src = ds.load_dataset(run_dir / "source")
    tgt = ds.load_dataset(run_dir / "target")
    assert len(src) == 40 and set(src.class_counts().values()) == {10}
    assert len(tgt) == 40
    assert src.provenance["config"]["seed"] == 0
    assert not set(src.provenance["source_healthy_ids"]) & set(src.provenance["target_healthy_ids"])


def test_missing_recordings_is_an_error(tmp_path, capsys):
    rc = cli.main(["generate", "--seed", "0", "--output", str(tmp_path), "--recordings",
                   str(tmp_path / "nope.json")])
    assert rc != 0
    assert "does not exist" in capsys.readouterr().err


def test_seed_is_mandatory(tmp_path, monkeypatch):
    monkeypatch.delenv("BEARINGDA_SEED", raising=False)
    assert cli.main(["demo-data", "--output", str(tmp_path)]) != 0


def test_train_smoke_is_fast_and_reproducible(run_dir, tmp_path):
    args = ["--seed", "1", "--output", str(run_dir), "--method", "proposed", "--epochs", "5"]
    assert cli.main(["preprocess", *args, "--csv"]) == 0
    t0 = time.perf_counter()
    assert cli.main(["train", *args]) == 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 60, elapsed
    first = metrics_line(run_dir / "metrics_proposed.txt")
    assert cli.main(["train", *args]) == 0
    assert metrics_line(run_dir / "metrics_proposed.txt") == first

    log_lines = (run_dir / "train_proposed.log").read_text().splitlines()
    assert log_lines[0].startswith("# config=")
    assert len(log_lines) == 6 and "seed=1" in log_lines[1]
    assert (run_dir / "mean_spectra.tsv").read_text().startswith("# config=")

    assert cli.main(["eval", *args]) == 0
    eval_lines = metrics_line(run_dir / "eval_model_proposed.txt")
    fields = dict(kv.split("=") for kv in eval_lines[0].split())
    train_fields = dict(kv.split("=") for kv in first[0].split())
    assert fields["balanced_accuracy"] == train_fields["balanced_accuracy"]
    conf = (run_dir / "confusion_model_proposed.tsv").read_text().splitlines()
    assert conf[1].split("\t")[0] == "truth" and len(conf) == 6


def test_sweep_marks_failed_cell_and_exits_nonzero(run_dir):
    # 1 % of 10 rolling-element samples keeps nothing, so that cell must fail
    rc = cli.main(["sweep", "--seed", "0", "--output", str(run_dir), "--epochs", "1",
                   "--levels", "1.0,0.01", "--seeds", "1", "--methods", "source-only"])
    assert rc == 1
    lines = metrics_line(run_dir / "sweep.tsv")
    header = lines[0].split("\t")
    rows = [dict(zip(header, l.split("\t"))) for l in lines[1:]]
    assert [r["status"] for r in rows] == ["ok", "failed"]
    assert "ParameterError" in rows[1]["error"]


def test_config_layering(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("seed: 5\ntrain:\n  epochs: 7\n  method: dann\noutput: from-file\n")
    args = cli.build_parser().parse_args(["train", "--config", str(cfg_file), "--epochs", "9"])
    cfg = cli.resolve_config(args, environ={"BEARINGDA_SEED": "11", "BEARINGDA_OUTPUT": "from-env"})
    assert cfg["seed"] == 11
    assert cfg["output"] == "from-env"
    assert cfg["train"]["epochs"] == 9
    assert cfg["train"]["method"] == "dann"
    assert cfg["train"]["batch_size"] == 128
    assert cli.train_config(cfg).epochs == 9


def test_config_file_errors(tmp_path):
    args = cli.build_parser().parse_args(["train", "--config", str(tmp_path / "missing.yaml")])
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(args, environ={})
    bad = tmp_path / "list.json"
    bad.write_text(json.dumps([1, 2]))
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(cli.build_parser().parse_args(["train", "--config", str(bad)]), environ={})


def test_parse_imbalance():
    assert cli.parse_imbalance("RollingElement=0.01,OuterRace=0.1") == {"RollingElement": 0.01, "OuterRace": 0.1}
    assert cli.parse_imbalance("table3")["InnerRace"] == 0.05


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bearingda.cli", "train", "--output", str(tmp_path)],
                          capture_output=True, text=True, env={"PATH": ""})
    assert proc.returncode == 2
    assert "seed is mandatory" in proc.stderr
