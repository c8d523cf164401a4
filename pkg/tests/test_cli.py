import json
import subprocess
import sys

import numpy as np
import pytest

from pgnn import cli
from pgnn.dataset import read_dataset_csv, read_split_json, read_trajectory_csv
from pgnn.errors import BlowUpError
from pgnn.forecast import read_forecast_csv, read_report_csv
from pgnn.network import load_model
from pgnn.trainer import read_loss_csv


def run(*args):
    return cli.main(list(args))


def test_configurations_count():
    assert len(cli.configurations("duffing")) == 7
    assert sum(len(cli.configurations(s)) for s in cli.SYSTEM_IDS) == 29


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"systems": ["lorenz"], "epochs": 7, "seed": 3}))
    args = cli.build_parser().parse_args(["train", "--config", str(path), "--seed", "9",
                                          "--ensemble", "4", "--out", str(tmp_path / "r")])
    cfg = cli.resolve_config(args)
    assert (cfg.systems, cfg.epochs, cfg.seed, cfg.ensemble_size) == (["lorenz"], 7, 9, 4)
    assert cfg.out_dir == str(tmp_path / "r")


def test_run_id_ignores_location():
    a = cli.RunConfig(out_dir="x", seed=1)
    b = cli.RunConfig(out_dir="y", seed=1, workers=3)
    assert a.run_id() == b.run_id() != cli.RunConfig(seed=2).run_id()


@pytest.mark.parametrize("args", [
    ["generate", "--systems", "pendulum"],
    ["generate", "--epochs", "0"],
    ["generate", "--ensemble", "1"],
])
def test_config_errors_exit_2(tmp_path, args):
    assert run(*args, "--out", str(tmp_path)) == 2


def test_bad_config_file_exit_2(tmp_path):
    (tmp_path / "c.json").write_text('{"systems": ["lorenz"], "colour": "red"}')
    assert run("generate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)) == 2
    (tmp_path / "d.json").write_text("{not json")
    assert run("generate", "--config", str(tmp_path / "d.json"), "--out", str(tmp_path)) == 2


def test_missing_inputs_exit_1(tmp_path, capsys):
    assert run("train", "--systems", "lorenz", "--out", str(tmp_path)) == 1
    assert "train.csv" in capsys.readouterr().err
    assert run("plot", "--out", str(tmp_path / "empty")) == 1


def test_generate_counts_and_determinism(tmp_path):
    out = tmp_path / "run"
    assert run("generate", "--systems", "lotka_volterra,lorenz", "--out", str(out)) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["datasets"]["lotka_volterra"]["points_per_trajectory"] == [4001] * 7
    assert m["datasets"]["lorenz"]["points_per_trajectory"] == [5001] * 6
    assert m["datasets"]["lorenz"]["n_pairs"] == 30000
    assert m["seed"] == 0
    first = {p: p.read_bytes() for p in (out / "data").rglob("*") if p.is_file()}
    assert run("generate", "--systems", "lotka_volterra,lorenz", "--out", str(out)) == 0
    assert first == {p: p.read_bytes() for p in (out / "data").rglob("*") if p.is_file()}


def test_blowup_recorded_per_ic(tmp_path, monkeypatch):
    real = cli.simulate
    calls = {"n": 0}

    def flaky(rhs, x0, *a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise BlowUpError("escaped", 3.5)
        return real(rhs, x0, *a, **k)

    monkeypatch.setattr(cli, "simulate", flaky)
    assert run("generate", "--systems", "lotka_volterra", "--out", str(tmp_path)) == 0
    entry = json.loads((tmp_path / "manifest.json").read_text())["datasets"]["lotka_volterra"]
    assert len(entry["errors"]) == 1 and "escaped" in entry["errors"][0]["error"]
    assert entry["n_trajectories"] == 6


@pytest.fixture(scope="module")
def duffing_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("duffing")
    rc = cli.main(["matrix", "--systems", "duffing", "--epochs", "1", "--ensemble", "2",
                   "--seed", "5", "--out", str(out)])
    assert rc == 0
    return out


def test_matrix_lists_all_ensembles(duffing_run):
    m = json.loads((duffing_run / "manifest.json").read_text())
    assert len(m["ensembles"]) == 7
    assert {(e["term"], e["layer"]) for e in m["ensembles"]} == \
        {("none", 0)} | {(t, l) for t in ("duf_x3", "duf_cos") for l in (1, 2, 3)}
    assert all(e["seeds"] == [5, 6] for e in m["ensembles"])
    assert m["seed"] == 5 and m["config"]["seed"] == 5 and len(m["run_id"]) == 12


def test_report_minimum_is_one(duffing_run):
    rows = read_report_csv(duffing_run / "report.csv")
    assert len(rows) == 7
    assert min(r["relative_rfmse"] for r in rows) == 1.0


def test_manifest_files_parse(duffing_run):
    m = json.loads((duffing_run / "manifest.json").read_text())
    for name, entry in m["datasets"].items():
        f = entry["files"]
        assert len(read_dataset_csv(duffing_run / f["train"], name, 0.01)) == entry["n_pairs"]
        read_split_json(duffing_run / f["split"])
        read_trajectory_csv(duffing_run / f["test"], 0.01)
    for e in m["ensembles"]:
        for p in e["files"]["models"]:
            assert load_model(duffing_run / p).injection.layer == e["layer"]
        for p in e["files"]["losses"]:
            assert len(read_loss_csv(duffing_run / p).val) == 1
        assert read_forecast_csv(duffing_run / e["files"]["forecast"])["mean"].shape[1] == 4
        json.loads((duffing_run / e["files"]["rfmse"]).read_text())


def test_plots_written(duffing_run):
    names = {p.name for p in (duffing_run / "plots").glob("*.svg")}
    assert {"duffing_loss_train.svg", "duffing_loss_val.svg", "duffing_none_forecast.svg",
            "duffing_duf_x3_L1_forecast.svg"} <= names
    assert len(names) == 9


def test_plot_subcommand_reruns(duffing_run):
    assert run("plot", "--systems", "duffing", "--seed", "5", "--epochs", "1", "--ensemble", "2",
               "--out", str(duffing_run)) == 0


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "pgnn", "generate", "--systems", "nope",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2 and "config error" in r.stderr
