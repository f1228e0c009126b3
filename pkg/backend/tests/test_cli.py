"""
命令行入口
"""

import orjson
import pandas as pd
import pytest
from click.testing import CliRunner

from cli import main


@pytest.fixture
def runner():
    return CliRunner()


def only_run_dir(root, prefix):
    dirs = [p for p in root.iterdir() if p.name.startswith(prefix)]
    assert len(dirs) == 1
    return dirs[0]


def write_json(path, payload):
    path.write_bytes(orjson.dumps(payload))
    return str(path)


def test_curvature_on_c6(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "--no-registry", "curvature", "--graph", "ring", "--n", "6"])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(only_run_dir(tmp_path, "curvature-") / "curvature.csv")
    assert (frame["ricci"] == 0.0).all()


def test_gen_and_bad_spec(runner, tmp_path):
    spec = write_json(tmp_path / "spec.json", {"count": 3, "n_nodes_min": 8, "n_nodes_max": 9,
                                                "feature_dim": 3, "target": "clust-emph"})
    result = runner.invoke(main, ["--out", str(tmp_path / "out"), "--no-registry", "--seed", "4", "gen", spec])
    assert result.exit_code == 0, result.output
    manifest = orjson.loads((only_run_dir(tmp_path / "out", "gen-") / "dataset" / "manifest.json").read_bytes())
    assert manifest["spec"]["seed"] == 4
    assert len(manifest["instances"]) == 3

    bad = write_json(tmp_path / "bad.json", {"edge_prob_max": 1.5})
    result = runner.invoke(main, ["--out", str(tmp_path / "out"), "--no-registry", "gen", bad])
    assert result.exit_code == 1
    assert "edge_prob_max" in result.output


def test_train_replay_and_eval(runner, tmp_path):
    config = write_json(tmp_path / "run.json", {
        "dataset": {"count": 4, "n_nodes_min": 8, "n_nodes_max": 9, "feature_dim": 2, "target": "clust-emph"},
        "model": {"nu": 3, "layers": 1, "hidden_dim": 3, "enumeration_cap": 4},
        "epochs": 1,
    })
    out = tmp_path / "runs"
    result = runner.invoke(main, ["--out", str(out), "--no-registry", "train", config, "--epochs", "2"])
    assert result.exit_code == 0, result.output
    run_dir = only_run_dir(out, "train-")
    assert len(pd.read_csv(run_dir / "metrics.csv")) == 2

    replay = runner.invoke(main, ["--out", str(out), "--no-registry", "train", "--replay", str(run_dir)])
    assert replay.exit_code == 0, replay.output
    assert "metrics_identical=True" in replay.output

    evaluated = runner.invoke(main, ["--out", str(tmp_path / "eval"), "--no-registry", "eval",
                                     "--checkpoint", str(run_dir / "checkpoint.json"),
                                     "--dataset", str(run_dir / "dataset"), "--nu", "4"])
    assert evaluated.exit_code == 0, evaluated.output
    assert orjson.loads(evaluated.output.strip().splitlines()[-1])["nu"] == 3

    missing = runner.invoke(main, ["--out", str(tmp_path / "eval"), "--no-registry", "eval",
                                   "--checkpoint", str(tmp_path / "missing.json"),
                                   "--dataset", str(run_dir / "dataset")])
    assert missing.exit_code == 1


def test_train_requires_config(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "--no-registry", "train"])
    assert result.exit_code == 2


def test_probe_on_spine(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "--no-registry", "probe", "--spine-length", "8",
                                  "--spine-leaves", "2", "--layers", "2", "--hidden", "3", "--cheb-order", "1",
                                  "--cap", "0", "--profile"])
    assert result.exit_code == 0, result.output
    assert "zero outside reach: True" in result.output
    frame = pd.read_csv(only_run_dir(tmp_path, "probe-") / "probe.csv")
    outside = frame[frame["outside_reach"] == 1]
    assert len(outside) > 0 and (outside["sensitivity"] == 0.0).all()


def test_bench_writes_csv(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "--no-registry", "bench", "--n", "15",
                                  "--layer-counts", "1,2", "--reps", "2", "--hidden", "4", "--cap", "4"])
    assert result.exit_code == 0, result.output
    assert len(pd.read_csv(only_run_dir(tmp_path, "bench-") / "bench.csv")) == 6
    assert "ratio_at_max_layers[chebnet]" in result.output
    assert "ratio_at_max_layers[gcn]" in result.output


def test_curvature_with_registry(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "curvature", "--graph", "crossed-ring", "--n", "8"])
    assert result.exit_code == 0, result.output
    assert "12 edges" in result.output


def test_seed_baselines_and_checkpoint_profile(runner, tmp_path):
    config = write_json(tmp_path / "run.json", {
        "dataset": {"count": 4, "n_nodes_min": 8, "n_nodes_max": 9, "feature_dim": 2, "target": "clust-emph"},
        "model": {"nu": 3, "layers": 1, "hidden_dim": 3, "enumeration_cap": 4},
        "epochs": 1,
    })
    out = tmp_path / "runs"
    result = runner.invoke(main, ["--out", str(out), "--no-registry", "train", config,
                                  "--seeds", "0,1", "--baseline-models", "chebnet,gcn"])
    assert result.exit_code == 0, result.output
    assert "win_rate[chebnet]=" in result.output
    assert "win_rate[gcn]=" in result.output
    assert len(list((out / "gcn").glob("train-*"))) == 2

    bad = runner.invoke(main, ["--out", str(out), "--no-registry", "train", config,
                               "--seeds", "0", "--baseline-models", "many-body"])
    assert bad.exit_code == 2

    checkpoint = next(out.glob("train-*")) / "checkpoint.json"
    profiled = runner.invoke(main, ["--out", str(tmp_path / "probe"), "--no-registry", "probe", "--profile",
                                    "--checkpoint", str(checkpoint)])
    assert profiled.exit_code == 0, profiled.output
    frame = pd.read_csv(only_run_dir(tmp_path / "probe", "probe-") / "mixing.csv")
    assert (frame["n_models"] == 1).all()
    assert (frame["std_sensitivity"] == 0.0).all()
