import json

import numpy as np
import pytest

from maskgc.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def lorenz_dir(tmp_path):
    out = tmp_path / "gen"
    assert run("generate", "lorenz96", "--n", 10, "--f", 10, "--t", 250, "--seed", 1, "--out", out) == 0
    return out


def test_generate_lorenz_writes_three_files(lorenz_dir):
    names = sorted(p.name for p in lorenz_dir.iterdir())
    assert names == ["data.csv", "meta.json", "resolved_config.json", "truth.csv"]
    truth = np.loadtxt(lorenz_dir / "truth.csv", delimiter=",", skiprows=1)
    assert truth.sum() == 40


def test_generate_mixed_control_has_only_variance_edges(tmp_path):
    assert run("generate", "mixed", "--ratio", 1.0, "--t", 200, "--out", tmp_path) == 0
    rows = (tmp_path / "truth_edge_kind.csv").read_text().splitlines()[1:]
    kinds = [r.split(",") for r in rows]
    off = {k for i, r in enumerate(kinds) for j, k in enumerate(r) if i != j}
    assert off <= {"none", "variance"} and "variance" in off


def test_unknown_verb_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code != 0


def test_generate_validation_error_exits_nonzero(tmp_path, capsys):
    assert run("generate", "lorenz96", "--n", 3, "--out", tmp_path) == 1
    assert "error [generate]" in capsys.readouterr().err


def test_train_eval_prune_pipeline(lorenz_dir, tmp_path, capsys):
    data, truth = lorenz_dir / "data.csv", lorenz_dir / "truth.csv"
    before = data.read_bytes()
    tr = tmp_path / "train"
    assert run("train", "--data", data, "--truth", truth, "--set", "optimizer.epochs=2",
               "--set", "model.d_model=8", "--seed", 3, "--out", tr) == 0
    for name in ("checkpoint.json", "train_report.json", "adjacency.csv", "loss_curves.svg",
                 "resolved_config.json", "eval_report.json"):
        assert (tr / name).exists(), name
    resolved = json.loads((tr / "resolved_config.json").read_text())
    assert resolved["seed"] == 3 and resolved["model"]["d_model"] == 8
    ev = tmp_path / "eval"
    assert run("eval", "--scores", tr / "adjacency.csv", "--truth", truth, "--curves",
               "--heatmap", "--out", ev) == 0
    for name in ("eval_report.json", "eval_report_exclude.json", "roc.csv", "pr.csv",
                 "curves.svg", "adjacency.svg", "graph.csv"):
        assert (ev / name).exists(), name
    pr = tmp_path / "prune"
    assert run("prune", "--data", data, "--truth", truth, "--graph", tr / "adjacency.csv",
               "--families", "ols", "--out", pr) == 0
    doc = json.loads((pr / "prune_report.json").read_text())
    assert doc["records"][0]["family"] == "ols"
    assert (pr / "prune_table.txt").exists()
    assert data.read_bytes() == before  # inputs untouched


def test_rerun_of_resolved_config_is_identical(lorenz_dir, tmp_path):
    data = lorenz_dir / "data.csv"
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--data", data, "--set", "optimizer.epochs=1", "--set", "model.d_model=8",
               "--out", a) == 0
    assert run("train", "--data", data, "--config", a / "resolved_config.json", "--out", b) == 0
    assert (a / "adjacency.csv").read_text() == (b / "adjacency.csv").read_text()


def test_eval_missing_truth_file(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("a,b\n0.1,0.2\n0.3,0.4\n")
    assert run("eval", "--scores", tmp_path / "s.csv", "--truth", tmp_path / "none.csv",
               "--out", tmp_path / "o") == 1
    assert "not found" in capsys.readouterr().err


def test_cost_command(tmp_path, capsys):
    assert run("cost", "--n", 10, "--l", 5, "--out", tmp_path, "--sweep-l", 5, 50, 500, 2000) == 0
    doc = json.loads((tmp_path / "cost_report.json").read_text())
    assert abs(doc["param_count"] - 100_500) / 100_500 < 0.05
    assert (tmp_path / "sweep_lag.csv").exists() and (tmp_path / "sweep_lag.svg").exists()
    assert "R^2" in capsys.readouterr().out


def test_bad_override_reports_config_stage(lorenz_dir, tmp_path, capsys):
    assert run("train", "--data", lorenz_dir / "data.csv", "--set", "model.bogus=1",
               "--out", tmp_path) == 1
    assert "error" in capsys.readouterr().err


def test_sweep_and_ablate(lorenz_dir, tmp_path):
    data, truth = lorenz_dir / "data.csv", lorenz_dir / "truth.csv"
    common = ["--set", "optimizer.epochs=1", "--set", "model.d_model=8", "--set", "model.n_layers=1"]
    sw = tmp_path / "sweep"
    assert run("sweep", "--data", data, "--truth", truth, *common,
               "--grid", "optimizer.sparsity=0.001,0.1", "--out", sw) == 0
    assert len((sw / "sweep.csv").read_text().splitlines()) == 3
    ab = tmp_path / "ablate"
    assert run("ablate", "--data", data, "--truth", truth, *common, "--skip-two", "--out", ab) == 0
    rows = json.loads((ab / "ablation.json").read_text())
    assert [r["variant"] for r in rows] == ["baseline", "layerwise_masks", "decoupled_heads",
                                           "residual_target", "fixed_true_mask",
                                           "fixed_skip_two_mask"]
