import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maskgc.datagen import CausalDataset, GroundTruthGraph, lorenz96_truth, simulate_var
from maskgc.pruning import (PruneConfig, PruningError, fit_mlp, fit_ols, mlp_param_count,
                            ols_param_count, parent_sets, prune_report)


def sparse_var_dataset(n=6, t_len=1200, seed=0, n_parents=1, coef=0.4):
    r = np.random.default_rng(seed)
    a = np.eye(n, dtype=np.int64)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        a[i, r.choice(others, n_parents, replace=False)] = 1
    coefs = (coef * a)[None].astype(float)
    data = simulate_var(coefs, t_len, 1.0, r)
    return CausalDataset(data, GroundTruthGraph(a))


def test_parent_set_examples():
    assert parent_sets(np.zeros((3, 3), dtype=int)) == [[0], [1], [2]]
    assert parent_sets(np.eye(3, dtype=int)) == [[0], [1], [2]]
    assert parent_sets(np.ones((3, 3), dtype=int)) == [[0, 1, 2]] * 3
    assert [len(p) for p in parent_sets(lorenz96_truth(10))] == [4] * 10
    with pytest.raises(PruningError):
        parent_sets(np.array([[0, 0.5], [1, 0]]))
    with pytest.raises(PruningError):
        parent_sets(np.ones((2, 3)))


def test_ols_identity_parents_reduction():
    n = 10
    full = [list(range(n))] * n
    own = [[i] for i in range(n)]
    pr = 100 * (1 - ols_param_count(own, 1) / ols_param_count(full, 1))
    assert pr == pytest.approx(100 * (1 - 2 * n / (n * (n + 1))))
    assert pr == pytest.approx(81.818, abs=1e-3)


def test_mlp_param_count_by_hand():
    # |P|=4, lag 1, width 32: W1 4x32 + b1 32 + W2 32x1 + b2 1 = 193 per node
    assert mlp_param_count([[0, 1, 2, 3]] * 10, 1, 32) == 1930


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_reduction_depends_only_on_graph(n, seed):
    r = np.random.default_rng(seed)
    g = (r.random((n, n)) < 0.3).astype(int)
    ds_a = CausalDataset(r.normal(size=(60, n)))
    ds_b = CausalDataset(r.normal(size=(60, n)) * 5 + 3)
    a = prune_report(g, ds_a, ("ols",)).by_family()["ols"]
    b = prune_report(g, ds_b, ("ols",)).by_family()["ols"]
    assert a.pr == b.pr and a.pruned_params == b.pruned_params
    assert 0.0 <= a.pr <= 100.0


def test_full_graph_gives_zero_reduction():
    ds = sparse_var_dataset(t_len=200)
    rep = prune_report(np.ones((6, 6), dtype=int), ds, ("ols", "mlp"), PruneConfig(epochs=3))
    for rec in rep.records:
        assert rec.pr == 0.0
        assert rec.mse_r == pytest.approx(0.0, abs=1e-9)


def test_pruned_ols_on_true_parents_is_not_worse():
    ds = sparse_var_dataset(n=8, t_len=2000, seed=1)
    rep = prune_report(ds.truth.adjacency, ds, ("ols",)).by_family()["ols"]
    # noise floor: standard error of the held-out mean squared residual
    from maskgc.dataio import chronological_holdout, standardize, window_arrays
    tr, te = chronological_holdout(ds, 0.2)
    tr, stats = standardize(tr)
    te, _ = standardize(te, stats)
    vm, _ = fit_ols(tr, te, [list(range(8))] * 8, 1)
    resid_var = vm * np.sqrt(2.0 / window_arrays(te, 1).targets.size)
    assert rep.pruned_mse <= rep.vanilla_mse + 2 * resid_var


def test_family_order_does_not_matter():
    ds = sparse_var_dataset(t_len=150)
    g = ds.truth.adjacency
    cfg = PruneConfig(epochs=2)
    a = prune_report(g, ds, ("ols", "mlp"), cfg).to_dict()
    b = prune_report(g, ds, ("mlp", "ols"), cfg).to_dict()
    assert json.dumps(a) == json.dumps(b)


def test_mlp_is_deterministic_per_seed():
    ds = sparse_var_dataset(t_len=150)
    from maskgc.dataio import chronological_holdout
    tr, te = chronological_holdout(ds, 0.2)
    sets = parent_sets(ds.truth.adjacency)
    a = fit_mlp(tr, te, sets, 1, epochs=3, seed=4)
    b = fit_mlp(tr, te, sets, 1, epochs=3, seed=4)
    assert a == b


def test_errors():
    ds = CausalDataset(np.random.default_rng(0).normal(size=(15, 20)))
    with pytest.raises(PruningError, match="training rows"):
        prune_report(np.ones((20, 20), dtype=int), ds, ("ols",))
    ds = CausalDataset(np.random.default_rng(0).normal(size=(30, 4)))
    with pytest.raises(PruningError):
        prune_report(np.eye(3, dtype=int), ds, ("ols",))
    with pytest.raises(PruningError):
        prune_report(np.eye(4, dtype=int), ds, ("arimax",))


def test_report_outputs(tmp_path):
    ds = sparse_var_dataset(t_len=150)
    rep = prune_report(ds.truth.adjacency, ds, ("ols",))
    rep.save(tmp_path / "p.json")
    assert json.loads((tmp_path / "p.json").read_text())["records"][0]["family"] == "ols"
    lines = rep.table().splitlines()
    assert lines[0].split() == ["family", "vanilla_params", "pruned_params", "PR%",
                                "vanilla_mse", "pruned_mse", "MSE-R%"]
    assert len({len(ln) for ln in lines}) == 1
