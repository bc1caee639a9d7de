"""Causal pruning: forecast each variable from its discovered parents only.

Each target gets its own one-step-ahead model (OLS or a one-hidden-layer
MLP).  The vanilla variant sees every variable's history; the pruned variant
only sees ``P(i) = parents(i) + {i}``.  Reports parameter reduction (PR) and
test-MSE reduction (MSE-R) in percent.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import derive_rng
from .datagen import CausalDataset
from .dataio import chronological_holdout, standardize, window_arrays
from .training import Adam

RIDGE = 1e-8
FAMILIES = ("ols", "mlp")


class PruningError(ValueError):
    pass


def parent_sets(graph) -> list[list[int]]:
    """Row i lists the sources of target i, plus i itself, sorted."""
    g = np.asarray(graph)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise PruningError(f"graph must be square, got shape {g.shape}")
    if not np.all((g == 0) | (g == 1)):
        raise PruningError("graph entries must be 0 or 1")
    return [sorted(set(np.flatnonzero(g[i]).tolist()) | {i}) for i in range(g.shape[0])]


def _features(inputs: np.ndarray, parents: list[int]) -> np.ndarray:
    """(B, N, L) windows -> (B, |P| * L) design for one target."""
    return inputs[:, parents, :].reshape(len(inputs), -1)


def ols_param_count(sets: list[list[int]], lag: int) -> int:
    return sum(len(p) * lag + 1 for p in sets)


def mlp_param_count(sets: list[list[int]], lag: int, width: int) -> int:
    return sum(len(p) * lag * width + width + width + 1 for p in sets)


@dataclass
class FamilyRecord:
    family: str
    vanilla_params: int
    pruned_params: int
    pr: float
    vanilla_mse: float
    pruned_mse: float
    mse_r: float


def _record(family, vp, pp, vm, pm) -> FamilyRecord:
    return FamilyRecord(family, vp, pp, 100.0 * (1.0 - pp / vp), vm, pm, 100.0 * (vm - pm) / vm)


@dataclass
class PruneConfig:
    lag: int = 1
    holdout_fraction: float = 0.2
    hidden_width: int = 32
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0


@dataclass
class PruneReport:
    records: list[FamilyRecord]
    config: PruneConfig
    parent_set_sizes: list[int] = field(default_factory=list)

    def by_family(self) -> dict[str, FamilyRecord]:
        return {r.family: r for r in self.records}

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in sorted(self.records, key=lambda r: r.family)],
                "config": asdict(self.config), "parent_set_sizes": self.parent_set_sizes}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def table(self) -> str:
        head = ["family", "vanilla_params", "pruned_params", "PR%", "vanilla_mse", "pruned_mse", "MSE-R%"]
        rows = [[r.family, str(r.vanilla_params), str(r.pruned_params), f"{r.pr:.2f}",
                 f"{r.vanilla_mse:.6f}", f"{r.pruned_mse:.6f}", f"{r.mse_r:+.2f}"]
                for r in sorted(self.records, key=lambda r: r.family)]
        widths = [max(len(x) for x in col) for col in zip(head, *rows)]
        fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]) + "\n"


# -- OLS -------------------------------------------------------------------------

def _ols_fit_predict(x_tr, y_tr, x_te):
    z = np.hstack([x_tr, np.ones((len(x_tr), 1))])
    gram = z.T @ z + RIDGE * np.eye(z.shape[1])
    if np.linalg.matrix_rank(gram) < z.shape[1]:
        raise PruningError("rank-deficient OLS design even after ridge")
    beta = np.linalg.solve(gram, z.T @ y_tr)
    return np.hstack([x_te, np.ones((len(x_te), 1))]) @ beta


def fit_ols(train: CausalDataset, test: CausalDataset, sets: list[list[int]], lag: int) -> tuple[float, int]:
    """Per-node OLS with intercept; returns (test MSE averaged over nodes and rows, param count)."""
    wtr, wte = window_arrays(train, lag), window_arrays(test, lag)
    feats = max(len(p) * lag + 1 for p in sets)
    if len(wtr.targets) < feats:
        raise PruningError(f"{len(wtr.targets)} training rows for up to {feats} features")
    sq = 0.0
    for i, p in enumerate(sets):
        pred = _ols_fit_predict(_features(wtr.inputs, p), wtr.targets[:, i], _features(wte.inputs, p))
        sq += float(np.sum((pred - wte.targets[:, i]) ** 2))
    return sq / wte.targets.size, ols_param_count(sets, lag)


# -- MLP -------------------------------------------------------------------------

def fit_mlp(train: CausalDataset, test: CausalDataset, sets: list[list[int]], lag: int,
            hidden_width: int = 32, epochs: int = 100, seed: int = 0, learning_rate: float = 1e-3,
            batch_size: int = 32) -> tuple[float, int]:
    """One GELU hidden layer per node, trained with Adam; returns (test MSE, param count).

    All nodes train side by side: node i's first layer only sees the
    columns of P(i) (other inputs are zeroed), so its gradients and Adam
    state are exactly those of an isolated per-node model.
    """
    n = train.n_vars
    wtr, wte = window_arrays(train, lag), window_arrays(test, lag)
    rng = derive_rng(seed, "init")
    mask = np.zeros((n, n, lag))
    w1 = np.zeros((n, n * lag, hidden_width))
    for i, p in enumerate(sets):
        mask[i, p, :] = 1.0
        fan_in = len(p) * lag
        bound = math.sqrt(6.0 / (fan_in + hidden_width))
        w1[i][mask[i].reshape(-1) > 0] = rng.uniform(-bound, bound, size=(fan_in, hidden_width))
    mask = mask.reshape(n, 1, n * lag)
    b2 = math.sqrt(6.0 / (hidden_width + 1))
    params = {
        "W1": T.Tensor(w1, requires_grad=True),
        "b1": T.Tensor(np.zeros((n, 1, hidden_width)), requires_grad=True),
        "W2": T.Tensor(rng.uniform(-b2, b2, size=(n, hidden_width, 1)), requires_grad=True),
        "b2": T.Tensor(np.zeros((n, 1, 1)), requires_grad=True),
    }

    def forward(inputs):
        x = inputs.reshape(len(inputs), -1)[None] * mask  # (n, B, n*lag)
        h = T.gelu(T.add(T.matmul(x, params["W1"]), params["b1"]))
        out = T.add(T.matmul(h, params["W2"]), params["b2"])  # (n, B, 1)
        return T.transpose(T.reshape(out, (n, len(inputs))), (1, 0))

    opt = Adam(params, learning_rate)
    order_rng = derive_rng(seed, "shuffle")
    m = len(wtr.targets)
    for epoch in range(epochs):
        order = order_rng.permutation(m)
        for s in range(0, m, batch_size):
            idx = order[s:s + batch_size]
            for p in params.values():
                p.grad = None
            diff = T.sub(forward(wtr.inputs[idx]), wtr.targets[idx])
            loss = T.mean(T.square(diff))
            if not np.isfinite(loss.data):
                raise PruningError(f"non-finite MLP loss at epoch {epoch}")
            loss.backward()
            opt.step()
    with T.no_grad():
        pred = forward(wte.inputs).data
    return float(np.mean((pred - wte.targets) ** 2)), mlp_param_count(sets, lag, hidden_width)


def prune_report(graph, ds: CausalDataset, families=FAMILIES, cfg: PruneConfig | None = None) -> PruneReport:
    """Vanilla vs pruned forecasting on one chronological split (train-statistics standardization)."""
    cfg = cfg or PruneConfig()
    unknown = set(families) - set(FAMILIES)
    if unknown:
        raise PruningError(f"unknown model families {sorted(unknown)}")
    sets = parent_sets(graph)
    if len(sets) != ds.n_vars:
        raise PruningError(f"graph has {len(sets)} nodes but data has {ds.n_vars} variables")
    full = [list(range(ds.n_vars))] * ds.n_vars
    train, test = chronological_holdout(ds, cfg.holdout_fraction)
    train, stats = standardize(train)
    test, _ = standardize(test, stats)
    records = []
    for fam in sorted(set(families)):
        if fam == "ols":
            vm, vp = fit_ols(train, test, full, cfg.lag)
            pm, pp = fit_ols(train, test, sets, cfg.lag)
        else:
            kw = dict(hidden_width=cfg.hidden_width, epochs=cfg.epochs, seed=cfg.seed,
                      learning_rate=cfg.learning_rate, batch_size=cfg.batch_size)
            vm, vp = fit_mlp(train, test, full, cfg.lag, **kw)
            pm, pp = fit_mlp(train, test, sets, cfg.lag, **kw)
        records.append(_record(fam, vp, pp, vm, pm))
    return PruneReport(records, cfg, [len(p) for p in sets])
