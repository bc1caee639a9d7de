"""Optimization loop, fixed-mask training and hyperparameter sweeps."""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .config import RunConfig, derive_rng
from .datagen import CausalDataset, GroundTruthGraph
from .dataio import Standardizer, chronological_holdout, standardize, window_arrays
from .model import MaskedForecaster, NonFiniteLossError, loss_joint, prediction_loss

log = logging.getLogger(__name__)

FIXED_LOGIT = 100.0


class Adam:
    def __init__(self, params: dict[str, T.Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: dict[str, T.Tensor], lr: float, **_):
        self.params, self.lr = params, lr

    def step(self) -> None:
        for p in self.params.values():
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


def make_optimizer(params, opt_cfg):
    if opt_cfg.name == "sgd":
        return SGD(params, opt_cfg.learning_rate)
    return Adam(params, opt_cfg.learning_rate, opt_cfg.beta1, opt_cfg.beta2, opt_cfg.eps_opt)


@dataclass
class TrainReport:
    prediction_loss: list[float]
    sparsity: list[float]
    total_loss: list[float]
    wall_time: float
    adjacency: np.ndarray
    test_mse: float | None = None
    test_loss: float | None = None
    checkpoint: str | None = None
    standardizer: Standardizer | None = None
    model: MaskedForecaster | None = field(default=None, repr=False)
    config: RunConfig | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "prediction_loss": self.prediction_loss,
            "sparsity": self.sparsity,
            "total_loss": self.total_loss,
            "epochs": len(self.total_loss),
            "wall_time": self.wall_time,
            "adjacency": self.adjacency.tolist(),
            "test_mse": self.test_mse,
            "test_loss": self.test_loss,
            "checkpoint": self.checkpoint,
            "standardizer": self.standardizer.to_dict() if self.standardizer else None,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _prepare(ds: CausalDataset, cfg: RunConfig):
    train_ds, test_ds = ds, None
    if cfg.data.test_fraction > 0:
        train_ds, test_ds = chronological_holdout(ds, cfg.data.test_fraction)
    stats = None
    if cfg.data.standardize:
        train_ds, stats = standardize(train_ds)
        if test_ds is not None:
            test_ds, _ = standardize(test_ds, stats)
    return train_ds, test_ds, stats


def evaluate(model: MaskedForecaster, ds: CausalDataset, mask_override=None,
             batch_size: int = 1024) -> tuple[float, float]:
    """(MSE of the mean prediction, objective loss) over every window of ``ds``."""
    w = window_arrays(ds, model.cfg.lag)
    sq, obj, n = 0.0, 0.0, 0
    with T.no_grad():
        for i in range(0, len(w.targets), batch_size):
            x, y = w.inputs[i:i + batch_size], w.targets[i:i + batch_size]
            pred, _ = model.forward(x, training=False, mask_override=mask_override)
            sq += float(np.sum((pred.mu.data - y) ** 2))
            obj += float(prediction_loss(pred, y, model.cfg.objective).data) * y.size
            n += y.size
    return sq / n, obj / n


def train(ds: CausalDataset, cfg: RunConfig, frozen_mask: np.ndarray | None = None,
          hard_mask: np.ndarray | None = None, checkpoint_path: str | Path | None = None,
          progress: bool = False) -> TrainReport:
    """Jointly fit forecaster weights and the adjacency logits.

    ``frozen_mask`` pins theta to +/-100 logits realizing a binary mask (no
    gradient reaches it).  ``hard_mask`` bypasses the adjacency entirely and
    uses -1e9 logits for blocked pairs.
    """
    start = time.perf_counter()
    cfg = cfg.replace()
    if not cfg.model.n_vars:
        cfg.model.n_vars = ds.n_vars
    if cfg.model.n_vars != ds.n_vars:
        raise ValueError(f"config n_vars={cfg.model.n_vars} but dataset has {ds.n_vars} variables")
    cfg.validate()
    train_ds, test_ds, stats = _prepare(ds, cfg)

    model = MaskedForecaster(cfg.model, rng=derive_rng(cfg.seed, "init"))
    if frozen_mask is not None:
        mask = np.asarray(frozen_mask)
        if mask.shape != (ds.n_vars, ds.n_vars):
            raise ValueError(f"frozen mask shape {mask.shape} does not match {ds.n_vars} variables")
        logits = np.where(mask > 0, FIXED_LOGIT, -FIXED_LOGIT)
        model.params["theta"].data = np.broadcast_to(logits, model.params["theta"].shape).copy()
        model.freeze("theta")
    params = model.trainable()
    opt = make_optimizer(params, cfg.optimizer)
    drop_rng = derive_rng(cfg.seed, "dropout")
    shuffle_rng = derive_rng(cfg.seed, "shuffle")
    windows = window_arrays(train_ds, cfg.model.lag)
    n_samples = len(windows.targets)
    bs = cfg.optimizer.batch_size
    lam = cfg.optimizer.sparsity

    hist_pred, hist_sp, hist_tot = [], [], []
    step = 0
    for epoch in range(cfg.optimizer.epochs):
        order = shuffle_rng.permutation(n_samples)
        acc = np.zeros(3)
        for i in range(0, n_samples, bs):
            idx = order[i:i + bs]
            for p in params.values():
                p.grad = None
            pred, a_hats = model.forward(windows.inputs[idx], training=True, rng=drop_rng,
                                         mask_override=hard_mask)
            try:
                loss, terms = loss_joint(pred, windows.targets[idx], a_hats, lam, cfg.model)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"step {step} (epoch {epoch}): {exc}", exc.terms, step) from None
            loss.backward()
            opt.step()
            for name, p in params.items():
                if not np.all(np.isfinite(p.data)):
                    raise NonFiniteLossError(f"step {step}: parameter {name} became non-finite",
                                             terms, step)
            acc += len(idx) * np.array([terms["prediction"], terms["sparsity"], terms["total"]])
            step += 1
        acc /= n_samples
        hist_pred.append(float(acc[0]))
        hist_sp.append(float(acc[1]))
        hist_tot.append(float(acc[2]))
        if progress:
            log.info("epoch %d: pred=%.5f sparsity=%.4f total=%.5f", epoch, *acc)

    test_mse = test_loss = None
    if test_ds is not None:
        test_mse, test_loss = evaluate(model, test_ds, mask_override=hard_mask)
    report = TrainReport(hist_pred, hist_sp, hist_tot, time.perf_counter() - start,
                         model.adjacency_estimate(), test_mse, test_loss,
                         standardizer=stats, model=model, config=cfg)
    if checkpoint_path is not None:
        model.save(checkpoint_path)
        report.checkpoint = str(checkpoint_path)
    return report


def fixed_mask_train(ds: CausalDataset, cfg: RunConfig, frozen_mask) -> TrainReport:
    """Train with the adjacency locked to a binary mask; reports held-out MSE.

    Defaults to a 20% chronological test split when the config has none.
    """
    if isinstance(frozen_mask, GroundTruthGraph):
        frozen_mask = frozen_mask.adjacency
    if cfg.data.test_fraction == 0:
        cfg = cfg.replace(**{"data.test_fraction": 0.2})
    return train(ds, cfg, frozen_mask=frozen_mask)


def ablate_skip_two(truth: np.ndarray) -> np.ndarray:
    """Remove every i-2 -> i edge (the Lorenz-96 multi-hop ablation)."""
    out = np.array(truth, copy=True)
    n = out.shape[0]
    for i in range(n):
        out[i, (i - 2) % n] = 0
    return out


# -- sweeps ------------------------------------------------------------------------

@dataclass
class SweepRow:
    overrides: dict[str, Any]
    val_loss: float | None
    auroc: float | None
    error: str | None = None
    config: dict | None = None


def sweep_cells(grid: dict[str, list], mode: str = "one_at_a_time") -> list[dict[str, Any]]:
    if not grid:
        raise ValueError("sweep grid is empty")
    if mode == "cartesian":
        keys = list(grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    if mode == "one_at_a_time":
        return [{k: v} for k, values in grid.items() for v in values]
    raise ValueError(f"unknown sweep mode {mode!r}")


def _run_cell(args):
    ds, base_cfg, overrides, val_fraction = args
    from .metrics import auroc

    try:
        cfg = base_cfg.replace(**overrides)
        cfg.data.test_fraction = val_fraction
        rep = train(ds, cfg)
        score = None
        if ds.truth is not None:
            score = auroc(rep.adjacency, ds.truth.adjacency, "include")
        val = rep.test_loss if rep.test_loss is not None else rep.prediction_loss[-1]
        return SweepRow(overrides, val, score, None, cfg.to_dict())
    except Exception as exc:  # one failing cell must not abort the sweep
        return SweepRow(overrides, None, None, f"{type(exc).__name__}: {exc}")


def hyperparam_sweep(ds: CausalDataset, base_cfg: RunConfig, grid: dict[str, list],
                     mode: str = "one_at_a_time", val_fraction: float = 0.2,
                     jobs: int = 1) -> list[SweepRow]:
    """Train one model per grid cell; rows sorted by validation loss (failures last).

    Each cell trains on the first ``1 - val_fraction`` of ``ds`` and reports
    the objective on the remainder; pass the calibration data as ``ds``.
    """
    cells = sweep_cells(grid, mode)
    args = [(ds, base_cfg, c, val_fraction) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, args))
    else:
        rows = [_run_cell(a) for a in args]
    return sorted(rows, key=lambda r: (r.val_loss is None,
                                       math.inf if r.val_loss is None else r.val_loss))


def write_sweep_csv(rows: list[SweepRow], path: str | Path) -> None:
    keys = sorted({k for r in rows for k in r.overrides})
    lines = [",".join(keys + ["val_loss", "auroc", "error"])]
    for r in rows:
        cells = [str(r.overrides.get(k, "")) for k in keys]
        cells += ["" if r.val_loss is None else repr(r.val_loss),
                  "" if r.auroc is None else repr(r.auroc),
                  (r.error or "").replace(",", ";")]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
