"""Analytic parameter and FLOP accounting for the masked forecaster.

FLOP convention: one multiply-accumulate is 2 FLOPs; every exp, GELU,
sigmoid or softplus evaluation is 1 FLOP.  Counts are for one sample
(batch size 1) through a single forward pass.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ModelConfig

FLOP_FORMULA = ("embedding 2NLd + per layer [QKVO 8Nd^2 + scores/mix 4N^2d + softmax HN^2 "
                "+ FFN 4Nd*ffn + GELU N*ffn] + mask N^2 + heads 2Nd per head (+N softplus for nll)")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Shape of every trainable array, in the same order the model creates them."""
    n, d, f, L = cfg.n_vars, cfg.d_model, cfg.ffn_dim, cfg.lag
    shapes: dict[str, tuple[int, ...]] = {"emb.W": (L, d), "emb.b": (d,), "emb.E_id": (n, d)}
    shapes["theta"] = (cfg.n_layers, n, n) if cfg.layerwise_masks else (n, n)
    for m in range(cfg.n_layers):
        p = f"layer{m}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"W_{proj}"] = (d, d)
            shapes[p + f"b_{proj}"] = (d,)
        shapes[p + "ln1.g"] = shapes[p + "ln1.b"] = (d,)
        shapes[p + "ffn.W1"], shapes[p + "ffn.b1"] = (d, f), (f,)
        shapes[p + "ffn.W2"], shapes[p + "ffn.b2"] = (f, d), (d,)
        shapes[p + "ln2.g"] = shapes[p + "ln2.b"] = (d,)
    for h in ["mu"] + (["sigma"] if cfg.objective == "nll" else []):
        shapes[f"head.{h}.w"] = (n, d) if cfg.decoupled_heads else (d, 1)
        shapes[f"head.{h}.b"] = (n,) if cfg.decoupled_heads else (1,)
    return shapes


def _group(name: str) -> str:
    if name.startswith("emb."):
        return "embedding"
    if name == "theta":
        return "mask"
    if name.startswith("head."):
        return "heads"
    layer, rest = name.split(".", 1)
    if rest.startswith("ffn."):
        return f"{layer}.ffn"
    if rest.startswith("ln"):
        return f"{layer}.norm"
    return f"{layer}.attention"


def count_params(cfg: ModelConfig) -> tuple[int, dict[str, int]]:
    breakdown: dict[str, int] = {}
    for name, shape in param_shapes(cfg).items():
        breakdown[_group(name)] = breakdown.get(_group(name), 0) + int(np.prod(shape))
    return sum(breakdown.values()), breakdown


def count_flops(cfg: ModelConfig) -> tuple[int, dict[str, int]]:
    n, d, f, L, H = cfg.n_vars, cfg.d_model, cfg.ffn_dim, cfg.lag, cfg.n_heads
    b = {"embedding": 2 * n * L * d, "mask": n * n}
    for m in range(cfg.n_layers):
        b[f"layer{m}.attention"] = 8 * n * d * d + 4 * n * n * d + H * n * n
        b[f"layer{m}.ffn"] = 4 * n * d * f + n * f
    n_heads = 2 if cfg.objective == "nll" else 1
    b["heads"] = n_heads * 2 * n * d + (n if cfg.objective == "nll" else 0)
    return sum(b.values()), b


@dataclass
class CostReport:
    param_count: int
    flops: int
    param_breakdown: dict[str, int]
    flop_breakdown: dict[str, int]
    formula: str = FLOP_FORMULA

    def to_dict(self) -> dict:
        return {"param_count": self.param_count, "flops": self.flops,
                "param_breakdown": self.param_breakdown, "flop_breakdown": self.flop_breakdown,
                "formula": self.formula}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def cost_report(cfg: ModelConfig) -> CostReport:
    cfg.validate()
    p, pb = count_params(cfg)
    f, fb = count_flops(cfg)
    return CostReport(p, f, pb, fb)


def cost_sweep(base: ModelConfig, n_values=(), lag_values=()) -> list[dict]:
    """Cost rows over the cartesian grid of variable counts and look-backs."""
    rows = []
    for n in n_values or [base.n_vars]:
        for L in lag_values or [base.lag]:
            rep = cost_report(replace(base, n_vars=int(n), lag=int(L)))
            rows.append({"n_vars": int(n), "lag": int(L), "params": rep.param_count, "flops": rep.flops})
    return rows


def write_sweep_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["n_vars", "lag", "params", "flops"])
        w.writeheader()
        w.writerows(rows)


def poly_fit_r2(x, y, degree: int, intercept: bool = True) -> tuple[np.ndarray, float]:
    """Least-squares polynomial fit and its coefficient of determination.

    Coefficients are highest power first.  With ``intercept=False`` the
    constant term is pinned to zero (e.g. FLOPs = aN^2 + bN).
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    low = 0 if intercept else 1
    design = np.column_stack([x ** k for k in range(degree, low - 1, -1)])
    coef = np.linalg.lstsq(design, y, rcond=None)[0]
    resid = y - design @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return coef, 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
