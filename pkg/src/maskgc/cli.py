"""Command-line entry point: generate, train, eval, ablate, sweep, prune, cost.

Every command writes ``resolved_config.json`` into its output directory and
exits with status 0 only on success.  Errors are reported as
``error [<stage>]: <message>`` on stderr with exit status 1; argument
errors exit with status 2 (argparse convention).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import complexity, plots
from .config import PRESETS, RunConfig, load_config, preset, save_config
from .datagen import gen_lorenz96, gen_mixed_physics, gen_var, save_dataset, write_matrix_csv
from .dataio import load_dataset, load_matrix, load_truth
from .metrics import evaluate_graph, pr_curve, roc_curve, threshold_density, truth_density
from .pruning import FAMILIES, PruneConfig, prune_report
from .training import ablate_skip_two, hyperparam_sweep, train, write_sweep_csv

log = logging.getLogger("maskgc")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> RunConfig:
    """Config file (or preset), then --set overrides, then --seed."""
    if getattr(args, "preset", None):
        if args.config:
            raise StageError("config", "use either --config or --preset, not both")
        base = preset(args.preset)
        cfg = base.replace(**dict(_split(s) for s in args.set))
    else:
        cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _split(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise StageError("config", f"override must be key=value, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


def _dataset(args, cfg: RunConfig, need_truth: bool = False):
    data = args.data or cfg.data.path
    truth = getattr(args, "truth", None) or cfg.data.truth_path or None
    if not data:
        raise StageError("data", "no data path (pass --data or set data.path)")
    if need_truth and not truth:
        raise StageError("data", "this command needs a ground-truth file (--truth)")
    return load_dataset(data, truth)


# -- commands ------------------------------------------------------------------

def cmd_generate(args) -> None:
    out = _out(args)
    seed = 0 if args.seed is None else args.seed
    if args.generator == "var":
        ds = gen_var(n_vars=args.n, t_len=args.t, order=args.order, seed=seed,
                     coef_mode=args.coef_mode)
    elif args.generator == "lorenz96":
        ds = gen_lorenz96(n_vars=args.n, forcing=args.f, t_len=args.t, seed=seed,
                          sample_interval=args.sample_interval)
    else:
        ds = gen_mixed_physics(n_vars=args.n, t_len=args.t, variance_ratio=args.ratio,
                               density=args.density, seed=seed)
    files = save_dataset(ds, out)
    cfg = RunConfig(seed=seed)
    cfg.data.path, cfg.data.truth_path = str(files["data"]), str(files.get("truth", ""))
    save_config(cfg, out / "resolved_config.json")
    for name, path in files.items():
        print(f"{name}: {path}")


def cmd_train(args) -> None:
    cfg = _run_config(args)
    out = _out(args)
    ds = _dataset(args, cfg)
    cfg.model.n_vars = cfg.model.n_vars or ds.n_vars
    save_config(cfg, out / "resolved_config.json")
    rep = train(ds, cfg, checkpoint_path=out / "checkpoint.json", progress=args.verbose)
    rep.save(out / "train_report.json")
    write_matrix_csv(out / "adjacency.csv", rep.adjacency, ds.names, fmt="%.17g")
    plots.loss_curves({"prediction": rep.prediction_loss, "total": rep.total_loss},
                      out / "loss_curves.svg")
    line = f"trained {len(rep.total_loss)} epochs in {rep.wall_time:.1f}s, final loss {rep.total_loss[-1]:.6f}"
    if ds.truth is not None:
        ev, _ = evaluate_graph(rep.adjacency, ds.truth.adjacency, "include")
        ev.save(out / "eval_report.json")
        line += f", AUROC {ev.auroc:.4f}"
    print(line)


def cmd_eval(args) -> None:
    out = _out(args)
    scores = load_matrix(args.scores)
    truth = load_truth(args.truth, scores.shape[0]).adjacency
    save_config(load_config(args.config, args.set), out / "resolved_config.json")
    rep, graph = evaluate_graph(scores, truth, args.diagonal_policy, args.threshold)
    rep.save(out / "eval_report.json")
    names = [f"x{i}" for i in range(scores.shape[0])]
    write_matrix_csv(out / "graph.csv", graph, names)
    # the other diagonal policy, for reference
    other = "exclude" if args.diagonal_policy == "include" else "include"
    try:
        alt, _ = evaluate_graph(scores, truth, other, args.threshold)
        _write_json(out / f"eval_report_{other}.json", alt.to_dict())
    except ValueError as exc:
        log.warning("skipping %s-diagonal report: %s", other, exc)
    if args.curves:
        thr, fpr, tpr = roc_curve(scores, truth, args.diagonal_policy)
        np.savetxt(out / "roc.csv", np.column_stack([np.r_[np.inf, thr], fpr, tpr]),
                   delimiter=",", header="threshold,fpr,tpr", comments="", fmt="%.10g")
        thr, prec, rec = pr_curve(scores, truth, args.diagonal_policy)
        np.savetxt(out / "pr.csv", np.column_stack([thr, prec, rec]),
                   delimiter=",", header="threshold,precision,recall", comments="", fmt="%.10g")
        plots.roc_pr_curves(scores, truth, out / "curves.svg", args.diagonal_policy)
    if args.heatmap:
        plots.adjacency_heatmap(truth, scores, out / "adjacency.svg")
    print(f"AUROC {rep.auroc:.4f}  AUPRC {rep.auprc:.4f}  SHD {rep.shd}  F1 {rep.f1:.4f}")


ABLATIONS = {
    "baseline": {},
    "layerwise_masks": {"model.layerwise_masks": True},
    "decoupled_heads": {"model.decoupled_heads": True},
    "residual_target": {"model.residual_target": True},
}


def cmd_ablate(args) -> None:
    cfg = _run_config(args)
    out = _out(args)
    ds = _dataset(args, cfg, need_truth=True)
    cfg.model.n_vars = cfg.model.n_vars or ds.n_vars
    if cfg.data.test_fraction == 0:
        cfg.data.test_fraction = 0.2
    save_config(cfg, out / "resolved_config.json")
    truth = ds.truth.adjacency
    rows = []
    for name, overrides in ABLATIONS.items():
        rep = train(ds, cfg.replace(**overrides))
        ev, _ = evaluate_graph(rep.adjacency, truth, "include")
        rows.append({"variant": name, "auroc": ev.auroc, "shd": ev.shd, "test_mse": rep.test_mse})
    masks = {"fixed_true_mask": truth}
    if args.skip_two:
        masks["fixed_skip_two_mask"] = ablate_skip_two(truth)
    for name, mask in masks.items():
        rep = train(ds, cfg, frozen_mask=mask)
        rows.append({"variant": name, "auroc": None, "shd": None, "test_mse": rep.test_mse})
    lines = ["variant,auroc,shd,test_mse"]
    for r in rows:
        lines.append(",".join("" if r[k] is None else str(r[k]) for k in ("variant", "auroc", "shd", "test_mse")))
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    _write_json(out / "ablation.json", rows)
    for r in rows:
        auc = "-" if r["auroc"] is None else f"{r['auroc']:.4f}"
        print(f"{r['variant']:>20}  AUROC {auc:>6}  test MSE {r['test_mse']:.6f}")


def _grid(items: list[str]) -> dict[str, list]:
    grid = {}
    for item in items:
        key, values = _split(item)
        grid[key] = [v for v in values.split(",") if v]
        if not grid[key]:
            raise StageError("sweep", f"no values given for {key}")
    return grid


def cmd_sweep(args) -> None:
    cfg = _run_config(args)
    out = _out(args)
    ds = _dataset(args, cfg)
    cfg.model.n_vars = cfg.model.n_vars or ds.n_vars
    save_config(cfg, out / "resolved_config.json")
    grid = _grid(args.grid)
    rows = hyperparam_sweep(ds, cfg, grid, mode=args.mode, val_fraction=args.val_fraction,
                            jobs=args.jobs)
    write_sweep_csv(rows, out / "sweep.csv")
    failed = [r for r in rows if r.error]
    for r in failed:
        log.warning("cell %s failed: %s", r.overrides, r.error)
    if len(failed) == len(rows):
        raise StageError("sweep", "every sweep cell failed")
    best = rows[0]
    print(f"{len(rows)} cells, best {best.overrides} val_loss {best.val_loss:.6f}")


def cmd_prune(args) -> None:
    cfg = _run_config(args)
    out = _out(args)
    ds = _dataset(args, cfg)
    scores = load_matrix(args.graph)
    if args.density is not None or not np.all((scores == 0) | (scores == 1)):
        if args.density is None:
            if ds.truth is None:
                raise StageError("prune", "graph is continuous: pass --density or --truth to binarize it")
            density = truth_density(ds.truth.adjacency)
        else:
            density = args.density
        scores = threshold_density(scores, density)
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    pcfg = PruneConfig(lag=args.lag or cfg.model.lag, holdout_fraction=args.holdout,
                       hidden_width=args.width, epochs=args.epochs,
                       learning_rate=cfg.optimizer.learning_rate,
                       batch_size=cfg.optimizer.batch_size, seed=cfg.seed)
    save_config(cfg, out / "resolved_config.json")
    rep = prune_report(scores.astype(np.int64), ds, families, pcfg)
    rep.save(out / "prune_report.json")
    table = rep.table()
    (out / "prune_table.txt").write_text(table)
    print(table, end="")


def cmd_cost(args) -> None:
    cfg = _run_config(args)
    out = _out(args)
    if args.n is not None:
        cfg.model.n_vars = args.n
    if args.l is not None:
        cfg.model.lag = args.l
    if not cfg.model.n_vars:
        cfg.model.n_vars = 10
    save_config(cfg, out / "resolved_config.json")
    rep = complexity.cost_report(cfg.model)
    rep.save(out / "cost_report.json")
    print(f"params {rep.param_count} ({rep.param_count / 1e6:.4f}M)  FLOPs {rep.flops} ({rep.flops / 1e6:.2f}M)")
    for axis, values in (("n_vars", args.sweep_n), ("lag", args.sweep_l)):
        if not values:
            continue
        kw = {"n_values": values} if axis == "n_vars" else {"lag_values": values}
        rows = complexity.cost_sweep(cfg.model, **kw)
        complexity.write_sweep_csv(rows, out / f"sweep_{axis}.csv")
        plots.scaling_plot(rows, axis, out / f"sweep_{axis}.svg")
        degree = 2 if axis == "n_vars" else 1
        # FLOPs are a*N^2 + b*N in the variable count (no constant term)
        intercept = axis == "lag"
        if len(rows) > degree + int(intercept):
            _, r2 = complexity.poly_fit_r2([r[axis] for r in rows], [r["flops"] for r in rows],
                                           degree, intercept)
            print(f"FLOPs vs {axis}: degree-{degree} fit R^2 = {r2:.6f}")


# -- parser --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="TOML or JSON run config")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in hyperparameter preset")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. model.d_model=32 (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (sweep only)")
    p.add_argument("-v", "--verbose", action="store_true")
    if data:
        p.add_argument("--data", help="data CSV or directory of trajectory CSVs")
        p.add_argument("--truth", help="ground-truth adjacency CSV")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maskgc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a benchmark dataset")
    p.add_argument("generator", choices=["var", "lorenz96", "mixed"])
    p.add_argument("--n", type=int, default=10, help="number of variables")
    p.add_argument("--t", type=int, default=None, help="series length")
    p.add_argument("--order", type=int, default=3, help="VAR order")
    p.add_argument("--coef-mode", choices=["uniform", "random_sign"], default="uniform")
    p.add_argument("--f", type=float, default=10.0, help="Lorenz-96 forcing")
    p.add_argument("--sample-interval", type=float, default=0.05)
    p.add_argument("--ratio", type=float, default=0.5, help="variance-edge fraction (mixed)")
    p.add_argument("--density", type=float, default=0.3, help="off-diagonal density (mixed)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit the forecaster and its adjacency")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score an adjacency estimate against a truth graph")
    p.add_argument("--scores", required=True, help="adjacency CSV (e.g. train's adjacency.csv)")
    p.add_argument("--truth", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[])
    p.add_argument("--diagonal-policy", choices=["include", "exclude"], default="include")
    p.add_argument("--threshold", choices=["density", "cluster"], default="density")
    p.add_argument("--curves", action="store_true", help="write ROC/PR CSVs and SVG")
    p.add_argument("--heatmap", action="store_true", help="write truth/learned heatmap SVG")
    p.add_argument("--out", default="out")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="architecture and fixed-mask ablations")
    _common(p)
    p.add_argument("--skip-two", action="store_true",
                   help="also train with every i-2 -> i edge removed from the truth mask")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="hyperparameter grid on a calibration set")
    _common(p)
    p.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2,...")
    p.add_argument("--mode", choices=["one_at_a_time", "cartesian"], default="one_at_a_time")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("prune", help="parent-restricted forecasting vs vanilla")
    _common(p)
    p.add_argument("--graph", required=True, help="binary graph or adjacency-score CSV")
    p.add_argument("--density", type=float, help="binarize scores at this edge density")
    p.add_argument("--families", default=",".join(FAMILIES))
    p.add_argument("--lag", type=int, help="forecast look-back (default: model.lag)")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("cost", help="analytic parameter and FLOP counts")
    _common(p, data=False)
    p.add_argument("--n", type=int, help="number of variables")
    p.add_argument("--l", type=int, help="look-back length")
    p.add_argument("--sweep-n", type=int, nargs="*", help="variable counts for a scaling sweep")
    p.add_argument("--sweep-l", type=int, nargs="*", help="look-backs for a scaling sweep")
    p.set_defaults(func=cmd_cost)
    return ap


_DEFAULT_T = {"var": 500, "lorenz96": 250, "mixed": 2000}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate" and args.t is None:
        args.t = _DEFAULT_T[args.generator]
    try:
        args.func(args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surfaced with the stage name, never a traceback
        print(f"error [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
