"""Dataset files, standardization, supervised windows and chronological splits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import CausalDataset, GroundTruthGraph, regenerate


class DataFormatError(ValueError):
    pass


# -- loading ------------------------------------------------------------------

def _read_csv(path: Path, kind=float) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header, body = [c.strip() for c in rows[0]], rows[1:]
    if not body:
        raise DataFormatError(f"{path}: no data rows")
    width = len(header)
    values = []
    for lineno, row in enumerate(body, start=2):
        if len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} cells, found {len(row)}")
        try:
            values.append([kind(c) for c in row])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric cell in {row}") from None
    return header, np.array(values, dtype=np.float64)


def load_truth(path: str | Path, n_vars: int | None = None) -> GroundTruthGraph:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"truth file not found: {path}")
    _, a = _read_csv(path)
    if n_vars is not None and a.shape != (n_vars, n_vars):
        raise DataFormatError(
            f"{path}: truth is {a.shape[0]}x{a.shape[1]} but data has {n_vars} variables")
    kind_path = path.with_name(path.stem + "_edge_kind.csv")
    kinds = None
    if kind_path.exists():
        with open(kind_path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        kinds = np.array([[c.strip() for c in r] for r in rows if r], dtype=object)
    return GroundTruthGraph(a.astype(np.int64), kinds)


def load_matrix(path: str | Path) -> np.ndarray:
    """Read a headed numeric CSV (adjacency scores, binary graphs)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return _read_csv(path)[1]


def load_dataset(data_path: str | Path, truth_path: str | Path | None = None) -> CausalDataset:
    """Load a CSV, or a directory of CSVs treated as separate trajectories.

    Directories are read in lexicographic order; trajectory boundaries are
    kept so windows never straddle two trajectories.
    """
    data_path = Path(data_path)
    if not data_path.exists():
        raise FileNotFoundError(f"data not found: {data_path}")
    if data_path.is_dir():
        files = sorted(p for p in data_path.iterdir() if p.suffix.lower() == ".csv")
        if not files:
            raise DataFormatError(f"{data_path}: no CSV trajectories")
        parts = [_read_csv(p) for p in files]
        names = parts[0][0]
        for p, (hdr, _) in zip(files, parts):
            if len(hdr) != len(names):
                raise DataFormatError(f"{p}: column count differs from {files[0].name}")
        data = np.concatenate([m for _, m in parts], axis=0)
        lengths = tuple(m.shape[0] for _, m in parts)
        meta_path = data_path / "meta.json"
    else:
        names, data = _read_csv(data_path)
        lengths = None
        meta_path = data_path.with_name("meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    truth = load_truth(truth_path, data.shape[1]) if truth_path else None
    return CausalDataset(data, truth, meta, names, lengths)


# -- standardization ---------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, ds: CausalDataset) -> CausalDataset:
        return ds.with_data((ds.data - self.mean) / self.std)

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def fit_standardizer(ds: CausalDataset) -> Standardizer:
    mean = ds.data.mean(axis=0)
    std = ds.data.std(axis=0)
    const = np.flatnonzero(std == 0)
    if const.size:
        raise DataFormatError(f"constant column(s) {[ds.names[i] for i in const]} cannot be standardized")
    return Standardizer(mean, std)


def standardize(ds: CausalDataset, stats: Standardizer | None = None) -> tuple[CausalDataset, Standardizer]:
    """Zero-mean unit-variance columns (population std).  Pass ``stats`` to reuse train statistics."""
    stats = stats or fit_standardizer(ds)
    return stats.apply(ds), stats


# -- windows --------------------------------------------------------------------

@dataclass
class WindowBatch:
    inputs: np.ndarray  # B x N x L, oldest lag first
    targets: np.ndarray  # B x N
    t_indices: np.ndarray  # row index of each target in the source dataset


def window_arrays(ds: CausalDataset, lag: int) -> WindowBatch:
    """Every valid (trajectory, t) window, in chronological order."""
    if lag < 1:
        raise ValueError("lag must be >= 1")
    xs, ys, ts = [], [], []
    start = 0
    for n in ds.lengths:
        if n < lag + 1:
            raise DataFormatError(f"trajectory of length {n} is shorter than lag + 1 = {lag + 1}")
        traj = ds.data[start:start + n]
        # sliding view: (n - lag, N, lag)
        win = np.lib.stride_tricks.sliding_window_view(traj[:-1], lag, axis=0)
        xs.append(win)
        ys.append(traj[lag:])
        ts.append(np.arange(start + lag, start + n))
        start += n
    return WindowBatch(np.concatenate(xs).copy(), np.concatenate(ys), np.concatenate(ts))


def make_windows(ds: CausalDataset, lag: int, batch_size: int,
                 shuffle_seed: int | np.random.Generator | None = None) -> list[WindowBatch]:
    """Split all windows into batches; shuffled deterministically when a seed is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    allw = window_arrays(ds, lag)
    order = np.arange(len(allw.targets))
    if shuffle_seed is not None:
        rng = shuffle_seed if isinstance(shuffle_seed, np.random.Generator) else np.random.default_rng(shuffle_seed)
        order = rng.permutation(order)
    return [WindowBatch(allw.inputs[idx], allw.targets[idx], allw.t_indices[idx])
            for idx in (order[i:i + batch_size] for i in range(0, len(order), batch_size))]


# -- splits ----------------------------------------------------------------------

@dataclass
class SplitSpec:
    calibration_fraction: float = 0.2
    mode: str = "chronological"
    calibration_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.calibration_fraction < 1.0:
            raise ValueError("calibration_fraction must be in (0, 1)")
        if self.mode not in ("chronological", "by_seed"):
            raise ValueError(f"unknown split mode {self.mode!r}")


def split(ds: CausalDataset, spec: SplitSpec) -> tuple[CausalDataset, CausalDataset]:
    """Return (calibration, test).

    Chronological mode cuts every trajectory at ``floor(fraction * T)``.
    By-seed mode regenerates an independent calibration realization from the
    dataset metadata and keeps the whole input as the test set.
    """
    if spec.mode == "by_seed":
        if "generator" not in ds.meta:
            raise ValueError("by_seed split needs generator metadata")
        if ds.meta.get("seed") == spec.calibration_seed:
            raise ValueError("test dataset already uses the calibration seed")
        return regenerate(ds.meta, seed=spec.calibration_seed), ds
    cal_parts, test_parts, cal_len, test_len = [], [], [], []
    for traj in ds.trajectories():
        cut = int(np.floor(spec.calibration_fraction * len(traj)))
        if cut == 0 or cut == len(traj):
            raise ValueError(
                f"fraction {spec.calibration_fraction} leaves an empty part for a trajectory of length {len(traj)}")
        cal_parts.append(traj[:cut])
        test_parts.append(traj[cut:])
        cal_len.append(cut)
        test_len.append(len(traj) - cut)
    return (ds.with_data(np.concatenate(cal_parts), tuple(cal_len)),
            ds.with_data(np.concatenate(test_parts), tuple(test_len)))


def chronological_holdout(ds: CausalDataset, holdout_fraction: float) -> tuple[CausalDataset, CausalDataset]:
    """(train, holdout) where holdout is the last ``holdout_fraction`` of each trajectory."""
    return split(ds, SplitSpec(1.0 - holdout_fraction))
