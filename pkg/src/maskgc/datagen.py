"""Synthetic benchmark generators with exact ground-truth graphs.

Three processes are provided: a sparse lag-K vector autoregression, the
Lorenz-96 system integrated with fixed-step RK4, and a heteroscedastic
"mixed physics" process where disjoint parent sets drive the conditional
mean and the conditional variance of each variable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

EDGE_NONE, EDGE_MEAN, EDGE_VARIANCE = "none", "mean", "variance"


class GenerationError(RuntimeError):
    pass


@dataclass
class GroundTruthGraph:
    """Binary adjacency; ``adjacency[i, j] == 1`` means variable j drives variable i."""

    adjacency: np.ndarray
    edge_kind: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        self.adjacency = a.astype(np.int64)
        if self.edge_kind is not None:
            self.edge_kind = np.asarray(self.edge_kind, dtype=object)
            if self.edge_kind.shape != a.shape:
                raise ValueError("edge_kind must match adjacency shape")

    @property
    def n_vars(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())


@dataclass
class CausalDataset:
    """T x N observations, optional truth graph, generator metadata.

    ``lengths`` records trajectory boundaries: rows are the concatenation of
    trajectories of these lengths, and windows never cross between them.
    """

    data: np.ndarray
    truth: GroundTruthGraph | None = None
    meta: dict[str, Any] = field(default_factory=dict)
    names: list[str] | None = None
    lengths: tuple[int, ...] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"data must be T x N, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("data contains NaN or Inf")
        if self.names is None:
            self.names = [f"x{i}" for i in range(self.n_vars)]
        if len(self.names) != self.n_vars:
            raise ValueError("names must have one entry per column")
        if self.lengths is None:
            self.lengths = (self.data.shape[0],)
        self.lengths = tuple(int(n) for n in self.lengths)
        if sum(self.lengths) != self.data.shape[0]:
            raise ValueError("trajectory lengths do not add up to the row count")
        if self.truth is not None and self.truth.n_vars != self.n_vars:
            raise ValueError(
                f"truth graph has {self.truth.n_vars} variables but data has {self.n_vars} columns")

    @property
    def n_vars(self) -> int:
        return self.data.shape[1]

    @property
    def t_len(self) -> int:
        return self.data.shape[0]

    def trajectories(self) -> list[np.ndarray]:
        out, start = [], 0
        for n in self.lengths:
            out.append(self.data[start:start + n])
            start += n
        return out

    def with_data(self, data: np.ndarray, lengths=None) -> "CausalDataset":
        return CausalDataset(data, self.truth, dict(self.meta), list(self.names),
                             lengths if lengths is not None else self.lengths)


# ---------------------------------------------------------------------------
# VAR


def companion_matrix(coefs: np.ndarray) -> np.ndarray:
    """Companion form of lag matrices with shape (K, N, N)."""
    K, n, _ = coefs.shape
    top = np.concatenate(list(coefs), axis=1)
    if K == 1:
        return top
    lower = np.concatenate([np.eye(n * (K - 1)), np.zeros((n * (K - 1), n))], axis=1)
    return np.concatenate([top, lower], axis=0)


def spectral_radius(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def _var_support(n_vars: int, n_parents: int, rng: np.random.Generator) -> np.ndarray:
    support = np.eye(n_vars, dtype=bool)
    for i in range(n_vars):
        others = [j for j in range(n_vars) if j != i]
        support[i, rng.choice(others, size=n_parents, replace=False)] = True
    return support


def random_var_coefficients(n_vars: int, order: int, rng: np.random.Generator,
                            n_parents: int = 2, mode: str = "uniform", low: float = 0.05,
                            high: float = 0.3, max_radius: float = 0.97, max_attempts: int = 100,
                            shrink: float = 0.95):
    """Sparse stable lag matrices: every row has itself plus ``n_parents`` random parents.

    ``uniform``: one positive value on every support entry and lag, multiplied
    by ``shrink`` until the companion radius drops below ``max_radius``.
    ``random_sign``: magnitudes uniform in [low, high] with random signs,
    redrawn (support included) until stable.
    """
    if n_parents > n_vars - 1:
        raise ValueError("n_parents exceeds the number of other variables")
    if mode == "uniform":
        support = _var_support(n_vars, n_parents, rng)
        coefs = np.repeat(support[None].astype(np.float64), order, axis=0)
        for _ in range(10_000):
            if spectral_radius(companion_matrix(coefs)) < max_radius:
                return coefs, support.astype(np.int64)
            coefs = coefs * shrink
        raise GenerationError("VAR coefficients did not reach the target spectral radius")
    if mode != "random_sign":
        raise ValueError(f"unknown VAR coefficient mode {mode!r}")
    for _ in range(max_attempts):
        support = _var_support(n_vars, n_parents, rng)
        mags = rng.uniform(low, high, size=(order, n_vars, n_vars))
        signs = rng.choice([-1.0, 1.0], size=(order, n_vars, n_vars))
        coefs = mags * signs * support
        if spectral_radius(companion_matrix(coefs)) < max_radius:
            return coefs, support.astype(np.int64)
    raise GenerationError(f"no stable VAR coefficient draw within {max_attempts} attempts")


def simulate_var(coefs: np.ndarray, t_len: int, noise_std: float, rng: np.random.Generator,
                 burn_in: int = 100) -> np.ndarray:
    K, n, _ = coefs.shape
    total = t_len + burn_in + K
    x = np.zeros((total, n))
    noise = rng.normal(0.0, 1.0, size=(total, n)) * noise_std
    for t in range(K, total):
        acc = noise[t].copy()
        for k in range(K):
            acc += coefs[k] @ x[t - k - 1]
        x[t] = acc
    return x[-t_len:]


def gen_var(n_vars: int = 10, t_len: int = 500, order: int = 3, seed: int = 0,
            n_parents: int = 2, noise_std: float = 0.1, burn_in: int = 100,
            coef_mode: str = "uniform") -> CausalDataset:
    if n_vars < 2:
        raise ValueError("n_vars must be >= 2")
    if order < 1:
        raise ValueError("order must be >= 1")
    if t_len <= order:
        raise ValueError("t_len must exceed the VAR order")
    rng = np.random.default_rng(seed)
    coefs, support = random_var_coefficients(n_vars, order, rng, n_parents=n_parents, mode=coef_mode)
    data = simulate_var(coefs, t_len, noise_std, rng, burn_in)
    meta = dict(generator="var", params=dict(n_vars=n_vars, t_len=t_len, order=order,
                                             n_parents=n_parents, noise_std=noise_std,
                                             burn_in=burn_in, coef_mode=coef_mode), seed=seed)
    ds = CausalDataset(data, GroundTruthGraph(support), meta)
    ds.coefs = coefs  # type: ignore[attr-defined]
    return ds


# ---------------------------------------------------------------------------
# Lorenz-96


def _cyclic(n: int, offset: int) -> np.ndarray:
    return (np.arange(n) + offset) % n


def lorenz96_deriv(x: np.ndarray, forcing: float) -> np.ndarray:
    """dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F, indices mod N."""
    n = x.shape[-1]
    return ((x[..., _cyclic(n, 1)] - x[..., _cyclic(n, -2)]) * x[..., _cyclic(n, -1)]
            - x + forcing)


def rk4_step(x: np.ndarray, dt: float, forcing: float) -> np.ndarray:
    k1 = lorenz96_deriv(x, forcing)
    k2 = lorenz96_deriv(x + 0.5 * dt * k1, forcing)
    k3 = lorenz96_deriv(x + 0.5 * dt * k2, forcing)
    k4 = lorenz96_deriv(x + dt * k3, forcing)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_lorenz96(x0: np.ndarray, forcing: float, duration: float, dt: float) -> np.ndarray:
    x = np.array(x0, dtype=np.float64)
    for _ in range(int(round(duration / dt))):
        x = rk4_step(x, dt, forcing)
    return x


def lorenz96_truth(n_vars: int) -> np.ndarray:
    a = np.zeros((n_vars, n_vars), dtype=np.int64)
    for i in range(n_vars):
        for off in (-2, -1, 0, 1):
            a[i, (i + off) % n_vars] = 1
    return a


def gen_lorenz96(n_vars: int = 10, forcing: float = 10.0, t_len: int = 250, seed: int = 0,
                 dt: float = 0.005, sample_interval: float = 0.05, burn_in: int = 1000,
                 obs_noise_std: float = 0.1) -> CausalDataset:
    if n_vars < 4:
        raise ValueError("Lorenz-96 needs n_vars >= 4")
    if forcing <= 0:
        raise ValueError("forcing must be positive")
    sub = int(round(sample_interval / dt))
    if sub < 1 or abs(sub * dt - sample_interval) > 1e-12:
        raise ValueError("sample_interval must be a multiple of dt")
    rng = np.random.default_rng(seed)
    x = forcing + rng.normal(0.0, 0.1, size=n_vars)
    out = np.empty((burn_in + t_len, n_vars))
    for t in range(burn_in + t_len):
        for _ in range(sub):
            x = rk4_step(x, dt, forcing)
        if not np.all(np.abs(x) < 1e6):
            raise GenerationError(
                f"Lorenz-96 trajectory diverged at sample {t}; use a smaller integration step")
        out[t] = x
    data = out[burn_in:] + rng.normal(0.0, obs_noise_std, size=(t_len, n_vars))
    meta = dict(generator="lorenz96", params=dict(n_vars=n_vars, forcing=forcing, t_len=t_len,
                                                  dt=dt, sample_interval=sample_interval,
                                                  burn_in=burn_in, obs_noise_std=obs_noise_std),
                seed=seed)
    return CausalDataset(data, GroundTruthGraph(lorenz96_truth(n_vars)), meta)


# ---------------------------------------------------------------------------
# Mixed physics (heteroscedastic)


def mixed_physics_step(x_lag: np.ndarray, w_mu: np.ndarray, w_sigma: np.ndarray, beta: float,
                       eta: np.ndarray) -> np.ndarray:
    """One transition: mean from ``w_mu``, conditional std from ``w_sigma``.

    ``x_lag`` may carry leading batch axes; ``eta`` broadcasts against it.
    """
    mean = x_lag @ w_mu.T
    scale = np.sqrt(beta + (x_lag * x_lag) @ w_sigma.T)
    return mean + scale * eta


def second_moment_radius(w_mu: np.ndarray, w_sigma: np.ndarray) -> float:
    """Spectral radius of the linear map S -> W_mu S W_mu^T + diag(W_sigma diag(S)).

    The process has a finite stationary second moment iff this is < 1.
    """
    n = w_mu.shape[0]
    op = np.kron(w_mu, w_mu)
    for i in range(n):
        for k in range(n):
            op[i * n + i, k * n + k] += w_sigma[i, k]
    return spectral_radius(op)


def random_mixed_weights(n_vars: int, variance_ratio: float, density: float,
                         rng: np.random.Generator, low: float = 0.2, high: float = 0.5):
    off = [(i, j) for i in range(n_vars) for j in range(n_vars) if i != j]
    n_edges = int(round(density * len(off)))
    n_var_edges = int(round(variance_ratio * n_edges))
    picks = rng.permutation(len(off))[:n_edges]
    kinds = np.array([EDGE_VARIANCE] * n_var_edges + [EDGE_MEAN] * (n_edges - n_var_edges))
    kinds = kinds[rng.permutation(n_edges)]
    w_mu = np.zeros((n_vars, n_vars))
    w_sigma = np.zeros((n_vars, n_vars))
    edge_kind = np.full((n_vars, n_vars), EDGE_NONE, dtype=object)
    for slot, kind in zip(picks, kinds):
        i, j = off[slot]
        if kind == EDGE_MEAN:
            w_mu[i, j] = rng.uniform(low, high) * rng.choice([-1.0, 1.0])
        else:
            w_sigma[i, j] = rng.uniform(low, high)
        edge_kind[i, j] = kind
    for i in range(n_vars):
        w_mu[i, i] = rng.uniform(low, high) * rng.choice([-1.0, 1.0])
        edge_kind[i, i] = EDGE_MEAN
    return w_mu, w_sigma, edge_kind


def gen_mixed_physics(n_vars: int = 10, t_len: int = 2000, variance_ratio: float = 0.5,
                      density: float = 0.3, seed: int = 0, beta: float = 0.2,
                      burn_in: int = 200, max_radius: float = 0.95,
                      max_redraws: int = 50) -> CausalDataset:
    """Lag-1 process ``x_t = W_mu x_{t-1} + sqrt(beta + W_sigma x_{t-1}^2) * eta``.

    Off-diagonal edges are split between mean and variance edges by
    ``variance_ratio``; every variable also keeps a mean self-edge.
    """
    if not 0.0 <= variance_ratio <= 1.0:
        raise ValueError("variance_ratio must be in [0, 1]")
    if not 0.0 < density < 1.0:
        raise ValueError("density must be in (0, 1)")
    if n_vars < 2:
        raise ValueError("n_vars must be >= 2")
    rng = np.random.default_rng(seed)
    for _ in range(max_redraws):
        w_mu, w_sigma, kinds = random_mixed_weights(n_vars, variance_ratio, density, rng)
        if second_moment_radius(w_mu, w_sigma) >= max_radius:
            continue
        x = np.zeros((burn_in + t_len, n_vars))
        eta = rng.normal(size=(burn_in + t_len, n_vars))
        prev = np.zeros(n_vars)
        for t in range(burn_in + t_len):
            prev = mixed_physics_step(prev, w_mu, w_sigma, beta, eta[t])
            x[t] = prev
        if np.all(np.isfinite(x)) and np.max(np.abs(x)) < 1e6:
            break
    else:
        raise GenerationError(f"mixed physics process diverged on all {max_redraws} redraws")
    adjacency = (kinds != EDGE_NONE).astype(np.int64)
    meta = dict(generator="mixed_physics",
                params=dict(n_vars=n_vars, t_len=t_len, variance_ratio=variance_ratio,
                            density=density, beta=beta, burn_in=burn_in),
                seed=seed)
    ds = CausalDataset(x[burn_in:], GroundTruthGraph(adjacency, kinds), meta)
    ds.w_mu, ds.w_sigma = w_mu, w_sigma  # type: ignore[attr-defined]
    return ds


GENERATORS = {"var": gen_var, "lorenz96": gen_lorenz96, "mixed_physics": gen_mixed_physics}


def regenerate(meta: dict[str, Any], seed: int | None = None) -> CausalDataset:
    """Rebuild a dataset from its metadata (optionally with a different seed)."""
    name = meta["generator"]
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}")
    return GENERATORS[name](**meta["params"], seed=meta["seed"] if seed is None else seed)


# ---------------------------------------------------------------------------
# files


def write_matrix_csv(path: str | Path, matrix: np.ndarray, names: list[str], fmt: str = "%d") -> None:
    header = ",".join(names)
    np.savetxt(path, matrix, delimiter=",", fmt=fmt, header=header, comments="")


def export_truth(ds: CausalDataset, path: str | Path) -> list[Path]:
    """Write the truth adjacency CSV (and, when present, the edge-kind CSV)."""
    if ds.truth is None:
        raise ValueError("dataset has no ground-truth graph")
    path = Path(path)
    write_matrix_csv(path, ds.truth.adjacency, ds.names)
    written = [path]
    if ds.truth.edge_kind is not None:
        kind_path = path.with_name(path.stem + "_edge_kind.csv")
        lines = [",".join(ds.names)] + [",".join(row) for row in ds.truth.edge_kind]
        kind_path.write_text("\n".join(lines) + "\n")
        written.append(kind_path)
    return written


def save_dataset(ds: CausalDataset, directory: str | Path, stem: str = "data") -> dict[str, Path]:
    """Write ``<stem>.csv``, ``truth.csv`` (+ edge kinds) and ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {"data": directory / f"{stem}.csv"}
    write_matrix_csv(files["data"], ds.data, ds.names, fmt="%.17g")
    if ds.truth is not None:
        written = export_truth(ds, directory / "truth.csv")
        files["truth"] = written[0]
        if len(written) > 1:
            files["edge_kind"] = written[1]
    files["meta"] = directory / "meta.json"
    files["meta"].write_text(json.dumps(ds.meta, indent=2, sort_keys=True))
    return files
