"""Adjacency-gated masked-attention forecaster.

Each variable's look-back window becomes one token.  Tokens exchange
information only through multi-head attention whose logits are offset by
``log(A_hat + eps)``, where ``A_hat = sigmoid(theta + gamma * I)`` is a single
learnable adjacency shared by every layer and head.  Everything else
(feed-forward, layer norm, output heads) acts on each token independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .tensor import Tensor

# additive logit for hard-masked (forced-zero) entries
MASK_SENTINEL = -1e9

CHECKPOINT_FORMAT = "maskgc-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, terms: dict | None = None, step: int | None = None):
        self.terms = terms or {}
        self.step = step
        super().__init__(message)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameter set; insertion order is the canonical array order."""
    cfg.validate()
    n, d, f, L = cfg.n_vars, cfg.d_model, cfg.ffn_dim, cfg.lag
    arrays: dict[str, np.ndarray] = {}
    arrays["emb.W"] = _xavier(rng, L, d)
    arrays["emb.b"] = np.zeros(d)
    arrays["emb.E_id"] = rng.normal(0.0, cfg.id_init_std, size=(n, d))
    if cfg.layerwise_masks:
        arrays["theta"] = np.zeros((cfg.n_layers, n, n))
    else:
        arrays["theta"] = np.zeros((n, n))
    for m in range(cfg.n_layers):
        p = f"layer{m}."
        for proj in ("q", "k", "v", "o"):
            arrays[p + f"W_{proj}"] = _xavier(rng, d, d)
            arrays[p + f"b_{proj}"] = np.zeros(d)
        arrays[p + "ln1.g"] = np.ones(d)
        arrays[p + "ln1.b"] = np.zeros(d)
        arrays[p + "ffn.W1"] = _xavier(rng, d, f)
        arrays[p + "ffn.b1"] = np.zeros(f)
        arrays[p + "ffn.W2"] = _xavier(rng, f, d)
        arrays[p + "ffn.b2"] = np.zeros(d)
        arrays[p + "ln2.g"] = np.ones(d)
        arrays[p + "ln2.b"] = np.zeros(d)
    heads = ["mu"] + (["sigma"] if cfg.objective == "nll" else [])
    for h in heads:
        shape = (n, d) if cfg.decoupled_heads else (d, 1)
        w = _xavier(rng, d, 1, shape=shape)
        # zero-initialized heads keep theta still until the readout carries signal
        arrays[f"head.{h}.w"] = w if cfg.head_init == "xavier" else np.zeros(shape)
        arrays[f"head.{h}.b"] = np.zeros(n if cfg.decoupled_heads else 1)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}


@dataclass
class Prediction:
    mu: Tensor
    var: Tensor | None = None


class MaskedForecaster:
    """Model container: config plus named parameter tensors."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg.validate()
        if params is None:
            params = init_params(cfg, rng if rng is not None else np.random.default_rng(0))
        self.params = params
        self.frozen: set[str] = set()

    # -- parameters -------------------------------------------------------
    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if k not in self.frozen}

    def freeze(self, name: str) -> None:
        self.frozen.add(name)
        self.params[name].requires_grad = False

    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    # -- adjacency --------------------------------------------------------
    def adjacency(self) -> list[Tensor]:
        """Per-layer adjacency tensors; a single entry unless layerwise masks are on."""
        theta = self.params["theta"]
        n = self.cfg.n_vars
        force = self.cfg.diag_force * np.eye(n)
        if self.cfg.layerwise_masks:
            out = []
            for m in range(self.cfg.n_layers):
                sel = np.zeros((self.cfg.n_layers, 1, 1))
                sel[m] = 1.0
                th_m = T.sum(T.mul(theta, sel), axis=0)
                out.append(T.sigmoid(T.add(th_m, force)))
            return out
        return [T.sigmoid(T.add(theta, force))]

    def adjacency_estimate(self) -> np.ndarray:
        """Reported N x N edge scores (mean over layers when layerwise)."""
        with T.no_grad():
            mats = [a.data for a in self.adjacency()]
        return np.mean(mats, axis=0)

    # -- forward ----------------------------------------------------------
    def embed(self, x: np.ndarray, training: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != (self.cfg.n_vars, self.cfg.lag):
            raise T.ShapeError("embed", x.shape, (None, self.cfg.n_vars, self.cfg.lag))
        p = self.params
        e = T.add(T.matmul(x, p["emb.W"]), p["emb.b"])
        e = T.dropout(e, self.cfg.dropout_rate, training, rng)
        return T.add(e, p["emb.E_id"])

    def _drop(self, t: Tensor, training: bool, rng) -> Tensor:
        return T.dropout(t, self.cfg.encoder_dropout, training, rng)

    def masked_attention(self, z: Tensor, log_mask, layer: int,
                         training: bool = False, rng=None) -> Tensor:
        cfg, p = self.cfg, self.params
        pre = f"layer{layer}."
        B, N, d = z.shape
        H, dk = cfg.n_heads, cfg.head_dim

        def split(t):
            return T.transpose(T.reshape(t, (B, N, H, dk)), (0, 2, 1, 3))

        q = split(T.add(T.matmul(z, p[pre + "W_q"]), p[pre + "b_q"]))
        k = split(T.add(T.matmul(z, p[pre + "W_k"]), p[pre + "b_k"]))
        v = split(T.add(T.matmul(z, p[pre + "W_v"]), p[pre + "b_v"]))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
        scores = T.add(scores, log_mask)
        attn = self._drop(T.softmax_lastdim(scores), training, rng)
        out = T.matmul(attn, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, N, d))
        return T.add(T.matmul(out, p[pre + "W_o"]), p[pre + "b_o"])

    def encoder_block(self, z: Tensor, log_mask, layer: int,
                      training: bool = False, rng=None) -> Tensor:
        """Post-norm block; ``encoder_dropout`` hits attention weights and both residual branches."""
        p, eps = self.params, self.cfg.ln_eps
        pre = f"layer{layer}."
        a = self._drop(self.masked_attention(z, log_mask, layer, training, rng), training, rng)
        z = T.layer_norm(T.add(z, a), p[pre + "ln1.g"], p[pre + "ln1.b"], eps)
        h = T.gelu(T.add(T.matmul(z, p[pre + "ffn.W1"]), p[pre + "ffn.b1"]))
        h = self._drop(h, training, rng)
        h = self._drop(T.add(T.matmul(h, p[pre + "ffn.W2"]), p[pre + "ffn.b2"]), training, rng)
        return T.layer_norm(T.add(z, h), p[pre + "ln2.g"], p[pre + "ln2.b"], eps)

    def log_masks(self, mask_override: np.ndarray | None = None) -> tuple[list, list[Tensor]]:
        """Additive attention masks for every layer, plus the adjacency tensors used."""
        M = self.cfg.n_layers
        if mask_override is not None:
            mask = np.asarray(mask_override, dtype=np.float64)
            if mask.shape != (self.cfg.n_vars, self.cfg.n_vars):
                raise T.ShapeError("mask_override", mask.shape)
            additive = np.where(mask > 0, 0.0, MASK_SENTINEL)
            return [additive] * M, []
        a_hats = self.adjacency()
        logs = [T.log(T.add(a, self.cfg.mask_eps)) for a in a_hats]
        if len(logs) == 1:
            logs = logs * M
        return logs, a_hats

    def encode(self, x: np.ndarray, training: bool = False, rng=None,
               mask_override: np.ndarray | None = None) -> tuple[Tensor, list[Tensor]]:
        z = self.embed(x, training, rng)
        logs, a_hats = self.log_masks(mask_override)
        for m in range(self.cfg.n_layers):
            z = self.encoder_block(z, logs[m], m, training, rng)
        return z, a_hats

    def predict(self, latent: Tensor, x_last: np.ndarray | None = None) -> Prediction:
        cfg, p = self.cfg, self.params
        B, N, d = latent.shape

        def head(name):
            w, b = p[f"head.{name}.w"], p[f"head.{name}.b"]
            if cfg.decoupled_heads:
                return T.add(T.sum(T.mul(latent, w), axis=-1), b)
            return T.add(T.reshape(T.matmul(latent, w), (B, N)), b)

        mu = head("mu")
        if cfg.residual_target:
            if x_last is None:
                raise ValueError("residual_target needs the last observed values")
            mu = T.add(mu, np.asarray(x_last, dtype=np.float64))
        if cfg.objective == "nll":
            var = T.add(T.softplus(head("sigma")), cfg.mask_eps)
            return Prediction(mu, var)
        return Prediction(mu)

    def forward(self, x: np.ndarray, training: bool = False, rng=None,
                mask_override: np.ndarray | None = None) -> tuple[Prediction, list[Tensor]]:
        x = np.asarray(x, dtype=np.float64)
        z, a_hats = self.encode(x, training, rng, mask_override)
        return self.predict(z, x[:, :, -1]), a_hats

    __call__ = forward

    # -- checkpoints --------------------------------------------------------
    def save(self, path: str | Path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "MaskedForecaster":
        return load_checkpoint(path)


def prediction_loss(pred: Prediction, targets: np.ndarray, objective: str) -> Tensor:
    y = np.asarray(targets, dtype=np.float64)
    resid2 = T.square(T.sub(y, pred.mu))
    if objective == "mse":
        return T.mean(resid2)
    if pred.var is None:
        raise ValueError("nll objective needs a variance prediction")
    per = T.add(T.mul(T.log(pred.var), 0.5), T.div(resid2, T.mul(pred.var, 2.0)))
    return T.mean(per)


def sparsity_term(a_hats: list[Tensor], n_vars: int) -> Tensor:
    """Mean of the off-diagonal adjacency entries (averaged across layer masks)."""
    off = 1.0 - np.eye(n_vars)
    parts = [T.sum(T.mul(a, off)) for a in a_hats]
    total = parts[0]
    for extra in parts[1:]:
        total = T.add(total, extra)
    return T.mul(total, 1.0 / (len(parts) * n_vars * (n_vars - 1)))


def loss_joint(pred: Prediction, targets: np.ndarray, a_hats: list[Tensor], lam: float,
               cfg: ModelConfig) -> tuple[Tensor, dict[str, float]]:
    """Prediction loss plus ``lam`` times the mean off-diagonal adjacency."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    pred_term = prediction_loss(pred, targets, cfg.objective)
    terms = {"prediction": float(pred_term.data)}
    if a_hats:
        sp = sparsity_term(a_hats, cfg.n_vars)
        terms["sparsity"] = float(sp.data)
        total = T.add(pred_term, T.mul(sp, lam))
    else:
        terms["sparsity"] = 0.0
        total = pred_term
    terms["total"] = float(total.data)
    for name, value in terms.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(f"non-finite {name} term ({value})", terms)
    return total, terms


# -- checkpoint files ---------------------------------------------------------

def save_checkpoint(model: MaskedForecaster, path: str | Path) -> None:
    from dataclasses import asdict

    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "arrays": [
            {"name": k, "shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for k, p in model.params.items()
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> MaskedForecaster:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    cfg = ModelConfig(**doc["config"])
    params = {}
    for entry in doc["arrays"]:
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        params[entry["name"]] = Tensor(arr, requires_grad=True, name=entry["name"])
    expected = init_params(cfg, np.random.default_rng(0))
    if list(expected) != list(params) or any(expected[k].shape != params[k].shape for k in params):
        raise ValueError(f"{path}: arrays do not match the stored config")
    return MaskedForecaster(cfg, params)
