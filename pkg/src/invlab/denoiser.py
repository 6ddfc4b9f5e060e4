"""Noise predictors F(z, t, C) with an input-gradient (vjp) contract.

Backends:
  - ConstantDenoiser / ScalingDenoiser: trivial stubs for algebra tests.
  - LinearGaussianDenoiser: exact oracle. For data ~ N(mu, Sigma) the noisy
    marginal at step t is N(sqrt(ᾱ_t)·mu, Σ_t) with Σ_t = ᾱ_t·Sigma + (1−ᾱ_t)I,
    and the ideal predictor is the affine map
        F*(z, t) = sqrt(1−ᾱ_t) · Σ_t^{-1} (z − sqrt(ᾱ_t)·mu).
  - MlpDenoiser: two tanh hidden layers (default width 64) with learned
    per-timestep and per-class embeddings added to the first hidden layer;
    forward and reverse passes are hand-rolled NumPy so the input vjp is exact
    and bit-reproducible.

Classifier-free guidance blends conditional and unconditional predictions:
ε̂ = ε_u + w·(ε_c − ε_u); w=1 short-circuits to the conditional evaluation.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    InvalidInputError,
    InvalidParameterError,
    TrainingFailureError,
)
from .optim import AdamState, adam_step
from .rng import derive_rng
from .schedule import NoiseSchedule

UNCONDITIONAL = "unconditional"
CLASS_LABEL = "class"
EMBEDDING = "embedding"


@dataclass(frozen=True)
class Condition:
    """Conditioning input: unconditional, a class id, or a raw embedding row."""

    variant: str
    k: int | None = None
    v: np.ndarray | None = None

    @staticmethod
    def unconditional() -> "Condition":
        return Condition(variant=UNCONDITIONAL)

    @staticmethod
    def class_label(k: int) -> "Condition":
        if k < 0:
            raise InvalidParameterError(f"class label must be >= 0, got {k}", k=k)
        return Condition(variant=CLASS_LABEL, k=int(k))

    @staticmethod
    def embedding(v: np.ndarray) -> "Condition":
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 1:
            raise InvalidParameterError("embedding condition must be a 1-D vector")
        return Condition(variant=EMBEDDING, v=arr)

    def to_json_dict(self) -> dict:
        if self.variant == UNCONDITIONAL:
            return {"variant": UNCONDITIONAL}
        if self.variant == CLASS_LABEL:
            return {"variant": CLASS_LABEL, "k": self.k}
        return {"variant": EMBEDDING, "v": list(map(float, self.v))}

    @staticmethod
    def from_json_dict(d: dict) -> "Condition":
        variant = d.get("variant")
        if variant == UNCONDITIONAL:
            return Condition.unconditional()
        if variant == CLASS_LABEL:
            return Condition.class_label(int(d["k"]))
        if variant == EMBEDDING:
            return Condition.embedding(np.asarray(d["v"], dtype=np.float64))
        raise InvalidParameterError(f"unknown condition variant {variant!r}")


class DenoiserInterface(ABC):
    """The ε-predictor contract: pure eval plus a vector–Jacobian product."""

    latent_dim: int
    supports_exact_vjp: bool = False

    def _check_vec(self, x: np.ndarray, name: str) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.latent_dim,):
            raise DimensionError(
                f"{name} has shape {x.shape}, expected ({self.latent_dim},)"
            )
        return x

    @abstractmethod
    def eval(self, z: np.ndarray, t: int, c: Condition) -> np.ndarray:
        """Predicted noise for latent z at timestep t under condition c."""

    def vjp(self, z: np.ndarray, t: int, c: Condition, v: np.ndarray) -> np.ndarray:
        """vᵀ·(∂eval/∂z); central finite differences with h = 1e-4·(1+|z_i|)."""
        z = self._check_vec(z, "z")
        v = self._check_vec(v, "v")
        out = np.empty_like(z)
        for i in range(z.size):
            h = 1e-4 * (1.0 + abs(z[i]))
            zp = z.copy()
            zm = z.copy()
            zp[i] += h
            zm[i] -= h
            out[i] = float(v @ self.eval(zp, t, c) - v @ self.eval(zm, t, c)) / (2.0 * h)
        return out


class ConstantDenoiser(DenoiserInterface):
    """F(z, t, c) == value for every input; Jacobian is zero."""

    supports_exact_vjp = True

    def __init__(self, latent_dim: int, value: float | np.ndarray = 0.0):
        self.latent_dim = int(latent_dim)
        val = np.asarray(value, dtype=np.float64)
        if val.ndim == 0:
            val = np.full(self.latent_dim, float(val))
        if val.shape != (self.latent_dim,):
            raise DimensionError(f"value shape {val.shape} != ({self.latent_dim},)")
        val.setflags(write=False)
        self.value = val

    def eval(self, z, t, c):
        self._check_vec(z, "z")
        return self.value.copy()

    def vjp(self, z, t, c, v):
        self._check_vec(z, "z")
        self._check_vec(v, "v")
        return np.zeros(self.latent_dim)


class ScalingDenoiser(DenoiserInterface):
    """F(z, t, c) = scale · z at every timestep; Jacobian is scale·I."""

    supports_exact_vjp = True

    def __init__(self, latent_dim: int, scale: float):
        self.latent_dim = int(latent_dim)
        self.scale = float(scale)

    def eval(self, z, t, c):
        z = self._check_vec(z, "z")
        return self.scale * z

    def vjp(self, z, t, c, v):
        self._check_vec(z, "z")
        v = self._check_vec(v, "v")
        return self.scale * v


class LinearGaussianDenoiser(DenoiserInterface):
    """Exact ε-predictor for Gaussian data; affine in z, so the per-timestep
    Jacobian sqrt(1−ᾱ_t)·Σ_t^{-1} is constant and the vjp is exact.

    Conditions are accepted and ignored: the oracle models a single
    unconditional distribution, so conditional and unconditional predictions
    coincide.
    """

    supports_exact_vjp = True

    def __init__(self, mu: np.ndarray, sigma: np.ndarray, sched: NoiseSchedule):
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        if mu.ndim != 1:
            raise InvalidParameterError("mu must be a 1-D vector")
        d = mu.shape[0]
        if sigma.shape != (d, d):
            raise DimensionError(f"sigma shape {sigma.shape} != ({d}, {d})")
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
            raise InvalidParameterError("sigma must be symmetric")
        lam, q = np.linalg.eigh(sigma)
        if lam.min() <= 0.0:
            raise InvalidParameterError(
                f"sigma must be positive definite, min eigenvalue {lam.min()}"
            )
        self.latent_dim = d
        self.mu = mu
        self.sigma = sigma
        self.sched = sched
        self._lam = lam
        self._q = q
        for arr in (self.mu, self.sigma, self._lam, self._q):
            arr.setflags(write=False)

    def _spectrum(self, t: int) -> tuple[float, np.ndarray]:
        ab = self.sched.alpha_bar(t)
        return ab, self._lam * ab + (1.0 - ab)  # eigenvalues of Σ_t

    def eval(self, z, t, c):
        z = self._check_vec(z, "z")
        ab, d_t = self._spectrum(t)
        centered = z - np.sqrt(ab) * self.mu
        w = self._q.T @ centered / d_t
        return np.sqrt(1.0 - ab) * (self._q @ w)

    def vjp(self, z, t, c, v):
        self._check_vec(z, "z")
        v = self._check_vec(v, "v")
        ab, d_t = self._spectrum(t)
        w = self._q.T @ v / d_t
        return np.sqrt(1.0 - ab) * (self._q @ w)


@dataclass(frozen=True)
class MlpTrainConfig:
    width: int = 64
    max_epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    target_loss: float | None = None
    p_uncond: float = 0.1
    holdout_frac: float = 0.0
    n_eval: int = 256
    resample_noise: bool = True  # False = fixed (t, ε) pairs, pure memorization


_PARAM_ORDER = ("w1", "b1", "temb", "cemb", "w2", "b2", "w3", "b3")


class MlpDenoiser(DenoiserInterface):
    """Two-hidden-layer tanh MLP; timestep/class embeddings enter the first
    hidden pre-activation. Embedding conditions must match the hidden width.
    """

    supports_exact_vjp = True

    def __init__(
        self,
        params: dict[str, np.ndarray],
        sched: NoiseSchedule,
        latent_dim: int,
        n_classes: int,
        seed: int = 0,
        final_loss: float | None = None,
        trained_epochs: int = 0,
    ):
        missing = [k for k in _PARAM_ORDER if k not in params]
        if missing:
            raise InvalidInputError(f"missing parameter arrays: {missing}")
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in _PARAM_ORDER}
        for arr in self.params.values():
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError("model parameters must be finite")
            arr.setflags(write=False)
        self.sched = sched
        self.latent_dim = int(latent_dim)
        self.n_classes = int(n_classes)
        self.width = self.params["b1"].shape[0]
        self.seed = int(seed)
        self.final_loss = final_loss
        self.trained_epochs = int(trained_epochs)
        if self.params["w1"].shape != (self.width, self.latent_dim):
            raise DimensionError("w1 shape inconsistent with declared dims")
        if self.params["temb"].shape != (sched.t_train, self.width):
            raise DimensionError("timestep embedding table shape inconsistent")
        if self.params["cemb"].shape != (self.n_classes + 1, self.width):
            raise DimensionError("class embedding table shape inconsistent")

    def condition_row(self, c: Condition) -> np.ndarray:
        if c.variant == UNCONDITIONAL:
            return self.params["cemb"][0]
        if c.variant == CLASS_LABEL:
            if not 0 <= c.k < self.n_classes:
                raise InvalidParameterError(
                    f"class label {c.k} outside [0, {self.n_classes})", k=c.k
                )
            return self.params["cemb"][c.k + 1]
        if c.v.shape != (self.width,):
            raise DimensionError(
                f"embedding condition has shape {c.v.shape}, expected ({self.width},)"
            )
        return c.v

    def _forward(self, z: np.ndarray, t: int, c: Condition):
        p = self.params
        self.sched._check_t(t)
        h1 = np.tanh(p["w1"] @ z + p["b1"] + p["temb"][t - 1] + self.condition_row(c))
        h2 = np.tanh(p["w2"] @ h1 + p["b2"])
        return h1, h2, p["w3"] @ h2 + p["b3"]

    def eval(self, z, t, c):
        z = self._check_vec(z, "z")
        return self._forward(z, t, c)[2]

    def vjp(self, z, t, c, v):
        z = self._check_vec(z, "z")
        v = self._check_vec(v, "v")
        p = self.params
        h1, h2, _ = self._forward(z, t, c)
        u = (p["w3"].T @ v) * (1.0 - h2 * h2)
        u = (p["w2"].T @ u) * (1.0 - h1 * h1)
        return p["w1"].T @ u


def cfg_eval(model: DenoiserInterface, z: np.ndarray, t: int, c: Condition, w: float) -> np.ndarray:
    """Guided prediction ε_u + w·(ε_c − ε_u); w=1 returns eval(z, t, c) bit-exactly."""
    if w == 1.0:
        return model.eval(z, t, c)
    eps_u = model.eval(z, t, Condition.unconditional())
    if w == 0.0:
        return eps_u
    eps_c = model.eval(z, t, c)
    return eps_u + w * (eps_c - eps_u)


def cfg_vjp(
    model: DenoiserInterface, z: np.ndarray, t: int, c: Condition, w: float, v: np.ndarray
) -> np.ndarray:
    """vjp of cfg_eval with respect to z (the blend is affine in the two evals)."""
    if w == 1.0:
        return model.vjp(z, t, c, v)
    vjp_u = model.vjp(z, t, Condition.unconditional(), v)
    if w == 0.0:
        return vjp_u
    vjp_c = model.vjp(z, t, c, v)
    return vjp_u + w * (vjp_c - vjp_u)


def _init_params(rng: np.random.Generator, latent_dim: int, width: int, t_train: int, n_classes: int):
    def xavier(nout, nin):
        return rng.normal(0.0, np.sqrt(2.0 / (nin + nout)), size=(nout, nin))

    return {
        "w1": xavier(width, latent_dim),
        "b1": np.zeros(width),
        "temb": rng.normal(0.0, 1.0 / np.sqrt(width), size=(t_train, width)),
        "cemb": rng.normal(0.0, 1.0 / np.sqrt(width), size=(n_classes + 1, width)),
        "w2": xavier(width, width),
        "b2": np.zeros(width),
        "w3": xavier(latent_dim, width),
        "b3": np.zeros(latent_dim),
    }


def _flatten(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in _PARAM_ORDER])


def _unflatten(flat: np.ndarray, shapes: dict[str, tuple]) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for k in _PARAM_ORDER:
        n = int(np.prod(shapes[k]))
        out[k] = flat[pos : pos + n].reshape(shapes[k])
        pos += n
    return out


def _batch_forward(p, z, t_idx, cond_rows):
    """Batched forward pass; returns caches needed for the parameter gradient."""
    h1p = z @ p["w1"].T + p["b1"] + p["temb"][t_idx] + cond_rows
    h1 = np.tanh(h1p)
    h2p = h1 @ p["w2"].T + p["b2"]
    h2 = np.tanh(h2p)
    out = h2 @ p["w3"].T + p["b3"]
    return h1, h2, out


def _batch_backward(p, z, t_idx, cond_idx, h1, h2, d_out, t_train, n_cemb):
    """Parameter gradients of a batch loss whose output gradient is d_out."""
    g = {}
    g["w3"] = d_out.T @ h2
    g["b3"] = d_out.sum(axis=0)
    d_h2 = (d_out @ p["w3"]) * (1.0 - h2 * h2)
    g["w2"] = d_h2.T @ h1
    g["b2"] = d_h2.sum(axis=0)
    d_h1 = (d_h2 @ p["w2"]) * (1.0 - h1 * h1)
    g["w1"] = d_h1.T @ z
    g["b1"] = d_h1.sum(axis=0)
    g["temb"] = np.zeros((t_train, p["temb"].shape[1]))
    np.add.at(g["temb"], t_idx, d_h1)
    g["cemb"] = np.zeros((n_cemb, p["cemb"].shape[1]))
    np.add.at(g["cemb"], cond_idx, d_h1)
    return g


def train_mlp_denoiser(
    data: np.ndarray,
    sched: NoiseSchedule,
    cfg: MlpTrainConfig,
    labels: np.ndarray | None = None,
) -> MlpDenoiser:
    """Fit the MLP by noise-prediction regression with Adam.

    Draws (t, ε) per example, forms z_t = sqrt(ᾱ_t)·x + sqrt(1−ᾱ_t)·ε and
    regresses the prediction onto ε (mean squared error per coordinate).
    Stops early once the held-out probe loss drops below cfg.target_loss.
    Fully seeded: the same config and data give bit-identical weights.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise InvalidInputError("training data is empty")
    if data.ndim != 2:
        raise InvalidInputError(f"data must be (n, latent_dim), got shape {data.shape}")
    n, latent_dim = data.shape
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise InvalidInputError("labels must align with data rows")
        if labels.min() < 0:
            raise InvalidInputError("labels must be non-negative")
        n_classes = int(labels.max()) + 1
    else:
        n_classes = 0

    params = _init_params(derive_rng(cfg.seed, "mlp-init"), latent_dim, cfg.width, sched.t_train, n_classes)
    shapes = {k: params[k].shape for k in _PARAM_ORDER}
    flat = _flatten(params)
    state = AdamState(lr=cfg.lr)

    split_rng = derive_rng(cfg.seed, "split")
    perm = split_rng.permutation(n)
    n_hold = int(round(cfg.holdout_frac * n))
    hold_idx = perm[:n_hold] if n_hold > 0 else perm
    train_idx = perm[n_hold:] if n_hold > 0 else perm
    if train_idx.size == 0:
        raise InvalidInputError("holdout fraction leaves no training rows")

    fixed = None
    if not cfg.resample_noise:
        frng = derive_rng(cfg.seed, "fixed-noise")
        fixed = (
            frng.integers(1, sched.t_train + 1, size=train_idx.size),
            frng.standard_normal((train_idx.size, latent_dim)),
        )

    if fixed is not None:
        # memorization regime: the probe is the fixed training set itself,
        # so the reported loss is the full-batch training loss
        probe_x = data[train_idx]
        probe_t, probe_eps = fixed
        probe_cond = labels[train_idx] + 1 if labels is not None else np.zeros(train_idx.size, dtype=np.int64)
    else:
        eval_rng = derive_rng(cfg.seed, "eval")
        probe_rows = hold_idx[eval_rng.integers(0, hold_idx.size, size=cfg.n_eval)]
        probe_x = data[probe_rows]
        probe_t = eval_rng.integers(1, sched.t_train + 1, size=cfg.n_eval)
        probe_eps = eval_rng.standard_normal((cfg.n_eval, latent_dim))
        probe_cond = labels[probe_rows] + 1 if labels is not None else np.zeros(cfg.n_eval, dtype=np.int64)

    ab = np.concatenate([[1.0], np.asarray(sched.alpha_bars)])  # ᾱ indexed by t

    def holdout_loss(p) -> float:
        zt = np.sqrt(ab[probe_t])[:, None] * probe_x + np.sqrt(1.0 - ab[probe_t])[:, None] * probe_eps
        _, _, pred = _batch_forward(p, zt, probe_t - 1, p["cemb"][probe_cond])
        return float(np.mean((pred - probe_eps) ** 2))

    achieved = holdout_loss(params)
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        order_rng = derive_rng(cfg.seed, "order", epoch)
        order = order_rng.permutation(train_idx.size)
        bs = min(cfg.batch_size, train_idx.size)
        for bstart in range(0, train_idx.size, bs):
            rows = train_idx[order[bstart : bstart + bs]]
            pos = order[bstart : bstart + bs]
            x = data[rows]
            if fixed is not None:
                t = fixed[0][pos]
                eps = fixed[1][pos]
                cond_idx = labels[rows] + 1 if labels is not None else np.zeros(rows.size, dtype=np.int64)
            else:
                brng = derive_rng(cfg.seed, "noise", epoch, bstart)
                t = brng.integers(1, sched.t_train + 1, size=rows.size)
                eps = brng.standard_normal((rows.size, latent_dim))
                if labels is not None:
                    cond_idx = labels[rows] + 1
                    cond_idx = np.where(brng.random(rows.size) < cfg.p_uncond, 0, cond_idx)
                else:
                    cond_idx = np.zeros(rows.size, dtype=np.int64)
            zt = np.sqrt(ab[t])[:, None] * x + np.sqrt(1.0 - ab[t])[:, None] * eps
            h1, h2, pred = _batch_forward(params, zt, t - 1, params["cemb"][cond_idx])
            resid = pred - eps
            loss = float(np.mean(resid**2))
            if not np.isfinite(loss):
                raise TrainingFailureError(
                    f"training loss became non-finite at epoch {epoch}", epoch=epoch
                )
            d_out = 2.0 * resid / resid.size
            grads = _batch_backward(
                params, zt, t - 1, cond_idx, h1, h2, d_out, sched.t_train, n_classes + 1
            )
            flat, state = adam_step(state, flat, _flatten(grads))
            params = _unflatten(flat, shapes)
        epochs_run = epoch + 1
        achieved = holdout_loss(params)
        if cfg.target_loss is not None and achieved < cfg.target_loss:
            break

    return MlpDenoiser(
        params=params,
        sched=sched,
        latent_dim=latent_dim,
        n_classes=n_classes,
        seed=cfg.seed,
        final_loss=achieved,
        trained_epochs=epochs_run,
    )
