"""Per-step latent bias optimization for inverting deterministic sampling.

One generation transition maps z_t to z_prev = φ·z_t + ψ·F̂(z_t, t, C).
Inverting it exactly means solving a fixed-point problem in z_t; the plain
reverse step approximates F̂ at the wrong point. Here the unknown is the
bias b = z_t − z_prev and three refinement modes are offered:

  numerical  fixed-point iteration b ← bias_target(z_prev + b)
  gradient   Adam on J(b) = mean|b − bias_target(z_prev + b)|
  hybrid     a few gradient steps to settle into the basin, then numerical

All modes start from the one-shot inversion bias and report per-step
iteration counts and residuals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .denoiser import Condition, DenoiserInterface, cfg_eval, cfg_vjp
from .dynamics import INVERSION, Trajectory, ddim_invert_step, generate_step
from .errors import DivergenceError, InvalidParameterError
from .optim import AdamState, adam_step
from .schedule import NoiseSchedule, TimestepGrid, coefficients

_MODES = ("numerical", "gradient", "hybrid")
_DEFAULT_ITERS = {"numerical": 15, "gradient": 20, "hybrid": 15}


@dataclass(frozen=True)
class LboConfig:
    mode: str = "numerical"
    max_iters: Optional[int] = None
    tol: float = 1e-8
    lr: float = 1e-3
    n_grad_warmup: int = 5
    guidance_w: float = 1.0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise InvalidParameterError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.max_iters is None:
            object.__setattr__(self, "max_iters", _DEFAULT_ITERS[self.mode])
        if not isinstance(self.max_iters, int) or self.max_iters < 0:
            raise InvalidParameterError(f"max_iters must be a non-negative int, got {self.max_iters}")
        if self.tol <= 0:
            raise InvalidParameterError(f"tol must be > 0, got {self.tol}")
        if self.lr <= 0:
            raise InvalidParameterError(f"lr must be > 0, got {self.lr}")
        if self.n_grad_warmup < 0:
            raise InvalidParameterError(f"n_grad_warmup must be >= 0, got {self.n_grad_warmup}")


@dataclass(frozen=True)
class LboStepReport:
    t: int
    iters: int
    residual: float
    converged: bool

    def to_json_dict(self) -> dict:
        return {"t": self.t, "iters": self.iters, "residual": self.residual, "converged": self.converged}


def init_bias(model: DenoiserInterface, sched: NoiseSchedule, z_prev: np.ndarray,
              t_prev: int, t: int, c: Condition, w: float = 1.0) -> np.ndarray:
    """Bias implied by the one-shot reverse step: invert(z_prev) − z_prev."""
    return ddim_invert_step(model, sched, z_prev, t_prev, t, c, w) - z_prev


def bias_target(model: DenoiserInterface, sched: NoiseSchedule, z: np.ndarray,
                t: int, t_prev: int, c: Condition, w: float = 1.0) -> np.ndarray:
    """Bias that candidate z would need to be self-consistent: z − generate(z).

    At the true preimage, generate_step lands exactly on z_prev and the
    returned value equals z − z_prev.
    """
    return z - generate_step(model, sched, z, t, t_prev, c, w)


def lbo_numerical_iterate(model: DenoiserInterface, sched: NoiseSchedule,
                          z_prev: np.ndarray, t_prev: int, t: int, c: Condition,
                          w: float, b: np.ndarray) -> np.ndarray:
    """One fixed-point sweep b ← bias_target(z_prev + b).

    A fixed point b* makes (z_prev, z_prev + b*) an exact generation pair.
    """
    b_next = bias_target(model, sched, z_prev + b, t, t_prev, c, w)
    if not np.all(np.isfinite(b_next)):
        raise DivergenceError("numerical sweep produced non-finite bias", t=t)
    return b_next


def _numerical_loop(model, sched, z_prev, t_prev, t, c, w, b, budget, tol):
    iters = 0
    residual = float("inf")
    while iters < budget and residual >= tol:
        try:
            b_next = lbo_numerical_iterate(model, sched, z_prev, t_prev, t, c, w, b)
        except DivergenceError as e:
            raise DivergenceError(str(e), t=t, iteration=iters + 1) from None
        residual = float(np.max(np.abs(b_next - b)))
        b = b_next
        iters += 1
    return b, iters, residual


def objective_and_grad(model, sched, z_prev, t_prev, t, c, w, b):
    """J(b) = mean|G(z_prev+b) − z_prev| and its exact gradient.

    b − bias_target(z_prev + b) telescopes to generate_step(z_prev+b) − z_prev,
    so the chain rule only passes through one denoiser evaluation.
    """
    co = coefficients(sched, t, t_prev)
    z = z_prev + b
    r = co.phi * z + co.psi * cfg_eval(model, z, t, c, w) - z_prev
    s = np.sign(r)
    grad = (co.phi * s + co.psi * cfg_vjp(model, z, t, c, w, s)) / r.size
    return float(np.mean(np.abs(r))), grad


def lbo_gradient_iterate(model: DenoiserInterface, sched: NoiseSchedule,
                         z_prev: np.ndarray, t_prev: int, t: int, c: Condition,
                         w: float, b: np.ndarray, state: AdamState
                         ) -> tuple[np.ndarray, AdamState, float]:
    """One Adam step on J(b); returns (b_next, state, J at the pre-step b)."""
    value, grad = objective_and_grad(model, sched, z_prev, t_prev, t, c, w, b)
    if not np.isfinite(value):
        raise DivergenceError("gradient objective became non-finite", t=t)
    b_next, state = adam_step(state, b, grad)
    return b_next, state, value


def _gradient_loop(model, sched, z_prev, t_prev, t, c, w, b, budget, tol, lr,
                   check_tol=True):
    state = AdamState(lr=lr)
    iters = 0
    residual = float("inf")
    while iters < budget and (not check_tol or residual >= tol):
        try:
            b, state, residual = lbo_gradient_iterate(
                model, sched, z_prev, t_prev, t, c, w, b, state)
        except DivergenceError as e:
            raise DivergenceError(str(e), t=t, iteration=iters + 1) from None
        iters += 1
    return b, iters, residual


def lbo_invert_step(model: DenoiserInterface, sched: NoiseSchedule, z_prev: np.ndarray,
                    t_prev: int, t: int, c: Condition,
                    cfg: LboConfig = LboConfig()) -> tuple[np.ndarray, LboStepReport]:
    """Invert one transition; returns (z_t, step report).

    With max_iters=0 this returns the unrefined one-shot inversion unchanged.
    """
    w = cfg.guidance_w
    y0 = ddim_invert_step(model, sched, z_prev, t_prev, t, c, w)
    if cfg.max_iters == 0:
        return y0, LboStepReport(t=t, iters=0, residual=float("inf"), converged=False)
    b = y0 - z_prev
    if cfg.mode == "numerical":
        b, iters, residual = _numerical_loop(
            model, sched, z_prev, t_prev, t, c, w, b, cfg.max_iters, cfg.tol)
    elif cfg.mode == "gradient":
        b, iters, residual = _gradient_loop(
            model, sched, z_prev, t_prev, t, c, w, b, cfg.max_iters, cfg.tol, cfg.lr)
    else:
        warmup = min(cfg.n_grad_warmup, cfg.max_iters)
        b, g_iters, _ = _gradient_loop(
            model, sched, z_prev, t_prev, t, c, w, b, warmup, cfg.tol, cfg.lr,
            check_tol=False)
        b, n_iters, residual = _numerical_loop(
            model, sched, z_prev, t_prev, t, c, w, b, cfg.max_iters - warmup, cfg.tol)
        iters = g_iters + n_iters
    return z_prev + b, LboStepReport(
        t=t, iters=iters, residual=residual, converged=residual < cfg.tol)


def lbo_invert_trajectory(model: DenoiserInterface, sched: NoiseSchedule,
                          grid: TimestepGrid, z_0: np.ndarray, c: Condition,
                          cfg: LboConfig = LboConfig()
                          ) -> tuple[Trajectory, list[LboStepReport]]:
    """Run refined inversion across the whole grid, from data to noise."""
    z = np.asarray(z_0, dtype=np.float64)
    entries = [(0, z.copy())]
    reports = []
    for t_prev, t in grid.transitions():
        z, rep = lbo_invert_step(model, sched, z, t_prev, t, c, cfg)
        entries.append((t, z.copy()))
        reports.append(rep)
    traj = Trajectory(entries=tuple(entries), direction=INVERSION, grid=grid,
                      guidance=cfg.guidance_w, condition=c)
    return traj, reports
