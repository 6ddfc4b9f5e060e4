"""Noise schedules and per-step coefficients of the deterministic sampler.

A schedule is the sequence β_1..β_T with cumulative products
ᾱ_t = ∏_{s≤t}(1−β_s) and the convention ᾱ_0 = 1 (empty product). Every
transition of the sampler/inverter is governed by

    φ_t   = sqrt(ᾱ_{t_prev}/ᾱ_t)
    σ_t   = eta·sqrt(β_t·(1−ᾱ_{t_prev})/(1−ᾱ_t))
    ψ_t   = sqrt(1−ᾱ_{t_prev}−σ_t²) − sqrt((1−ᾱ_t)·ᾱ_{t_prev}/ᾱ_t)

where (t_prev, t) is a grid-adjacent pair of the strided inference grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, InvalidParameterError, OrderingError


@dataclass(frozen=True)
class NoiseSchedule:
    """β_t sequence with cumulative products ᾱ_t; immutable after build.

    betas[i] is β_{i+1}, alpha_bars[i] is ᾱ_{i+1} (timesteps are 1-based);
    ᾱ_0 = 1 is available through :meth:`alpha_bar`.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray
    t_train: int

    def __post_init__(self):
        self.betas.setflags(write=False)
        self.alpha_bars.setflags(write=False)

    def _check_t(self, t: int, lo: int = 1) -> None:
        if not lo <= t <= self.t_train:
            raise BoundsError(
                f"timestep {t} outside [{lo}, {self.t_train}]", t=t, t_train=self.t_train
            )

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])


@dataclass(frozen=True)
class StepCoefficients:
    """(φ, ψ, σ) for one grid transition t_prev -> t."""

    phi: float
    psi: float
    sigma: float
    t: int
    t_prev: int


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly increasing subsequence of {1..T}; last entry is T."""

    steps: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def transitions(self) -> list[tuple[int, int]]:
        """(t_prev, t) pairs walking the grid upward, starting from t=0."""
        prev = 0
        out = []
        for t in self.steps:
            out.append((prev, t))
            prev = t
        return out


def make_linear_schedule(t_train: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Schedule with β linearly interpolated from beta_start to beta_end."""
    if t_train < 1:
        raise InvalidParameterError(f"t_train must be >= 1, got {t_train}", t_train=t_train)
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})",
            beta_start=beta_start,
            beta_end=beta_end,
        )
    betas = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars, t_train=t_train)


def coefficients(sched: NoiseSchedule, t: int, t_prev: int, eta: float = 0.0) -> StepCoefficients:
    """(φ, ψ, σ) for the transition t_prev -> t; eta=0 is the deterministic case."""
    if t_prev >= t:
        raise OrderingError(f"t_prev must be < t, got t_prev={t_prev}, t={t}", t=t, t_prev=t_prev)
    if not 0.0 <= eta <= 1.0:
        raise InvalidParameterError(f"eta must lie in [0, 1], got {eta}", eta=eta)
    if t_prev < 0:
        raise BoundsError(f"t_prev must be >= 0, got {t_prev}", t_prev=t_prev)
    ab_t = sched.alpha_bar(t)
    ab_p = sched.alpha_bar(t_prev)
    phi = np.sqrt(ab_p / ab_t)
    sigma = eta * np.sqrt(sched.beta(t) * (1.0 - ab_p) / (1.0 - ab_t))
    psi = np.sqrt(1.0 - ab_p - sigma * sigma) - np.sqrt((1.0 - ab_t) * ab_p / ab_t)
    return StepCoefficients(phi=float(phi), psi=float(psi), sigma=float(sigma), t=t, t_prev=t_prev)


def skip_coefficients(sched: NoiseSchedule, dt: int) -> tuple[float, float]:
    """(φ_{0,δt}, ψ_{0,δt}) of the direct 0 -> δt jump.

    With ᾱ_0 = 1 these reduce to φ = ᾱ_{δt}^{-1/2}, ψ = −sqrt((1−ᾱ_{δt})/ᾱ_{δt});
    identical to coefficients(t=δt, t_prev=0, eta=0).
    """
    if not 1 <= dt <= sched.t_train:
        raise BoundsError(f"dt {dt} outside [1, {sched.t_train}]", dt=dt)
    ab = sched.alpha_bar(dt)
    phi = np.sqrt(1.0 / ab)
    psi = -np.sqrt((1.0 - ab) * 1.0 / ab)
    return float(phi), float(psi)


def make_uniform_grid(sched: NoiseSchedule, s: int) -> TimestepGrid:
    """s evenly strided steps ending at t_train."""
    if not 1 <= s <= sched.t_train:
        raise InvalidParameterError(
            f"grid size {s} outside [1, {sched.t_train}]", s=s, t_train=sched.t_train
        )
    steps = tuple(sched.t_train * (k + 1) // s for k in range(s))
    return TimestepGrid(steps=steps)
