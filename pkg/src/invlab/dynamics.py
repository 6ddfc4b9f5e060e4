"""Forward noising and the deterministic generation / inversion dynamics.

One backward transition on the grid pair (t_prev, t) is

    z_{t_prev} = φ_t·z_t + ψ_t·F̂(z_t, t, C) + σ_t·ε        (generation)
    z_t       = (1/φ_t)·z_{t_prev} − (ψ_t/φ_t)·F̂(z_{t_prev}, t, C)   (inversion)

with F̂ the guided prediction. The inversion step evaluates the model at the
*target* timestep t; for a constant model the two maps are exact inverses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import Condition, DenoiserInterface, cfg_eval
from .errors import DimensionError, InvalidParameterError, MissingNoiseError
from .schedule import NoiseSchedule, TimestepGrid, coefficients

GENERATION = "generation"
INVERSION = "inversion"


@dataclass(frozen=True)
class Trajectory:
    """Ordered (timestep, latent) pairs from one sweep, endpoints included.

    Timesteps decrease for generation sweeps and increase for inversion
    sweeps; index 0 is always the sweep's starting point.
    """

    entries: tuple[tuple[int, np.ndarray], ...]
    direction: str
    grid: TimestepGrid
    guidance: float
    condition: Condition

    def timesteps(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.entries)

    def latent_at(self, t: int) -> np.ndarray:
        for ti, z in self.entries:
            if ti == t:
                return z
        raise InvalidParameterError(f"timestep {t} not on trajectory")

    @property
    def start(self) -> np.ndarray:
        return self.entries[0][1]

    @property
    def end(self) -> np.ndarray:
        return self.entries[-1][1]

    def to_json_dict(self) -> dict:
        return {
            "direction": self.direction,
            "guidance": self.guidance,
            "condition": self.condition.to_json_dict(),
            "grid": list(self.grid.steps),
            "entries": [{"t": t, "z": list(map(float, z))} for t, z in self.entries],
        }


def _check_shapes(a: np.ndarray, b: np.ndarray, names: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"{names}: shapes {a.shape} and {b.shape} differ")
    return a, b


def forward_noise(sched: NoiseSchedule, z0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """Closed-form jump to step t: sqrt(ᾱ_t)·z0 + sqrt(1−ᾱ_t)·eps."""
    z0, eps = _check_shapes(z0, eps, "z0/eps")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def forward_step(sched: NoiseSchedule, z_prev: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """Single Markov step: sqrt(1−β_t)·z_{t−1} + sqrt(β_t)·eps."""
    z_prev, eps = _check_shapes(z_prev, eps, "z_prev/eps")
    beta = sched.beta(t)
    return np.sqrt(1.0 - beta) * z_prev + np.sqrt(beta) * eps


def generate_step(
    model: DenoiserInterface,
    sched: NoiseSchedule,
    z_t: np.ndarray,
    t: int,
    t_prev: int,
    c: Condition,
    w: float = 1.0,
    eta: float = 0.0,
    eps: np.ndarray | None = None,
) -> np.ndarray:
    """One backward transition t -> t_prev; eta=0 is fully deterministic."""
    z_t = np.asarray(z_t, dtype=np.float64)
    co = coefficients(sched, t, t_prev, eta)
    out = co.phi * z_t + co.psi * cfg_eval(model, z_t, t, c, w)
    if eta > 0.0:
        if eps is None:
            raise MissingNoiseError("eta > 0 requires an eps sample")
        _, eps = _check_shapes(z_t, eps, "z_t/eps")
        out = out + co.sigma * eps
    return out


def ddim_invert_step(
    model: DenoiserInterface,
    sched: NoiseSchedule,
    z_prev: np.ndarray,
    t_prev: int,
    t: int,
    c: Condition,
    w: float = 1.0,
) -> np.ndarray:
    """One inversion transition t_prev -> t (exact algebraic reversal of the
    deterministic generation step under the adjacent-step approximation)."""
    z_prev = np.asarray(z_prev, dtype=np.float64)
    co = coefficients(sched, t, t_prev, 0.0)
    return (1.0 / co.phi) * z_prev - (co.psi / co.phi) * cfg_eval(model, z_prev, t, c, w)


def generate_trajectory(
    model: DenoiserInterface,
    sched: NoiseSchedule,
    grid: TimestepGrid,
    z_T: np.ndarray,
    c: Condition,
    w: float = 1.0,
) -> Trajectory:
    """Full deterministic sweep from z_T down to z_0 along the grid."""
    if len(grid) == 0:
        raise InvalidParameterError("grid is empty")
    z = np.asarray(z_T, dtype=np.float64)
    entries = [(grid.steps[-1], z.copy())]
    transitions = grid.transitions()
    for t_prev, t in reversed(transitions):
        z = generate_step(model, sched, z, t, t_prev, c, w)
        entries.append((t_prev, z.copy()))
    return Trajectory(
        entries=tuple(entries), direction=GENERATION, grid=grid, guidance=float(w), condition=c
    )


def ddim_invert_trajectory(
    model: DenoiserInterface,
    sched: NoiseSchedule,
    grid: TimestepGrid,
    z_0: np.ndarray,
    c: Condition,
    w: float = 1.0,
) -> Trajectory:
    """Full inversion sweep from z_0 up to z_T along the grid."""
    if len(grid) == 0:
        raise InvalidParameterError("grid is empty")
    z = np.asarray(z_0, dtype=np.float64)
    entries = [(0, z.copy())]
    for t_prev, t in grid.transitions():
        z = ddim_invert_step(model, sched, z, t_prev, t, c, w)
        entries.append((t, z.copy()))
    return Trajectory(
        entries=tuple(entries), direction=INVERSION, grid=grid, guidance=float(w), condition=c
    )
