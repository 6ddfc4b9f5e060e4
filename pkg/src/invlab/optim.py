"""Shared Adam optimizer and finite-difference gradient checker.

Adam is the standard bias-corrected form:

    m ← β1·m + (1−β1)·g          m̂ = m/(1−β1^k)
    v ← β2·v + (1−β2)·g²         v̂ = v/(1−β2^k)
    x ← x − lr·m̂/(sqrt(v̂) + ε)
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import DivergenceError, InvalidInputError


@dataclass(frozen=True)
class AdamState:
    lr: float
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(state: AdamState, x: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns (x_next, state_next)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise InvalidInputError(
            f"grad shape {grad.shape} does not match x shape {x.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient passed to adam_step")
    m = state.m if state.m is not None else np.zeros_like(x)
    v = state.v if state.v is not None else np.zeros_like(x)
    k = state.step_count + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**k)
    v_hat = v / (1.0 - state.beta2**k)
    x_next = x - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return x_next, replace(state, m=m, v=v, step_count=k)


def gradient_check(
    f: Callable[[np.ndarray], float],
    grad_f: np.ndarray,
    x: np.ndarray,
    h_rel: float = 1e-6,
) -> float:
    """Max relative error of grad_f against central differences of f at x.

    Per-coordinate step h_i = h_rel·(1+|x_i|); relative error uses the
    finite-difference value as reference with an absolute floor of 1e-12.
    """
    x = np.asarray(x, dtype=np.float64)
    grad_f = np.asarray(grad_f, dtype=np.float64)
    if grad_f.shape != x.shape:
        raise InvalidInputError(
            f"gradient shape {grad_f.shape} does not match probe shape {x.shape}"
        )
    worst = 0.0
    flat = x.ravel()
    for i in range(flat.size):
        h = h_rel * (1.0 + abs(flat[i]))
        xp = x.copy().ravel()
        xm = x.copy().ravel()
        xp[i] += h
        xm[i] -= h
        fp = f(xp.reshape(x.shape))
        fm = f(xm.reshape(x.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DivergenceError(f"non-finite evaluation during gradient check at coordinate {i}")
        fd = (fp - fm) / (2.0 * h)
        err = abs(grad_f.ravel()[i] - fd) / max(abs(fd), 1e-12)
        worst = max(worst, err)
    return float(worst)
