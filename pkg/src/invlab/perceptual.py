"""Feature-space image distance from a small fixed random conv stack.

This is a lightweight stand-in for a learned perceptual metric, not a
pretrained one: two valid-mode 3×3 conv layers with tanh activations and
frozen random weights. Per layer the features are l2-normalized across
channels at every spatial position and the distance is the sum over layers
of the mean squared feature difference. Random projections preserve enough
geometry for the distance to order reconstructions sensibly at this scale,
while staying exactly differentiable by hand.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d, correlate2d

from .errors import DimensionError
from .metrics import PerceptualMetricInterface
from .rng import derive_rng

_NORM_EPS = 1e-10


def _conv_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x: (c_in, h, w), kernels: (c_out, c_in, 3, 3) -> (c_out, h-2, w-2)."""
    c_out = kernels.shape[0]
    h, w = x.shape[1] - 2, x.shape[2] - 2
    out = np.empty((c_out, h, w))
    for o in range(c_out):
        acc = np.zeros((h, w))
        for i in range(x.shape[0]):
            acc += correlate2d(x[i], kernels[o, i], mode="valid")
        out[o] = acc + bias[o]
    return out


def _conv_input_vjp(u: np.ndarray, kernels: np.ndarray, in_shape: tuple) -> np.ndarray:
    """Adjoint of _conv_forward with respect to its input."""
    grad = np.zeros(in_shape)
    for o in range(kernels.shape[0]):
        for i in range(in_shape[0]):
            grad[i] += convolve2d(u[o], kernels[o, i], mode="full")
    return grad


def _normalize(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize across the channel axis; returns (g, norms)."""
    s = np.sqrt(np.sum(f * f, axis=0, keepdims=True))
    return f / (s + _NORM_EPS), s


def _normalize_vjp(f: np.ndarray, s: np.ndarray, u: np.ndarray) -> np.ndarray:
    eta = s + _NORM_EPS
    dot = np.sum(u * f, axis=0, keepdims=True)
    scale = np.where(s > _NORM_EPS, dot / (eta * eta * np.maximum(s, _NORM_EPS)), 0.0)
    return u / eta - f * scale


class RandomConvPerceptual(PerceptualMetricInterface):
    """Frozen-random two-layer conv feature distance on (h, w, c) images."""

    def __init__(self, image_shape: tuple, seed: int = 0, widths: tuple = (8, 16)):
        if len(image_shape) != 3:
            raise DimensionError(f"image_shape must be (h, w, c), got {image_shape}")
        h, w, c = image_shape
        # two valid 3×3 layers eat 4 pixels per axis
        if h < 5 or w < 5:
            raise DimensionError(f"images must be at least 5x5, got {h}x{w}")
        self.image_shape = (int(h), int(w), int(c))
        self.seed = int(seed)
        self.widths = (int(widths[0]), int(widths[1]))
        rng = derive_rng(self.seed, "perceptual-init")
        c1, c2 = self.widths
        self.k1 = rng.normal(0.0, np.sqrt(2.0 / (c * 9)), size=(c1, c, 3, 3))
        self.b1 = rng.normal(0.0, 0.1, size=c1)
        self.k2 = rng.normal(0.0, np.sqrt(2.0 / (c1 * 9)), size=(c2, c1, 3, 3))
        self.b2 = rng.normal(0.0, 0.1, size=c2)
        for a in (self.k1, self.b1, self.k2, self.b2):
            a.setflags(write=False)

    def _check(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        if img.shape != self.image_shape:
            raise DimensionError(f"expected image {self.image_shape}, got {img.shape}")
        return img

    def _features(self, img: np.ndarray):
        x = np.moveaxis(img, 2, 0)
        f1 = np.tanh(_conv_forward(x, self.k1, self.b1))
        f2 = np.tanh(_conv_forward(f1, self.k2, self.b2))
        g1, s1 = _normalize(f1)
        g2, s2 = _normalize(f2)
        return f1, g1, s1, f2, g2, s2

    def distance(self, x: np.ndarray, y: np.ndarray) -> float:
        x = self._check(x)
        y = self._check(y)
        _, gx1, _, _, gx2, _ = self._features(x)
        _, gy1, _, _, gy2, _ = self._features(y)
        return float(np.mean((gx1 - gy1) ** 2) + np.mean((gx2 - gy2) ** 2))

    def grad_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = self._check(x)
        y = self._check(y)
        _, gx1, _, _, gx2, _ = self._features(x)
        f1, gy1, s1, f2, gy2, s2 = self._features(y)
        u_g1 = 2.0 * (gy1 - gx1) / gy1.size
        u_g2 = 2.0 * (gy2 - gx2) / gy2.size
        u_pre2 = _normalize_vjp(f2, s2, u_g2) * (1.0 - f2 * f2)
        # f1 feeds both its own distance term and the second conv layer
        u_f1 = _normalize_vjp(f1, s1, u_g1) + _conv_input_vjp(u_pre2, self.k2, f1.shape)
        u_pre1 = u_f1 * (1.0 - f1 * f1)
        grad = _conv_input_vjp(u_pre1, self.k1, (self.image_shape[2],) + self.image_shape[:2])
        return np.moveaxis(grad, 0, 2)
