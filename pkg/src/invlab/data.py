"""Procedural datasets and their canonical JSON on-disk form.

Two kinds: "shapes" renders small grayscale images of random rectangles,
discs and ramps (with large exactly-flat 0.0/1.0 regions, so clamping after
a lossy decode has something to bite on), and "gauss2d" draws labeled
samples from a Gaussian mixture for denoiser training. Files are JSON with
sorted keys and compact separators, so one (kind, n, seed, params) always
produces the same bytes.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import InvalidParameterError
from .rng import derive_rng

KINDS = ("gauss2d", "shapes")


def _pick_level(rng) -> float:
    """Mostly saturated values: 0.0 and 1.0 each ~30%, otherwise uniform."""
    r = rng.uniform()
    if r < 0.3:
        return 0.0
    if r < 0.6:
        return 1.0
    return float(rng.uniform(0.1, 0.9))


def _draw_rect(img, rng, value):
    h, w = img.shape
    y0 = int(rng.integers(0, h - 1))
    x0 = int(rng.integers(0, w - 1))
    y1 = int(rng.integers(y0 + 1, h + 1))
    x1 = int(rng.integers(x0 + 1, w + 1))
    img[y0:y1, x0:x1] = value


def _draw_disc(img, rng, value):
    h, w = img.shape
    cy = rng.uniform(0, h)
    cx = rng.uniform(0, w)
    rad = rng.uniform(2.0, min(h, w) / 2.5)
    yy, xx = np.mgrid[0:h, 0:w]
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad] = value


def _draw_ramp(img, rng, value):
    h, w = img.shape
    v2 = float(rng.uniform())
    y0 = int(rng.integers(0, h - 3))
    x0 = int(rng.integers(0, w - 3))
    y1 = int(rng.integers(y0 + 3, h + 1))
    x1 = int(rng.integers(x0 + 3, w + 1))
    ramp = np.linspace(value, v2, x1 - x0)
    if rng.uniform() < 0.5:
        img[y0:y1, x0:x1] = ramp[np.newaxis, :]
    else:
        ramp = np.linspace(value, v2, y1 - y0)
        img[y0:y1, x0:x1] = ramp[:, np.newaxis]


def make_shapes(n: int, seed: int, height: int = 16, width: int = 16,
                tag: str = "shapes") -> np.ndarray:
    """(n, height, width, 1) float64 images in [0, 1].

    Image i depends only on (seed, tag, i), so disjoint tags give disjoint
    deterministic streams (e.g. benchmark instances vs backend-fitting data).
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    if height < 4 or width < 4:
        raise InvalidParameterError(f"images must be at least 4x4, got {height}x{width}")
    out = np.empty((n, height, width, 1))
    for i in range(n):
        rng = derive_rng(seed, tag, i)
        img = np.full((height, width), _pick_level(rng))
        for _ in range(int(rng.integers(2, 5))):
            kind = int(rng.integers(0, 3))
            value = _pick_level(rng)
            (_draw_rect, _draw_disc, _draw_ramp)[kind](img, rng, value)
        out[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return out


def make_gauss_mixture(n: int, seed: int, dim: int = 2, n_classes: int = 3,
                       spread: float = 2.0, noise: float = 0.35):
    """Labeled mixture draws: (samples (n, dim), labels (n,), means (k, dim)).

    Class means sit on a circle in the first two coordinates; remaining
    coordinates are zero-mean. Component covariance is noise²·I.
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    if dim < 1 or n_classes < 1:
        raise InvalidParameterError(f"need dim >= 1 and n_classes >= 1, got {dim}, {n_classes}")
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, dim))
    means[:, 0] = spread * np.cos(angles)
    if dim > 1:
        means[:, 1] = spread * np.sin(angles)
    rng = derive_rng(seed, "gauss2d")
    labels = rng.integers(0, n_classes, size=n)
    samples = means[labels] + noise * rng.standard_normal((n, dim))
    return samples, labels.astype(np.int64), means


def gen_dataset(kind: str, n: int, seed: int, params: dict | None = None) -> dict:
    """Dataset payload ready for canonical JSON serialization."""
    params = dict(params or {})
    if kind == "shapes":
        height = int(params.pop("height", 16))
        width = int(params.pop("width", 16))
        _reject_extra(params)
        images = make_shapes(n, seed, height, width)
        return {
            "kind": "shapes",
            "n": n,
            "seed": seed,
            "height": height,
            "width": width,
            "channels": 1,
            "images": images.tolist(),
        }
    if kind == "gauss2d":
        dim = int(params.pop("dim", 2))
        n_classes = int(params.pop("n_classes", 3))
        spread = float(params.pop("spread", 2.0))
        noise = float(params.pop("noise", 0.35))
        _reject_extra(params)
        samples, labels, means = make_gauss_mixture(n, seed, dim, n_classes, spread, noise)
        return {
            "kind": "gauss2d",
            "n": n,
            "seed": seed,
            "dim": dim,
            "n_classes": n_classes,
            "spread": spread,
            "noise": noise,
            "means": means.tolist(),
            "samples": samples.tolist(),
            "labels": labels.tolist(),
        }
    raise InvalidParameterError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")


def _reject_extra(params: dict) -> None:
    if params:
        raise InvalidParameterError(f"unknown dataset params: {sorted(params)}")


def save_dataset(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, separators=(",", ":")))
        f.write("\n")


def load_dataset(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("kind") == "shapes":
        payload["images"] = np.asarray(payload["images"], dtype=np.float64)
    elif payload.get("kind") == "gauss2d":
        payload["samples"] = np.asarray(payload["samples"], dtype=np.float64)
        payload["labels"] = np.asarray(payload["labels"], dtype=np.int64)
        payload["means"] = np.asarray(payload["means"], dtype=np.float64)
    else:
        raise InvalidParameterError(f"unknown dataset kind {payload.get('kind')!r} in {path}")
    return payload
