"""Binary container for trained models.

Layout: the 8-byte magic "LABMDL1\\n", an 8-byte little-endian header length,
a JSON header (kind, dims, schedule parameters, seed, array manifest), then
each manifest array as raw little-endian float64 in declared order. The
schedule travels as its beta array so any schedule round-trips exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autoencoder import IdentityAutoencoder, LinearAutoencoder
from .denoiser import _PARAM_ORDER, LinearGaussianDenoiser, MlpDenoiser
from .errors import FormatError
from .schedule import NoiseSchedule

MAGIC = b"LABMDL1\n"


def _schedule_payload(sched: NoiseSchedule) -> tuple[dict, list]:
    return {"t_train": sched.t_train}, [("betas", np.asarray(sched.betas))]


def _schedule_from(header: dict, arrays: dict) -> NoiseSchedule:
    betas = arrays["betas"]
    return NoiseSchedule(
        betas=betas,
        alpha_bars=np.cumprod(1.0 - betas),
        t_train=int(header["schedule"]["t_train"]),
    )


def _mlp_payload(model: MlpDenoiser):
    header = {
        "kind": "mlp-denoiser",
        "dims": {
            "latent_dim": model.latent_dim,
            "n_classes": model.n_classes,
            "width": int(model.width),
        },
        "seed": model.seed,
        "final_loss": model.final_loss,
        "trained_epochs": model.trained_epochs,
    }
    arrays = [(name, model.params[name]) for name in _PARAM_ORDER]
    return header, arrays


def _mlp_load(header: dict, arrays: dict) -> MlpDenoiser:
    return MlpDenoiser(
        params={name: arrays[name] for name in _PARAM_ORDER},
        sched=_schedule_from(header, arrays),
        latent_dim=int(header["dims"]["latent_dim"]),
        n_classes=int(header["dims"]["n_classes"]),
        seed=int(header["seed"]),
        final_loss=header.get("final_loss"),
        trained_epochs=int(header.get("trained_epochs", 0)),
    )


def _gauss_payload(model: LinearGaussianDenoiser):
    header = {
        "kind": "linear-gaussian-denoiser",
        "dims": {"latent_dim": model.latent_dim},
        "seed": 0,
    }
    return header, [("mu", model.mu), ("sigma", model.sigma)]


def _gauss_load(header: dict, arrays: dict) -> LinearGaussianDenoiser:
    return LinearGaussianDenoiser(arrays["mu"], arrays["sigma"], _schedule_from(header, arrays))


def _linear_ae_payload(model: LinearAutoencoder):
    header = {
        "kind": "linear-autoencoder",
        "dims": {"image_shape": list(model.image_shape), "latent_dim": model.latent_dim},
        "seed": 0,
    }
    arrays = [("w", model.w), ("mean", model.mean)]
    if model.leak is not None:
        arrays.append(("leak", model.leak))
    return header, arrays


def _linear_ae_load(header: dict, arrays: dict) -> LinearAutoencoder:
    return LinearAutoencoder(
        arrays["w"],
        arrays["mean"],
        tuple(header["dims"]["image_shape"]),
        leak=arrays.get("leak"),
    )


def _identity_ae_payload(model: IdentityAutoencoder):
    header = {
        "kind": "identity-autoencoder",
        "dims": {"image_shape": list(model.image_shape)},
        "seed": 0,
    }
    return header, []


def _identity_ae_load(header: dict, arrays: dict) -> IdentityAutoencoder:
    return IdentityAutoencoder(tuple(header["dims"]["image_shape"]))


_LOADERS = {
    "mlp-denoiser": _mlp_load,
    "linear-gaussian-denoiser": _gauss_load,
    "linear-autoencoder": _linear_ae_load,
    "identity-autoencoder": _identity_ae_load,
}


def _payload_for(model):
    if isinstance(model, MlpDenoiser):
        header, arrays = _mlp_payload(model)
    elif isinstance(model, LinearGaussianDenoiser):
        header, arrays = _gauss_payload(model)
    elif isinstance(model, LinearAutoencoder):
        header, arrays = _linear_ae_payload(model)
    elif isinstance(model, IdentityAutoencoder):
        header, arrays = _identity_ae_payload(model)
    else:
        raise FormatError(f"no persistence handler for {type(model).__name__}")
    sched = getattr(model, "sched", None)
    if sched is not None:
        sched_header, sched_arrays = _schedule_payload(sched)
        header["schedule"] = sched_header
        arrays = arrays + sched_arrays
    return header, arrays


def save_model(model, path) -> None:
    header, arrays = _payload_for(model)
    header["arrays"] = [{"name": name, "shape": list(np.asarray(a).shape)} for name, a in arrays]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic in {path}")
    off = len(MAGIC)
    if len(raw) < off + 8:
        raise FormatError(f"truncated header length in {path}")
    (hlen,) = struct.unpack("<Q", raw[off : off + 8])
    off += 8
    if len(raw) < off + hlen:
        raise FormatError(f"truncated header in {path}")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable header in {path}: {e}") from None
    off += hlen
    kind = header.get("kind")
    if kind not in _LOADERS:
        raise FormatError(f"unknown model kind {kind!r} in {path}")
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        if len(raw) < off + nbytes:
            raise FormatError(f"truncated array {entry['name']!r} in {path}")
        arrays[entry["name"]] = np.frombuffer(raw[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise FormatError(f"{len(raw) - off} trailing bytes in {path}")
    return _LOADERS[kind](header, arrays)
