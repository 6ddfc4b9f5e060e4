"""Seeded inversion benchmark: methods × instances -> CSV rows + JSON summary.

Per instance and method the pipeline is: encode (optionally refined by latent
boosting) -> inversion to z_T -> deterministic generation replay -> decode ->
metrics against the source image. Every random choice derives from the master
seed and the instance id, so rows are reproducible independently of execution
order; results are sorted by (instance_id, method) before writing and the
CSV/JSON bytes are identical whether instances run serially or in a thread
pool. Wall-clock timing is recorded only on request because timings are the
one quantity that cannot be byte-reproducible; the default writes 0.0.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import IdentityAutoencoder, fit_linear_autoencoder
from .data import load_dataset, make_shapes
from .denoiser import Condition, LinearGaussianDenoiser, MlpTrainConfig, train_mlp_denoiser
from .dynamics import ddim_invert_trajectory, generate_trajectory
from .errors import ConfigError
from .ilb import IlbConfig, ilb_optimize
from .lbo import LboConfig, lbo_invert_trajectory
from .metrics import psnr, ssim
from .modelio import load_model
from .perceptual import RandomConvPerceptual
from .rng import derive_rng
from .schedule import make_linear_schedule, make_uniform_grid

BASE_METHODS = ("ddim", "lbo-g", "lbo-n", "lbo-h")
LBO_MODES = {"lbo-g": "gradient", "lbo-n": "numerical", "lbo-h": "hybrid"}

CSV_FIELDS = ("method", "instance_id", "psnr_db", "ssim", "perceptual",
              "roundtrip_l2_rel", "mean_lbo_iters", "wall_ms")


def _default_dataset():
    return {"kind": "shapes", "count": 20, "height": 16, "width": 16, "path": None}


def _default_denoiser():
    return {
        "kind": "analytic",
        "path": None,
        "mu_scale": 0.5,
        "eig_min": 0.7,
        "eig_max": 1.5,
        "train": {"count": 64, "width": 64, "max_epochs": 60, "batch_size": 32, "lr": 1e-3},
    }


def _default_autoencoder():
    return {"kind": "linear", "path": None, "latent_frac": 0.25, "fit_count": 64,
            "leak_scale": 1.8}


def _default_lbo():
    return {"max_iters": None, "tol": 1e-8, "lr": 1e-3, "n_grad_warmup": 5}


def _default_ilb():
    return {"lr": 0.1, "max_iters": 100, "rel_tol": 1e-5, "dt": None,
            "use_reg": True, "weights": [1.0, 1.0, 1.0]}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    t_train: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.05
    steps: int = 50
    guidance: float = 1.0
    record_timing: bool = False
    n_workers: int = 1
    methods: tuple = ("ddim", "lbo-n", "lbo-n+ilb")
    dataset: dict = field(default_factory=_default_dataset)
    denoiser: dict = field(default_factory=_default_denoiser)
    autoencoder: dict = field(default_factory=_default_autoencoder)
    perceptual: dict = field(default_factory=lambda: {"seed": 0})
    lbo: dict = field(default_factory=_default_lbo)
    ilb: dict = field(default_factory=_default_ilb)

    def __post_init__(self):
        for name in self.methods:
            parse_method(name)
        object.__setattr__(self, "methods", tuple(self.methods))

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "t_train": self.t_train,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "steps": self.steps,
            "guidance": self.guidance,
            "record_timing": self.record_timing,
            "n_workers": self.n_workers,
            "methods": list(self.methods),
            "dataset": dict(self.dataset),
            "denoiser": {k: (dict(v) if isinstance(v, dict) else v)
                         for k, v in self.denoiser.items()},
            "autoencoder": dict(self.autoencoder),
            "perceptual": dict(self.perceptual),
            "lbo": dict(self.lbo),
            "ilb": dict(self.ilb),
        }


def _merge_section(defaults: dict, override: dict, path: str) -> dict:
    out = dict(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}{key!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_section(defaults[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def config_from_json_dict(doc: dict) -> RunConfig:
    """Defaults deep-merged with the document; unknown keys are rejected."""
    base = RunConfig().to_json_dict()
    merged = _merge_section(base, doc, "")
    merged["methods"] = tuple(merged["methods"])
    return RunConfig(**merged)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return config_from_json_dict(doc)


def parse_method(name: str) -> tuple[str, bool]:
    """'lbo-n+ilb' -> ('lbo-n', True); validates against the method grid."""
    parts = name.split("+")
    base = parts[0]
    if base not in BASE_METHODS or len(parts) > 2 or (len(parts) == 2 and parts[1] != "ilb"):
        raise ConfigError(
            f"unknown method {name!r}; expected one of {BASE_METHODS} with optional '+ilb'")
    return base, len(parts) == 2


@dataclass(frozen=True)
class BenchmarkRow:
    """One (instance, method) result; metric fields hold 'error' on failure."""

    method: str
    instance_id: int
    psnr_db: float | str
    ssim: float | str
    perceptual: float | str
    roundtrip_l2_rel: float | str
    mean_lbo_iters: float | str
    wall_ms: float

    def as_csv_tuple(self) -> tuple:
        return (self.method, self.instance_id, self.psnr_db, self.ssim, self.perceptual,
                self.roundtrip_l2_rel, self.mean_lbo_iters, self.wall_ms)


class BenchmarkBackends:
    """Immutable bundle built once per run and shared across worker threads."""

    def __init__(self, cfg: RunConfig):
        ds = cfg.dataset
        if ds["kind"] != "shapes":
            raise ConfigError(f"benchmark needs an image dataset, got kind {ds['kind']!r}")
        self.cfg = cfg
        self.sched = make_linear_schedule(cfg.t_train, cfg.beta_start, cfg.beta_end)
        self.grid = make_uniform_grid(self.sched, cfg.steps)
        self.images = _load_instance_images(cfg)
        fit_images = make_shapes(cfg.autoencoder["fit_count"], cfg.seed,
                                 ds["height"], ds["width"], tag="fit")
        self.ae = build_autoencoder(cfg, fit_images)
        self.model = build_denoiser(cfg, self.sched, self.ae, fit_images)
        self.perc = RandomConvPerceptual((ds["height"], ds["width"], 1),
                                         seed=cfg.perceptual["seed"])
        self.condition = Condition.unconditional()
        stride = cfg.t_train // cfg.steps
        self.ilb_cfg = IlbConfig(
            lr=cfg.ilb["lr"], max_iters=cfg.ilb["max_iters"], rel_tol=cfg.ilb["rel_tol"],
            dt=cfg.ilb["dt"] if cfg.ilb["dt"] is not None else max(stride, 1),
            use_reg=cfg.ilb["use_reg"], weights=tuple(cfg.ilb["weights"]),
            guidance_w=cfg.guidance)

    def lbo_cfg(self, mode: str) -> LboConfig:
        s = self.cfg.lbo
        return LboConfig(mode=mode, max_iters=s["max_iters"], tol=s["tol"],
                         lr=s["lr"], n_grad_warmup=s["n_grad_warmup"],
                         guidance_w=self.cfg.guidance)


def _load_instance_images(cfg: RunConfig) -> np.ndarray:
    ds = cfg.dataset
    if ds.get("path"):
        path = Path(ds["path"])
        if not path.exists():
            raise ConfigError(f"dataset file {path} does not exist")
        payload = load_dataset(path)
        if payload["kind"] != "shapes":
            raise ConfigError(f"dataset file {path} holds kind {payload['kind']!r}, need shapes")
        if payload["n"] < ds["count"]:
            raise ConfigError(
                f"dataset file {path} has {payload['n']} images, config wants {ds['count']}")
        return payload["images"][: ds["count"]]
    return make_shapes(ds["count"], cfg.seed, ds["height"], ds["width"])


def build_autoencoder(cfg: RunConfig, fit_images: np.ndarray):
    section = cfg.autoencoder
    shape = fit_images.shape[1:]
    if section["kind"] == "identity":
        return IdentityAutoencoder(shape)
    if section["kind"] != "linear":
        raise ConfigError(f"unknown autoencoder kind {section['kind']!r}")
    if section.get("path"):
        path = Path(section["path"])
        if not path.exists():
            raise ConfigError(f"autoencoder file {path} does not exist")
        return load_model(path)
    n_pix = int(np.prod(shape))
    latent_dim = max(1, int(round(section["latent_frac"] * n_pix)))
    return fit_linear_autoencoder(fit_images, latent_dim,
                                  leak_scale=section["leak_scale"], seed=cfg.seed)


def build_denoiser(cfg: RunConfig, sched, ae, fit_images: np.ndarray):
    section = cfg.denoiser
    if section["kind"] == "analytic":
        rng = derive_rng(cfg.seed, "analytic-model")
        d = ae.latent_dim
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eig = np.linspace(section["eig_min"], section["eig_max"], d)
        sigma = q @ np.diag(eig) @ q.T
        sigma = 0.5 * (sigma + sigma.T)
        mu = section["mu_scale"] * rng.standard_normal(d)
        return LinearGaussianDenoiser(mu, sigma, sched)
    if section["kind"] != "mlp":
        raise ConfigError(f"unknown denoiser kind {section['kind']!r}")
    if section.get("path"):
        path = Path(section["path"])
        if not path.exists():
            raise ConfigError(f"denoiser file {path} does not exist")
        return load_model(path)
    train = section["train"]
    latents = np.stack([ae.encode(img) for img in fit_images[: train["count"]]])
    tc = MlpTrainConfig(width=train["width"], max_epochs=train["max_epochs"],
                        batch_size=train["batch_size"], lr=train["lr"], seed=cfg.seed)
    return train_mlp_denoiser(latents, sched, tc)


def evaluate_instance(backends: BenchmarkBackends, instance_id: int, method: str) -> BenchmarkRow:
    """One pipeline pass: (optional boosting) -> invert -> replay -> decode -> score."""
    cfg = backends.cfg
    started = time.perf_counter()
    base, use_ilb = parse_method(method)
    x0 = backends.images[instance_id]
    c = backends.condition
    if use_ilb:
        z0, _ = ilb_optimize(x0, backends.ae, backends.model, backends.sched,
                             backends.perc, backends.ilb_cfg, c)
    else:
        z0 = backends.ae.encode(x0)
    if base == "ddim":
        traj = ddim_invert_trajectory(backends.model, backends.sched, backends.grid,
                                      z0, c, cfg.guidance)
        mean_iters = 0.0
    else:
        traj, reports = lbo_invert_trajectory(
            backends.model, backends.sched, backends.grid, z0, c,
            backends.lbo_cfg(LBO_MODES[base]))
        mean_iters = float(np.mean([r.iters for r in reports]))
    gen = generate_trajectory(backends.model, backends.sched, backends.grid,
                              traj.latent_at(backends.sched.t_train), c, cfg.guidance)
    z0_back = gen.latent_at(0)
    denom = float(np.linalg.norm(z0))
    rel = float(np.linalg.norm(z0_back - z0)) / (denom if denom > 0 else 1.0)
    xh = np.clip(backends.ae.decode(z0_back), 0.0, 1.0)
    return BenchmarkRow(
        method=method, instance_id=instance_id,
        psnr_db=psnr(x0, xh), ssim=ssim(x0, xh),
        perceptual=backends.perc.distance(x0, xh),
        roundtrip_l2_rel=rel, mean_lbo_iters=mean_iters,
        wall_ms=(time.perf_counter() - started) * 1e3 if cfg.record_timing else 0.0)


def _run_instance(backends: BenchmarkBackends, instance_id: int, method: str) -> BenchmarkRow:
    try:
        return evaluate_instance(backends, instance_id, method)
    except Exception:
        return BenchmarkRow(method=method, instance_id=instance_id,
                            psnr_db="error", ssim="error", perceptual="error",
                            roundtrip_l2_rel="error", mean_lbo_iters="error", wall_ms=0.0)


def _method_means(rows: list) -> dict:
    out = {}
    for method in sorted({r.method for r in rows}):
        ok = [r for r in rows if r.method == method and r.psnr_db != "error"]
        n_err = sum(1 for r in rows if r.method == method and r.psnr_db == "error")
        stats = {"n_ok": len(ok), "n_error": n_err}
        for name in ("psnr_db", "ssim", "perceptual", "roundtrip_l2_rel", "mean_lbo_iters"):
            stats["mean_" + name] = float(np.mean([getattr(r, name) for r in ok])) if ok else None
        out[method] = stats
    return out


def _upper_bound(backends: BenchmarkBackends) -> dict:
    """Metrics of the plain autoencoder round trip, the best any inversion can do."""
    vals = {"psnr_db": [], "ssim": [], "perceptual": []}
    for x0 in backends.images:
        xh = np.clip(backends.ae.decode(backends.ae.encode(x0)), 0.0, 1.0)
        vals["psnr_db"].append(psnr(x0, xh))
        vals["ssim"].append(ssim(x0, xh))
        vals["perceptual"].append(backends.perc.distance(x0, xh))
    return {"mean_" + k: float(np.mean(v)) for k, v in vals.items()}


def run_benchmark(cfg: RunConfig, out_dir, n_workers: int | None = None):
    """Execute the full grid and write benchmark.csv + summary.json.

    Returns (rows, summary). Rows are sorted by (instance_id, method); with
    record_timing off the written bytes depend only on the config.
    """
    if not cfg.methods:
        raise ConfigError("benchmark needs a nonempty method list")
    backends = BenchmarkBackends(cfg)
    workers = n_workers if n_workers is not None else cfg.n_workers
    units = [(i, m) for i in range(cfg.dataset["count"]) for m in cfg.methods]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda u: _run_instance(backends, *u), units))
    else:
        rows = [_run_instance(backends, *u) for u in units]
    rows.sort(key=lambda r: (r.instance_id, r.method))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "benchmark.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_FIELDS)
        for row in rows:
            writer.writerow(row.as_csv_tuple())
    summary = {
        "config": cfg.to_json_dict(),
        "per_method": _method_means(rows),
        "upper_bound": _upper_bound(backends),
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
        f.write(json.dumps(summary, sort_keys=True, indent=2))
        f.write("\n")
    return rows, summary
