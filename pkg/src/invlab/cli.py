"""Experiment harness around the library: data, training, runs, benchmark.

Every subcommand reads one JSON run config (all defaults embedded, unknown
keys rejected), applies flag overrides, writes its artifacts under --out and
prints a one-line JSON result to stdout. Failures exit nonzero and print
``{code, message, context}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autoencoder import fit_linear_autoencoder
from .benchmark import (LBO_MODES, BenchmarkBackends, RunConfig, build_autoencoder,
                        evaluate_instance, load_config, parse_method, run_benchmark)
from .data import gen_dataset, load_dataset, make_gauss_mixture, make_shapes, save_dataset
from .denoiser import MlpTrainConfig, train_mlp_denoiser
from .dynamics import ddim_invert_trajectory, generate_trajectory
from .errors import ConfigError, InvlabError
from .ilb import ilb_loss_and_grad, ilb_optimize
from .lbo import lbo_invert_trajectory, objective_and_grad
from .metrics import trajectory_divergence
from .modelio import save_model
from .optim import gradient_check
from .rng import derive_rng
from .schedule import make_linear_schedule

GRADCHECK_TOL = 1e-4


class GradcheckFailure(InvlabError):
    code = "gradcheck-failed"


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run config JSON")
    common.add_argument("--seed", type=int, metavar="N", help="override config seed")
    common.add_argument("--out", metavar="DIR", default="out", help="artifact directory")
    common.add_argument("--method", metavar="NAME", help="inversion method, e.g. lbo-n+ilb")
    common.add_argument("--steps", type=int, metavar="S", help="override inference grid size")
    common.add_argument("--guidance", type=float, metavar="W", help="override guidance weight")
    common.add_argument("--dt", type=int, metavar="K", help="override boosting skip timestep")
    common.add_argument("--no-ilb", action="store_true", help="drop '+ilb' from methods")

    parser = argparse.ArgumentParser(prog="invlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=fn.__doc__)
        p.set_defaults(fn=fn)
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    if args.guidance is not None:
        cfg = replace(cfg, guidance=args.guidance)
    if args.dt is not None:
        cfg = replace(cfg, ilb={**cfg.ilb, "dt": args.dt})
    if args.no_ilb:
        methods, seen = [], set()
        for m in cfg.methods:
            base, _ = parse_method(m)
            if base not in seen:
                seen.add(base)
                methods.append(base)
        cfg = replace(cfg, methods=tuple(methods))
    return cfg


def _method_arg(args, default: str = "ddim") -> str:
    method = args.method if args.method else default
    base, use_ilb = parse_method(method)
    return base if args.no_ilb and use_ilb else method


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2))
        f.write("\n")


def cmd_gen_data(cfg: RunConfig, args, out: Path) -> dict:
    """Write the config's dataset as a canonical JSON file."""
    ds = cfg.dataset
    params = {"height": ds["height"], "width": ds["width"]} if ds["kind"] == "shapes" else {}
    payload = gen_dataset(ds["kind"], ds["count"], cfg.seed, params)
    path = out / f"{ds['kind']}.json"
    save_dataset(payload, path)
    return {"written": str(path), "kind": ds["kind"], "n": ds["count"]}


def cmd_train_denoiser(cfg: RunConfig, args, out: Path) -> dict:
    """Fit the MLP noise predictor on the config's dataset and persist it."""
    if cfg.denoiser["kind"] != "mlp":
        raise ConfigError(f"train-denoiser needs denoiser.kind 'mlp', got {cfg.denoiser['kind']!r}")
    sched = make_linear_schedule(cfg.t_train, cfg.beta_start, cfg.beta_end)
    train = cfg.denoiser["train"]
    ds = cfg.dataset
    if ds["kind"] == "gauss2d":
        if ds.get("path"):
            payload = load_dataset(ds["path"])
            data, labels = payload["samples"], payload["labels"]
        else:
            data, labels, _ = make_gauss_mixture(ds["count"], cfg.seed)
    else:
        fit_images = make_shapes(train["count"], cfg.seed, ds["height"], ds["width"], tag="fit")
        ae = build_autoencoder(cfg, fit_images)
        data, labels = np.stack([ae.encode(im) for im in fit_images]), None
    tc = MlpTrainConfig(width=train["width"], max_epochs=train["max_epochs"],
                        batch_size=train["batch_size"], lr=train["lr"], seed=cfg.seed)
    model = train_mlp_denoiser(data, sched, tc, labels)
    path = out / "denoiser.labmdl"
    save_model(model, path)
    return {"written": str(path), "final_loss": model.final_loss,
            "trained_epochs": model.trained_epochs, "latent_dim": model.latent_dim,
            "n_classes": model.n_classes}


def cmd_train_autoencoder(cfg: RunConfig, args, out: Path) -> dict:
    """Fit the linear autoencoder on the config's images and persist it."""
    if cfg.autoencoder["kind"] != "linear":
        raise ConfigError(
            f"train-autoencoder needs autoencoder.kind 'linear', got {cfg.autoencoder['kind']!r}")
    ds = cfg.dataset
    fit_images = make_shapes(cfg.autoencoder["fit_count"], cfg.seed,
                             ds["height"], ds["width"], tag="fit")
    n_pix = int(np.prod(fit_images.shape[1:]))
    latent_dim = max(1, int(round(cfg.autoencoder["latent_frac"] * n_pix)))
    ae = fit_linear_autoencoder(fit_images, latent_dim)
    path = out / "autoencoder.labmdl"
    save_model(ae, path)
    return {"written": str(path), "latent_dim": ae.latent_dim,
            "image_shape": list(ae.image_shape)}


def cmd_sample(cfg: RunConfig, args, out: Path) -> dict:
    """Generate from seeded Gaussian noise and decode the result."""
    b = BenchmarkBackends(cfg)
    z_t = derive_rng(cfg.seed, "sample").standard_normal(b.ae.latent_dim)
    traj = generate_trajectory(b.model, b.sched, b.grid, z_t, b.condition, cfg.guidance)
    image = np.clip(b.ae.decode(traj.latent_at(0)), 0.0, 1.0)
    traj_path = out / "trajectory.json"
    _write_json(traj_path, traj.to_json_dict())
    img_path = out / "sample.json"
    _write_json(img_path, {"image": image.tolist()})
    return {"trajectory": str(traj_path), "image": str(img_path)}


def cmd_invert(cfg: RunConfig, args, out: Path) -> dict:
    """Invert one encoded instance; write trajectory + per-step reports."""
    b = BenchmarkBackends(cfg)
    method = _method_arg(args)
    base, use_ilb = parse_method(method)
    x0 = b.images[0]
    z0 = (ilb_optimize(x0, b.ae, b.model, b.sched, b.perc, b.ilb_cfg, b.condition)[0]
          if use_ilb else b.ae.encode(x0))
    if base == "ddim":
        traj, reports = ddim_invert_trajectory(
            b.model, b.sched, b.grid, z0, b.condition, cfg.guidance), []
    else:
        traj, reports = lbo_invert_trajectory(
            b.model, b.sched, b.grid, z0, b.condition, b.lbo_cfg(LBO_MODES[base]))
    traj_path = out / "trajectory.json"
    _write_json(traj_path, traj.to_json_dict())
    rep_path = out / "step_reports.json"
    _write_json(rep_path, [r.to_json_dict() for r in reports])
    return {"method": method, "trajectory": str(traj_path), "step_reports": str(rep_path)}


def cmd_ilb(cfg: RunConfig, args, out: Path) -> dict:
    """Boost one instance's image latent; write report, trace CSV and latent."""
    b = BenchmarkBackends(cfg)
    x0 = b.images[0]
    z0_opt, report = ilb_optimize(x0, b.ae, b.model, b.sched, b.perc, b.ilb_cfg, b.condition)
    rep_path = out / "ilb_report.json"
    _write_json(rep_path, report.to_json_dict())
    trace_path = out / "ilb_trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(("iter", "l_con", "l_reg", "total"))
        writer.writerow((0, report.initial_con, report.initial_reg, report.initial_total))
        for row in report.trace:
            writer.writerow(row)
    z_path = out / "z0_opt.json"
    _write_json(z_path, {"z0": z0_opt.tolist()})
    return {"report": str(rep_path), "trace": str(trace_path), "z0": str(z_path),
            "iters_used": report.iters_used, "final_total": report.final_total}


def cmd_roundtrip(cfg: RunConfig, args, out: Path) -> dict:
    """Full encode -> invert -> replay -> decode pass on one instance."""
    b = BenchmarkBackends(cfg)
    method = _method_arg(args)
    row = evaluate_instance(b, 0, method)
    result = {"method": method, "psnr_db": row.psnr_db, "ssim": row.ssim,
              "perceptual": row.perceptual, "roundtrip_l2_rel": row.roundtrip_l2_rel,
              "mean_lbo_iters": row.mean_lbo_iters}
    _write_json(out / "roundtrip.json", result)
    return result


def cmd_gradcheck(cfg: RunConfig, args, out: Path) -> dict:
    """Compare every assembled gradient against central finite differences."""
    b = BenchmarkBackends(cfg)
    d = b.ae.latent_dim
    c = b.condition
    t_prev, t = b.grid.transitions()[-1]
    errors = {"model_vjp": 0.0, "lbo_objective": 0.0, "ilb_total": 0.0}
    for probe in range(5):
        rng = derive_rng(cfg.seed, "gradcheck", probe)
        z = rng.standard_normal(d)
        v = rng.standard_normal(d)
        errors["model_vjp"] = max(errors["model_vjp"], gradient_check(
            lambda x: float(v @ b.model.eval(x, t, c)),
            b.model.vjp(z, t, c, v), z))
        z_prev = rng.standard_normal(d)
        bias = 0.1 * rng.standard_normal(d)
        errors["lbo_objective"] = max(errors["lbo_objective"], gradient_check(
            lambda x: objective_and_grad(b.model, b.sched, z_prev, t_prev, t, c,
                                         cfg.guidance, x)[0],
            objective_and_grad(b.model, b.sched, z_prev, t_prev, t, c,
                               cfg.guidance, bias)[1], bias))
        x0 = b.images[probe % len(b.images)]
        z0 = b.ae.encode(x0) + 0.05 * rng.standard_normal(d)
        errors["ilb_total"] = max(errors["ilb_total"], gradient_check(
            lambda x: ilb_loss_and_grad(x0, x, b.ae, b.model, b.sched, b.perc,
                                        b.ilb_cfg, c)[2],
            ilb_loss_and_grad(x0, z0, b.ae, b.model, b.sched, b.perc,
                              b.ilb_cfg, c)[3], z0))
    worst = max(errors.values())
    result = {**errors, "max_rel_error": worst, "threshold": GRADCHECK_TOL,
              "pass": worst <= GRADCHECK_TOL}
    _write_json(out / "gradcheck.json", result)
    if not result["pass"]:
        raise GradcheckFailure(f"max relative error {worst:.3e} above {GRADCHECK_TOL}", **errors)
    return result


def cmd_report_plot_data(cfg: RunConfig, args, out: Path) -> dict:
    """Per-timestep inversion/generation divergence for each configured method."""
    if args.method:
        cfg = replace(cfg, methods=(_method_arg(args),))
    b = BenchmarkBackends(cfg)
    x0 = b.images[0]
    z0 = b.ae.encode(x0)
    path = out / "divergence.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(("method", "t", "l2_divergence"))
        seen = set()
        for name in cfg.methods:
            base, _ = parse_method(name)
            if base in seen:
                continue
            seen.add(base)
            if base == "ddim":
                inv = ddim_invert_trajectory(b.model, b.sched, b.grid, z0, b.condition,
                                             cfg.guidance)
            else:
                inv, _ = lbo_invert_trajectory(b.model, b.sched, b.grid, z0, b.condition,
                                               b.lbo_cfg(LBO_MODES[base]))
            gen = generate_trajectory(b.model, b.sched, b.grid,
                                      inv.latent_at(b.sched.t_train), b.condition, cfg.guidance)
            div = trajectory_divergence(inv, gen)
            for t, value in zip(inv.timesteps(), div):
                writer.writerow((base, t, value))
    return {"written": str(path)}


def cmd_benchmark(cfg: RunConfig, args, out: Path) -> dict:
    """Run the full methods × instances grid; write CSV rows and JSON summary."""
    if args.method:
        cfg = replace(cfg, methods=(_method_arg(args),))
    rows, _ = run_benchmark(cfg, out)
    return {"rows": len(rows), "csv": str(out / "benchmark.csv"),
            "summary": str(out / "summary.json")}


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-denoiser": cmd_train_denoiser,
    "train-autoencoder": cmd_train_autoencoder,
    "sample": cmd_sample,
    "invert": cmd_invert,
    "ilb": cmd_ilb,
    "roundtrip": cmd_roundtrip,
    "gradcheck": cmd_gradcheck,
    "report-plot-data": cmd_report_plot_data,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result = args.fn(cfg, args, out)
    except InvlabError as e:
        print(json.dumps(e.to_json_dict(), sort_keys=True, default=str))
        return 2
    except OSError as e:
        print(json.dumps({"code": "io-error", "message": str(e), "context": {}}, sort_keys=True))
        return 3
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
