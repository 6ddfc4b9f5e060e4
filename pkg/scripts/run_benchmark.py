"""Run the inversion benchmark and print a per-method summary table.

Usage:
    python scripts/run_benchmark.py [--config run.json] [--out out/bench]
                                    [--workers 4] [--timing]

Writes benchmark.csv and summary.json under --out; stdout gets one row per
method plus the autoencoder round-trip upper bound.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from invlab.benchmark import RunConfig, load_config, run_benchmark  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="run config JSON; defaults are used when omitted")
    ap.add_argument("--out", default="out/bench", help="artifact directory")
    ap.add_argument("--workers", type=int, default=None, help="thread pool size")
    ap.add_argument("--timing", action="store_true", help="record wall-clock per row")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.timing:
        from dataclasses import replace
        cfg = replace(cfg, record_timing=True)
    rows, summary = run_benchmark(cfg, args.out, n_workers=args.workers)

    cols = ("psnr_db", "ssim", "perceptual", "roundtrip_l2_rel", "mean_lbo_iters")
    print(f"{'method':<12}" + "".join(f"{c:>18}" for c in cols) + f"{'ok/err':>9}")
    for method in cfg.methods:
        s = summary["per_method"][method]
        vals = "".join(
            f"{s['mean_' + c]:>18.6g}" if s["mean_" + c] is not None else f"{'-':>18}"
            for c in cols)
        print(f"{method:<12}{vals}{s['n_ok']:>6}/{s['n_error']}")
    ub = summary["upper_bound"]
    print(f"{'(encode/decode)':<12}{ub['mean_psnr_db']:>18.6g}{ub['mean_ssim']:>18.6g}"
          f"{ub['mean_perceptual']:>18.6g}")
    print(f"\nwrote {args.out}/benchmark.csv and {args.out}/summary.json "
          f"({len(rows)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
