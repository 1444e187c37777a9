"""Command line entry point: ``snsc <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return h, w


def _mode(text):
    return None if text in ("", "none") else int(text)


def cmd_sources(args):
    from .datasets import HELDOUT_IMAGES, SAMPLE_IMAGES, export_sample_sources

    if args.split == "train":
        names = [n for n in SAMPLE_IMAGES if n not in HELDOUT_IMAGES]
    elif args.split == "heldout":
        names = list(HELDOUT_IMAGES)
    else:
        names = None
    paths = export_sample_sources(args.out, names)
    print(f"wrote {len(paths)} source images to {args.out}")


def cmd_degrade(args):
    from .datasets import generate_dataset

    t = time.time()
    rows = generate_dataset(args.task, args.src, args.out, args.count, args.size, args.seed,
                            depth_kind=args.depth)
    mean = np.mean([float(r["input_psnr"]) for r in rows])
    print(f"wrote {len(rows)} {args.task} images to {args.out} "
          f"(mean input PSNR {mean:.3f} dB, {time.time() - t:.1f} s)")


def cmd_train(args):
    from .config import load_config
    from .harness import train

    cfg = load_config(args.config)
    if args.strict_deterministic:
        cfg.strict_deterministic = True
    if args.out:
        cfg.out_dir = args.out
    t = time.time()
    res = train(cfg, resume=args.resume)
    last = res.val[-1] if res.val else None
    msg = f"trained {cfg.steps} steps in {time.time() - t:.1f} s; checkpoint in {cfg.out_dir}"
    if last:
        msg += f"; validation L1 {last['val_l1']:.5f}, PSNR {last['val_psnr']:.3f} dB"
    print(msg)


def cmd_eval(args):
    from .checkpoint import Checkpoint
    from .datasets import load_dataset
    from .harness import evaluate

    ds = load_dataset(args.data)
    res = evaluate(Checkpoint.load(args.ckpt), ds, mode=args.mode, target=args.target, out_csv=args.out)
    print(f"{len(res.rows)} images: PSNR {res.mean_psnr:.4f} dB, SSIM {res.mean_ssim:.4f}, "
          f"L1 {res.mean_l1:.6f}")


def cmd_analyze(args):
    from .analysis import analyze
    from .checkpoint import Checkpoint
    from .datasets import load_dataset

    table, summary = analyze(Checkpoint.load(args.ckpt), load_dataset(args.data), args.out, bins=args.bins)
    for row in summary:
        print(f"{row['param']}: best state {row['best_state']} pearson {row['pearson']:+.3f}")
    print(f"mean nonzero validity fraction {float(table.nonzero.mean()):.4f}")


def cmd_maps(args):
    from .analysis import export_maps
    from .checkpoint import Checkpoint
    from .datasets import read_image

    res = export_maps(Checkpoint.load(args.ckpt), read_image(args.image), args.out, mode=args.mode)
    print("nonzero validity per state: " + " ".join(f"{v:.3f}" for v in res["nonzero"]))


def cmd_gradcheck(args):
    from .checks import CASES, run_checks

    ops = [args.op] if args.op else list(CASES)
    t = time.time()
    results = run_checks(ops, seed=args.seed, points=args.points)
    ok = True
    for op, rs in results.items():
        worst = max(r.max_relative_error for r in rs)
        skipped = sum(len(r.skipped) for r in rs)
        passed = worst <= args.tol
        ok &= passed
        print(f"{op:20s} max rel err {worst:.3e}  skipped {skipped:3d}  {'ok' if passed else 'FAIL'}")
    print(f"{time.time() - t:.1f} s")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="snsc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sources", help="export sample photographs to use as clean sources")
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=("all", "train", "heldout"), default="all")
    s.set_defaults(func=cmd_sources)

    s = sub.add_parser("degrade", help="generate a synthetic degraded dataset")
    s.add_argument("--task", choices=("blurnoise", "haze", "noise"), required=True)
    s.add_argument("--src", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--size", type=_size, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--depth", choices=("ramp", "smooth_noise"), default="smooth_noise",
                   help="synthetic depth map for haze")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train", help="train a model from a key=value config")
    s.add_argument("--config", required=True)
    s.add_argument("--strict-deterministic", action="store_true")
    s.add_argument("--out", help="override out_dir")
    s.add_argument("--resume", help="continue from a checkpoint")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-image PSNR/SSIM/L1 of a checkpoint on a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", type=_mode, default=None, help="relevance instance of a switchable model")
    s.add_argument("--target", choices=("clean", "aux"), default="clean")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", help="state statistics against degradation parameters")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bins", type=_size, default=(32, 64), help="PxS histogram bins")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("maps", help="validity masks and relevance heat-maps for one image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", type=_mode, default=None)
    s.set_defaults(func=cmd_maps)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    s.add_argument("--op")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--points", type=int, default=10)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
