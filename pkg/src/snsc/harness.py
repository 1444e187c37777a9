"""Training loop, inference on full images, and evaluation."""
from __future__ import annotations

import contextlib
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, from_model, model_from_checkpoint, restore_optimizer
from .config import config_to_text
from .datasets import Dataset, load_dataset
from .degrade import psnr, ssim
from .models import build_model
from .nn import Adam

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.snsc"


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, last_checkpoint):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {last_checkpoint}")
        self.step = step
        self.last_checkpoint = last_checkpoint


@contextlib.contextmanager
def single_threaded(enabled=True):
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------------------
# inference


def restore(model, images, mode=None, batch_size=16, return_side=False):
    """Run ``model`` in inference mode on full images [N, 3, H, W].

    Extents are reflect-padded up to the model's divisor and cropped back.
    With ``return_side`` the side-chain state, validity and relevance are
    returned as well (cropped to the image).
    """
    images = np.asarray(images, dtype=np.float32)
    n, _, H, W = images.shape
    d = model.divisor()
    ph, pw = (-H) % d, (-W) % d
    was_training = model.training
    model.eval()
    outs, states, vals, rels = [], [], [], []
    try:
        with T.no_grad():
            for lo in range(0, n, batch_size):
                x = images[lo : lo + batch_size]
                if ph or pw:
                    x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")
                y = model(T.Tensor(x), mode=mode).data[:, :, :H, :W]
                outs.append(y)
                if return_side and model.last_side is not None:
                    side = model.last_side
                    states.append(side.state.data[:, :, 0, 0])
                    vals.append(side.validity.data[:, :, :H, :W])
                    rels.append(side.relevance.data[:, :, :H, :W])
    finally:
        model.train(was_training)
    out = np.concatenate(outs)
    if not return_side:
        return out
    if not states:
        raise ValueError("model has no side-chain")
    return out, {"state": np.concatenate(states), "validity": np.concatenate(vals),
                 "relevance": np.concatenate(rels)}


@dataclass
class EvalResult:
    mean_psnr: float
    mean_ssim: float
    mean_l1: float
    rows: list = field(default_factory=list)


def evaluate(model, dataset, mode=None, target="clean", out_csv=None, with_ssim=True):
    """Metrics of clamped restorations against ``dataset.clean`` (or ``aux``)."""
    if isinstance(model, Checkpoint):
        model, _ = model_from_checkpoint(model)
    out = np.clip(restore(model, dataset.corrupt, mode=mode).astype(np.float64), 0.0, 1.0)
    ref = dataset.clean if target == "clean" else dataset.aux.astype(np.float64)
    rows = []
    for ident, o, r in zip(dataset.ids, out, ref):
        rows.append({"id": ident, "psnr": psnr(o, r),
                     "ssim": ssim(o, r) if with_ssim else float("nan"),
                     "l1": float(np.mean(np.abs(o - r)))})
    # sort so that the means do not depend on dataset order
    rows.sort(key=lambda r: r["id"])
    res = EvalResult(float(np.mean([r["psnr"] for r in rows])),
                     float(np.mean([r["ssim"] for r in rows])),
                     float(np.mean([r["l1"] for r in rows])), rows)
    if out_csv is not None:
        write_eval_csv(out_csv, rows)
    return res


def write_eval_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "psnr", "ssim", "l1"])
        for r in rows:
            w.writerow([r["id"], repr(r["psnr"]), repr(r["ssim"]), repr(r["l1"])])


def input_psnr(dataset):
    """Mean PSNR of the clamped corrupt inputs, as an identity model would score."""
    vals = [psnr(np.clip(c, 0, 1), g) for c, g in zip(dataset.corrupt, dataset.clean)]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# training


def sample_batch(dataset, cfg, step):
    """Random patches for one step; the stream depends only on (seed, step)."""
    rng = np.random.default_rng([cfg.seed, step])
    n, _, H, W = dataset.corrupt.shape
    P = cfg.patch_size
    if P > H or P > W:
        raise ValueError(f"patch_size {P} exceeds image size {H}x{W}")
    idx = rng.integers(0, n, cfg.batch_size)
    ys = rng.integers(0, H - P + 1, cfg.batch_size)
    xs = rng.integers(0, W - P + 1, cfg.batch_size)
    if cfg.task == "switchable":
        modes = np.repeat([0, 1], cfg.batch_size // 2)
    else:
        modes = np.zeros(cfg.batch_size, dtype=np.int64)
    inp = np.empty((cfg.batch_size, 3, P, P), dtype=np.float32)
    tgt = np.empty_like(inp)
    for b, (i, y, x, m) in enumerate(zip(idx, ys, xs, modes)):
        sl = (slice(None), slice(y, y + P), slice(x, x + P))
        inp[b] = dataset.corrupt[i][sl]
        # mode 1 of the switchable task targets the blurred (denoise-only) image
        tgt[b] = (dataset.aux[i] if m == 1 else dataset.clean[i])[sl]
    return inp, tgt, modes


@dataclass
class TrainResult:
    model: object
    checkpoint: Checkpoint
    log: list
    val: list


def _as_dataset(d):
    if d is None or isinstance(d, Dataset):
        return d
    return load_dataset(d) if str(d) else None


def train(cfg, train_data=None, val_data=None, out_dir=None, resume=None):
    """Train a model; returns the final checkpoint, per-step log and validation log.

    Datasets default to the paths in ``cfg``; ``out_dir`` (or ``cfg.out_dir``)
    receives ``checkpoint.snsc``, ``log.csv`` and ``val.csv`` when set.
    """
    train_ds = _as_dataset(train_data if train_data is not None else cfg.train_data)
    val_ds = _as_dataset(val_data if val_data is not None else (cfg.val_data or None))
    if train_ds is None:
        raise ValueError("no training data")
    if cfg.task == "switchable" and train_ds.aux is None:
        raise ValueError("switchable task needs blurred images in aux/")
    out_dir = Path(out_dir) if out_dir is not None else (Path(cfg.out_dir) if cfg.out_dir else None)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    text = config_to_text(cfg)

    with single_threaded(cfg.strict_deterministic):
        model = build_model(cfg.model)
        opt = Adam(model.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        start = 0
        if resume is not None:
            ck = resume if isinstance(resume, Checkpoint) else Checkpoint.load(resume)
            model.load_state_dict(ck.tensors)
            restore_optimizer(ck, opt)
            start = ck.step
        ckpt_path = out_dir / CHECKPOINT_NAME if out_dir is not None else None
        last_good = None
        steps_log, val_log = [], []

        def validate(step):
            if val_ds is None:
                return
            r = evaluate(model, val_ds, mode=0, with_ssim=False)
            val_log.append({"step": step, "val_l1": r.mean_l1, "val_psnr": r.mean_psnr})
            log.info("step %d: val L1 %.5f PSNR %.3f", step, r.mean_l1, r.mean_psnr)

        if start == 0:
            validate(0)
        model.train()
        for step in range(start, cfg.steps):
            inp, tgt, modes = sample_batch(train_ds, cfg, step)
            opt.zero_grad()
            loss = T.l1_loss(model(T.Tensor(inp), mode=modes), tgt)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(step, last_good)
            loss.backward()
            lr = cfg.lr_at(step)
            opt.step(lr)
            steps_log.append({"step": step + 1, "loss": value, "lr": lr})
            done = step + 1
            if cfg.val_interval and done % cfg.val_interval == 0 and done != cfg.steps:
                validate(done)
            if ckpt_path is not None and cfg.checkpoint_interval and done % cfg.checkpoint_interval == 0:
                from_model(model, text, opt).save(ckpt_path)
                last_good = ckpt_path
        if start < cfg.steps:
            validate(cfg.steps)
        final = from_model(model, text, opt)

    if out_dir is not None:
        final.save(ckpt_path)
        _write_rows(out_dir / "log.csv", ["step", "loss", "lr"], steps_log)
        _write_rows(out_dir / "val.csv", ["step", "val_l1", "val_psnr"], val_log)
    return TrainResult(model, final, steps_log, val_log)


def _write_rows(path, keys, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])
