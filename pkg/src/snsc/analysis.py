"""Diagnostics of a trained side-chain: state/parameter statistics and map export."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint, model_from_checkpoint
from .datasets import param_names, write_imgf
from .harness import restore


@dataclass
class AnalysisTable:
    ids: list
    states: np.ndarray          # [N, S]
    params: np.ndarray          # [N, P] true degradation parameters
    param_names: list
    nonzero: np.ndarray         # [N, S] fraction of pixels with validity > 0

    def __len__(self):
        return len(self.ids)

    def write_csv(self, path):
        S = self.states.shape[1]
        header = (["id"] + list(self.param_names) + [f"state_{s}" for s in range(S)]
                  + [f"nonzero_{s}" for s in range(S)])
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for i, ident in enumerate(self.ids):
                w.writerow([ident] + [repr(float(v)) for v in self.params[i]]
                           + [repr(float(v)) for v in self.states[i]]
                           + [repr(float(v)) for v in self.nonzero[i]])


def _model(ckpt):
    if isinstance(ckpt, Checkpoint):
        ckpt, _ = model_from_checkpoint(ckpt)
    return ckpt


def collect_states(ckpt, dataset, batch_size=16, mode=None):
    model = _model(ckpt)
    if not model.has_side_chain:
        raise ValueError("collect_states needs a model with a side-chain")
    _, side = restore(model, dataset.corrupt, mode=mode, batch_size=batch_size, return_side=True)
    nonzero = (side["validity"] > 0).mean(axis=(2, 3))
    names = param_names(dataset.task)
    return AnalysisTable(dataset.ids, side["state"].astype(np.float64),
                         dataset.param_matrix(names), names, nonzero)


def pearson(table, param_index, state_index):
    x = table.params[:, param_index].astype(np.float64)
    y = table.states[:, state_index].astype(np.float64)
    return pearson_xy(x, y)


def pearson_xy(x, y):
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise ValueError("pearson: constant column")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def conditional_hist(table, param_index, state_index, bins=(32, 64)):
    """Pr{state | parameter} on a (parameter x state) grid.

    Returns ``(hist, param_edges, state_edges)``; ``hist[i, j]`` is the
    probability of state bin ``j`` given parameter bin ``i``. Each non-empty
    parameter bin sums to 1; empty ones are all zero.
    """
    x = table.params[:, param_index]
    y = table.states[:, state_index]
    if np.unique(x).size < 2:
        raise ValueError("conditional_hist needs at least two distinct parameter values")
    pb, sb = bins
    px = np.linspace(x.min(), x.max(), pb + 1)
    lo, hi = y.min(), y.max()
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    sy = np.linspace(lo, hi, sb + 1)
    counts, _, _ = np.histogram2d(x, y, bins=[px, sy])
    totals = counts.sum(axis=1, keepdims=True)
    hist = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    return hist, px, sy


def write_hist(hist, param_edges, state_edges, csv_path, png_path=None):
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["param_lo", "param_hi"] + [f"s{j}" for j in range(hist.shape[1])])
        for i, row in enumerate(hist):
            w.writerow([repr(float(param_edges[i])), repr(float(param_edges[i + 1]))]
                       + [repr(float(v)) for v in row])
    if png_path is not None:
        # state on the vertical axis (increasing upwards), parameter horizontal
        img = hist.T[::-1]
        peak = img.max(axis=0, keepdims=True)
        img = np.divide(img, peak, out=np.zeros_like(img), where=peak > 0)
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(png_path)


def analyze(ckpt, dataset, out_dir, bins=(32, 64)):
    """Write the state table, all conditional histograms and a correlation summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = collect_states(ckpt, dataset)
    table.write_csv(out / "states.csv")
    S = table.states.shape[1]
    summary = []
    for p, pname in enumerate(table.param_names):
        if np.unique(table.params[:, p]).size < 2:
            continue
        rs = []
        for s in range(S):
            try:
                r = pearson(table, p, s)
            except ValueError:
                r = 0.0
            rs.append(r)
            hist, pe, se = conditional_hist(table, p, s, bins)
            write_hist(hist, pe, se, out / f"hist_{pname}_state{s}.csv", out / f"hist_{pname}_state{s}.png")
        best = int(np.argmax(np.abs(rs)))
        summary.append({"param": pname, "best_state": best, "pearson": rs[best], "all": rs})
    with open(out / "correlation.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["param", "best_state", "pearson"] + [f"r_state{s}" for s in range(S)])
        for row in summary:
            w.writerow([row["param"], row["best_state"], repr(row["pearson"])] + [repr(r) for r in row["all"]])
    (out / "sparsity.txt").write_text(
        f"mean_nonzero_validity={float(table.nonzero.mean())!r}\n"
        + "".join(f"nonzero_state{s}={float(table.nonzero[:, s].mean())!r}\n" for s in range(S)),
        encoding="utf-8")
    return table, summary


def export_maps(ckpt, image, out_dir=None, mode=None):
    """Binary validity masks and relevance heat-maps for one [3, H, W] image."""
    model = _model(ckpt)
    if not model.has_side_chain:
        raise ValueError("export_maps needs a model with a side-chain")
    _, side = restore(model, np.asarray(image)[None], mode=mode, return_side=True)
    validity, relevance = side["validity"][0], side["relevance"][0]
    masks = validity > 0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ranges = []
        for s in range(validity.shape[0]):
            Image.fromarray(masks[s].astype(np.uint8) * 255).save(out / f"validity_{s}.png")
            r = relevance[s]
            lo, hi = float(r.min()), float(r.max())
            norm = (r - lo) / (hi - lo) if hi > lo else np.zeros_like(r)
            Image.fromarray(np.round(norm * 255).astype(np.uint8)).save(out / f"relevance_{s}.png")
            ranges.append(f"relevance_{s}: min={lo!r} max={hi!r}\n")
        write_imgf(out / "validity.imgf", validity)
        write_imgf(out / "relevance.imgf", relevance)
        (out / "relevance_ranges.txt").write_text("".join(ranges), encoding="utf-8")
        (out / "state.txt").write_text(
            "".join(f"state_{s}={float(v)!r}\n" for s, v in enumerate(side["state"][0])), encoding="utf-8")
    return {"validity": validity, "mask": masks, "relevance": relevance,
            "state": side["state"][0], "nonzero": masks.mean(axis=(1, 2))}
