"""Image files and the on-disk dataset layout.

A dataset root holds ``clean/<id>.png`` (8-bit sources), ``corrupt/<id>.imgf``
(unclamped float32), ``aux/<id>.imgf`` (the blurred image or the depth map)
and ``params.csv`` with one row per image.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

IMGF_MAGIC = b"IMGF"

BLURNOISE_FIELDS = ["id", "task", "w_x", "w_y", "rho", "sigma_dark", "sigma_bright", "seed", "input_psnr"]
HAZE_FIELDS = ["id", "task", "beta", "A_r", "A_g", "A_b", "seed", "input_psnr"]


class FormatError(ValueError):
    pass


def write_imgf(path, array):
    """Write a [C, H, W] (or [H, W]) float array as little-endian float32."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected [C, H, W], got {a.shape}")
    with open(path, "wb") as f:
        f.write(IMGF_MAGIC + struct.pack("<III", *a.shape))
        f.write(a.tobytes())


def read_imgf(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != IMGF_MAGIC:
        raise FormatError(f"{path}: not an IMGF file")
    c, h, w = struct.unpack("<III", raw[4:16])
    if len(raw) != 16 + 4 * c * h * w:
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(c, h, w).astype(np.float32)


def read_image(path):
    """8-bit image file -> [3, H, W] float64 in [0, 1]."""
    path = Path(path)
    if path.suffix == ".imgf":
        return np.clip(read_imgf(path).astype(np.float64), 0, 1)
    with Image.open(path) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return a.transpose(2, 0, 1)


def to_uint8(image):
    a = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    return np.round(a * 255).astype(np.uint8)


def write_png(path, image):
    a = to_uint8(image)
    if a.ndim == 3:
        a = a.transpose(1, 2, 0)
        if a.shape[2] == 1:
            a = a[..., 0]
    Image.fromarray(a).save(path)


@dataclass
class Dataset:
    root: Path
    task: str
    rows: list
    clean: np.ndarray            # [N, 3, H, W] float64, exact 8-bit levels
    corrupt: np.ndarray          # [N, 3, H, W] float32, unclamped
    aux: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    @property
    def ids(self):
        return [r["id"] for r in self.rows]

    def param_matrix(self, names):
        return np.array([[float(r[n]) for n in names] for r in self.rows])

    def subset(self, idx):
        idx = list(idx)
        aux = None if self.aux is None else self.aux[idx]
        return Dataset(self.root, self.task, [self.rows[i] for i in idx], self.clean[idx],
                       self.corrupt[idx], aux)


def param_names(task):
    if task == "haze":
        return ["beta", "A_r", "A_g", "A_b"]
    return ["w_x", "w_y", "rho", "sigma_dark", "sigma_bright"]


def write_params_csv(path, rows, task):
    fields = HAZE_FIELDS if task == "haze" else BLURNOISE_FIELDS
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in fields})


def read_params_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def load_dataset(root):
    root = Path(root)
    rows = read_params_csv(root / "params.csv")
    if not rows:
        raise FormatError(f"{root}: empty params.csv")
    task = rows[0]["task"]
    clean = np.stack([read_image(root / "clean" / f"{r['id']}.png") for r in rows])
    corrupt = np.stack([read_imgf(root / "corrupt" / f"{r['id']}.imgf") for r in rows])
    aux_files = [root / "aux" / f"{r['id']}.imgf" for r in rows]
    aux = np.stack([read_imgf(p) for p in aux_files]) if all(p.exists() for p in aux_files) else None
    return Dataset(root, task, rows, clean, corrupt, aux)


# ---------------------------------------------------------------------------
# generation

SOURCE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".pgm", ".bmp", ".tif", ".tiff")
SAMPLE_IMAGES = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry",
                 "hubble_deep_field", "retina", "colorwheel", "camera", "moon", "brick",
                 "grass", "gravel", "coins", "clock")
# photographs kept out of training so validation crops come from unseen scenes
HELDOUT_IMAGES = ("chelsea", "camera", "gravel", "coins")


def export_sample_sources(out_dir, names=None):
    """Write the photographs bundled with scikit-image as PNG sources."""
    from skimage import data

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in (SAMPLE_IMAGES if names is None else names):
        img = np.asarray(getattr(data, name)())
        if img.ndim == 2:
            img = np.stack([img] * 3, axis=-1)
        p = out / f"{name}.png"
        Image.fromarray(img[..., :3].astype(np.uint8)).save(p)
        paths.append(p)
    return paths


def list_sources(src):
    files = sorted(p for p in Path(src).iterdir() if p.suffix.lower() in SOURCE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no source images in {src}")
    return files


def _random_crop(img, H, W, rng):
    _, h, w = img.shape
    if h < H or w < W:
        f = max(H / h, W / w)
        pil = Image.fromarray(to_uint8(img).transpose(1, 2, 0))
        pil = pil.resize((max(W, round(w * f)), max(H, round(h * f))), Image.BICUBIC)
        img = np.asarray(pil, dtype=np.float64).transpose(2, 0, 1) / 255.0
        _, h, w = img.shape
    y = int(rng.integers(0, h - H + 1))
    x = int(rng.integers(0, w - W + 1))
    crop = img[:, y : y + H, x : x + W]
    if rng.random() < 0.5:
        crop = crop[:, :, ::-1]
    return crop


def generate_dataset(task, src, out, count, size, seed, depth_kind="smooth_noise"):
    """Crop, degrade and write ``count`` images; per-image seed is ``seed ^ index``."""
    from .degrade import (degrade_blur_noise, psnr, sample_blurnoise_params,
                          sample_haze_params, sample_noise_params, synth_depth, synth_haze)

    if task not in ("blurnoise", "noise", "haze"):
        raise ValueError(f"unknown task {task!r}")
    H, W = size
    out = Path(out)
    for sub in ("clean", "corrupt", "aux"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    sources = [read_image(p) for p in list_sources(src)]
    rows = []
    for i in range(count):
        s = seed ^ i
        rng = np.random.default_rng(s)
        crop = _random_crop(sources[int(rng.integers(len(sources)))], H, W, rng)
        clean = to_uint8(crop).astype(np.float64) / 255.0
        ident = f"{i:05d}"
        row = {"id": ident, "task": task, "seed": s}
        if task == "haze":
            depth = synth_depth(depth_kind, H, W, seed=s)
            hp = sample_haze_params(rng, depth)
            corrupt, aux = synth_haze(clean, hp), depth[None]
            row.update(beta=hp.beta, A_r=hp.A[0], A_g=hp.A[1], A_b=hp.A[2])
        else:
            p = sample_noise_params(rng) if task == "noise" else sample_blurnoise_params(rng)
            corrupt, aux = degrade_blur_noise(clean, p, seed=int(rng.integers(2**32)))
            row.update(w_x=p.w_x, w_y=p.w_y, rho=p.rho, sigma_dark=p.sigma_dark,
                       sigma_bright=p.sigma_bright)
        corrupt = corrupt.astype(np.float32)
        write_png(out / "clean" / f"{ident}.png", clean)
        write_imgf(out / "corrupt" / f"{ident}.imgf", corrupt)
        write_imgf(out / "aux" / f"{ident}.imgf", aux)
        row["input_psnr"] = repr(psnr(np.clip(corrupt, 0, 1), clean))
        rows.append(row)
    write_params_csv(out / "params.csv", rows, task)
    return rows
