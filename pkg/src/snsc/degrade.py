"""Synthetic degradations (blur + signal-dependent noise, haze) and image metrics.

Images are float arrays shaped [3, H, W] on the [0, 1] scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

LUMA = np.array([0.299, 0.587, 0.114])
MIN_WIDTH = 0.05
MAX_RHO = 0.99


@dataclass
class BlurNoiseParams:
    w_x: float
    w_y: float
    rho: float
    sigma_dark: float
    sigma_bright: float

    def validate(self):
        if not (0 <= self.w_x <= 2 and 0 <= self.w_y <= 2):
            raise ValueError(f"kernel widths outside [0, 2]: {self.w_x}, {self.w_y}")
        if not -1 <= self.rho <= 1:
            raise ValueError(f"rho outside [-1, 1]: {self.rho}")
        if not (0 <= self.sigma_dark <= 0.15 and 0 <= self.sigma_bright <= 0.15):
            raise ValueError("noise levels outside [0, 0.15]")
        return self


@dataclass
class HazeParams:
    beta: float
    A: tuple
    D: np.ndarray

    def transmission(self):
        return np.exp(-self.beta * self.D)


def luminosity(image):
    return np.clip(np.tensordot(LUMA, image, axes=1), 0.0, 1.0)


def gaussian_kernel(w_x, w_y, rho):
    """Normalized anisotropic Gaussian on integer offsets.

    The array is indexed [y, x] with the centre at [R, R]. Widths below
    0.05 px collapse that axis to a delta, and |rho| is capped at 0.99, so
    the covariance is always invertible on the remaining axes.
    """
    if w_x < 0 or w_y < 0 or abs(rho) > 1:
        raise ValueError("widths must be >= 0 and |rho| <= 1")
    wx = w_x if w_x >= MIN_WIDTH else 0.0
    wy = w_y if w_y >= MIN_WIDTH else 0.0
    if wx == 0 and wy == 0:
        return np.ones((1, 1))
    R = max(1, math.ceil(3 * max(wx, wy)))
    y, x = np.mgrid[-R : R + 1, -R : R + 1].astype(np.float64)
    if wx == 0 or wy == 0:
        # degenerate axis: a 1-D Gaussian along the other one
        along, across, w = (x, y, wx) if wy == 0 else (y, x, wy)
        k = np.where(across == 0, np.exp(-0.5 * (along / w) ** 2), 0.0)
    else:
        r = float(np.clip(rho, -MAX_RHO, MAX_RHO))
        # quadratic form u^T inv(Lambda) u for Lambda = [[wx^2, r wx wy], [r wx wy, wy^2]]
        q = ((x / wx) ** 2 - 2 * r * (x / wx) * (y / wy) + (y / wy) ** 2) / (1 - r * r)
        k = np.exp(-0.5 * q)
    return k / k.sum()


def blur(image, kernel):
    # kernel is point-symmetric, so correlation equals convolution
    return np.stack([ndimage.correlate(ch, kernel, mode="reflect") for ch in image])


def noise_sigma_map(blurred, p):
    L = luminosity(blurred)
    return (1.0 - L) * p.sigma_dark + L * p.sigma_bright


def degrade_blur_noise(image, p, seed):
    """Return ``(corrupt, blurred)``; ``corrupt`` is not clamped.

    One noise realization is shared by the three channels of a pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    blurred = blur(image, gaussian_kernel(p.w_x, p.w_y, p.rho))
    sigma = noise_sigma_map(blurred, p)
    rng = np.random.default_rng(seed)
    field = rng.standard_normal(sigma.shape) * sigma
    return blurred + field[None], blurred


def sample_blurnoise_params(rng):
    w_x, w_y = rng.uniform(0, 2, 2)
    rho = rng.uniform(-1, 1)
    s_dark, s_bright = rng.uniform(0, 0.15, 2)
    return BlurNoiseParams(float(w_x), float(w_y), float(rho), float(s_dark), float(s_bright))


def sample_noise_params(rng):
    """Noise-only draw: no blur and one level for dark and bright pixels."""
    s = float(rng.uniform(0, 0.15))
    return BlurNoiseParams(0.0, 0.0, 0.0, s, s)


def sample_haze_params(rng, depth):
    beta = float(rng.uniform(0.4, 2.0))
    A = tuple(float(a) for a in rng.uniform(0.7, 1.0, 3))
    return HazeParams(beta, A, depth)


def synth_haze(image, h):
    image = np.asarray(image, dtype=np.float64)
    D = np.asarray(h.D, dtype=np.float64)
    if D.shape != image.shape[1:]:
        raise ValueError(f"depth map {D.shape} does not match image {image.shape[1:]}")
    t = np.exp(-h.beta * D)[None]
    A = np.asarray(h.A, dtype=np.float64)[:, None, None]
    return t * image + (1.0 - t) * A


def synth_depth(kind, H, W, seed=0):
    if kind == "ramp":
        return np.broadcast_to(np.linspace(0.0, 1.0, W), (H, W)).copy()
    if kind == "smooth_noise":
        rng = np.random.default_rng(seed)
        field = ndimage.gaussian_filter(rng.standard_normal((H, W)), sigma=max(H, W) / 8,
                                        mode="reflect")
        lo, hi = field.min(), field.max()
        return (field - lo) / (hi - lo)
    raise ValueError(f"unknown depth kind {kind!r}")


# ---------------------------------------------------------------------------
# metrics


def psnr(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse < 1e-10:
        return 100.0
    return float(10.0 * np.log10(1.0 / mse))


def _gauss(img):
    # truncate 3.5 at sigma 1.5 gives the 11x11 window
    return ndimage.gaussian_filter(img, sigma=1.5, truncate=3.5, mode="reflect")


def ssim(a, b, K1=0.01, K2=0.03):
    """Mean SSIM of the luminance channels, Gaussian window (11x11, sigma 1.5)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < 11:
        raise ValueError("ssim needs images of at least 11x11")
    x = luminosity(a) if a.ndim == 3 else a
    y = luminosity(b) if b.ndim == 3 else b
    C1, C2 = K1 ** 2, K2 ** 2
    mx, my = _gauss(x), _gauss(y)
    sxx = _gauss(x * x) - mx * mx
    syy = _gauss(y * y) - my * my
    sxy = _gauss(x * y) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return float(np.mean(num / den))
