"""Synthetic degradation pipeline, reference synthesis, and image metrics.

Images are channel-first float arrays in [0, 1]. The degradation chain is
blur -> bilinear downsample -> additive gaussian noise -> value quantization
-> bilinear upsample back to the working resolution. Every stage is skipped
outright when its parameter is the identity value, so a null spec returns
the input values bit-for-bit.

All of this is plain numpy: training treats degraded inputs, references, and
ground truth as constants, so nothing here needs the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigError, ShapeError


# ---------------------------------------------------------------------------
# resizing and filtering


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a (c,h,w) image, half-pixel centers, edge clamp."""
    if img.ndim != 3:
        raise ShapeError(f"bilinear_resize expects (c,h,w), got {img.shape}")
    c, h, w = img.shape
    if (out_h, out_w) == (h, w):
        return img
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable gaussian blur with a 3-sigma kernel and edge-clamp padding."""
    if sigma <= 0:
        return img
    radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()

    def along(x, axis):
        pad = [(0, 0)] * x.ndim
        pad[axis] = (radius, radius)
        xp = np.pad(x, pad, mode="edge")
        return np.apply_along_axis(lambda row: np.convolve(row, k, mode="valid"), axis, xp)

    return along(along(img, 1), 2)


def quantize_levels(img: np.ndarray, levels: int) -> np.ndarray:
    """Posterize values onto a uniform grid of `levels` steps (compression
    stand-in). levels <= 1 disables."""
    if levels <= 1:
        return img
    return np.round(img * (levels - 1)) / (levels - 1)


# ---------------------------------------------------------------------------
# degradation spec and pipeline


@dataclass(frozen=True)
class DegradationSpec:
    # Ranges aim for visibly damaged inputs (toy-set PSNR around 17 dB):
    # restoration has to have real headroom for the toy experiments to show a
    # direction, and heavier noise trains a better denoiser at this scale.
    blur_sigma: tuple[float, float] = (0.4, 1.2)
    downsample: int = 4
    noise_std: tuple[float, float] = (0.02, 0.08)
    quant_levels: int = 32

    def __post_init__(self):
        if self.blur_sigma[0] < 0 or self.noise_std[0] < 0:
            raise ValueError("degradation ranges must be nonnegative")
        if self.downsample < 1:
            raise ValueError("downsample factor must be >= 1")

    @staticmethod
    def null() -> "DegradationSpec":
        return DegradationSpec(blur_sigma=(0.0, 0.0), downsample=1, noise_std=(0.0, 0.0), quant_levels=0)


def degrade(img: np.ndarray, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply the full chain; deterministic given the generator's state."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"degrade expects (3,h,w), got {img.shape}")
    c, h, w = img.shape
    sigma = float(rng.uniform(*spec.blur_sigma))
    noise_std = float(rng.uniform(*spec.noise_std))
    out = gaussian_blur(img, sigma)
    if spec.downsample > 1:
        out = bilinear_resize(out, h // spec.downsample, w // spec.downsample)
    if noise_std > 0:
        out = out + rng.normal(0.0, noise_std, size=out.shape)
    out = quantize_levels(out, spec.quant_levels)
    if spec.downsample > 1:
        out = bilinear_resize(out, h, w)
    return np.clip(out, 0.0, 1.0)


def make_reference(gt: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Reference stand-in: same identity, mildly different appearance.

    Random horizontal flip plus an affine intensity jitter keeps the subject
    while decorrelating exact pixel values from the ground truth.
    """
    ref = gt[:, :, ::-1] if rng.random() < 0.5 else gt
    gain = rng.uniform(0.9, 1.1)
    offset = rng.uniform(-0.05, 0.05)
    return np.clip(ref * gain + offset, 0.0, 1.0)


# ---------------------------------------------------------------------------
# metrics


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0, cap: float = 99.0) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    if peak <= 0:
        raise ValueError("psnr: peak must be positive")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(peak * peak / mse))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8, peak: float = 1.0) -> float:
    """Mean local SSIM over dense uniform windows, averaged across channels."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes {a.shape} and {b.shape} differ")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if window > min(a.shape[1], a.shape[2]):
        raise ShapeError(f"ssim: window {window} exceeds image dims {a.shape[1:]}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def windows(x):
        v = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(1, 2))
        return v.reshape(v.shape[0], -1, window * window)

    wa, wb = windows(a), windows(b)
    mu_a = wa.mean(axis=2)
    mu_b = wb.mean(axis=2)
    var_a = wa.var(axis=2)
    var_b = wb.var(axis=2)
    cov = (wa * wb).mean(axis=2) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# PNG I/O


def load_image(path) -> np.ndarray:
    """8-bit RGB PNG -> (3,h,w) float64 in [0,1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read image: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path, img: np.ndarray) -> None:
    """(3,h,w) float in [0,1] -> 8-bit RGB PNG, round-half-up quantization."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"save_image expects (3,h,w), got {img.shape}")
    u8 = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
