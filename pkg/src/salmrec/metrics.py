"""Rectification quality metrics: MS-SSIM, LD, AD, edit distance and CER."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d, sobel

from . import _kernels
from .errors import MetricError, ShapeMismatchError
from .geometry import to_pixels

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WIN_SIZE = 11
WIN_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    return img


def _gauss_1d(size, sigma):
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x, win):
    r = len(win) // 2
    out = correlate1d(x, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _ssim_cs(x, y, win, data_range=1.0):
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_x, mu_y = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x**2
    syy = _filter_valid(y * y, win) - mu_y**2
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    cs_map = (2.0 * sxy + c2) / (sxx + syy + c2)
    ssim_map = (2.0 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1) * cs_map
    return float(ssim_map.mean()), float(cs_map.mean())


def _avg_pool2(x):
    h, w = x.shape
    x = x[: h - h % 2, : w - w % 2]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, weights=MS_SSIM_WEIGHTS, data_range: float = 1.0) -> float:
    """Multi-scale SSIM of two images (color inputs are converted to luminance).

    Uses an 11x11 Gaussian window (sigma 1.5) with valid filtering and 2x2
    average pooling between scales; negative contrast terms are clamped to
    zero so the result lies in [0, 1].
    """
    a, b = to_gray(a), to_gray(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"ms_ssim needs equal shapes, got {a.shape} and {b.shape}")
    levels = len(weights)
    need = WIN_SIZE * 2 ** (levels - 1)
    if min(a.shape) < need:
        raise MetricError(
            f"image side {min(a.shape)} is too small for {levels}-scale MS-SSIM (needs >= {need}); "
            f"pass fewer weights for fewer scales"
        )
    win = _gauss_1d(WIN_SIZE, WIN_SIGMA)
    w = np.asarray(weights, dtype=np.float64)
    vals = []
    for lvl in range(levels):
        ssim_val, cs = _ssim_cs(a, b, win, data_range)
        vals.append(max(ssim_val if lvl == levels - 1 else cs, 0.0))
        if lvl < levels - 1:
            a, b = _avg_pool2(a), _avg_pool2(b)
    return float(np.clip(np.prod(np.power(vals, w)), 0.0, 1.0))


def _check_maps(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise ShapeMismatchError(f"maps must share an (H, W, 2) shape, got {pred.shape} and {gt.shape}")
    return pred, gt


def local_distortion(pred_map, gt_map, src_shape=None) -> float:
    """Mean Euclidean distance in source pixels between two backward maps.

    The ground-truth correspondence replaces SIFT-flow matching.  ``src_shape``
    is the ``(H, W)`` of the image the maps index into; it defaults to the
    maps' own shape.
    """
    pred, gt = _check_maps(pred_map, gt_map)
    h, w = src_shape if src_shape is not None else pred.shape[:2]
    diff = to_pixels(pred, h, w) - to_pixels(gt, h, w)
    return float(np.mean(np.hypot(diff[..., 0], diff[..., 1])))


def edge_weights(ref_image) -> np.ndarray:
    """Per-pixel weights from the reference image's Sobel gradient magnitude."""
    g = to_gray(ref_image)
    mag = np.hypot(sobel(g, axis=0), sobel(g, axis=1))
    # floor keeps textureless regions from dropping out entirely
    mag = mag + 0.1 * (mag.mean() + 1e-12)
    return mag / mag.sum()


def similarity_align(src, dst, weights):
    """Weighted least-squares similarity transform taking ``src`` points to ``dst``.

    Points are ``(N, 2)``.  Returns the aligned ``src``.  Falls back to a pure
    translation when ``src`` has no spread (scale and rotation unidentifiable).
    """
    w = weights / weights.sum()
    zs = src[:, 0] + 1j * src[:, 1]
    zd = dst[:, 0] + 1j * dst[:, 1]
    ms, md = np.sum(w * zs), np.sum(w * zd)
    cs, cd = zs - ms, zd - md
    denom = np.sum(w * np.abs(cs) ** 2)
    if denom < 1e-12 * max(1.0, np.sum(w * np.abs(cd) ** 2)):
        a = 1.0 + 0j
    else:
        a = np.sum(w * np.conj(cs) * cd) / denom
    out = a * cs + md
    return np.stack([out.real, out.imag], axis=1)


def aligned_distortion(pred_map, gt_map, ref_image) -> float:
    """Edge-weighted residual between backward maps after global similarity alignment.

    Simplified take on aligned distortion: the predicted map is aligned to the
    ground truth by a weighted least-squares similarity (scale, rotation,
    translation), then the residual norms, in normalized coordinate units,
    are averaged with weights from the reference image's edge strength.
    """
    pred, gt = _check_maps(pred_map, gt_map)
    wts = edge_weights(ref_image)
    if wts.shape != pred.shape[:2]:
        raise ShapeMismatchError(f"reference image {wts.shape} does not match maps {pred.shape[:2]}")
    wv = wts.ravel()
    aligned = similarity_align(pred.reshape(-1, 2), gt.reshape(-1, 2), wv)
    resid = np.hypot(*(aligned - gt.reshape(-1, 2)).T)
    return float(np.sum(wv * resid))


def edit_distance(pred_text: str, ref_text: str) -> int:
    return int(_kernels.levenshtein(pred_text, ref_text))


def cer(pred_text: str, ref_text: str) -> float:
    if len(ref_text) == 0:
        raise MetricError("character error rate is undefined for an empty reference")
    return edit_distance(pred_text, ref_text) / len(ref_text)


@dataclass
class SampleMetrics:
    index: int
    seed: int
    ms_ssim: float
    ld: float
    ad: float
    ed: int
    cer: float
    ms_ssim_distorted: float
    ld_identity: float


@dataclass
class MetricsReport:
    samples: list[SampleMetrics]

    def aggregate(self) -> dict:
        if not self.samples:
            return {}
        keys = ("ms_ssim", "ld", "ad", "ed", "cer", "ms_ssim_distorted", "ld_identity")
        return {k: float(np.mean([getattr(s, k) for s in self.samples])) for k in keys}

    def to_json(self) -> dict:
        return {
            "schema": "salmrec-metrics/1",
            "count": len(self.samples),
            "samples": [asdict(s) for s in self.samples],
            "aggregate": self.aggregate(),
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        return path
