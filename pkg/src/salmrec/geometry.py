"""Coordinate maps, bilinear sampling, composition and resizing.

Convention: a ``CoordMap`` is an ``(H, W, 2)`` array whose entry ``[i, j]``
holds the normalized ``(x, y)`` source coordinate sampled for output pixel
``(i, j)``.  ``(-1, -1)`` is the center of the source's top-left pixel and
``(+1, +1)`` the center of its bottom-right pixel (corner-aligned).
Samples falling outside the source read a pad value of 0.

Every function accepts numpy arrays (``H x W x C`` images, float64 kernels)
or torch tensors (``B x C x H x W`` images and ``B x H x W x 2`` grids, fully
differentiable).
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from . import _kernels
from .errors import InvalidDimensionError, ShapeMismatchError


def _check_dims(h, w):
    if int(h) != h or int(w) != w or h < 2 or w < 2:
        raise InvalidDimensionError(f"map dimensions must be integers >= 2, got ({h}, {w})")


def identity_map(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """Exact normalized identity grid of shape ``(h, w, 2)``."""
    _check_dims(h, w)
    xs = 2.0 * np.arange(w, dtype=np.float64) / (w - 1) - 1.0
    ys = 2.0 * np.arange(h, dtype=np.float64) / (h - 1) - 1.0
    grid = np.empty((h, w, 2), dtype=np.float64)
    grid[..., 0] = xs[None, :]
    grid[..., 1] = ys[:, None]
    return grid.astype(dtype, copy=False)


def identity_grid(h: int, w: int, batch: int = 1, dtype=torch.float32, device=None) -> torch.Tensor:
    """Torch version of :func:`identity_map` with a leading batch axis."""
    grid = torch.from_numpy(identity_map(h, w)).to(dtype=dtype, device=device)
    return grid.unsqueeze(0).expand(batch, h, w, 2).contiguous()


def _sample_numpy(src, grid, border):
    src = np.asarray(src, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3 or grid.shape[-1] != 2:
        raise ShapeMismatchError(f"map must be (H, W, 2), got {grid.shape}")
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    if src.ndim != 3:
        raise ShapeMismatchError(f"source must be (H, W) or (H, W, C), got {src.shape}")
    out = _kernels.bilinear_sample(np.ascontiguousarray(src), np.ascontiguousarray(grid), border)
    return out[..., 0] if squeeze else out


def bilinear_sample(src, grid, border: bool = False):
    """Bilinearly sample ``src`` at the normalized locations in ``grid``.

    Out-of-range taps contribute 0 (or the nearest edge value when
    ``border``).  numpy inputs run through the compiled kernel in float64;
    torch inputs use ``grid_sample`` and propagate gradients to both
    arguments.
    """
    if isinstance(src, torch.Tensor) or isinstance(grid, torch.Tensor):
        if src.dim() != 4 or grid.dim() != 4 or grid.shape[-1] != 2 or src.shape[0] != grid.shape[0]:
            raise ShapeMismatchError(
                f"expected src (B, C, H, W) and grid (B, h, w, 2), got {tuple(src.shape)} and {tuple(grid.shape)}"
            )
        return F.grid_sample(
            src, grid, mode="bilinear", padding_mode="border" if border else "zeros", align_corners=True
        )
    return _sample_numpy(src, grid, border)


def compose_maps(outer, inner):
    """Map whose entry ``(i, j)`` is ``inner`` looked up at ``outer[i, j]``.

    Sampling ``compose_maps(outer, inner)`` equals sampling with ``inner``
    then resampling that result with ``outer``.  Lookups clamp to ``inner``'s
    edge so the result stays a valid coordinate field.
    """
    if isinstance(outer, torch.Tensor):
        return bilinear_sample(inner.permute(0, 3, 1, 2), outer, border=True).permute(0, 2, 3, 1)
    inner = np.asarray(inner, dtype=np.float64)
    if inner.ndim != 3 or inner.shape[-1] != 2:
        raise ShapeMismatchError(f"inner map must be (H, W, 2), got {inner.shape}")
    return _sample_numpy(inner, outer, border=True)


def resize_map(grid, h2: int, w2: int):
    """Corner-aligned bilinear resize of a coordinate map (or any field).

    Corner values are preserved exactly and a same-shape resize returns an
    unchanged copy.
    """
    _check_dims(h2, w2)
    if isinstance(grid, torch.Tensor):
        if tuple(grid.shape[1:3]) == (h2, w2):
            return grid.clone()
        out = F.interpolate(grid.permute(0, 3, 1, 2), size=(h2, w2), mode="bilinear", align_corners=True)
        return out.permute(0, 2, 3, 1)
    grid = np.asarray(grid)
    if grid.shape[:2] == (h2, w2):
        return grid.copy()
    return _sample_numpy(grid, identity_map(h2, w2), border=True).astype(grid.dtype, copy=False)


def resize_image(img, h2: int, w2: int):
    """Antialiased resize of an ``(H, W[, C])`` image, used for network inputs."""
    _check_dims(h2, w2)
    img = np.asarray(img)
    if img.shape[:2] == (h2, w2):
        return img.astype(np.float64, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float64))
    t = t[None, None] if t.dim() == 2 else t.permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(h2, w2), mode="bilinear", align_corners=False, antialias=True)
    out = out[0, 0] if img.ndim == 2 else out[0].permute(1, 2, 0)
    return out.numpy()


def to_pixels(grid, h: int, w: int):
    """Convert normalized coordinates to pixel units of an ``h x w`` source."""
    grid = np.asarray(grid, dtype=np.float64)
    return (grid + 1.0) * 0.5 * np.array([w - 1, h - 1], dtype=np.float64)


def to_normalized(px, h: int, w: int):
    px = np.asarray(px, dtype=np.float64)
    return 2.0 * px / np.array([w - 1, h - 1], dtype=np.float64) - 1.0
