"""Pure-Python/numpy versions of the compiled kernels.

Semantics match ``_core`` exactly; used when the extension is not built or
``SALMREC_PURE=1`` is set.
"""

import numpy as np


def bilinear_sample(src, grid, border=False):
    H, W, C = src.shape
    x = (grid[..., 0] + 1.0) * 0.5 * (W - 1)
    y = (grid[..., 1] + 1.0) * 0.5 * (H - 1)
    if border:
        x = np.clip(x, 0.0, W - 1)
        y = np.clip(y, 0.0, H - 1)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    out = np.zeros(grid.shape[:2] + (C,), dtype=np.float64)
    for k in range(4):
        xi = x0 + (k & 1)
        yi = y0 + (k >> 1)
        wgt = (fx if k & 1 else 1.0 - fx) * (fy if k >> 1 else 1.0 - fy)
        ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        vals = src[np.where(ok, yi, 0), np.where(ok, xi, 0)]
        out += np.where(ok, wgt, 0.0)[..., None] * vals
    return out


def invert_field(fwd, tol_px, max_iter):
    h, w = fwd.shape[:2]
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    q = np.stack([2.0 * jj / (w - 1) - 1.0, 2.0 * ii / (h - 1) - 1.0], axis=-1)
    p = q.copy()
    scale = np.array([0.5 * (w - 1), 0.5 * (h - 1)])
    worst = np.inf
    it = 0
    while it < max_iter:
        it += 1
        delta = bilinear_sample(fwd, p, border=True) - q
        p -= delta
        worst = float(np.max(np.abs(delta) * scale))
        if worst < tol_px:
            break
    return p, it, worst


def levenshtein(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j - 1] + (ca != cb), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]
