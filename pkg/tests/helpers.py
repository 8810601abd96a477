"""Independent oracles shared by the test modules.

Everything here is written with plain loops over Python floats so it shares
no code path with the library under test.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def fd_gradcheck(fn, tensors, eps=1e-6, max_entries=24, seed=0):
    """Worst relative error between autograd and central differences.

    ``fn`` returns a scalar tensor; ``tensors`` are leaf float64 tensors
    with ``requires_grad``.  Up to ``max_entries`` random entries of each
    tensor are perturbed; the error of a tensor is
    ``|g_auto - g_fd| / max(|g_auto|, |g_fd|)`` over the sampled vector.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    fn().backward()
    worst = 0.0
    for t in tensors:
        auto = t.grad.detach().clone().reshape(-1)
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.numel(), size=min(max_entries, flat.numel()), replace=False)
        num = torch.empty(len(idx), dtype=torch.float64)
        with torch.no_grad():
            for k, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + eps
                plus = fn().item()
                flat[i] = orig - eps
                minus = fn().item()
                flat[i] = orig
                num[k] = (plus - minus) / (2 * eps)
        a = auto[torch.as_tensor(idx)]
        scale = max(a.norm().item(), num.norm().item())
        if scale < 1e-10:
            continue
        worst = max(worst, (a - num).norm().item() / scale)
    return worst


def bilinear_loop(src, x, y):
    """Zero-padded bilinear tap of a 2D list-of-lists at normalized (x, y)."""
    h, w = len(src), len(src[0])
    px, py = (x + 1) * 0.5 * (w - 1), (y + 1) * 0.5 * (h - 1)
    x0, y0 = math.floor(px), math.floor(py)
    fx, fy = px - x0, py - y0
    total = 0.0
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            r, c = y0 + dy, x0 + dx
            if 0 <= r < h and 0 <= c < w:
                total += wy * wx * src[r][c]
    return total


def levenshtein_loop(a, b):
    """Textbook full-table dynamic program."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a)][len(b)]


def bce_loop(logits, gt):
    total, n = 0.0, 0
    for row_l, row_g in zip(logits, gt):
        for z, y in zip(row_l, row_g):
            p = 1.0 / (1.0 + math.exp(-z))
            total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
            n += 1
    return total / n


def weighted_line_loop(pred, gt):
    """Class-balanced squared error with direct per-class means."""
    pos, neg = [], []
    for row_p, row_g in zip(pred, gt):
        for p, g in zip(row_p, row_g):
            (pos if g == 1 else neg).append((g - p) ** 2)
    k = len(pos) + len(neg)
    l_pos = sum(pos) / len(pos) if pos else 0.0
    l_neg = sum(neg) / len(neg) if neg else 0.0
    return (len(pos) * l_neg + len(neg) * l_pos) / k


def l1_loop(a, b):
    flat_a, flat_b = np.asarray(a).ravel().tolist(), np.asarray(b).ravel().tolist()
    return sum(abs(p - q) for p, q in zip(flat_a, flat_b)) / len(flat_a)


def displacement_loop(pred, gt):
    """Mean pixel-unit Euclidean distance between two normalized maps."""
    h, w = len(pred), len(pred[0])
    total = 0.0
    for i in range(h):
        for j in range(w):
            dx = (pred[i][j][0] - gt[i][j][0]) * 0.5 * (w - 1)
            dy = (pred[i][j][1] - gt[i][j][1]) * 0.5 * (h - 1)
            total += math.hypot(dx, dy)
    return total / (h * w)
