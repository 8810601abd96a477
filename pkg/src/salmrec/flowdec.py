"""Transformer decoder regressing the backward map, plus the rectifier."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ShapeMismatchError
from .geometry import bilinear_sample, identity_grid, resize_map
from .segnet import TokenTransformer


@dataclass
class FlowPrediction:
    coarse: torch.Tensor  # (B, h, w, 2) at the bottleneck grid
    full: torch.Tensor  # (B, H, W, 2) backward map


class FlowDecoder(nn.Module):
    """Self-attention over the fused tokens, then a per-token linear head.

    The head predicts absolute normalized coordinates.  Its weight starts at
    zero and its bias is a learnable coordinate map initialized to the
    identity grid, so a fresh decoder outputs the identity map.  Inputs at a
    grid other than the configured one get the bias map resized
    (corner-aligned, which keeps the identity exact).
    """

    def __init__(self, dim: int, depth: int, heads: int, grid: int):
        super().__init__()
        self.dim = dim
        self.transformer = TokenTransformer(dim, depth, heads)
        self.head = nn.Linear(dim, 2, bias=False)
        nn.init.zeros_(self.head.weight)
        self.bias_map = nn.Parameter(identity_grid(grid, grid)[0].clone())

    def base(self, h, w):
        base = self.bias_map[None]
        return base if tuple(base.shape[1:3]) == (h, w) else resize_map(base, h, w)

    def forward(self, fused, out_size=None) -> FlowPrediction:
        if fused.dim() != 4 or fused.shape[1] != self.dim:
            raise ShapeMismatchError(f"expected (B, {self.dim}, h, w) fused features, got {tuple(fused.shape)}")
        b, _, h, w = fused.shape
        x = self.transformer(fused).permute(0, 2, 3, 1)
        coarse = self.head(x) + self.base(h, w).to(x.dtype)
        H, W = out_size if out_size is not None else (16 * h, 16 * w)
        return FlowPrediction(coarse, resize_map(coarse, H, W))


def rectify(distorted: torch.Tensor, backward: torch.Tensor) -> torch.Tensor:
    """Resample ``(B, 3, H, W)`` images through a ``(B, h, w, 2)`` backward map."""
    return bilinear_sample(distorted, backward).clamp(0.0, 1.0)


def upsample_flow(coarse: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return resize_map(coarse, h, w)


__all__ = ["FlowDecoder", "FlowPrediction", "rectify", "upsample_flow"]
