"""Inter-task feature aggregation and global/local gating."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatchError
from .segnet import CBR, TASKS


class GlobalAttention(nn.Module):
    """Sigmoid-bounded channel-then-spatial attention score.

    Channel scores come from a two-layer MLP over pooled channel descriptors;
    spatial scores from a 7x7 convolution over the channel-reweighted map's
    mean/max summaries.  The returned score is their broadcast product, with
    the input's shape and entries in [0, 1].
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, channels))
        self.spatial = nn.Conv2d(2, 1, 7, padding=3)

    def forward(self, x):
        desc = x.mean(dim=(2, 3))
        ch = torch.sigmoid(self.mlp(desc))[:, :, None, None]
        y = x * ch
        summary = torch.cat([y.mean(dim=1, keepdim=True), y.amax(dim=1, keepdim=True)], dim=1)
        sp = torch.sigmoid(self.spatial(summary))
        return ch * sp


class FeatureAggregation(nn.Module):
    """Refines one task feature with attention computed from the other three.

    ``out = target + scale * CBR(A * target)`` where ``A`` is the global
    attention score of the reduced concatenation of the context features.
    ``scale`` starts at zero, so a fresh module is an exact identity while
    every weight still receives gradient after the first update.
    """

    def __init__(self, channels: int, n_context: int = 3):
        super().__init__()
        self.reduce = CBR(n_context * channels, channels, k=1)
        self.attention = GlobalAttention(channels)
        self.project = CBR(channels, channels, k=1)
        self.scale = nn.Parameter(torch.zeros(1))

    def score(self, others):
        return self.attention(self.reduce(torch.cat(list(others), dim=1)))

    def forward(self, target, others):
        for o in others:
            if o.shape != target.shape:
                raise ShapeMismatchError(f"context feature {tuple(o.shape)} != target {tuple(target.shape)}")
        a = self.score(others)
        return target + self.scale * self.project(a * target)


class AggregateAll(nn.Module):
    """Leave-one-out aggregation for all four tasks, independent parameters.

    Every refinement reads the unrefined inputs, so the four calls commute.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.blocks = nn.ModuleDict({t: FeatureAggregation(channels) for t in TASKS})

    def forward(self, features: dict) -> dict:
        return {t: self.blocks[t](features[t], [features[o] for o in TASKS if o != t]) for t in TASKS}


@dataclass
class GateOutput:
    stacked: torch.Tensor  # (B, 2, C, H, W) weighted branches
    weights: torch.Tensor  # (B, 2) or (B, 2, H, W) when per-pixel


class Gate(nn.Module):
    """Softmax weighting of two same-granularity branches, conditioned on ``F_a``.

    Squeeze is CBR -> 1x1 conv to two logits -> global average pool; the
    softmax runs over the branch axis.  ``per_pixel`` skips the pooling and
    weights each location separately.
    """

    def __init__(self, in_channels: int, channels: int, per_pixel: bool = False):
        super().__init__()
        self.squeeze = nn.Sequential(CBR(in_channels, channels), nn.Conv2d(channels, 2, 1))
        self.per_pixel = per_pixel

    def logits(self, fa):
        z = self.squeeze(fa)
        return z if self.per_pixel else z.mean(dim=(2, 3))

    def forward(self, fa, branch_a, branch_b) -> GateOutput:
        if branch_a.shape != branch_b.shape or fa.shape[-2:] != branch_a.shape[-2:]:
            raise ShapeMismatchError(
                f"gate inputs disagree: F_a {tuple(fa.shape)}, branches {tuple(branch_a.shape)} / {tuple(branch_b.shape)}"
            )
        return weight_branches(F.softmax(self.logits(fa), dim=1), branch_a, branch_b)


def weight_branches(weights, branch_a, branch_b) -> GateOutput:
    stacked = torch.stack([branch_a, branch_b], dim=1)
    w = weights[:, :, None, None, None] if weights.dim() == 2 else weights[:, :, None]
    return GateOutput(stacked * w, weights)


def fixed_gate(branch_a, branch_b) -> GateOutput:
    """Gate replacement for ablations: constant 0.5/0.5 weights."""
    w = branch_a.new_full((branch_a.shape[0], 2), 0.5)
    return weight_branches(w, branch_a, branch_b)


def fuse_for_decoder(gate_global: GateOutput, gate_local: GateOutput) -> torch.Tensor:
    """Sum each gate's weighted pair, then concatenate global and local halves."""
    g, l = gate_global.stacked.sum(dim=1), gate_local.stacked.sum(dim=1)
    if g.shape != l.shape:
        raise ShapeMismatchError(f"global {tuple(g.shape)} and local {tuple(l.shape)} gate outputs differ")
    return torch.cat([g, l], dim=1)
