"""Training objectives.

All reductions are means, so every loss is invariant to replicating the
batch.  Per-image quantities (the line loss class counts) are computed per
image and then averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ShapeMismatchError

DEFAULT_LAMBDA = 5.0


def _same_shape(pred, gt, what):
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"{what}: prediction {tuple(pred.shape)} vs target {tuple(gt.shape)}")


def mse_map_loss(pred, gt):
    _same_shape(pred, gt, "mse_map_loss")
    return torch.mean((pred - gt) ** 2)


def bce_line_loss(logits, gt):
    """Mean binary cross-entropy on logits (log-sum-exp stabilized)."""
    _same_shape(logits, gt, "bce_line_loss")
    return F.binary_cross_entropy_with_logits(logits, gt, reduction="mean")


def weighted_line_loss(prob, gt):
    """Class-balanced squared error on line probabilities.

    Per image over the last two axes: ``L_pos`` is the mean squared error
    on positive pixels and ``L_neg`` (total minus positive error, over the
    negative count) the same on negatives; the result is
    ``(K_pos * L_neg + K_neg * L_pos) / K``.  A class with no pixels
    contributes 0.
    """
    _same_shape(prob, gt, "weighted_line_loss")
    sq = (gt - prob) ** 2
    k = gt.shape[-1] * gt.shape[-2]
    k_pos = gt.sum(dim=(-2, -1))
    k_neg = k - k_pos
    sse = sq.sum(dim=(-2, -1))
    sse_pos = (sq * gt).sum(dim=(-2, -1))
    l_pos = torch.where(k_pos > 0, sse_pos / k_pos.clamp_min(1.0), torch.zeros_like(sse))
    l_neg = torch.where(k_neg > 0, (sse - sse_pos) / k_neg.clamp_min(1.0), torch.zeros_like(sse))
    return torch.mean((k_pos * l_neg + k_neg * l_pos) / k)


def layer_weight(i: int, depth: int) -> float:
    """BCE weight of decoder layer ``i`` (1-based, coarse to fine)."""
    return 1.0 / (2 * depth - i)


def flow_loss(pred, gt):
    """Mean absolute difference between backward maps."""
    _same_shape(pred, gt, "flow_loss")
    return torch.mean(torch.abs(pred - gt))


@dataclass
class LossReport:
    """Named loss terms; tensors keep their graph so ``total`` can backprop.

    Terms of disabled tasks are absent (``None`` / missing from lists).
    """

    total: torch.Tensor
    l_seg: torch.Tensor
    l_b: torch.Tensor
    lam: float
    l_3d: torch.Tensor | None = None
    l_uv: torch.Tensor | None = None
    l_line: torch.Tensor | None = None
    l_bce_h: list = field(default_factory=list)
    l_bce_v: list = field(default_factory=list)
    l_line_h: list = field(default_factory=list)
    l_line_v: list = field(default_factory=list)

    def items(self):
        """Flattened ``(name, tensor)`` pairs of every present term."""
        out = [("total", self.total), ("l_seg", self.l_seg), ("l_b", self.l_b)]
        for name in ("l_3d", "l_uv", "l_line"):
            v = getattr(self, name)
            if v is not None:
                out.append((name, v))
        for name in ("l_bce_h", "l_bce_v", "l_line_h", "l_line_v"):
            out.extend((f"{name}_{i + 1}", v) for i, v in enumerate(getattr(self, name)))
        return out

    def to_json(self) -> dict:
        d = {k: float(v.detach()) for k, v in self.items()}
        d["lambda"] = float(self.lam)
        return d

    def first_nonfinite(self):
        for k, v in self.items():
            if not torch.isfinite(v).all():
                return k, float(v.detach())
        return None


def seg_loss(pyramid: dict, targets: dict, mean_over_layers: bool = True) -> dict:
    """Segmentation-module loss from per-layer predictions and targets.

    ``pyramid[task]`` and ``targets[task]`` are equal-length lists ordered
    coarse to fine.  Line tasks add, per layer ``i``,
    ``(bce_h + bce_v) / (2L - i) + line_h + line_v``; 3D and UV add the mean
    (or, with ``mean_over_layers=False``, only the finest) per-layer MSE.
    """
    comps: dict = {"l_bce_h": [], "l_bce_v": [], "l_line_h": [], "l_line_v": []}
    depth = None
    for task, preds in pyramid.items():
        tg = targets[task]
        if len(preds) != len(tg):
            raise ShapeMismatchError(f"task {task}: {len(preds)} prediction layers vs {len(tg)} target layers")
        if depth is not None and depth != len(preds):
            raise ShapeMismatchError("all tasks need the same decoder depth")
        depth = len(preds)

    zero = next(iter(pyramid.values()))[0].new_zeros(())
    total = zero
    for task, key in (("3d", "l_3d"), ("uv", "l_uv")):
        if task in pyramid:
            per_layer = [mse_map_loss(p, t) for p, t in zip(pyramid[task], targets[task])]
            val = torch.stack(per_layer).mean() if mean_over_layers else per_layer[-1]
            comps[key] = val
            total = total + val

    has_line = False
    l_line = zero
    for task, bkey, lkey in (("hline", "l_bce_h", "l_line_h"), ("vline", "l_bce_v", "l_line_v")):
        if task not in pyramid:
            continue
        has_line = True
        for i, (logit, gt) in enumerate(zip(pyramid[task], targets[task]), start=1):
            bce = bce_line_loss(logit, gt)
            line = weighted_line_loss(torch.sigmoid(logit), gt)
            comps[bkey].append(bce)
            comps[lkey].append(line)
            l_line = l_line + layer_weight(i, depth) * bce + line
    if has_line:
        comps["l_line"] = l_line
        total = total + l_line
    comps["l_seg"] = total
    return comps


def total_loss(l_b, seg: dict, lam: float = DEFAULT_LAMBDA) -> LossReport:
    """Combine the flow term and segmentation components: ``lam * l_b + l_seg``."""
    l_seg = seg["l_seg"]
    return LossReport(
        total=lam * l_b + l_seg,
        l_seg=l_seg,
        l_b=l_b,
        lam=lam,
        l_3d=seg.get("l_3d"),
        l_uv=seg.get("l_uv"),
        l_line=seg.get("l_line"),
        l_bce_h=seg.get("l_bce_h", []),
        l_bce_v=seg.get("l_bce_v", []),
        l_line_h=seg.get("l_line_h", []),
        l_line_v=seg.get("l_line_v", []),
    )
