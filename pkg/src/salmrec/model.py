"""The full rectification network: segmentation, fusion, flow decoding."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .flowdec import FlowDecoder, FlowPrediction
from .fusion import AggregateAll, Gate, GateOutput, fixed_gate, fuse_for_decoder
from .segnet import ModelConfig, SegNet


@dataclass
class ModelOutput:
    features: dict  # per-task fused features before aggregation
    refined: dict  # after aggregation (same objects when FA is off)
    pyramid: dict  # per-task list of four per-layer predictions
    fa: torch.Tensor
    gate_global: GateOutput
    gate_local: GateOutput
    flow: FlowPrediction


class SalmRec(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.fuse
        self.segnet = SegNet(cfg)
        self.fa = AggregateAll(c) if cfg.use_fa else None
        if cfg.use_gate:
            self.gate_global = Gate(cfg.enc[-1], c)
            self.gate_local = Gate(cfg.enc[-1], c)
        self.flowdec = FlowDecoder(2 * c, cfg.flow_depth, cfg.flow_heads, cfg.grid)

    def forward(self, img, out_size=None) -> ModelOutput:
        features, pyramid, fa = self.segnet(img)
        refined = self.fa(features) if self.fa is not None else features
        if self.cfg.use_gate:
            g = self.gate_global(fa, refined["3d"], refined["uv"])
            l = self.gate_local(fa, refined["hline"], refined["vline"])
        else:
            g = fixed_gate(refined["3d"], refined["uv"])
            l = fixed_gate(refined["hline"], refined["vline"])
        fused = fuse_for_decoder(g, l)
        flow = self.flowdec(fused, out_size or tuple(img.shape[-2:]))
        return ModelOutput(features, refined, pyramid, fa, g, l, flow)
