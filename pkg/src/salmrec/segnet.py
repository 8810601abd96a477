"""Shared UNet encoder with a self-attention bottleneck and per-task decoders."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeMismatchError

TASKS = ("3d", "uv", "hline", "vline")
TASK_CHANNELS = {"3d": 3, "uv": 2, "hline": 1, "vline": 1}


@dataclass
class ModelConfig:
    """Network shape.  Channel lists are the full-width values; ``width``
    scales every one of them (and ``fuse_channels``) for desk-sized runs."""

    input_size: int = 448
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    attn_layers: int = 6
    attn_heads: int = 8
    decoder_channels: tuple[int, ...] = (128, 96, 48, 32)
    fuse_channels: int = 256
    flow_depth: int = 4
    flow_heads: int = 8
    width: float = 1.0
    tasks: tuple[str, ...] = TASKS
    use_fa: bool = True
    use_gate: bool = True
    lam: float = 5.0

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        self.decoder_channels = tuple(self.decoder_channels)
        self.tasks = tuple(self.tasks)
        if self.input_size % 16:
            raise ConfigError(f"input_size must be divisible by 16, got {self.input_size}")
        if len(self.encoder_channels) != 5:
            raise ConfigError("encoder_channels needs 5 stages")
        if len(self.decoder_channels) != 4:
            raise ConfigError("decoder_channels needs 4 layers")
        unknown = set(self.tasks) - set(TASKS)
        if unknown or not self.tasks:
            raise ConfigError(f"tasks must be a non-empty subset of {TASKS}, got {self.tasks}")
        for heads, dim in ((self.attn_heads, self.enc[-1]), (self.flow_heads, 2 * self.fuse)):
            if dim % heads or dim % 4:
                raise ConfigError(f"attention width {dim} must be divisible by {heads} heads and by 4")

    def _scale(self, c):
        return max(4, int(round(c * self.width)))

    @property
    def enc(self):
        return tuple(self._scale(c) for c in self.encoder_channels)

    @property
    def dec(self):
        return tuple(self._scale(c) for c in self.decoder_channels)

    @property
    def fuse(self):
        return self._scale(self.fuse_channels)

    @property
    def grid(self):
        return self.input_size // 16

    def to_json(self):
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["decoder_channels"] = list(self.decoder_channels)
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_json(cls, d):
        return cls(**d)

    @classmethod
    def desk(cls, **overrides):
        base = dict(input_size=128, width=0.25, flow_depth=2)
        base.update(overrides)
        return cls(**base)


class CBR(nn.Sequential):
    """Convolution, batch normalization, ReLU."""

    def __init__(self, cin, cout, k=3):
        super().__init__(
            nn.Conv2d(cin, cout, k, padding=k // 2, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )


def sincos_2d(h, w, dim, device=None, dtype=torch.float32):
    """Fixed 2D sinusoidal position encoding, ``(h*w, dim)``; half the channels
    encode rows, half columns."""
    quarter = dim // 4
    omega = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / max(quarter, 1)))
    ys, xs = torch.meshgrid(torch.arange(h, dtype=torch.float64), torch.arange(w, dtype=torch.float64), indexing="ij")
    oy = ys.reshape(-1, 1) * omega[None]
    ox = xs.reshape(-1, 1) * omega[None]
    pe = torch.cat([oy.sin(), oy.cos(), ox.sin(), ox.cos()], dim=1)
    return pe.to(device=device, dtype=dtype)


class Block(nn.Module):
    """Pre-norm transformer block (self-attention + 4x MLP)."""

    def __init__(self, dim, heads, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim))

    def forward(self, x):
        y = self.norm1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class TokenTransformer(nn.Module):
    """Stack of blocks over a feature map flattened to ``h*w`` tokens."""

    def __init__(self, dim, depth, heads):
        super().__init__()
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        b, c, h, w = x.shape
        t = x.flatten(2).transpose(1, 2) + sincos_2d(h, w, c, x.device, x.dtype)[None]
        for blk in self.blocks:
            t = blk(t)
        return self.norm(t).transpose(1, 2).reshape(b, c, h, w)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.enc
        stages = [nn.Sequential(CBR(3, ch[0]), CBR(ch[0], ch[0]))]
        for cin, cout in zip(ch[:-1], ch[1:]):
            stages.append(nn.Sequential(nn.MaxPool2d(2), CBR(cin, cout), CBR(cout, cout)))
        self.stages = nn.ModuleList(stages)
        self.attention = TokenTransformer(ch[-1], cfg.attn_layers, cfg.attn_heads)
        self.input_size = cfg.input_size

    def forward(self, img):
        if img.dim() != 4 or img.shape[1] != 3 or img.shape[-1] % 16 or img.shape[-2] % 16:
            raise ShapeMismatchError(f"expected (B, 3, H, W) with H, W divisible by 16, got {tuple(img.shape)}")
        skips = []
        x = img
        for stage in self.stages:
            x = stage(x)
            skips.append(x)
        return skips[:4], self.attention(x)


class TaskDecoder(nn.Module):
    """Four upsampling layers with per-layer task heads and a fused output.

    Layer ``i`` upsamples 2x, concatenates the mirrored encoder skip, then
    applies two CBRs.  All layer features are pooled to the bottleneck grid,
    concatenated and reduced by one CBR to ``fuse`` channels.
    """

    def __init__(self, cfg: ModelConfig, out_channels: int):
        super().__init__()
        enc, dec = cfg.enc, cfg.dec
        skip_ch = enc[:4][::-1]
        cin = enc[-1]
        layers, heads = [], []
        for c, s in zip(dec, skip_ch):
            layers.append(nn.Sequential(CBR(cin + s, c), CBR(c, c)))
            heads.append(nn.Conv2d(c, out_channels, 1))
            cin = c
        self.layers = nn.ModuleList(layers)
        self.heads = nn.ModuleList(heads)
        self.reduce = CBR(sum(dec), cfg.fuse)

    def forward(self, fa, skips):
        x = fa
        grid = fa.shape[-2:]
        preds, feats = [], []
        for layer, head, skip in zip(self.layers, self.heads, reversed(skips)):
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = layer(torch.cat([x, skip], dim=1))
            preds.append(head(x))
            feats.append(F.adaptive_avg_pool2d(x, grid))
        return preds, self.reduce(torch.cat(feats, dim=1))


class SegNet(nn.Module):
    """Shared encoder plus one independent decoder per enabled task.

    ``forward`` returns ``(features, pyramid, F_a)``: ``features`` maps every
    task name to its fused ``(B, fuse, H/16, W/16)`` feature (zeros for
    disabled tasks), ``pyramid`` maps enabled tasks to their four per-layer
    predictions (coarse to fine).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoders = nn.ModuleDict({t: TaskDecoder(cfg, TASK_CHANNELS[t]) for t in cfg.tasks})

    def encode(self, img):
        return self.encoder(img)

    def decode_task(self, fa, skips, task):
        if task not in self.decoders:
            raise KeyError(f"unknown or disabled task {task!r}; enabled: {list(self.decoders)}")
        return self.decoders[task](fa, skips)

    def forward(self, img):
        skips, fa = self.encode(img)
        features, pyramid = {}, {}
        for t in TASKS:
            if t in self.decoders:
                pyramid[t], features[t] = self.decode_task(fa, skips, t)
        zero = None
        for t in TASKS:
            if t not in features:
                if zero is None:
                    b, _, h, w = fa.shape
                    zero = fa.new_zeros(b, self.cfg.fuse, h, w)
                features[t] = zero
        return features, pyramid, fa


def layer_sizes(input_size: int) -> list[int]:
    """Native side length of each decoder layer's prediction, coarse to fine."""
    return [input_size // 8, input_size // 4, input_size // 2, input_size]


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())

