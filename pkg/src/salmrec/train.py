"""Training loop, learning-rate schedule and ablation presets."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_state, read_meta, save_checkpoint
from .errors import ConfigError, DatasetError, NonFiniteLossError
from .geometry import resize_image, resize_map
from .losses import flow_loss, seg_loss, total_loss
from .model import SalmRec
from .segnet import TASKS, ModelConfig, layer_sizes
from .synthdata import AnnotationBundle, read_dataset

log = logging.getLogger(__name__)

LOG_NAME = "train_log.jsonl"
CONFIG_SNAPSHOT = "config.json"


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    warmup_steps: int = 10_000
    max_lr: float = 1.2e-4
    min_lr: float = 5e-7
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    grad_clip: float = 1.0
    lam: float = 5.0
    seed: int = 0
    dataset: str | None = None
    out_dir: str | None = None
    steps: int | None = None  # overrides epochs when set
    checkpoint_every: int = 500
    layerwise_global_loss: bool = True
    preset: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_json(self.model)
        self.betas = tuple(self.betas)
        if not self.min_lr < self.max_lr:
            raise ConfigError(f"min_lr ({self.min_lr}) must be below max_lr ({self.max_lr})")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")

    def to_json(self):
        d = asdict(self)
        d["model"] = self.model.to_json()
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, **overrides):
        base = dict(batch_size=4, warmup_steps=100, model=ModelConfig.desk())
        base.update(overrides)
        return cls(**base)


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``max_lr`` then cosine decay to ``min_lr`` at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = cfg.warmup_steps
    if warm >= total_steps:
        raise ConfigError(f"warmup ({warm}) must be shorter than the run ({total_steps} steps)")
    if step <= warm:
        return cfg.max_lr * step / warm if warm > 0 else cfg.max_lr
    frac = (step - warm) / (total_steps - warm)
    return cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * frac))


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

PRESETS = {
    "3d": (("3d",), False, False),
    "uv": (("uv",), False, False),
    "hline": (("hline",), False, False),
    "vline": (("vline",), False, False),
    "3d_uv": (("3d", "uv"), False, False),
    "hv": (("hline", "vline"), False, False),
    "all": (TASKS, False, False),
    "all_fa": (TASKS, True, False),
    "all_gate": (TASKS, False, True),
    "all_fa_gate": (TASKS, True, True),
}


def ablation_config(name: str, base: TrainConfig | None = None) -> TrainConfig:
    """Task-grouping / module ablation presets.

    Disabled decoders are not built and their loss terms are absent; a
    disabled aggregation module is a pass-through and a disabled gate uses
    fixed 0.5/0.5 weights.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    tasks, fa, gate = PRESETS[name]
    base = base or TrainConfig.desk()
    return replace(base, preset=name, model=replace(base.model, tasks=tasks, use_fa=fa, use_gate=gate))


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------


@dataclass
class Batch:
    image: torch.Tensor  # (B, 3, H, W)
    backward: torch.Tensor  # (B, H, W, 2)
    targets: dict  # task -> list of (B, C, s, s), coarse to fine


def _pool(arr, sizes, binary):
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    t = t[None, None] if t.dim() == 2 else t.permute(2, 0, 1)[None]
    pool = F.adaptive_max_pool2d if binary else F.adaptive_avg_pool2d
    return [pool(t, s)[0] for s in sizes]


def prepare_sample(s: AnnotationBundle, input_size: int, tasks=TASKS) -> dict:
    """Network-resolution tensors for one sample.

    Dense targets are area-averaged to each decoder layer's size; line
    masks are max-pooled so thin strokes survive.
    """
    sizes = layer_sizes(input_size)
    img = resize_image(s.distorted_image, input_size, input_size).clip(0.0, 1.0)
    out = {
        "image": torch.from_numpy(img.astype(np.float32)).permute(2, 0, 1).contiguous(),
        "backward": torch.from_numpy(resize_map(s.backward_map, input_size, input_size).astype(np.float32)),
    }
    sources = {"3d": (s.coord3d, False), "uv": (s.uv, False), "hline": (s.hline_mask, True), "vline": (s.vline_mask, True)}
    for t in tasks:
        arr, binary = sources[t]
        out[t] = _pool(arr, sizes, binary)
    return out


class PreparedData:
    def __init__(self, samples, input_size, tasks):
        self.items = [prepare_sample(s, input_size, tasks) for s in samples]
        self.tasks = tuple(tasks)

    def __len__(self):
        return len(self.items)

    def batch(self, idx) -> Batch:
        items = [self.items[i] for i in idx]
        targets = {t: [torch.stack([it[t][k] for it in items]) for k in range(4)] for t in self.tasks}
        return Batch(torch.stack([it["image"] for it in items]), torch.stack([it["backward"] for it in items]), targets)


def epoch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Deterministic shuffled batches for one epoch; a trailing partial batch is dropped."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    bs = min(batch_size, n)
    return [perm[k : k + bs] for k in range(0, n - bs + 1, bs)]


def steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, n // min(batch_size, n))


def batch_for_step(step: int, n: int, cfg: TrainConfig):
    """Sample indices used by optimizer step ``step`` (0-based)."""
    spe = steps_per_epoch(n, cfg.batch_size)
    epoch, k = divmod(step, spe)
    return epoch_order(n, cfg.batch_size, cfg.seed, epoch)[k]


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------


def compute_losses(model: SalmRec, batch: Batch, cfg: TrainConfig):
    out = model(batch.image)
    seg = seg_loss(out.pyramid, batch.targets, mean_over_layers=cfg.layerwise_global_loss)
    l_b = flow_loss(out.flow.full, batch.backward)
    return total_loss(l_b, seg, cfg.lam), out


def build_model(cfg: TrainConfig) -> SalmRec:
    torch.manual_seed(cfg.seed)
    return SalmRec(cfg.model)


def make_optimizer(model, cfg: TrainConfig):
    return torch.optim.AdamW(model.parameters(), lr=cfg.max_lr, betas=cfg.betas, weight_decay=cfg.weight_decay)


def _ckpt_dirs(out_dir: Path):
    root = out_dir / "checkpoints"
    if not root.exists():
        return []
    return sorted((p for p in root.iterdir() if p.name.startswith("step_")), key=lambda p: int(p.name[5:]))


def latest_checkpoint(out_dir) -> Path | None:
    dirs = _ckpt_dirs(Path(out_dir))
    return dirs[-1] if dirs else None


@dataclass
class TrainResult:
    model: SalmRec
    losses: list  # per-step LossReport.to_json() dicts of this invocation
    total_steps: int
    out_dir: Path | None
    seconds: float


def train_loop(cfg: TrainConfig, samples=None, resume: bool | str = False, stop_after: int | None = None, progress=None) -> TrainResult:
    """Train from ``cfg.dataset`` (or in-memory ``samples``).

    With ``out_dir`` set, every step's loss report goes to
    ``train_log.jsonl``, checkpoints land in ``checkpoints/step_NNNNNN``
    every ``checkpoint_every`` steps and at the end, and the config is
    snapshotted beside them.  ``resume`` continues from the newest (or the
    given) checkpoint; ``stop_after`` ends the invocation early after that
    global step without changing the schedule.
    """
    t0 = time.time()
    if samples is None:
        if not cfg.dataset:
            raise ConfigError("no dataset path configured")
        if not Path(cfg.dataset).exists():
            raise DatasetError(f"dataset path {cfg.dataset} does not exist")
        samples = read_dataset(cfg.dataset)
    data = PreparedData(samples, cfg.model.input_size, cfg.model.tasks)
    n = len(data)
    total = cfg.steps if cfg.steps is not None else cfg.epochs * steps_per_epoch(n, cfg.batch_size)
    if cfg.warmup_steps >= total:
        raise ConfigError(f"warmup ({cfg.warmup_steps}) must be shorter than the run ({total} steps)")

    model = build_model(cfg)
    opt = make_optimizer(model, cfg)
    start = 0
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    log_path = out_dir / LOG_NAME if out_dir else None

    if resume:
        if out_dir is None and resume is True:
            raise ConfigError("resume needs out_dir or an explicit checkpoint path")
        ckpt = Path(resume) if isinstance(resume, (str, Path)) else latest_checkpoint(out_dir)
        if ckpt is None:
            raise ConfigError(f"no checkpoint to resume from in {out_dir}")
        load_state(model, ckpt)
        state = torch.load(ckpt / "trainer.pt", weights_only=False)
        opt.load_state_dict(state["optimizer"])
        start = int(read_meta(ckpt)["step"])
        log.info("resumed from %s at step %d", ckpt, start)
        if log_path is not None and log_path.exists():
            kept = [l for l in log_path.read_text().splitlines() if l and json.loads(l)["step"] <= start]
            log_path.write_text("".join(l + "\n" for l in kept))
    elif out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if log_path.exists():
            log_path.unlink()

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / CONFIG_SNAPSHOT).write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")

    model = model.to(memory_format=torch.channels_last)
    model.train()
    end = total if stop_after is None else min(total, stop_after)
    history = []
    logf = open(log_path, "a") if log_path is not None else None

    def checkpoint(step):
        if out_dir is None:
            return
        d = save_checkpoint(model, out_dir / "checkpoints" / f"step_{step:06d}", step, {"preset": cfg.preset})
        torch.save({"optimizer": opt.state_dict()}, d / "trainer.pt")

    try:
        for step in range(start, end):
            batch = data.batch(batch_for_step(step, n, cfg))
            batch.image = batch.image.contiguous(memory_format=torch.channels_last)
            report, _ = compute_losses(model, batch, cfg)
            bad = report.first_nonfinite()
            if bad is not None:
                raise NonFiniteLossError(step + 1, *bad)
            lr = lr_schedule(step + 1, total, cfg)
            for g in opt.param_groups:
                g["lr"] = lr
            opt.zero_grad(set_to_none=True)
            report.total.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            row = {"step": step + 1, "lr": lr, **report.to_json()}
            history.append(row)
            if logf is not None:
                logf.write(json.dumps(row) + "\n")
                logf.flush()
            if progress is not None:
                progress(row)
            if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == total:
                checkpoint(step + 1)
    finally:
        if logf is not None:
            logf.close()
    if stop_after is not None and end < total and end % cfg.checkpoint_every:
        checkpoint(end)
    model.eval()
    return TrainResult(model.to(memory_format=torch.contiguous_format), history, total, out_dir, time.time() - t0)


def load_config(path, preset: str | None = None, seed: int | None = None) -> TrainConfig:
    """Read a JSON training config; seed precedence is argument > ``SALMREC_SEED`` > file."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    base_kind = raw.pop("base", "desk")
    model = raw.pop("model", {})
    preset = preset or raw.pop("preset", None)
    raw.pop("preset", None)
    if base_kind not in ("desk", "paper"):
        raise ConfigError(f"config base must be 'desk' or 'paper', got {base_kind!r}")
    try:
        if base_kind == "desk":
            cfg = TrainConfig.desk(**raw)
            cfg.model = replace(cfg.model, **model) if model else cfg.model
        else:
            cfg = TrainConfig(**raw, model=ModelConfig(**model))
    except TypeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    if preset:
        cfg = ablation_config(preset, cfg)
    env_seed = os.environ.get("SALMREC_SEED")
    if seed is not None:
        cfg.seed = int(seed)
    elif env_seed not in (None, ""):
        cfg.seed = int(env_seed)
    return cfg
