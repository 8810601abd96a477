"""Scaled-down training experiments used by the acceptance suite and the CLI."""

from __future__ import annotations

import functools
import logging

import numpy as np

from .inference import evaluate
from .synthdata import generate_dataset
from .train import TrainConfig, ablation_config, train_loop

log = logging.getLogger(__name__)

TRAIN_SEED0 = 10_000
TEST_SEED0 = 20_000
OVERFIT_SEED0 = 1_000


@functools.lru_cache(maxsize=4)
def synthetic_split(count: int, seed0: int, max_severity: float, size: int = 256):
    return tuple(generate_dataset(count, seed=seed0, severity=max_severity, size=size, severity_range=True))


def desk_config(**overrides) -> TrainConfig:
    """Desk training setup: 128 px input, width 0.25, two flow blocks, batch 4.

    The learning rate is raised from the large-batch value because these
    runs last hundreds to a few thousand steps on a handful of samples.
    """
    base = dict(max_lr=2e-3, warmup_steps=100, checkpoint_every=10**9)
    base.update(overrides)
    return TrainConfig.desk(**base)


def overfit_experiment(steps: int = 300, count: int = 8, seed: int = 0, max_lr: float = 3e-3, warmup: int = 50) -> dict:
    """Fit a tiny fixed set; reports the relative drop of the total loss."""
    samples = synthetic_split(count, OVERFIT_SEED0, 0.6)
    cfg = desk_config(steps=steps, seed=seed, max_lr=max_lr, warmup_steps=warmup)
    res = train_loop(cfg, samples=list(samples))
    totals = np.array([r["total"] for r in res.losses])
    first, last = float(totals[:10].mean()), float(totals[-10:].mean())
    return {"first10": first, "last10": last, "drop": 1.0 - last / first, "seconds": res.seconds, "steps": steps}


def generalization_experiment(
    preset: str = "all_fa_gate",
    seed: int = 0,
    steps: int = 2000,
    train_count: int = 256,
    test_count: int = 16,
    max_severity: float = 0.6,
    out_dir=None,
    **overrides,
) -> dict:
    """Train on synthetic pages, evaluate on held-out ones against the identity baseline."""
    train = synthetic_split(train_count, TRAIN_SEED0, max_severity)
    test = synthetic_split(test_count, TEST_SEED0, max_severity)
    cfg = ablation_config(preset, desk_config(steps=steps, seed=seed, out_dir=out_dir, **overrides))
    res = train_loop(cfg, samples=list(train))
    report = evaluate(list(test), model=res.model)
    agg = report.aggregate()
    return {
        "preset": preset,
        "seed": seed,
        "steps": steps,
        "seconds": res.seconds,
        "final_loss": res.losses[-1]["total"],
        "ms_ssim": agg["ms_ssim"],
        "ms_ssim_distorted": agg["ms_ssim_distorted"],
        "ld": agg["ld"],
        "ld_identity": agg["ld_identity"],
        "ad": agg["ad"],
        "cer": agg["cer"],
        "report": report,
        "model": res.model,
    }


def summarize(result: dict) -> dict:
    return {k: v for k, v in result.items() if k not in ("report", "model")}


__all__ = ["desk_config", "generalization_experiment", "overfit_experiment", "summarize", "synthetic_split"]
