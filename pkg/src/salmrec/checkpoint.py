"""Checkpoint directories: ``model.npz`` (every parameter and buffer by name)
plus a ``config.json`` sidecar.  Loading rebuilds the model from the sidecar
and refuses archives whose names or shapes do not match it exactly."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import SalmRec
from .segnet import ModelConfig

FORMAT = "salmrec-checkpoint/1"


def save_checkpoint(model: SalmRec, directory, step: int = 0, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().contiguous().numpy() for k, v in model.state_dict().items()}
    np.savez(directory / "model.npz", **arrays)
    meta = {"format": FORMAT, "step": int(step), "model": model.cfg.to_json()}
    if extra:
        meta.update(extra)
    (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def read_meta(directory) -> dict:
    path = Path(directory) / "config.json"
    try:
        meta = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint sidecar {path} is missing") from exc
    except ValueError as exc:
        raise CheckpointError(f"checkpoint sidecar {path} is not valid JSON: {exc}") from exc
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return meta


def load_state(model: SalmRec, directory) -> None:
    """Load ``model.npz`` into ``model`` after validating names and shapes."""
    path = Path(directory) / "model.npz"
    if not path.exists():
        raise CheckpointError(f"checkpoint archive {path} is missing")
    expected = model.state_dict()
    with np.load(path) as npz:
        names = set(npz.files)
        missing = sorted(set(expected) - names)
        unexpected = sorted(names - set(expected))
        bad_shape = sorted(k for k in set(expected) & names if tuple(npz[k].shape) != tuple(expected[k].shape))
        if missing or unexpected or bad_shape:
            parts = []
            if missing:
                parts.append(f"missing {missing[:5]}{'...' if len(missing) > 5 else ''}")
            if unexpected:
                parts.append(f"unexpected {unexpected[:5]}{'...' if len(unexpected) > 5 else ''}")
            if bad_shape:
                parts.append(f"shape mismatch {bad_shape[:5]}")
            raise CheckpointError(f"{path} does not match its config: " + "; ".join(parts))
        state = {k: torch.from_numpy(npz[k].copy()) for k in expected}
    model.load_state_dict(state)


def load_checkpoint(directory) -> tuple[SalmRec, dict]:
    """Rebuild the model from a checkpoint directory; returns ``(model, meta)``."""
    meta = read_meta(directory)
    try:
        cfg = ModelConfig.from_json(meta["model"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{directory}: bad model config: {exc}") from exc
    model = SalmRec(cfg)
    load_state(model, directory)
    model.eval()
    return model, meta
