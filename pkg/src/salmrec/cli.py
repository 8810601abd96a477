"""Command-line entry point: ``salmrec {datagen,train,rectify,eval,init}``.

Every command prints a JSON run manifest on success and exits 0.  Failures
print one line ``error: <code>: <message>`` to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import __version__, _kernels
from .errors import ConfigError, DatasetError, SalmRecError


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _versions():
    import torch

    return {
        "salmrec": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "torch": torch.__version__,
        "kernels": _kernels.BACKEND,
    }


def _manifest(command, config, inputs, outputs, t0, **extra):
    m = {
        "command": command,
        "config_hash": config_hash(config),
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "timings": {"started": t0, "seconds": round(time.time() - t0, 3)},
        "versions": _versions(),
    }
    m.update(extra)
    return m


def _load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _save_image(path, arr):
    arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _resolve_ckpt(path):
    from .train import latest_checkpoint

    path = Path(path)
    if (path / "model.npz").exists():
        return path
    latest = latest_checkpoint(path)
    if latest is None:
        raise ConfigError(f"{path} is neither a checkpoint nor a training directory with checkpoints")
    return latest


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_datagen(args):
    from .synthdata import MIN_PAGE, generate_dataset, write_dataset

    if args.count < 1:
        raise ConfigError(f"--count must be at least 1, got {args.count}")
    if not 0.0 <= args.severity <= 1.0:
        raise ConfigError(f"--severity must lie in [0, 1], got {args.severity}")
    if args.size < MIN_PAGE:
        raise ConfigError(f"--size must be at least {MIN_PAGE}, got {args.size}")
    samples = generate_dataset(
        args.count, args.seed, args.severity, args.size, tuple(args.grid_lines), severity_range=args.severity_range
    )
    out = write_dataset(samples, args.out)
    return {"inputs": {}, "outputs": {"dataset": str(out), "count": len(samples)}}


def cmd_train(args):
    from .train import load_config, train_loop

    cfg = load_config(args.config, preset=args.preset, seed=args.seed)
    if args.steps is not None:
        cfg.steps = args.steps
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if not cfg.out_dir:
        cfg.out_dir = str(Path(args.config).with_suffix("")) + "_run"
    if not cfg.dataset or not Path(cfg.dataset).exists():
        raise DatasetError(f"dataset path {cfg.dataset!r} does not exist")
    res = train_loop(cfg, resume=args.resume)
    final = res.losses[-1] if res.losses else {}
    from .train import latest_checkpoint

    return {
        "config": cfg.to_json(),
        "inputs": {"config": str(args.config), "dataset": cfg.dataset},
        "outputs": {"out_dir": str(res.out_dir), "checkpoint": str(latest_checkpoint(res.out_dir))},
        "extra": {"steps": res.total_steps, "final_loss": final.get("total")},
    }


def cmd_rectify(args):
    from .checkpoint import load_checkpoint
    from .inference import predict_backward, rectify_image, task_predictions

    model, _ = load_checkpoint(_resolve_ckpt(args.ckpt))
    src = Path(args.inp)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.is_file())
    elif src.exists():
        files = [src]
    else:
        raise DatasetError(f"input {src} does not exist")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written, errors = [], []
    for f in files:
        try:
            img = _load_image(f)
        except (UnidentifiedImageError, OSError) as exc:
            errors.append({"file": str(f), "error": f"not a readable image: {exc}"})
            continue
        bm = predict_backward(model, [img])[0]
        target = out / f"{f.stem}_rectified.png"
        _save_image(target, rectify_image(img, bm))
        written.append(str(target))
        if args.dump_intermediates:
            for task, pred in task_predictions(model, img).items():
                p = out / f"{f.stem}_{task}.png"
                _save_image(p, pred)
                written.append(str(p))
    if not written:
        raise DatasetError(f"no input image could be rectified ({len(errors)} failed)")
    return {"inputs": {"ckpt": str(args.ckpt), "in": str(src)}, "outputs": {"files": written}, "extra": {"errors": errors}}


def cmd_eval(args):
    from .inference import evaluate
    from .synthdata import read_dataset

    data = read_dataset(args.data)
    model = None
    if not args.oracle:
        if not args.ckpt:
            raise ConfigError("--ckpt is required unless --oracle is given")
        from .checkpoint import load_checkpoint

        model, _ = load_checkpoint(_resolve_ckpt(args.ckpt))
    report = evaluate(data, model=model, oracle=args.oracle)
    path = report.write(args.out)
    return {
        "inputs": {"ckpt": args.ckpt, "data": str(args.data), "oracle": args.oracle},
        "outputs": {"metrics": str(path)},
        "extra": {"aggregate": report.aggregate()},
    }


def cmd_init(args):
    from .checkpoint import save_checkpoint
    from .model import SalmRec
    from .train import TrainConfig, ablation_config

    import torch

    cfg = TrainConfig.desk(seed=args.seed)
    if args.preset:
        cfg = ablation_config(args.preset, cfg)
    if args.input_size:
        cfg.model = replace(cfg.model, input_size=args.input_size)
    torch.manual_seed(cfg.seed)
    model = SalmRec(cfg.model)
    out = save_checkpoint(model, args.out, 0, {"preset": cfg.preset})
    return {"config": cfg.to_json(), "inputs": {}, "outputs": {"checkpoint": str(out)}}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="salmrec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("datagen", help="generate a synthetic dataset")
    d.add_argument("--out", required=True)
    d.add_argument("--count", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--severity", type=float, default=0.5)
    d.add_argument("--size", type=int, default=256)
    d.add_argument("--grid-lines", type=int, nargs=2, default=(4, 3), metavar=("N_H", "N_V"))
    d.add_argument("--severity-range", action="store_true", help="draw each severity uniformly from [0, --severity]")
    d.set_defaults(func=cmd_datagen)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--preset", default=None)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--out-dir", default=None)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rectify", help="rectify an image or a directory of images")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--dump-intermediates", action="store_true")
    r.set_defaults(func=cmd_rectify)

    e = sub.add_parser("eval", help="evaluate on a dataset and write metrics.json")
    e.add_argument("--ckpt", default=None)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--oracle", action="store_true", help="rectify with ground-truth backward maps")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("init", help="write an untrained (identity-flow) checkpoint")
    i.add_argument("--out", required=True)
    i.add_argument("--preset", default=None)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--input-size", type=int, default=None)
    i.set_defaults(func=cmd_init)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.time()
    try:
        res = args.func(args)
    except SalmRecError as exc:
        print(f"error: {exc.code}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__.lower()}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    config = res.get("config") or {k: v for k, v in vars(args).items() if k != "func"}
    manifest = _manifest(args.command, config, res["inputs"], res["outputs"], t0, **res.get("extra", {}))
    print(json.dumps(manifest, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
