"""Running a trained model on images and evaluating it on a dataset."""

from __future__ import annotations

import numpy as np
import torch

from .geometry import bilinear_sample, identity_map, resize_image, resize_map
from .glyphs import TemplateRecognizer
from .metrics import MetricsReport, SampleMetrics, aligned_distortion, cer, edit_distance, local_distortion, ms_ssim
from .model import SalmRec


def _to_input(images, size):
    arr = np.stack([resize_image(im, size, size).clip(0.0, 1.0) for im in images])
    return torch.from_numpy(arr.astype(np.float32)).permute(0, 3, 1, 2).contiguous()


@torch.no_grad()
def run_model(model: SalmRec, images):
    """Forward a list of ``(H, W, 3)`` images at the model's input size."""
    model.eval()
    return model(_to_input(images, model.cfg.input_size))


def predict_backward(model: SalmRec, images, batch_size: int = 8):
    """Backward maps for each image, at that image's own resolution (float64)."""
    out = []
    for k in range(0, len(images), batch_size):
        chunk = images[k : k + batch_size]
        coarse = run_model(model, chunk).flow.coarse.double().numpy()
        out.extend(resize_map(c, im.shape[0], im.shape[1]) for c, im in zip(coarse, chunk))
    return out


def rectify_image(image, backward):
    return np.clip(bilinear_sample(image, backward), 0.0, 1.0)


@torch.no_grad()
def task_predictions(model: SalmRec, image) -> dict:
    """Finest-layer prediction of every enabled task as displayable ``[0, 1]`` images."""
    out = run_model(model, [image])
    shown = {}
    for task, preds in out.pyramid.items():
        p = preds[-1][0]
        if task in ("hline", "vline"):
            p = torch.sigmoid(p)
        p = p.clamp(0.0, 1.0).permute(1, 2, 0).numpy().astype(np.float64)
        if p.shape[-1] == 1:
            p = p[..., 0]
        elif p.shape[-1] == 2:
            p = np.concatenate([p, np.zeros(p.shape[:2] + (1,))], axis=-1)
        shown[task] = p
    return shown


def evaluate(dataset, model: SalmRec | None = None, oracle: bool = False, recognizer=None, batch_size: int = 8) -> MetricsReport:
    """Metrics for every sample; ``oracle`` rectifies with the ground-truth map.

    Each row also carries the unrectified baselines: MS-SSIM of the distorted
    input and LD of the identity map.
    """
    if model is None and not oracle:
        raise ValueError("evaluate needs a model unless oracle=True")
    recognizer = recognizer or TemplateRecognizer()
    rows = []
    for start in range(0, len(dataset), batch_size):
        chunk = [dataset[k] for k in range(start, min(start + batch_size, len(dataset)))]
        if oracle:
            preds = [s.backward_map for s in chunk]
        else:
            preds = predict_backward(model, [s.distorted_image for s in chunk], batch_size)
        for k, (s, pred) in enumerate(zip(chunk, preds)):
            h, w = s.flat_image.shape[:2]
            rect = rectify_image(s.distorted_image, pred)
            text = recognizer(rect, s.layout.glyphs, s.layout.glyph_scale)
            rows.append(
                SampleMetrics(
                    index=start + k,
                    seed=int(s.spec.seed),
                    ms_ssim=ms_ssim(rect, s.flat_image),
                    ld=local_distortion(pred, s.backward_map),
                    ad=aligned_distortion(pred, s.backward_map, s.flat_image),
                    ed=edit_distance(text, s.text),
                    cer=cer(text, s.text) if s.text else 0.0,
                    ms_ssim_distorted=ms_ssim(s.distorted_image, s.flat_image),
                    ld_identity=local_distortion(identity_map(h, w), s.backward_map),
                )
            )
    return MetricsReport(rows)
