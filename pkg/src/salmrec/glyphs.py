"""Procedural 5x7 bitmap glyphs and a template-matching text reader.

Glyphs are drawn once from a fixed seed so every page, on every machine,
uses the same font.  Patterns are rejection-sampled to keep a minimum
Hamming distance between any two characters, which keeps template matching
unambiguous on clean crops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"
GLYPH_W, GLYPH_H = 5, 7
_FONT_SEED = 20240607
_MIN_HAMMING = 9


def _build_font():
    rng = np.random.default_rng(_FONT_SEED)
    font = {}
    accepted = []
    while len(accepted) < len(ALPHABET):
        pat = rng.random((GLYPH_H, GLYPH_W)) < 0.45
        # keep a one-cell stroke on the left edge so glyphs read as letters, not noise
        pat[:, 0] |= rng.random(GLYPH_H) < 0.5
        if not 10 <= pat.sum() <= 22:
            continue
        if any(np.sum(pat != other) < _MIN_HAMMING for other in accepted):
            continue
        accepted.append(pat)
    for ch, pat in zip(ALPHABET, accepted):
        font[ch] = pat.astype(np.float64)
    return font


FONT = _build_font()


@dataclass(frozen=True)
class GlyphBox:
    """One rendered character cell in flat-page pixel coordinates."""

    row: int
    col: int
    x: float
    y: float
    char: str


def glyph_bitmap(ch: str, scale: int) -> np.ndarray:
    """Ink coverage of ``ch`` upscaled by an integer ``scale`` (space is blank)."""
    if ch == " ":
        return np.zeros((GLYPH_H * scale, GLYPH_W * scale))
    return np.kron(FONT[ch], np.ones((scale, scale)))


class Recognizer(Protocol):
    def __call__(self, image: np.ndarray, boxes: Sequence[GlyphBox], scale: int) -> str: ...


def _gray(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114
    return image


def _cells(crop, scale):
    h, w = GLYPH_H * scale, GLYPH_W * scale
    padded = np.zeros((h, w))
    padded[: crop.shape[0], : crop.shape[1]] = crop[:h, :w]
    return padded.reshape(GLYPH_H, scale, GLYPH_W, scale).mean(axis=(1, 3))


class TemplateRecognizer:
    """Reads glyph boxes back from an image by nearest-template matching.

    ``ink_threshold`` is the minimum mean ink (0..1) for a cell to count as a
    character rather than a space.  Rows are joined with newlines, matching
    the reference text layout.
    """

    def __init__(self, ink_threshold: float = 0.08):
        self.ink_threshold = ink_threshold
        self._chars = list(ALPHABET)
        self._templates = np.stack([FONT[c].ravel() for c in self._chars])

    def read_box(self, ink: np.ndarray, box: GlyphBox, scale: int) -> str:
        x0, y0 = int(round(box.x)), int(round(box.y))
        crop = ink[max(y0, 0) : y0 + GLYPH_H * scale, max(x0, 0) : x0 + GLYPH_W * scale]
        if crop.size == 0:
            return " "
        cells = _cells(crop, scale).ravel()
        if cells.mean() < self.ink_threshold:
            return " "
        dist = np.sum((self._templates - cells[None, :]) ** 2, axis=1)
        return self._chars[int(np.argmin(dist))]

    def __call__(self, image, boxes, scale):
        ink = 1.0 - _gray(image)
        # normalize against the page's own contrast so tinted paper still reads as blank
        lo, hi = np.percentile(ink, 5), np.percentile(ink, 99.5)
        ink = np.clip((ink - lo) / max(hi - lo, 1e-6), 0.0, 1.0)
        rows: dict[int, list[str]] = {}
        for box in boxes:
            rows.setdefault(box.row, []).append(self.read_box(ink, box, scale))
        return "\n".join("".join(chars).strip() for _, chars in sorted(rows.items()))
