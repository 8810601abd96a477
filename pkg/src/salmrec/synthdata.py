"""Deterministic synthetic distorted-document generator.

Each sample is produced from a :class:`WarpSpec` alone: a flat page with
glyph rows and ruled lines is rendered, a smooth warp is drawn from a
low-frequency height field, and the page is resampled into the distorted
frame over a random background.  Ground truth comes out exact by
construction: backward map, surrogate 3D coordinates, UV map, and
horizontal/vertical line masks.

Maps are stored in the normalized, corner-aligned convention of
:mod:`salmrec.geometry`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import _kernels
from .errors import DatasetError, EmptyDatasetError, GenerationError, InvalidDimensionError
from .geometry import bilinear_sample, identity_map, to_pixels
from .glyphs import ALPHABET, GLYPH_H, GLYPH_W, GlyphBox, glyph_bitmap

MIN_PAGE = 64
# displacement budget at severity 1: page shrink range and bump amplitude (fraction of page size)
_SHRINK = (0.12, 0.2)
_BUMP = 0.05
_MAX_FREQ = 1.0
INVERT_TOL_PX = 0.25
INVERT_MAX_ITER = 50


@dataclass(frozen=True)
class WarpSpec:
    seed: int = 0
    severity: float = 0.5
    grid_lines: tuple[int, int] = (4, 3)
    page_size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        object.__setattr__(self, "grid_lines", tuple(int(v) for v in self.grid_lines))
        object.__setattr__(self, "page_size", tuple(int(v) for v in self.page_size))
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must lie in [0, 1], got {self.severity}")
        if min(self.grid_lines) < 0:
            raise ValueError(f"grid line counts must be >= 0, got {self.grid_lines}")

    def to_json(self):
        return {
            "seed": int(self.seed),
            "severity": float(self.severity),
            "grid_lines": list(self.grid_lines),
            "page_size": list(self.page_size),
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["seed"], d["severity"], tuple(d["grid_lines"]), tuple(d["page_size"]))


@dataclass
class PageLayout:
    """Geometry of everything drawn on the flat page, in flat pixel units.

    ``hlines`` rows are ``(y, x_start, x_end)`` and ``vlines`` rows are
    ``(x, y_start, y_end)``.
    """

    hlines: list[tuple[float, float, float]]
    vlines: list[tuple[float, float, float]]
    stroke: float
    glyph_scale: int
    glyphs: list[GlyphBox] = field(default_factory=list)

    def to_json(self):
        return {
            "hlines": [list(map(float, l)) for l in self.hlines],
            "vlines": [list(map(float, l)) for l in self.vlines],
            "stroke": float(self.stroke),
            "glyph_scale": int(self.glyph_scale),
            "glyphs": [[g.row, g.col, g.x, g.y, g.char] for g in self.glyphs],
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            hlines=[tuple(l) for l in d["hlines"]],
            vlines=[tuple(l) for l in d["vlines"]],
            stroke=d["stroke"],
            glyph_scale=d["glyph_scale"],
            glyphs=[GlyphBox(int(r), int(c), float(x), float(y), ch) for r, c, x, y, ch in d["glyphs"]],
        )


@dataclass
class WarpFields:
    """``forward[i, j]``: flat-page coordinate seen at distorted pixel ``(i, j)``.
    ``backward[i, j]``: distorted-image coordinate of flat pixel ``(i, j)``.
    ``height``: the normalized height field in ``[-1, 1]`` on the distorted grid.
    """

    forward: np.ndarray
    backward: np.ndarray
    height: np.ndarray
    iterations: int = 0


@dataclass
class AnnotationBundle:
    flat_image: np.ndarray
    distorted_image: np.ndarray
    backward_map: np.ndarray
    coord3d: np.ndarray
    uv: np.ndarray
    hline_mask: np.ndarray
    vline_mask: np.ndarray
    text: str
    spec: WarpSpec
    layout: PageLayout
    forward_map: np.ndarray | None = None


def _rngs(seed):
    return (np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1]), np.random.default_rng([seed, 2]))


def _quantize(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _check_page(spec):
    h, w = spec.page_size
    if h < MIN_PAGE or w < MIN_PAGE:
        raise InvalidDimensionError(f"page must be at least {MIN_PAGE}x{MIN_PAGE}, got {h}x{w}")


def _line_positions(rng, n, lo, hi, jitter):
    if n == 0:
        return []
    base = np.linspace(lo, hi, n + 2)[1:-1]
    return list(base + rng.uniform(-jitter, jitter, size=n))


def _word_stream(rng):
    letters = ALPHABET[:26]
    while True:
        n = int(rng.integers(2, 8))
        for i in range(n):
            if rng.random() < 0.1:
                yield ALPHABET[26 + int(rng.integers(0, 10))]
            else:
                yield letters[int(rng.integers(0, 26))]
        yield " "


def render_flat_document(spec: WarpSpec):
    """Render the flat page; returns ``(image, layout, text)``."""
    _check_page(spec)
    rng, _, _ = _rngs(spec.seed)
    H, W = spec.page_size
    side = min(H, W)
    stroke = 2.0 * side / 448.0
    scale = max(1, int(round(side / 128.0)))
    mx, my = 0.07 * W, 0.07 * H

    n_h, n_v = spec.grid_lines
    hys = _line_positions(rng, n_h, my, H - 1 - my, 0.02 * H)
    vxs = _line_positions(rng, n_v, mx, W - 1 - mx, 0.02 * W)
    layout = PageLayout(
        hlines=[(float(y), mx, W - 1 - mx) for y in hys],
        vlines=[(float(x), my, H - 1 - my) for x in vxs],
        stroke=stroke,
        glyph_scale=scale,
    )

    paper = 1.0 - rng.uniform(0.0, 0.08, size=3)
    ink_color = rng.uniform(0.0, 0.25, size=3)

    ink = np.zeros((H, W))
    gh, gw = GLYPH_H * scale, GLYPH_W * scale
    advance, pitch = (GLYPH_W + 1) * scale, (GLYPH_H + 3) * scale
    pad = stroke + scale
    words = _word_stream(rng)
    rows = []
    y = int(round(my + 2 * scale))
    row_idx = 0
    while y + gh < H - my:
        if any(y - pad <= hy <= y + gh + pad for hy in hys):
            y += pitch
            continue
        chars = []
        x = int(round(mx + 2 * scale))
        col = 0
        while x + gw < W - mx:
            blocked = any(x - pad <= vx <= x + gw + pad for vx in vxs)
            ch = " " if blocked else next(words)
            layout.glyphs.append(GlyphBox(row_idx, col, float(x), float(y), ch))
            if ch != " ":
                ink[y : y + gh, x : x + gw] = np.maximum(ink[y : y + gh, x : x + gw], glyph_bitmap(ch, scale))
            chars.append(ch)
            x += advance
            col += 1
        rows.append("".join(chars).strip())
        row_idx += 1
        y += pitch

    ink = np.maximum(ink, rasterize_lines(layout, identity_map(H, W), (H, W), coverage=True))
    image = paper[None, None, :] * (1.0 - ink[..., None]) + ink_color[None, None, :] * ink[..., None]
    return _quantize(image), layout, "\n".join(rows)


def rasterize_lines(layout: PageLayout, forward: np.ndarray, shape, coverage: bool = False, foreground=None):
    """Rasterize the layout's rule lines into a distorted frame.

    ``forward`` maps each frame pixel to its flat-page coordinate.  Distance
    to a line is measured in frame pixels by dividing the flat-space offset
    by the local gradient of the forward map.  Returns ``(hmask, vmask)``
    binary masks, or a single antialiased coverage map when ``coverage``.
    """
    H, W = layout_shape = shape
    fpx = to_pixels(forward, H, W)
    fx, fy = fpx[..., 0], fpx[..., 1]
    half = 0.5 * layout.stroke

    def grad_norm(f):
        gy, gx = np.gradient(f)
        return np.maximum(np.hypot(gx, gy), 1e-6)

    def lines(positions, along, across, gnorm):
        dist_cov = np.zeros(layout_shape)
        mask = np.zeros(layout_shape, dtype=bool)
        for pos, start, end in positions:
            dist = np.abs(across - pos) / gnorm
            inside = (along >= start - half) & (along <= end + half)
            mask |= inside & (dist <= half)
            dist_cov = np.maximum(dist_cov, np.where(inside, np.clip(half + 0.5 - dist, 0.0, 1.0), 0.0))
        return mask, dist_cov

    hmask, hcov = lines(layout.hlines, fx, fy, grad_norm(fy) if layout.hlines else None)
    vmask, vcov = lines(layout.vlines, fy, fx, grad_norm(fx) if layout.vlines else None)
    if coverage:
        return np.maximum(hcov, vcov)
    if foreground is not None:
        hmask &= foreground
        vmask &= foreground
    return hmask.astype(np.float64), vmask.astype(np.float64)


def _height_terms(rng):
    n = int(rng.integers(1, 5))
    amp = rng.uniform(0.5, 1.0, size=n)
    mag = rng.uniform(0.3, _MAX_FREQ, size=n)
    ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
    freq = np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=1)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=n)
    shrink = 1.0 + rng.uniform(*_SHRINK, size=2)
    return amp, freq, phase, shrink


def _height_field(u, amp, freq, phase):
    """Height in [-1, 1] and its gradient w.r.t. unit page coordinates ``u``."""
    arg = 2.0 * math.pi * (u @ freq.T) + phase
    total = amp.sum()
    h = (np.cos(arg) * amp).sum(-1) / total
    grad = -(np.sin(arg) * amp)[..., None] * (2.0 * math.pi * freq) / total
    return h, grad.sum(-2)


def sample_warp(spec: WarpSpec, tol_px: float = INVERT_TOL_PX, max_iter: int = INVERT_MAX_ITER) -> WarpFields:
    """Draw a smooth random warp and invert it numerically.

    The forward field shrinks the page about its center and adds a
    displacement along the gradient of a sum of up to four cosine bumps;
    everything scales linearly with ``severity``.  The random draws do not
    depend on severity, so one seed gives a family of warps.
    """
    _check_page(spec)
    _, rng, _ = _rngs(spec.seed)
    H, W = spec.page_size
    amp, freq, phase, shrink = _height_terms(rng)
    ident = identity_map(H, W)
    u = 0.5 * (ident + 1.0)
    h, grad = _height_field(u, amp, freq, phase)
    gbound = float((amp * 2.0 * math.pi * np.hypot(freq[:, 0], freq[:, 1])).sum() / amp.sum())
    sev = float(spec.severity)
    scale = 1.0 + sev * (shrink - 1.0)
    forward = ident * scale + 2.0 * sev * _BUMP * grad / gbound
    if sev == 0.0:
        return WarpFields(ident, ident.copy(), h, 0)
    backward, iters, last = _kernels.invert_field(np.ascontiguousarray(forward), float(tol_px), int(max_iter))
    if not last < tol_px or not np.all(np.isfinite(backward)):
        raise GenerationError(spec.seed, f"warp inversion did not converge ({iters} sweeps, last update {last:.3g} px)")
    return WarpFields(forward, backward, h, iters)


def _background(rng, H, W):
    if rng.random() < 0.5:
        color = rng.uniform(0.0, 1.0, size=3)
        return np.broadcast_to(color, (H, W, 3)).copy()
    noise = gaussian_filter(rng.random((H, W, 3)), sigma=(3.0, 3.0, 0.0))
    noise = (noise - noise.min()) / max(np.ptp(noise), 1e-9)
    lo = rng.uniform(0.0, 0.6, size=3)
    return lo + noise * rng.uniform(0.2, 0.4, size=3)


def generate_sample(spec: WarpSpec) -> AnnotationBundle:
    flat, layout, text = render_flat_document(spec)
    warp = sample_warp(spec)
    _, _, rng_bg = _rngs(spec.seed)
    H, W = spec.page_size
    background = _background(rng_bg, H, W)

    fwd = warp.forward
    if spec.severity == 0.0:
        distorted = flat.copy()
    else:
        page = bilinear_sample(flat, fwd)
        alpha = bilinear_sample(np.ones((H, W)), fwd)
        distorted = _quantize(page + (1.0 - alpha[..., None]) * background)

    fg = np.all(np.abs(fwd) <= 1.0, axis=-1)
    uv = np.where(fg[..., None], 0.5 * (fwd + 1.0), 0.0)
    z = np.where(fg, 0.5 + 0.5 * spec.severity * warp.height, 0.0)
    coord3d = np.concatenate([uv, z[..., None]], axis=-1)
    hmask, vmask = rasterize_lines(layout, fwd, (H, W), foreground=fg)
    return AnnotationBundle(
        flat_image=flat,
        distorted_image=distorted,
        backward_map=warp.backward,
        coord3d=coord3d,
        uv=uv,
        hline_mask=hmask,
        vline_mask=vmask,
        text=text,
        spec=spec,
        layout=layout,
        forward_map=fwd,
    )


# --------------------------------------------------------------------------
# dataset directory format
# --------------------------------------------------------------------------

INDEX = "index.json"
_MAPS = ("backward_map", "forward_map", "coord3d", "uv")
_PNGS = {"flat.png": "flat_image", "distorted.png": "distorted_image", "hline.png": "hline_mask", "vline.png": "vline_mask"}


def _write_png(path, arr):
    arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def _read_png(path):
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 255.0


def write_dataset(samples: Iterable[AnnotationBundle], directory) -> Path:
    """Write samples as ``index.json`` plus one subdirectory per sample."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, s in enumerate(samples):
        name = f"{k:06d}"
        sub = directory / name
        sub.mkdir(exist_ok=True)
        for fname, attr in _PNGS.items():
            _write_png(sub / fname, getattr(s, attr))
        maps = {m: np.asarray(getattr(s, m), dtype=np.float32) for m in _MAPS if getattr(s, m) is not None}
        np.savez_compressed(sub / "maps.npz", **maps)
        entries.append({"name": name, "spec": s.spec.to_json(), "text": s.text, "layout": s.layout.to_json()})
    index = {"format": "salmrec-dataset", "version": 1, "count": len(entries), "samples": entries}
    (directory / INDEX).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return directory


class Dataset(Sequence):
    """Lazily loaded dataset directory written by :func:`write_dataset`."""

    def __init__(self, directory, entries):
        self.directory = Path(directory)
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        e = self.entries[k]
        sub = self.directory / e["name"]
        try:
            arrays = {attr: _read_png(sub / fname) for fname, attr in _PNGS.items()}
            with np.load(sub / "maps.npz") as npz:
                maps = {m: npz[m].astype(np.float64) for m in npz.files}
        except (OSError, ValueError, KeyError) as exc:
            raise DatasetError(f"sample {e['name']} in {self.directory} is unreadable: {exc}") from exc
        for m in ("backward_map", "coord3d", "uv"):
            if m not in maps:
                raise DatasetError(f"sample {e['name']}: maps.npz lacks entry {m!r}")
        return AnnotationBundle(
            text=e["text"],
            spec=WarpSpec.from_json(e["spec"]),
            layout=PageLayout.from_json(e["layout"]),
            forward_map=maps.get("forward_map"),
            backward_map=maps["backward_map"],
            coord3d=maps["coord3d"],
            uv=maps["uv"],
            **arrays,
        )


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    index_path = directory / INDEX
    if not directory.is_dir():
        raise DatasetError(f"dataset directory {directory} does not exist")
    if not index_path.exists():
        if not any(directory.iterdir()):
            raise EmptyDatasetError(f"dataset directory {directory} is empty")
        raise DatasetError(f"{index_path} is missing")
    try:
        index = json.loads(index_path.read_text())
        entries = index["samples"]
    except (ValueError, KeyError) as exc:
        raise DatasetError(f"{index_path} is corrupt: {exc}") from exc
    if not entries:
        raise EmptyDatasetError(f"dataset {directory} has no samples")
    if index.get("count") != len(entries):
        raise DatasetError(f"{index_path}: count {index.get('count')} != {len(entries)} listed samples")
    for e in entries:
        sub = directory / e["name"]
        missing = [f for f in (*_PNGS, "maps.npz") if not (sub / f).exists()]
        if missing:
            raise DatasetError(f"sample {e['name']} is missing {', '.join(missing)}")
    return Dataset(directory, entries)


def generate_dataset(count: int, seed: int = 0, severity: float = 0.5, size: int = 256, grid_lines=(4, 3), severity_range=False):
    """Generate ``count`` samples with seeds ``seed, seed+1, ...``.

    With ``severity_range`` each sample's severity is drawn uniformly from
    ``[0, severity]`` (seeded) instead of using ``severity`` for all.
    """
    rng = np.random.default_rng([seed, 99])
    out = []
    for k in range(count):
        sev = float(rng.uniform(0.0, severity)) if severity_range else severity
        out.append(generate_sample(WarpSpec(seed + k, sev, grid_lines, (size, size))))
    return out


__all__ = [
    "AnnotationBundle",
    "Dataset",
    "PageLayout",
    "WarpFields",
    "WarpSpec",
    "generate_dataset",
    "generate_sample",
    "rasterize_lines",
    "read_dataset",
    "render_flat_document",
    "sample_warp",
    "write_dataset",
]
