"""Synthetic shapes corpus: one generator feeds all four tasks.

Each sample composites 2-5 shapes over a two-color gradient background.
Geometry is rasterized with integer arithmetic only, so masks are bit-exact
across platforms; the only float post-processing is the Gaussian boundary
blur for the alpha matte (fixed kernel, deterministic).

Ground truths per sample:
- ``gt_binary``   union of all shapes (foreground vs background)
- ``gt_classes``  shape-kind class ids 1..5, background 0, boundary band = 6
- ``gt_alpha``    blurred union; exactly 1 deep inside, exactly 0 far outside
- ``gt_depth``    4-8 m background plane; per-shape constant depth in
                  [0.5, 3.5] m tied to the shape's vertical position (lower
                  shapes are nearer) plus noise, so depth is learnable from
                  appearance while clicks still have residual error to fix
- ``trimap``      0 / 0.5 / 1 with the unsure band dilated by two pixels

Export uses portable pixmaps (binary PPM for RGB, 16-bit PGM for scalar
fields) plus a plain-text manifest: zero-dependency, bit-exact round trips.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion, convolve1d

from .errors import ContractError, InputError
from .networks import IGNORE_LABEL

SHAPE_KINDS = ("ellipse", "rectangle", "triangle", "diamond", "ring")
ALPHA_SIGMA = 1.5
_BLUR_RADIUS = 6  # 4 sigma, the kernel support used below
DEPTH_SCALE = 10.0  # meters mapped to the full 16-bit range on export


@dataclass
class Sample:
    image: np.ndarray      # [3,H,W] in [0,1]
    gt_binary: np.ndarray  # [H,W] uint8, foreground union
    gt_classes: np.ndarray # [H,W] uint8, IGNORE_LABEL marks the boundary band
    gt_alpha: np.ndarray   # [H,W] float64 in [0,1]
    gt_depth: np.ndarray   # [H,W] float64, meters in (0, 10]
    trimap: np.ndarray     # [H,W] float64 in {0, 0.5, 1}
    gt_union: np.ndarray | None = None  # [H,W] uint8, support of the alpha matte


def _ellipse_mask(size, cx, cy, a, b):
    yy, xx = np.mgrid[0:size, 0:size]
    return (b * b) * (xx - cx) ** 2 + (a * a) * (yy - cy) ** 2 <= (a * a) * (b * b)


def _rectangle_mask(size, cx, cy, a, b):
    yy, xx = np.mgrid[0:size, 0:size]
    return (np.abs(xx - cx) <= a) & (np.abs(yy - cy) <= b)


def _diamond_mask(size, cx, cy, a, b):
    yy, xx = np.mgrid[0:size, 0:size]
    return b * np.abs(xx - cx) + a * np.abs(yy - cy) <= a * b


def _triangle_mask(size, verts):
    (x0, y0), (x1, y1), (x2, y2) = verts
    yy, xx = np.mgrid[0:size, 0:size]

    def edge(ax, ay, bx, by):
        return (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)

    d0 = edge(x0, y0, x1, y1)
    d1 = edge(x1, y1, x2, y2)
    d2 = edge(x2, y2, x0, y0)
    neg = (d0 <= 0) & (d1 <= 0) & (d2 <= 0)
    pos = (d0 >= 0) & (d1 >= 0) & (d2 >= 0)
    return neg | pos


def _ring_mask(size, cx, cy, a, b):
    outer = _ellipse_mask(size, cx, cy, a, b)
    inner = _ellipse_mask(size, cx, cy, max(1, (a * 11) // 20), max(1, (b * 11) // 20))
    return outer & ~inner


def _shape_mask(kind, size, rng):
    margin = max(4, size // 8)
    cx = int(rng.integers(margin, size - margin))
    cy = int(rng.integers(margin, size - margin))
    lo, hi = max(3, size // 12), max(5, size // 4)
    a = int(rng.integers(lo, hi + 1))
    b = int(rng.integers(lo, hi + 1))
    if kind == "ellipse":
        return _ellipse_mask(size, cx, cy, a, b)
    if kind == "rectangle":
        return _rectangle_mask(size, cx, cy, a, b)
    if kind == "diamond":
        return _diamond_mask(size, cx, cy, a, b)
    if kind == "ring":
        return _ring_mask(size, cx, cy, a, b)
    # triangle: integer vertices around the center, resampled if degenerate
    while True:
        verts = [
            (cx + int(rng.integers(-hi, hi + 1)), cy + int(rng.integers(-hi, hi + 1)))
            for _ in range(3)
        ]
        (x0, y0), (x1, y1), (x2, y2) = verts
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area2) >= 2 * lo * lo:
            return _triangle_mask(size, verts)


def _gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    offsets = np.arange(-_BLUR_RADIUS, _BLUR_RADIUS + 1)
    kernel = np.exp(-(offsets**2.0) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    rows = convolve1d(field, kernel, axis=1, mode="mirror")
    return convolve1d(rows, kernel, axis=0, mode="mirror")


def _pick_color(rng: np.random.Generator, avoid, min_dist: float = 0.35) -> np.ndarray:
    # keep shapes visibly distinct from the background gradient endpoints
    while True:
        c = rng.uniform(0.0, 1.0, size=3)
        if all(np.linalg.norm(c - a) >= min_dist for a in avoid):
            return c


def generate_sample(size: int, rng: np.random.Generator) -> Sample:
    n_shapes = int(rng.integers(2, 6))
    kinds = rng.integers(0, len(SHAPE_KINDS), size=n_shapes)

    # gradient background between two colors, vertical or horizontal
    c0, c1 = rng.uniform(0.0, 1.0, size=(2, 3))
    colors = np.stack([_pick_color(rng, (c0, c1)) for _ in range(n_shapes)])
    yy, xx = np.mgrid[0:size, 0:size]
    t = (yy / (size - 1)) if rng.integers(0, 2) == 0 else (xx / (size - 1))
    image = c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]

    gt_classes = np.zeros((size, size), dtype=np.uint8)
    gt_depth = 4.0 + 4.0 * (yy / (size - 1))
    union = np.zeros((size, size), dtype=bool)

    masks = [_shape_mask(SHAPE_KINDS[k], size, rng) for k in kinds]
    # depth follows the ground-plane prior (lower center = nearer) plus noise
    centers = [np.argwhere(m).mean(axis=0)[0] if m.any() else size / 2 for m in masks]
    depths = np.clip(
        [0.5 + 3.0 * (1.0 - c / (size - 1)) + rng.uniform(-0.8, 0.8) for c in centers],
        0.5, 3.5,
    )
    # draw far-to-near so nearer shapes occlude
    order = np.argsort(-depths)
    for i in order:
        m = masks[i]
        union |= m
        image[:, m] = colors[i][:, None]
        gt_classes[m] = kinds[i] + 1
        gt_depth[m] = depths[i]

    noise = rng.normal(0.0, 0.02, size=image.shape)
    image = np.clip(image + noise, 0.0, 1.0)

    alpha = _gaussian_blur(union.astype(np.float64), ALPHA_SIGMA)
    footprint = np.ones((2 * _BLUR_RADIUS + 1,) * 2, dtype=bool)
    interior = binary_erosion(union, structure=footprint, border_value=1)
    exterior = binary_erosion(~union, structure=footprint, border_value=1)
    alpha = np.clip(alpha, 0.0, 1.0)
    alpha[interior] = 1.0
    alpha[exterior] = 0.0

    band = (alpha > 0.05) & (alpha < 0.95)
    band = binary_dilation(band, iterations=2)
    trimap = np.where(band, 0.5, np.where(alpha >= 0.5, 1.0, 0.0))
    gt_classes = gt_classes.copy()
    gt_classes[band] = IGNORE_LABEL

    return Sample(
        image=image,
        gt_binary=union.astype(np.uint8),
        gt_classes=gt_classes,
        gt_alpha=alpha,
        gt_depth=gt_depth,
        trimap=trimap,
        gt_union=union.astype(np.uint8),
    )


def generate_dataset(n: int, size: int, seed: int) -> list[Sample]:
    if size not in (64, 96, 128):
        raise ContractError(f"size must be one of 64/96/128, got {size}")
    out = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        out.append(generate_sample(size, rng))
    return out


# -- portable pixmap export -----------------------------------------------------


def _write_ppm(path: str, image: np.ndarray) -> None:
    h, w = image.shape[1:]
    data = np.round(image * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def _write_pgm16(path: str, field: np.ndarray, scale: float) -> None:
    h, w = field.shape
    data = np.round(field / scale * 65535.0).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(data.tobytes())


def read_ppm(path_or_bytes) -> np.ndarray:
    """Read a binary PPM back into a [3,H,W] float array in [0,1]."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        raw = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            raw = f.read()
    try:
        parts = raw.split(maxsplit=4)
        magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
        if magic != b"P6" or maxval != 255:
            raise InputError("only 8-bit binary PPM (P6) is supported")
        pixels = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8)
        return pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0
    except (IndexError, ValueError) as exc:
        raise InputError(f"malformed PPM data: {exc}") from exc


def export_dataset(samples: list[Sample], outdir: str) -> str:
    """Write images + ground truths and return the manifest path."""
    os.makedirs(outdir, exist_ok=True)
    manifest = os.path.join(outdir, "manifest.txt")
    with open(manifest, "w") as mf:
        mf.write("# id image classes alpha depth trimap binary\n")
        mf.write(f"# depth_scale_m={DEPTH_SCALE} value=round(field/scale*65535)\n")
        for i, s in enumerate(samples):
            names = {
                "image": f"{i:05d}_image.ppm",
                "classes": f"{i:05d}_classes.pgm",
                "alpha": f"{i:05d}_alpha.pgm",
                "depth": f"{i:05d}_depth.pgm",
                "trimap": f"{i:05d}_trimap.pgm",
                "binary": f"{i:05d}_binary.pgm",
            }
            _write_ppm(os.path.join(outdir, names["image"]), s.image)
            _write_pgm16(os.path.join(outdir, names["classes"]), s.gt_classes.astype(np.float64), 65535.0)
            _write_pgm16(os.path.join(outdir, names["alpha"]), s.gt_alpha, 1.0)
            _write_pgm16(os.path.join(outdir, names["depth"]), s.gt_depth, DEPTH_SCALE)
            _write_pgm16(os.path.join(outdir, names["trimap"]), s.trimap, 1.0)
            _write_pgm16(os.path.join(outdir, names["binary"]), s.gt_binary.astype(np.float64), 1.0)
            mf.write(" ".join([str(i)] + [names[k] for k in
                     ("image", "classes", "alpha", "depth", "trimap", "binary")]) + "\n")
    return manifest
