"""Simulated-user click generation from prediction errors.

Classification path: per-class error masks, a Euclidean distance transform
picks the deepest interior point of the worst error region, and the attention
radius is the farthest boundary point of the 4-connected component around the
click.  Regression path: Otsu-threshold the absolute error, split by sign,
pick the sign with the deeper error region, and dilate before the radius rule
so small regions still get a workable radius.

Conventions the protocol fixes (tie-breaks are deterministic everywhere):
- distance transforms treat the image border as background (zero-padded);
- components and boundaries use 4-connectivity;
- class ties break toward the lower id, pixel ties row-major, sign ties
  toward the positive mask;
- a degenerate single-pixel component clamps the radius to 1.0.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import binary_dilation, distance_transform_edt, label

from .errors import ContractError, InputError
from .losses import Click

RADIUS_MIN = 1.0
DILATION_KERNEL = 15
_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

CONVERGED = None  # sentinel: no refinable error remains


def distance_transform(mask) -> np.ndarray:
    """Exact Euclidean distance of each 1-pixel to the nearest 0-pixel.

    The outside of the image counts as zeros, so deep interiors win over
    pixels that merely sit far from in-image background.
    """
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    return distance_transform_edt(padded)[1:-1, 1:-1]


def otsu_threshold(values) -> float:
    """Threshold maximizing between-class variance over a 256-bin histogram.

    Ties resolve to the lower threshold.  The returned value is the lower
    edge of the first upper-class bin, mapped back to data units.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    vmin, vmax = float(v.min()), float(v.max())
    if vmin == vmax:
        raise ContractError("Otsu thresholding needs at least two distinct values")
    bins = 256
    idx = np.minimum(((v - vmin) / (vmax - vmin) * bins).astype(np.intp), bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    total = counts.sum()
    levels = np.arange(bins, dtype=np.float64)
    omega = np.cumsum(counts)
    mu = np.cumsum(counts * levels)
    mu_total = mu[-1]
    best_k, best_score = 1, -1.0
    for k in range(1, bins):
        w0 = omega[k - 1]
        w1 = total - w0
        if w0 == 0.0 or w1 == 0.0:
            score = 0.0
        else:
            m0 = mu[k - 1] / w0
            m1 = (mu_total - mu[k - 1]) / w1
            score = (w0 / total) * (w1 / total) * (m1 - m0) ** 2
        if score > best_score:
            best_score = score
            best_k = k
    return vmin + best_k * (vmax - vmin) / bins


def component_containing(mask: np.ndarray, u: int, v: int) -> np.ndarray:
    labels, _ = label(mask, structure=_FOUR_CONN)
    if labels[u, v] == 0:
        raise ContractError(f"({u},{v}) is not inside the mask")
    return labels == labels[u, v]


def component_radius(component: np.ndarray, u: int, v: int) -> float:
    """Max distance from (u,v) to the component's boundary, clamped to 1.0.

    Boundary pixels are component pixels 4-adjacent to a non-component pixel
    or to the image edge.
    """
    padded = np.pad(component, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    boundary = component & ~interior
    ys, xs = np.nonzero(boundary)
    if len(ys) == 0:
        return RADIUS_MIN
    r = float(np.sqrt(((ys - u) ** 2 + (xs - v) ** 2).max()))
    return max(r, RADIUS_MIN)


def _argmax_row_major(field: np.ndarray) -> tuple[int, int]:
    flat = int(np.argmax(field))
    return flat // field.shape[1], flat % field.shape[1]


def generate_click_classification(pred_classes, gt_classes, ignore=None):
    """Next click for a pixel-classification task, or CONVERGED.

    The click lands on the distance-transform peak of the worst class error
    mask; the label is the ground-truth class at the click.
    """
    pred = np.asarray(pred_classes)
    gt = np.asarray(gt_classes)
    valid = np.ones(gt.shape, dtype=bool) if ignore is None else ~np.asarray(ignore, dtype=bool)
    wrong = (pred != gt) & valid
    if not wrong.any():
        return CONVERGED
    best = None  # (peak, class id, mask)
    for c in np.unique(gt[wrong]):
        mask = wrong & (gt == c)
        peak = distance_transform(mask).max()
        if best is None or peak > best[0]:
            best = (peak, int(c), mask)
    _, c_star, mask = best
    dist = distance_transform(mask)
    u, v = _argmax_row_major(dist)
    radius = component_radius(component_containing(mask, u, v), u, v)
    return Click(u, v, radius, int(gt[u, v]))


def generate_click_regression(pred, gt, valid=None, dilation: int = DILATION_KERNEL):
    """Next click for a pixel-regression task, or CONVERGED.

    The absolute error is Otsu-thresholded into an error mask, split by sign;
    the sign with the deeper region wins (ties toward positive).  The radius
    comes from the 15x15-dilated component around the click.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask_valid = np.ones(gt.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not mask_valid.any():
        raise InputError("no valid pixels to click on")
    error = np.where(mask_valid, pred - gt, 0.0)
    abs_error = np.abs(error)
    if abs_error[mask_valid].max() == abs_error[mask_valid].min():
        return CONVERGED  # flat error field cannot be thresholded
    threshold = otsu_threshold(abs_error[mask_valid])
    xi = (abs_error >= threshold) & mask_valid
    if not xi.any():
        return CONVERGED
    xi_pos = xi & (error > 0)
    xi_neg = xi & (error < 0)
    peak_pos = distance_transform(xi_pos).max() if xi_pos.any() else -1.0
    peak_neg = distance_transform(xi_neg).max() if xi_neg.any() else -1.0
    chosen = xi_pos if peak_pos >= peak_neg else xi_neg
    dist = distance_transform(chosen)
    u, v = _argmax_row_major(dist)
    dilated = binary_dilation(chosen, structure=np.ones((dilation, dilation), dtype=bool))
    radius = component_radius(component_containing(dilated, u, v), u, v)
    return Click(u, v, radius, float(gt[u, v]))
