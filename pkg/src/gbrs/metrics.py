"""Dense-prediction quality metrics and the per-click AUC aggregate.

Matting SAD/Grad/Conn are returned as raw sums (no /1000 display scaling);
the benchmark CSVs record them the same way.  Connectivity uses 0.1 threshold
steps and the usual 0.15 soft-degradation cutoff; the gradient error uses
first-order Gaussian derivative filters with sigma 1.4.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve, label

from .errors import ContractError, InputError


def metric_miou(pred, gt, ignore=None) -> float:
    """Binary IoU for {0,1} masks, mean per-class IoU for multi-class labels.

    Multi-class averages over the classes present in the ground truth; ignored
    pixels are excluded everywhere.  Empty-vs-empty counts as a perfect 1.0.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {gt.shape}")
    valid = np.ones(gt.shape, dtype=bool) if ignore is None else ~np.asarray(ignore, dtype=bool)
    classes = np.unique(gt[valid])
    if set(classes.tolist()) <= {0, 1} and set(np.unique(pred[valid]).tolist()) <= {0, 1}:
        classes = np.array([1])
    ious = []
    for c in classes:
        p = (pred == c) & valid
        g = (gt == c) & valid
        union = (p | g).sum()
        ious.append(1.0 if union == 0 else (p & g).sum() / union)
    return float(np.mean(ious)) if ious else 1.0


def _gauss_derivative_kernels(sigma: float):
    # truncated where the Gaussian tail drops below 1e-2, as is conventional
    half = int(np.ceil(sigma * np.sqrt(-2.0 * np.log(np.sqrt(2.0 * np.pi) * sigma * 1e-2))))
    xs = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(xs**2) / (2 * sigma**2)) / (sigma * np.sqrt(2 * np.pi))
    dg = -xs * g / sigma**2
    hx = g[:, None] * dg[None, :]
    hx /= np.sqrt((hx * hx).sum())
    return hx, hx.T


def metric_matting(pred_alpha, gt_alpha) -> dict[str, float]:
    pred = np.asarray(pred_alpha, dtype=np.float64)
    gt = np.asarray(gt_alpha, dtype=np.float64)
    if pred.min() < 0 or pred.max() > 1 or gt.min() < 0 or gt.max() > 1:
        raise InputError("alpha values must lie in [0,1]")
    diff = pred - gt
    sad = float(np.abs(diff).sum())
    mse = float((diff * diff).mean())

    hx, hy = _gauss_derivative_kernels(1.4)
    px = convolve(pred, hx, mode="nearest")
    py = convolve(pred, hy, mode="nearest")
    gx = convolve(gt, hx, mode="nearest")
    gy = convolve(gt, hy, mode="nearest")
    pred_amp = np.sqrt(px * px + py * py)
    gt_amp = np.sqrt(gx * gx + gy * gy)
    grad = float(((pred_amp - gt_amp) ** 2).sum())

    return {"SAD": sad, "MSE": mse, "Grad": grad, "Conn": _connectivity_error(pred, gt)}


def _largest_cc(mask: np.ndarray) -> np.ndarray:
    labels, n = label(mask)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == counts.argmax()


def _connectivity_error(pred: np.ndarray, gt: np.ndarray, step: float = 0.1) -> float:
    thresholds = np.arange(0.0, 1.0 + step, step)
    l_map = np.full(pred.shape, -1.0)
    for i in range(1, len(thresholds)):
        joint = (pred >= thresholds[i]) & (gt >= thresholds[i])
        omega = _largest_cc(joint)
        newly_cut = (l_map == -1.0) & ~omega
        l_map[newly_cut] = thresholds[i - 1]
    l_map[l_map == -1.0] = 1.0
    pred_d = pred - l_map
    gt_d = gt - l_map
    pred_phi = 1.0 - pred_d * (pred_d >= 0.15)
    gt_phi = 1.0 - gt_d * (gt_d >= 0.15)
    return float(np.abs(pred_phi - gt_phi).sum())


def metric_depth(pred, gt, valid=None) -> dict[str, float]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.ones(gt.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    p = pred[mask]
    g = gt[mask]
    if np.any(p <= 0) or np.any(g <= 0):
        raise InputError("depth values must be strictly positive on valid pixels")
    ratio = np.maximum(g / p, p / g)
    out = {
        "delta1": float((ratio < 1.25).mean()),
        "delta2": float((ratio < 1.25**2).mean()),
        "delta3": float((ratio < 1.25**3).mean()),
        "AbsRel": float((np.abs(g - p) / g).mean()),
        "SqRel": float(((g - p) ** 2 / g).mean()),
        "RMSE": float(np.sqrt(((g - p) ** 2).mean())),
        "RMSElog": float(np.sqrt(((np.log(g) - np.log(p)) ** 2).mean())),
    }
    return out


def pixel_accuracy(pred_classes, gt_classes, ignore_label=None) -> float:
    pred = np.asarray(pred_classes)
    gt = np.asarray(gt_classes)
    valid = np.ones(gt.shape, dtype=bool) if ignore_label is None else gt != ignore_label
    if not valid.any():
        return 1.0
    return float((pred[valid] == gt[valid]).mean())


def auc_over_clicks(series, direction: str = "higher_better") -> float:
    """Trapezoidal mean of the metric-vs-click curve, normalized to [0,1].

    ``series[0]`` is the initial estimation, ``series[k]`` the value after
    click k.  ``direction`` only matters to report sorting, never the value.
    """
    if direction not in ("higher_better", "lower_better"):
        raise ContractError(f"bad direction {direction!r}")
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise ContractError("need metric values for at least clicks 0..1")
    n = values.size - 1
    return float(np.sum((values[:-1] + values[1:]) / 2.0) / n)
