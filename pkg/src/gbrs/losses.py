"""Click-refinement objectives, consistency losses and attention masks.

All losses are built from autodiff primitives so their gradients flow to
whatever auxiliary parameters produced the prediction.  Previous predictions
arrive as plain arrays (already detached); masks are constants.

Conventions:
- The binary disk uses ``<= r**2`` (closed disk), so a radius approaching zero
  still zeroes exactly the clicked pixel.
- The inverse-Gaussian mask is ``1 - exp(-d^2 / (2 r^2))``: 0 at the click,
  increasing with distance, approaching 1 far away.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, InputError
from .tensor import Tensor

IGNORE_LABEL = 6  # class count of the semantic task; doubles as its ignore id


@dataclass
class Click:
    """One interaction: position, attention radius and task-dependent label.

    ``label`` is +/-1 for binary segmentation, a class id for semantic
    segmentation, an alpha value in [0,1] for matting, a depth in meters for
    depth, or "up"/"down" for push clicks.
    """

    u: int
    v: int
    r: float
    label: object

    def __post_init__(self):
        if self.r <= 0:
            raise InputError(f"click radius must be positive, got {self.r}")


@dataclass
class AttentionMask:
    kind: str  # binary_disk | inverse_gaussian | ignore_label
    values: np.ndarray


def _check_bounds(click: Click, h: int, w: int) -> None:
    if not (0 <= click.u < h and 0 <= click.v < w):
        raise InputError(f"click ({click.u},{click.v}) outside {h}x{w} image")


def build_attention_mask(kind: str, click: Click, h: int, w: int) -> AttentionMask:
    _check_bounds(click, h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy - click.u) ** 2.0 + (xx - click.v) ** 2.0
    if kind == "binary_disk":
        values = np.where(d2 <= click.r**2, 0.0, 1.0)
    elif kind == "inverse_gaussian":
        values = 1.0 - np.exp(-d2 / (2.0 * click.r**2))
    elif kind == "ignore_label":
        values = d2 <= click.r**2  # True where the pixel is ignored
    else:
        raise ContractError(f"unknown mask kind {kind!r}")
    return AttentionMask(kind=kind, values=values)


def disk_pixels(u: int, v: int, r: float, h: int, w: int) -> np.ndarray:
    """Boolean mask of the closed disk; shared by strokes and attention masks."""
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - u) ** 2.0 + (xx - v) ** 2.0 <= r**2


# -- refinement losses ---------------------------------------------------------


def loss_click_binary(pred: Tensor, clicks: list[Click]) -> Tensor:
    """Squared hinge on the clicked logits: sum_i max(1 - l_i * pred[u,v], 0)^2."""
    h, w = pred.data.shape
    us, vs, ls = [], [], []
    for c in clicks:
        _check_bounds(c, h, w)
        if c.label not in (1, -1):
            raise InputError(f"binary click label must be +/-1, got {c.label!r}")
        us.append(c.u)
        vs.append(c.v)
        ls.append(float(c.label))
    picked = T.pick(pred, (np.array(us), np.array(vs)))
    margins = T.sub(Tensor(np.ones(len(clicks))), T.mul(picked, Tensor(np.array(ls))))
    hinged = T.relu(margins)
    return T.tsum(T.mul(hinged, hinged))


def loss_consistency_mse(pred: Tensor, pred_prev: np.ndarray, mask: AttentionMask,
                         lam: float) -> Tensor:
    """lambda * mean((prev - pred) * mask)^2 over all pixels."""
    if pred.data.shape != pred_prev.shape:
        raise ContractError(
            f"prediction shapes differ: {pred.data.shape} vs {pred_prev.shape}"
        )
    diff = T.sub(Tensor(pred_prev), pred)
    masked = T.mul(diff, Tensor(mask.values))
    return T.mul(T.tmean(T.mul(masked, masked)), Tensor(lam))


def loss_click_ce(pred: Tensor, clicks: list[Click]) -> Tensor:
    """Mean negative log-likelihood of the clicked classes; pred is [C,H,W] logits."""
    c_n, h, w = pred.data.shape
    us, vs, cs = [], [], []
    for c in clicks:
        _check_bounds(c, h, w)
        if not (0 <= int(c.label) < c_n):
            raise InputError(f"class id {c.label!r} out of range 0..{c_n - 1}")
        us.append(c.u)
        vs.append(c.v)
        cs.append(int(c.label))
    logp = T.channel_log_softmax(pred)
    picked = T.pick(logp, (np.array(cs), np.array(us), np.array(vs)))
    return T.neg(T.tmean(picked))


def loss_consistency_ce(pred: Tensor, prev_classes: np.ndarray, disk: AttentionMask,
                        lam: float) -> Tensor:
    """Mean NLL of the previously predicted class outside the newest click's disk."""
    c_n, h, w = pred.data.shape
    outside = np.asarray(disk.values, dtype=bool)
    if disk.kind == "ignore_label":
        outside = ~outside
    else:
        outside = disk.values > 0
    keep = outside.ravel()
    n_keep = int(keep.sum())
    if n_keep == 0:
        return Tensor(np.asarray(0.0))
    yy, xx = np.mgrid[0:h, 0:w]
    idx = (
        prev_classes.ravel()[keep].astype(np.intp),
        yy.ravel()[keep],
        xx.ravel()[keep],
    )
    logp = T.channel_log_softmax(pred)
    picked = T.pick(logp, idx)
    return T.mul(T.neg(T.tmean(picked)), Tensor(lam))


def loss_stroke_ce(pred: Tensor, finetune_mask: np.ndarray) -> Tensor:
    """Mean NLL over stroke-labelled pixels; the class count marks 'ignored'."""
    c_n, h, w = pred.data.shape
    labelled = finetune_mask != c_n
    if not labelled.any():
        raise ContractError("finetune mask is entirely ignored; nothing to optimize")
    yy, xx = np.mgrid[0:h, 0:w]
    keep = labelled.ravel()
    idx = (
        finetune_mask.ravel()[keep].astype(np.intp),
        yy.ravel()[keep],
        xx.ravel()[keep],
    )
    logp = T.channel_log_softmax(pred)
    return T.neg(T.tmean(T.pick(logp, idx)))


def loss_click_value(pred: Tensor, clicks: list[Click], reduction: str = "mean") -> Tensor:
    """Squared error against the clicked target values (mean or sum over clicks)."""
    if reduction not in ("mean", "sum"):
        raise ContractError(f"reduction must be mean or sum, got {reduction!r}")
    h, w = pred.data.shape
    us, vs, ls = [], [], []
    for c in clicks:
        _check_bounds(c, h, w)
        us.append(c.u)
        vs.append(c.v)
        ls.append(float(c.label))
    picked = T.pick(pred, (np.array(us), np.array(vs)))
    diff = T.sub(Tensor(np.array(ls)), picked)
    sq = T.mul(diff, diff)
    return T.tmean(sq) if reduction == "mean" else T.tsum(sq)


def loss_push(pred: Tensor, pred_prev: np.ndarray, click: Click,
              epsilon: float = 0.1) -> Tensor:
    """Nudge the clicked output value by +/- epsilon from its previous value."""
    h, w = pred.data.shape
    _check_bounds(click, h, w)
    if click.label not in ("up", "down"):
        raise InputError(f"push direction must be 'up' or 'down', got {click.label!r}")
    sign = 1.0 if click.label == "up" else -1.0
    target = pred_prev[click.u, click.v] + sign * epsilon
    picked = T.pick(pred, (np.array([click.u]), np.array([click.v])))
    diff = T.sub(Tensor(np.array([target])), picked)
    return T.tsum(T.mul(diff, diff))


def loss_inertial(params: list[Tensor], params_init: list[np.ndarray], lam: float) -> Tensor:
    """lambda * sum of squared parameter drift from the initial values."""
    if len(params) != len(params_init):
        raise ContractError("parameter lists differ in length")
    total = Tensor(np.asarray(0.0))
    for p, p0 in zip(params, params_init):
        d = T.sub(p, Tensor(p0))
        total = T.add(total, T.tsum(T.mul(d, d)))
    return T.mul(total, Tensor(lam))
