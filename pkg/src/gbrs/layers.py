"""Auxiliary refinement layers spliced into frozen networks.

Four families, all initialized to the identity so splicing never disturbs the
pretrained prediction:

- ``sb``      channel-wise scale and bias:          m * s + b
- ``bmsb``    adds a channel-weighted bias map:     (m + b_m * w_c) * s + b
- ``bmsb_m``  blends the global and local branches: w*(m*s+b) + (1-w)*(m + b_m*w_c)
- ``bmconv``  1x1 conv replacing scale/bias:        conv(m + beta*(b_m*w_c)) + b_conv

The bias-map amplifier ``beta`` = 10 applies only inside ``bmconv``.  When a
channel subset is set (top-k selection), only those channels pass through the
layer; the rest are untouched and their gradients flow through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, InputError, ModeError
from .tensor import Tensor

KINDS = ("sb", "bmsb", "bmsb_m", "bmconv")
BMCONV_BETA = 10.0


@dataclass
class GbrsParams:
    """Trainable state of one inserted layer (shared across the batch axis)."""

    kind: str
    s: Tensor | None = None
    b: Tensor | None = None
    b_m: Tensor | None = None
    w_c: Tensor | None = None
    w: Tensor | None = None
    w_conv: Tensor | None = None
    b_conv: Tensor | None = None
    channel_subset: list[int] | None = None

    def tensors(self) -> list[Tensor]:
        """All trainable tensors of this layer, in a fixed order."""
        out = []
        for t in (self.s, self.b, self.b_m, self.w_c, self.w, self.w_conv, self.b_conv):
            if t is not None:
                out.append(t)
        return out

    def named_tensors(self) -> dict[str, Tensor]:
        names = ("s", "b", "b_m", "w_c", "w", "w_conv", "b_conv")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def clamp(self) -> None:
        """Project the blend weight back into [0,1] after an optimizer step."""
        if self.w is not None:
            np.clip(self.w.data, 0.0, 1.0, out=self.w.data)


def init_params(kind: str, channels: int, height: int, width: int,
                channel_subset: list[int] | None = None) -> GbrsParams:
    """Identity-initialized parameters for a feature map of the given size.

    With a channel subset, the per-channel tensors cover only the selected
    channels (the bias map stays full resolution).
    """
    if kind not in KINDS:
        raise ContractError(f"unknown layer kind {kind!r}; expected one of {KINDS}")
    c = len(channel_subset) if channel_subset is not None else channels
    if channel_subset is not None:
        subset = sorted(int(i) for i in channel_subset)
        if len(set(subset)) != len(subset) or subset and (subset[0] < 0 or subset[-1] >= channels):
            raise ContractError(f"channel subset must be distinct indices < {channels}")
    else:
        subset = None
    p = GbrsParams(kind=kind, channel_subset=subset)
    if kind in ("sb", "bmsb", "bmsb_m"):
        p.s = Tensor(np.ones(c), requires_grad=True)
        p.b = Tensor(np.zeros(c), requires_grad=True)
    if kind in ("bmsb", "bmsb_m", "bmconv"):
        p.b_m = Tensor(np.zeros((height, width)), requires_grad=True)
        p.w_c = Tensor(np.ones(c), requires_grad=True)
    if kind == "bmsb_m":
        p.w = Tensor(np.asarray(0.5), requires_grad=True)
    if kind == "bmconv":
        p.w_conv = Tensor(np.eye(c).reshape(c, c, 1, 1), requires_grad=True)
        p.b_conv = Tensor(np.zeros(c), requires_grad=True)
    return p


def _check_spatial(m: Tensor, p: GbrsParams) -> None:
    if p.b_m is not None and p.b_m.data.shape != m.data.shape[2:]:
        raise DimensionError(
            f"bias map {p.b_m.data.shape} does not match feature map {m.data.shape[2:]}"
        )


def _check_channels(m: Tensor, p: GbrsParams) -> None:
    c = m.data.shape[1]
    for t in (p.s, p.b, p.w_c, p.b_conv):
        if t is not None and t.data.shape[0] != c:
            raise DimensionError(
                f"per-channel parameter of size {t.data.shape[0]} applied to {c} channels"
            )


def apply_sb(m: Tensor, p: GbrsParams) -> Tensor:
    if p.kind != "sb":
        raise ContractError(f"apply_sb called with kind {p.kind!r}")
    _check_channels(m, p)
    return T.add(T.mul(m, p.s), p.b)


def apply_bmsb(m: Tensor, p: GbrsParams) -> Tensor:
    if p.kind != "bmsb":
        raise ContractError(f"apply_bmsb called with kind {p.kind!r}")
    _check_channels(m, p)
    _check_spatial(m, p)
    shifted = T.add(m, _weighted_bias_map(m, p))
    return T.add(T.mul(shifted, p.s), p.b)


def apply_bmsb_m(m: Tensor, p: GbrsParams) -> Tensor:
    if p.kind != "bmsb_m":
        raise ContractError(f"apply_bmsb_m called with kind {p.kind!r}")
    _check_channels(m, p)
    _check_spatial(m, p)
    g1 = T.add(T.mul(m, p.s), p.b)
    g2 = T.add(m, _weighted_bias_map(m, p))
    one_minus_w = T.sub(Tensor(np.asarray(1.0)), p.w)
    return T.add(T.mul(g1, p.w), T.mul(g2, one_minus_w))


def apply_bmconv(m: Tensor, p: GbrsParams) -> Tensor:
    if p.kind != "bmconv":
        raise ContractError(f"apply_bmconv called with kind {p.kind!r}")
    c = m.data.shape[1]
    if p.w_conv.data.shape != (c, c, 1, 1):
        raise ContractError(
            f"1x1 kernel must be square over {c} channels, got {p.w_conv.data.shape}"
        )
    _check_spatial(m, p)
    amplified = T.mul(_weighted_bias_map(m, p), Tensor(np.asarray(BMCONV_BETA)))
    return T.conv2d(T.add(m, amplified), p.w_conv, p.b_conv, stride=1, padding=0)


def _weighted_bias_map(m: Tensor, p: GbrsParams) -> Tensor:
    # b_m [H,W] outer-scaled by w_c [C] -> broadcastable [1,C,H,W]
    h, w = p.b_m.data.shape
    c = p.w_c.data.shape[0]
    return T.mul(T.reshape(p.b_m, (1, 1, h, w)), T.reshape(p.w_c, (1, c, 1, 1)))


_APPLY = {"sb": apply_sb, "bmsb": apply_bmsb, "bmsb_m": apply_bmsb_m, "bmconv": apply_bmconv}


def apply_layer(m: Tensor, p: GbrsParams) -> Tensor:
    """Apply one layer, routing through the channel subset when present."""
    if p.channel_subset is None:
        return _APPLY[p.kind](m, p)
    sel = p.channel_subset
    out_sel = _APPLY[p.kind](T.take_channels(m, sel), p)
    return T.put_channels(m, sel, out_sel)


def top_k_channel_select(m: Tensor | np.ndarray, k: int) -> list[int]:
    """Indices of the k channels with the largest spatial mean activation.

    Ties break toward the lower channel index; the result is sorted.
    """
    data = m.data if isinstance(m, Tensor) else np.asarray(m)
    if data.ndim != 4:
        raise DimensionError(f"expected [N,C,H,W], got shape {data.shape}")
    c = data.shape[1]
    if not 1 <= k <= c:
        raise InputError(f"k must be in 1..{c}, got {k}")
    means = data.mean(axis=(0, 2, 3))
    order = np.argsort(-means, kind="stable")
    return sorted(int(i) for i in order[:k])


@dataclass
class Placement:
    """One layer bound to a named insertion point of a network."""

    insertion_point: str
    params: GbrsParams

    def hook(self):
        return lambda m: apply_layer(m, self.params)


def trainable_parameters(placements: list[Placement], mode: str, task: str,
                         image_residual: Tensor | None = None,
                         distmap_residual: Tensor | None = None) -> list[Tensor]:
    """The tensors the optimizer may touch for a given parameterization.

    Frozen network weights never appear here.  ``rgb_brs`` optimizes a residual
    on the image channels, ``distmap_brs`` a residual on the interaction maps
    (interactive segmentation only).
    """
    if mode == "gbrs":
        out = []
        for pl in placements:
            out.extend(pl.params.tensors())
        return out
    if mode == "rgb_brs":
        if image_residual is None:
            raise ContractError("rgb_brs mode needs an image residual tensor")
        return [image_residual]
    if mode == "distmap_brs":
        if task != "interactive_seg":
            raise ModeError("distmap_brs is only defined for interactive segmentation")
        if distmap_residual is None:
            raise ContractError("distmap_brs mode needs an interaction-map residual")
        return [distmap_residual]
    raise ModeError(f"unknown parameterization mode {mode!r}")
