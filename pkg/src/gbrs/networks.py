"""Desk-scale encoder-decoder networks for the four dense-prediction tasks.

One architecture serves all tasks: three stride-2 conv blocks (16/32/64
channels), a decoder with two bilinear upsamples and skip connections, and a
task head.  Auxiliary refinement layers may be spliced at three named points:

- ``enc8``  64 channels at 1/8 resolution (post-encoder)
- ``dec4``  32 channels at 1/4 resolution
- ``dec2``  16 channels at 1/2 resolution

Input sizes must be divisible by 8.  Interaction maps encode clicks as
normalized nearest-click distance per label (clipped at ``interaction_clip``
pixels); an empty click set yields all-ones channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import hashlib

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, InputError, LoadError
from .tensor import Tensor

TASKS = ("interactive_seg", "semantic_seg", "matting", "depth")
N_CLASSES = 6
IGNORE_LABEL = 6
DEPTH_FLOOR = 0.1  # meters added to the softplus head; keeps ratios finite
DEFAULT_INTERACTION_CLIP = 255.0

_IN_CHANNELS = {"interactive_seg": 5, "semantic_seg": 3, "matting": 4, "depth": 3}
_OUT_CHANNELS = {"interactive_seg": 1, "semantic_seg": N_CLASSES, "matting": 1, "depth": 1}

# (name, in, out, k, stride, pad); dec4/dec2 consume upsampled + skip channels
_CONV_DEFS = (
    ("enc1", None, 16, 3, 2, 1),
    ("enc2", 16, 32, 3, 2, 1),
    ("enc3", 32, 64, 3, 2, 1),
    ("bott1", 64, 64, 3, 1, 1),
    ("bott2", 64, 64, 3, 1, 1),
    ("dec4", 64 + 32, 32, 3, 1, 1),
    ("dec2", 32 + 16, 16, 3, 1, 1),
    ("ref", 16, 16, 3, 1, 1),   # runs at 1/2 resolution, before the last upsample
    ("head", 16, None, 3, 1, 1),
)


def _blocks_for(task: str) -> tuple[str, ...]:
    cin = _IN_CHANNELS[task]
    cout = _OUT_CHANNELS[task]
    head_act = {"interactive_seg": "none", "semantic_seg": "none",
                "matting": "sigmoid", "depth": "softplus_floor"}[task]
    return (
        f"conv name=enc1 in={cin} out=16 k=3 stride=2 pad=1",
        "relu",
        f"conv name=enc2 in=16 out=32 k=3 stride=2 pad=1",
        "relu",
        f"conv name=enc3 in=32 out=64 k=3 stride=2 pad=1",
        "relu",
        f"conv name=bott1 in=64 out=64 k=3 stride=1 pad=1",
        "relu",
        f"conv name=bott2 in=64 out=64 k=3 stride=1 pad=1",
        "relu",
        "upsample scale=2",
        "concat with=enc2",
        f"conv name=dec4 in=96 out=32 k=3 stride=1 pad=1",
        "relu",
        "upsample scale=2",
        "concat with=enc1",
        f"conv name=dec2 in=48 out=16 k=3 stride=1 pad=1",
        "relu",
        f"conv name=ref in=16 out=16 k=3 stride=1 pad=1",
        "relu",
        "upsample scale=2",
        f"conv name=head in=16 out={cout} k=3 stride=1 pad=1",
        f"activation kind={head_act}",
    )


# insertion indices are block boundaries: after the relu closing each stage
_INSERTION_POINTS = {"enc8": 6, "dec4": 14, "dec2": 18}


@dataclass
class NetworkSpec:
    task: str
    in_channels: int
    out_channels: int
    blocks: tuple[str, ...]
    insertion_points: dict[str, int] = field(default_factory=lambda: dict(_INSERTION_POINTS))
    interaction_clip: float = DEFAULT_INTERACTION_CLIP

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")
        for name, idx in self.insertion_points.items():
            if not 0 <= idx <= len(self.blocks):
                raise ContractError(f"insertion point {name} index {idx} out of range")


def spec_for(task: str) -> NetworkSpec:
    return NetworkSpec(
        task=task,
        in_channels=_IN_CHANNELS[task],
        out_channels=_OUT_CHANNELS[task],
        blocks=_blocks_for(task),
    )


class Network:
    """A frozen-weight model with named refinement insertion points."""

    def __init__(self, spec: NetworkSpec, params: dict[str, Tensor]):
        self.spec = spec
        self.params = params

    # -- construction -----------------------------------------------------

    @classmethod
    def build(cls, task: str, seed: int) -> "Network":
        spec = spec_for(task)
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        for name, cin, cout, k, _, _ in _CONV_DEFS:
            cin = spec.in_channels if cin is None else cin
            cout = spec.out_channels if cout is None else cout
            std = np.sqrt(2.0 / (cin * k * k))
            params[f"{name}.weight"] = Tensor(rng.normal(0.0, std, size=(cout, cin, k, k)))
            params[f"{name}.bias"] = Tensor(np.zeros(cout))
        return cls(spec, params)

    def set_trainable(self, trainable: bool) -> None:
        for t in self.params.values():
            t.requires_grad = trainable

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()

    # -- forward ----------------------------------------------------------

    def _conv(self, name: str, x: Tensor, stride: int, padding: int) -> Tensor:
        return T.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"],
                        stride=stride, padding=padding)

    def _check_input(self, x: Tensor) -> None:
        if x.data.ndim != 4 or x.data.shape[1] != self.spec.in_channels:
            raise DimensionError(
                f"{self.spec.task} expects [N,{self.spec.in_channels},H,W], got {x.data.shape}"
            )
        if x.data.shape[2] % 8 or x.data.shape[3] % 8:
            raise DimensionError("input height and width must be divisible by 8")

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        self._check_input(x)
        # all input channels live in [0,1]; centering keeps the relu stack alive
        x = T.sub(x, Tensor(np.asarray(0.5)))
        e1 = T.relu(self._conv("enc1", x, 2, 1))
        e2 = T.relu(self._conv("enc2", e1, 2, 1))
        e3 = T.relu(self._conv("enc3", e2, 2, 1))
        return e1, e2, e3

    def decode(self, e1: Tensor, e2: Tensor, e3: Tensor, hooks=None,
               stages: dict | None = None, raw: bool = False) -> Tensor:
        """Decoder with insertion hooks.

        ``stages``, when given, collects the pre-hook feature at each named
        point so a caller can cache everything upstream of its first hook and
        resume with ``decode_from``.
        """
        hooks = hooks or {}
        f = self._stage(stages, "enc8", e3)
        f = hooks["enc8"](f) if "enc8" in hooks else f
        d4 = self._dec4_stage(f, e2)
        d4 = self._stage(stages, "dec4", d4)
        if "dec4" in hooks:
            d4 = hooks["dec4"](d4)
        d2 = self._dec2_stage(d4, e1)
        d2 = self._stage(stages, "dec2", d2)
        if "dec2" in hooks:
            d2 = hooks["dec2"](d2)
        return self._head_stage(d2, raw=raw)

    @staticmethod
    def _stage(stages, name, value):
        if stages is not None:
            stages[name] = value
        return value

    def _dec4_stage(self, f: Tensor, e2: Tensor) -> Tensor:
        f = T.relu(self._conv("bott1", f, 1, 1))
        f = T.relu(self._conv("bott2", f, 1, 1))
        return T.relu(self._conv("dec4", T.concat([T.upsample_bilinear(f, 2), e2]), 1, 1))

    def _dec2_stage(self, d4: Tensor, e1: Tensor) -> Tensor:
        return T.relu(self._conv("dec2", T.concat([T.upsample_bilinear(d4, 2), e1]), 1, 1))

    def _head_stage(self, d2: Tensor, raw: bool = False) -> Tensor:
        refined = T.relu(self._conv("ref", d2, 1, 1))
        logits = self._conv("head", T.upsample_bilinear(refined, 2), 1, 1)
        return logits if raw else self._head_activation(logits)

    def decode_from(self, point: str, feature: Tensor, e1: Tensor | None,
                    e2: Tensor | None, hooks=None) -> Tensor:
        """Resume decoding at a named insertion point's pre-hook feature."""
        hooks = hooks or {}
        if point == "enc8":
            f = hooks["enc8"](feature) if "enc8" in hooks else feature
            d4 = self._dec4_stage(f, e2)
            d4 = hooks["dec4"](d4) if "dec4" in hooks else d4
            d2 = self._dec2_stage(d4, e1)
            d2 = hooks["dec2"](d2) if "dec2" in hooks else d2
            return self._head_stage(d2)
        if point == "dec4":
            d4 = hooks["dec4"](feature) if "dec4" in hooks else feature
            d2 = self._dec2_stage(d4, e1)
            d2 = hooks["dec2"](d2) if "dec2" in hooks else d2
            return self._head_stage(d2)
        if point == "dec2":
            d2 = hooks["dec2"](feature) if "dec2" in hooks else feature
            return self._head_stage(d2)
        raise ContractError(f"unknown insertion point {point!r}")

    def _head_activation(self, logits: Tensor) -> Tensor:
        if self.spec.task == "matting":
            return T.sigmoid(logits)
        if self.spec.task == "depth":
            return T.add(T.softplus(logits), Tensor(np.asarray(DEPTH_FLOOR)))
        return logits

    def forward(self, x: Tensor, hooks=None, raw: bool = False) -> Tensor:
        """``raw`` skips the task head activation (training losses use logits)."""
        e1, e2, e3 = self.encode(x)
        return self.decode(e1, e2, e3, hooks, raw=raw)

    def feature_shape(self, point: str, h: int, w: int) -> tuple[int, int, int]:
        """(channels, height, width) of the feature map at an insertion point."""
        if point == "enc8":
            return 64, h // 8, w // 8
        if point == "dec4":
            return 32, h // 4, w // 4
        if point == "dec2":
            return 16, h // 2, w // 2
        raise ContractError(f"unknown insertion point {point!r}")


def build_network(task: str, seed: int) -> Network:
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}")
    return Network.build(task, seed)


def encode_interaction_maps(clicks, h: int, w: int,
                            clip: float = DEFAULT_INTERACTION_CLIP) -> np.ndarray:
    """[2,H,W] nearest-click distance maps (positive then negative clicks)."""
    maps = np.ones((2, h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for channel, wanted in ((0, 1), (1, -1)):
        pts = [(c.u, c.v) for c in clicks if c.label == wanted]
        for u, v in pts:
            if not (0 <= u < h and 0 <= v < w):
                raise InputError(f"click ({u},{v}) outside {h}x{w} image")
        if not pts:
            continue
        d = np.full((h, w), np.inf)
        for u, v in pts:
            np.minimum(d, np.sqrt((yy - u) ** 2.0 + (xx - v) ** 2.0), out=d)
        maps[channel] = np.minimum(d, clip) / clip
    return maps
