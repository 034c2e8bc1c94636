"""Refinement sessions: online optimization of auxiliary parameters per click.

A session owns a frozen network, the auxiliary trainable state for one image,
the click history, Adam moments, cached predictions, and an undo stack.  Per
click it runs up to ``iterations`` Adam steps on the task's click loss plus
the consistency term built from the newest click only; interactive
segmentation early-stops once every click is within the logit threshold.

Optimizer moments persist across clicks (the parameters are the same
optimization variables throughout the session); undo restores them bitwise,
so replaying a recorded click sequence reproduces predictions exactly.

Speed note: in ``gbrs`` mode the encoder activations are constants between
parameter updates, so they are computed once per click (interactive
segmentation re-encodes when the interaction maps change) and only the
decoder is rebuilt per iteration.  Input-residual modes rebuild the full
graph since the input itself is trainable.
"""

from __future__ import annotations

import io
import json
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .checkpoint import read_tensor_records, write_tensor_records
from .errors import (
    ContractError,
    InputError,
    LoadError,
    ModeError,
    NumericError,
)
from .layers import GbrsParams, Placement, init_params, top_k_channel_select, trainable_parameters
from .losses import (
    Click,
    build_attention_mask,
    disk_pixels,
    loss_click_binary,
    loss_click_ce,
    loss_click_value,
    loss_consistency_ce,
    loss_consistency_mse,
    loss_inertial,
    loss_push,
    loss_stroke_ce,
)
from .networks import IGNORE_LABEL, Network, encode_interaction_maps
from .optim import Adam
from .tensor import Tensor

SNAPSHOT_MAGIC = b"GBSS"
SNAPSHOT_VERSION = 1

MODES = ("gbrs", "rgb_brs", "distmap_brs")

_LAMBDA_DEFAULTS = {
    "interactive_seg": 1e2,
    "semantic_seg": 10.0,   # click mode; stroke mode uses 1.0
    "matting": 1e3,
    "depth": 1e-1,
}
LAMBDA_STROKE = 1.0


@dataclass
class RefinementConfig:
    iterations: int = 20
    lr: float | None = None          # None -> per-(task, mode, kind, layers) default
    lambda_c: float | None = None    # None -> per-task default
    use_consistency: bool = True
    consistency_kind: str = "auto"   # auto | inertial | none
    lambda_inertial: float = 1e-3
    early_stop_threshold: float = 0.8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epsilon_push: float = 0.1
    tcs_k: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.lr is not None and self.lr <= 0:
            raise ContractError("learning rate must be positive")

    def resolved_lambda(self, task: str) -> float:
        return _LAMBDA_DEFAULTS[task] if self.lambda_c is None else self.lambda_c


@dataclass
class RefinementReport:
    loss_refine: list[float] = field(default_factory=list)
    loss_consistency: list[float] = field(default_factory=list)
    loss_total: list[float] = field(default_factory=list)
    iterations_executed: int = 0
    early_stopped: bool = False
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class Session:
    """Single-owner refinement state; operations run strictly sequentially."""

    def __init__(self, network: Network, image: np.ndarray, mode: str, kind: str,
                 placement_points: tuple[str, ...], config: RefinementConfig,
                 trimap: np.ndarray | None = None, lr: float | None = None):
        network.set_trainable(False)
        self.network = network
        self.task = network.spec.task
        self.mode = mode
        self.kind = kind
        self.config = config
        self.image = np.asarray(image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise InputError(f"image must be [3,H,W], got {self.image.shape}")
        self.h, self.w = self.image.shape[1:]
        if trimap is None and self.task == "matting":
            trimap = np.full((self.h, self.w), 0.5)
        self.trimap = trimap
        self.clicks: list[Click] = []
        self.finetune_mask = np.full((self.h, self.w), IGNORE_LABEL, dtype=np.int64)
        self.history: list[dict] = []
        self.reports: list[RefinementReport] = []
        self.weights_sha = network.weights_hash()
        self._encoder_cache: tuple | None = None
        self._input_cache: np.ndarray | None = None

        if mode not in MODES:
            raise ModeError(f"unknown mode {mode!r}")
        if mode == "distmap_brs" and self.task != "interactive_seg":
            raise ModeError("distmap_brs requires the interactive segmentation task")

        # probe forward: capture insertion shapes/activations for param sizing
        captured: dict[str, np.ndarray] = {}

        def capture(name):
            def hook(m):
                captured[name] = m.data
                return m
            return hook

        x0 = Tensor(self._input())
        self.network.forward(x0, {p: capture(p) for p in placement_points})

        self.placements: list[Placement] = []
        self.image_residual: Tensor | None = None
        self.distmap_residual: Tensor | None = None
        if mode == "gbrs":
            for point in placement_points:
                feat = captured[point]
                subset = None
                if config.tcs_k is not None:
                    subset = top_k_channel_select(feat, config.tcs_k)
                params = init_params(kind, feat.shape[1], feat.shape[2], feat.shape[3],
                                     channel_subset=subset)
                self.placements.append(Placement(point, params))
        elif mode == "rgb_brs":
            self.image_residual = Tensor(np.zeros((1, 3, self.h, self.w)), requires_grad=True)
        else:
            self.distmap_residual = Tensor(np.zeros((1, 2, self.h, self.w)), requires_grad=True)

        self.trainables = trainable_parameters(
            self.placements, mode, self.task,
            image_residual=self.image_residual,
            distmap_residual=self.distmap_residual,
        )
        self.params_init = [t.data.copy() for t in self.trainables]
        self.lr = lr if lr is not None else (config.lr if config.lr is not None else 1e-2)
        self.adam = Adam(self.trainables, lr=self.lr, beta1=config.adam_beta1,
                         beta2=config.adam_beta2, eps=config.adam_eps)

        pred = self._forward().data[0]
        self.pred_current = pred.copy()
        self.pred_prev = pred.copy()

    # -- forward machinery ---------------------------------------------------

    def _assemble_input(self) -> np.ndarray:
        if self.task == "interactive_seg":
            maps = encode_interaction_maps(self.clicks, self.h, self.w,
                                           self.network.spec.interaction_clip)
            return np.concatenate([self.image, maps], axis=0)[None]
        if self.task == "matting":
            return np.concatenate([self.image, self.trimap[None]], axis=0)[None]
        return self.image.copy()[None]

    def _hooks(self):
        return {pl.insertion_point: pl.hook() for pl in self.placements}

    def _input(self) -> np.ndarray:
        if self._input_cache is None:
            self._input_cache = self._assemble_input()
        return self._input_cache

    def _first_point(self) -> str:
        order = {"enc8": 0, "dec4": 1, "dec2": 2}
        return min((pl.insertion_point for pl in self.placements), key=order.get)

    def _forward(self) -> Tensor:
        """Prediction [1,C,H,W] through the current auxiliary parameters.

        In gbrs mode everything upstream of the first insertion point is a
        constant between clicks, so it is computed once and cached; each
        iteration only rebuilds the graph from that point on.
        """
        if self.mode == "gbrs":
            if self._encoder_cache is None:
                first = self._first_point()
                e1, e2, e3 = self.network.encode(Tensor(self._input()))
                stages: dict = {}
                self.network.decode(e1, e2, e3, hooks=None, stages=stages)
                self._encoder_cache = (
                    first,
                    Tensor(stages[first].data),
                    Tensor(e1.data),
                    Tensor(e2.data),
                )
            first, feature, e1, e2 = self._encoder_cache
            return self.network.decode_from(first, feature, e1, e2, self._hooks())
        x = Tensor(self._input())
        if self.mode == "rgb_brs":
            pad = Tensor(np.zeros((1, 2, self.h, self.w))) if self.task == "interactive_seg" else None
            res = self.image_residual
            if pad is not None:
                res = T.concat([res, pad], axis=1)
            elif self.task == "matting":
                res = T.concat([res, Tensor(np.zeros((1, 1, self.h, self.w)))], axis=1)
            x = T.add(x, res)
        elif self.mode == "distmap_brs":
            pad = Tensor(np.zeros((1, 3, self.h, self.w)))
            x = T.add(x, T.concat([pad, self.distmap_residual], axis=1))
        return self.network.forward(x, self._hooks())

    def _invalidate_encoder_cache(self):
        self._encoder_cache = None
        self._input_cache = None

    # -- undo machinery ---------------------------------------------------------

    def _snapshot_state(self) -> dict:
        return {
            "params": [t.data.copy() for t in self.trainables],
            "adam": self.adam.state_dict(),
            "clicks": list(self.clicks),
            "pred_current": self.pred_current.copy(),
            "pred_prev": self.pred_prev.copy(),
            "finetune_mask": self.finetune_mask.copy(),
            "n_reports": len(self.reports),
        }

    def _restore_state(self, state: dict) -> None:
        for t, data in zip(self.trainables, state["params"]):
            t.data = data.copy()
        self.adam.load_state_dict(state["adam"])
        self.clicks = list(state["clicks"])
        self.pred_current = state["pred_current"].copy()
        self.pred_prev = state["pred_prev"].copy()
        self.finetune_mask = state["finetune_mask"].copy()
        del self.reports[state["n_reports"]:]
        self._invalidate_encoder_cache()

    def undo(self) -> None:
        if not self.history:
            raise ContractError("nothing to undo")
        self._restore_state(self.history.pop())

    def verify_frozen_weights(self) -> bool:
        return self.network.weights_hash() == self.weights_sha

    # -- losses ---------------------------------------------------------------

    def _pred_map(self, pred: Tensor) -> Tensor:
        """[H,W] map for scalar-output tasks, [C,H,W] for semantic."""
        c = pred.data.shape[1]
        if c == 1:
            return T.reshape(pred, (self.h, self.w))
        return T.reshape(pred, (c, self.h, self.w))

    def _refine_loss(self, pred: Tensor) -> Tensor:
        pm = self._pred_map(pred)
        if self.task == "interactive_seg":
            return loss_click_binary(pm, self.clicks)
        if self.task == "semantic_seg":
            return loss_click_ce(pm, self.clicks)
        if self.task == "matting":
            return loss_click_value(pm, self.clicks, "mean")
        return loss_click_value(pm, self.clicks, "sum")

    def _consistency_term(self, newest: Click):
        """Returns pred -> loss (or None); mask and snapshots built once per click."""
        cfg = self.config
        if not cfg.use_consistency or cfg.consistency_kind == "none":
            return None
        if cfg.consistency_kind == "inertial":
            return lambda pred: loss_inertial(self.trainables, self.params_init,
                                              cfg.lambda_inertial)
        lam = cfg.resolved_lambda(self.task)
        if self.task == "interactive_seg":
            mask = build_attention_mask("binary_disk", newest, self.h, self.w)
            prev = self.pred_prev[0]
            return lambda pred: loss_consistency_mse(self._pred_map(pred), prev, mask, lam)
        if self.task == "semantic_seg":
            disk = build_attention_mask("binary_disk", newest, self.h, self.w)
            prev_classes = self.pred_prev.argmax(axis=0)
            return lambda pred: loss_consistency_ce(self._pred_map(pred), prev_classes,
                                                    disk, lam)
        mask = build_attention_mask("inverse_gaussian", newest, self.h, self.w)
        prev = self.pred_prev[0]
        return lambda pred: loss_consistency_mse(self._pred_map(pred), prev, mask, lam)

    def _early_stop_satisfied(self, pred: np.ndarray) -> bool:
        if self.task != "interactive_seg" or not self.clicks:
            return False
        worst = max(
            abs(float(c.label) - pred[0, c.u, c.v]) for c in self.clicks
        )
        return worst < self.config.early_stop_threshold

    # -- optimization loops ----------------------------------------------------

    def _run_optimization(self, make_loss, iterations: int,
                          early_stop: bool) -> RefinementReport:
        """Shared Adam loop with NaN rollback; make_loss(pred) -> (l_r, l_c).

        The threshold is checked before the first iteration and after every
        step; the values seen at step k's forward reflect the parameters
        after step k-1, so a fresh forward at loop exit keeps ``pred_current``
        consistent with the final parameters.
        """
        report = RefinementReport()
        t0 = time.perf_counter()
        if early_stop and self._early_stop_satisfied(self.pred_current):
            report.early_stopped = True
            report.wall_seconds = time.perf_counter() - t0
            return report
        for step in range(1, iterations + 1):
            pred = self._forward()
            pred_vals = pred.data[0]
            if step > 1 and early_stop and self._early_stop_satisfied(pred_vals):
                report.early_stopped = True
                self.pred_current = pred_vals.copy()
                report.wall_seconds = time.perf_counter() - t0
                return report
            l_refine, l_cons = make_loss(pred)
            total = l_refine if l_cons is None else T.add(l_refine, l_cons)
            value = float(total.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at iteration {step}")
            report.loss_refine.append(float(l_refine.data))
            report.loss_consistency.append(0.0 if l_cons is None else float(l_cons.data))
            report.loss_total.append(value)
            self.adam.zero_grad()
            T.backward(total)
            self.adam.step()
            for pl in self.placements:
                pl.params.clamp()
            report.iterations_executed = step
        final = self._forward().data[0]
        if not np.all(np.isfinite(final)):
            raise NumericError("non-finite prediction after refinement")
        self.pred_current = final.copy()
        if early_stop and self._early_stop_satisfied(final):
            report.early_stopped = True
        report.wall_seconds = time.perf_counter() - t0
        return report

    def add_click_and_refine(self, click: Click) -> RefinementReport:
        if not (0 <= click.u < self.h and 0 <= click.v < self.w):
            raise InputError(f"click ({click.u},{click.v}) outside {self.h}x{self.w}")
        self._validate_label(click)
        self.history.append(self._snapshot_state())
        self.clicks.append(click)
        if self.task == "interactive_seg":
            self._invalidate_encoder_cache()  # interaction maps changed
        self.pred_prev = self.pred_current.copy()

        consistency = self._consistency_term(click)

        def make_loss(pred):
            l_c = consistency(pred) if consistency is not None else None
            return self._refine_loss(pred), l_c

        report = self._guarded(
            lambda: self._run_optimization(
                make_loss, self.config.iterations,
                early_stop=(self.task == "interactive_seg"),
            )
        )
        self.reports.append(report)
        return report

    def _guarded(self, run):
        """Run a refinement; a numeric failure rolls back to the pre-click state."""
        try:
            return run()
        except NumericError:
            self._restore_state(self.history.pop())
            raise

    def push_click(self, click: Click) -> RefinementReport:
        if self.task not in ("matting", "depth"):
            raise ModeError(f"push mode is not defined for {self.task}")
        if not (0 <= click.u < self.h and 0 <= click.v < self.w):
            raise InputError(f"click ({click.u},{click.v}) outside {self.h}x{self.w}")
        if click.label not in ("up", "down"):
            raise InputError("push click label must be 'up' or 'down'")
        self.history.append(self._snapshot_state())
        self.pred_prev = self.pred_current.copy()
        prev = self.pred_prev[0]

        def make_loss(pred):
            pm = self._pred_map(pred)
            return loss_push(pm, prev, click, self.config.epsilon_push), None

        report = self._guarded(
            lambda: self._run_optimization(make_loss, iterations=1, early_stop=False)
        )
        self.reports.append(report)
        return report

    def apply_stroke(self, stroke: list[Click]) -> RefinementReport:
        if self.task != "semantic_seg":
            raise ModeError("strokes are only defined for semantic segmentation")
        if not stroke:
            raise ContractError("stroke must contain at least one point")
        for c in stroke:
            if not (0 <= c.u < self.h and 0 <= c.v < self.w):
                raise InputError(f"stroke point ({c.u},{c.v}) outside image")
            if not (0 <= int(c.label) < IGNORE_LABEL):
                raise InputError(f"stroke class {c.label!r} out of range")
        self.history.append(self._snapshot_state())
        stroke_region = np.zeros((self.h, self.w), dtype=bool)
        for c in stroke:  # later points overwrite earlier at overlaps
            disk = disk_pixels(c.u, c.v, c.r, self.h, self.w)
            self.finetune_mask[disk] = int(c.label)
            stroke_region |= disk
        self.pred_prev = self.pred_current.copy()
        prev_classes = self.pred_prev.argmax(axis=0)
        from .losses import AttentionMask

        outside = AttentionMask("binary_disk", (~stroke_region).astype(np.float64))

        def make_loss(pred):
            pm = self._pred_map(pred)
            l_r = loss_stroke_ce(pm, self.finetune_mask)
            l_c = None
            if self.config.use_consistency and self.config.consistency_kind == "auto":
                l_c = loss_consistency_ce(pm, prev_classes, outside, LAMBDA_STROKE)
            elif self.config.consistency_kind == "inertial":
                l_c = loss_inertial(self.trainables, self.params_init,
                                    self.config.lambda_inertial)
            return l_r, l_c

        report = self._guarded(
            lambda: self._run_optimization(make_loss, self.config.iterations,
                                           early_stop=False)
        )
        self.reports.append(report)
        return report

    def _validate_label(self, click: Click) -> None:
        if self.task == "interactive_seg":
            if click.label not in (1, -1):
                raise InputError("interactive segmentation labels are +1/-1")
        elif self.task == "semantic_seg":
            if not (0 <= int(click.label) < IGNORE_LABEL):
                raise InputError(f"class label out of range: {click.label!r}")
        elif self.task == "matting":
            if not (0.0 <= float(click.label) <= 1.0):
                raise InputError("alpha labels must lie in [0,1]")
        else:
            if float(click.label) <= 0.0:
                raise InputError("depth labels must be positive")


def create_session(network: Network, image: np.ndarray, task: str | None = None,
                   mode: str = "gbrs", kind: str = "bmconv",
                   placements: tuple[str, ...] = ("enc8",),
                   config: RefinementConfig | None = None,
                   trimap: np.ndarray | None = None,
                   lr: float | None = None) -> Session:
    """Build a refinement session on a frozen network.

    ``task``, when given, must match the checkpoint.  ``lr`` overrides both
    the config and the shipped defaults table.
    """
    if task is not None and task != network.spec.task:
        raise LoadError(f"checkpoint task {network.spec.task!r} does not match {task!r}")
    config = config or RefinementConfig()
    if lr is None and config.lr is None:
        from .lr_defaults import default_lr

        lr = default_lr(network.spec.task, mode, kind, len(placements))
    return Session(network, image, mode, kind, tuple(placements), config,
                   trimap=trimap, lr=lr)


# -- session snapshots ------------------------------------------------------------


def snapshot_session(session: Session) -> bytes:
    """Serialize the full resumable state (undo history is not captured)."""
    header = {
        "task": session.task,
        "mode": session.mode,
        "kind": session.kind,
        "placements": [pl.insertion_point for pl in session.placements],
        "channel_subsets": [pl.params.channel_subset for pl in session.placements],
        "config": asdict(session.config),
        "lr": session.lr,
        "clicks": [[c.u, c.v, c.r, c.label] for c in session.clicks],
        "adam_t": session.adam.t,
        "weights_sha": session.weights_sha,
        "n_reports": len(session.reports),
        "reports": [r.to_dict() for r in session.reports],
    }
    tensors: dict[str, np.ndarray] = {}
    for i, t in enumerate(session.trainables):
        tensors[f"param.{i}"] = t.data
        tensors[f"adam_m.{i}"] = session.adam.m[i]
        tensors[f"adam_v.{i}"] = session.adam.v[i]
        tensors[f"param_init.{i}"] = session.params_init[i]
    tensors["pred_current"] = session.pred_current
    tensors["pred_prev"] = session.pred_prev
    tensors["finetune_mask"] = session.finetune_mask.astype(np.float64)
    tensors["image"] = session.image
    if session.trimap is not None:
        tensors["trimap"] = session.trimap
    buf = io.BytesIO()
    encoded = json.dumps(header).encode("utf-8")
    buf.write(SNAPSHOT_MAGIC)
    buf.write(struct.pack("<I", SNAPSHOT_VERSION))
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    write_tensor_records(buf, tensors)
    return buf.getvalue()


def restore_session(blob: bytes, network: Network) -> Session:
    buf = io.BytesIO(blob)
    magic = buf.read(4)
    if magic != SNAPSHOT_MAGIC:
        raise LoadError("not a session snapshot (bad magic)")
    try:
        (version,) = struct.unpack("<I", buf.read(4))
    except struct.error as exc:
        raise LoadError("truncated snapshot") from exc
    if version != SNAPSHOT_VERSION:
        raise LoadError(f"unsupported snapshot version {version}")
    try:
        (header_len,) = struct.unpack("<I", buf.read(4))
        header = json.loads(buf.read(header_len).decode("utf-8"))
        tensors = read_tensor_records(buf)
    except (struct.error, ValueError, KeyError) as exc:
        raise LoadError(f"corrupt snapshot: {exc}") from exc
    if header["weights_sha"] != network.weights_hash():
        raise LoadError("snapshot was taken against a different checkpoint")
    config = RefinementConfig(**header["config"])
    session = Session(
        network,
        tensors["image"],
        header["mode"],
        header["kind"],
        tuple(header["placements"]),
        config,
        trimap=tensors.get("trimap"),
        lr=header["lr"],
    )
    rebuilt_subsets = [pl.params.channel_subset for pl in session.placements]
    if rebuilt_subsets != [
        s if s is None else list(s) for s in header["channel_subsets"]
    ]:
        raise LoadError("snapshot channel selection does not match this checkpoint")
    session.clicks = [Click(int(u), int(v), float(r), label)
                      for u, v, r, label in header["clicks"]]
    for i, t in enumerate(session.trainables):
        t.data = tensors[f"param.{i}"].copy()
        session.adam.m[i] = tensors[f"adam_m.{i}"].copy()
        session.adam.v[i] = tensors[f"adam_v.{i}"].copy()
        session.params_init[i] = tensors[f"param_init.{i}"].copy()
    session.adam.t = int(header["adam_t"])
    session.pred_current = tensors["pred_current"].copy()
    session.pred_prev = tensors["pred_prev"].copy()
    session.finetune_mask = tensors["finetune_mask"].astype(np.int64)
    session.reports = [RefinementReport(**r) for r in header.get("reports", [])]
    session._invalidate_encoder_cache()
    return session
