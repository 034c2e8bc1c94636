"""Pretraining of the toy networks on the synthetic shapes corpus.

Task losses: binary cross-entropy on logits (interactive segmentation, with
clicks simulated fresh each epoch), cross-entropy with an ignore label
(semantic segmentation), L1 (matting), and L2 on log-depth (depth).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, TrainingError
from .losses import Click
from .metrics import metric_depth, metric_matting, metric_miou, pixel_accuracy
from .networks import IGNORE_LABEL, Network, encode_interaction_maps
from .optim import Adam
from .shapes import Sample
from .tensor import Tensor


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    heldout_scores: list[float] = field(default_factory=list)
    heldout_metric: str = ""


def _simulate_training_clicks(sample: Sample, rng: np.random.Generator) -> list[Click]:
    """Random interaction seed: interior-peak first click, then uniform clicks."""
    from .clickgen import distance_transform

    fg = np.argwhere(sample.gt_binary == 1)
    bg = np.argwhere(sample.gt_binary == 0)
    clicks = []
    if len(fg):
        if rng.random() < 0.5:  # deep-interior first click, like a real user
            d = distance_transform(sample.gt_binary.astype(bool))
            u, v = np.unravel_index(int(d.argmax()), d.shape)
            clicks.append(Click(int(u), int(v), 1.0, 1))
        n_pos = int(rng.integers(1, 4))
        for i in rng.integers(0, len(fg), size=n_pos):
            clicks.append(Click(int(fg[i][0]), int(fg[i][1]), 1.0, 1))
    n_neg = int(rng.integers(0, 4))
    if len(bg):
        for i in rng.integers(0, len(bg), size=n_neg):
            clicks.append(Click(int(bg[i][0]), int(bg[i][1]), 1.0, -1))
    return clicks


def _error_targeted_clicks(network: Network, batch: list[Sample],
                           clicks_per_sample: list[list[Click]]) -> None:
    """Append one corrective click per sample, aimed at the current worst error.

    Mirrors how clicks arrive at evaluation time, so the network learns to
    honor the interaction maps instead of treating them as noise.
    """
    from .clickgen import CONVERGED, generate_click_classification

    xs = np.stack([
        build_input(network, s, clicks_per_sample[i]) for i, s in enumerate(batch)
    ])
    preds = network.forward(Tensor(xs)).data[:, 0]
    for i, sample in enumerate(batch):
        click = generate_click_classification(
            (preds[i] > 0).astype(int), sample.gt_binary
        )
        if click is CONVERGED:
            continue
        label = 1 if sample.gt_binary[click.u, click.v] else -1
        clicks_per_sample[i].append(Click(click.u, click.v, click.r, label))


def _augment(sample: Sample, code: int) -> Sample:
    """Dihedral augmentation: code = rotation (0..3) * 2 + flip (0/1)."""
    if code == 0:
        return sample
    rot, flip = divmod(code, 2)

    def tf(arr):
        out = np.rot90(arr, k=rot, axes=(-2, -1))
        if flip:
            out = np.flip(out, axis=-1)
        return np.ascontiguousarray(out)

    return Sample(
        image=tf(sample.image),
        gt_binary=tf(sample.gt_binary),
        gt_classes=tf(sample.gt_classes),
        gt_alpha=tf(sample.gt_alpha),
        gt_depth=tf(sample.gt_depth),
        trimap=tf(sample.trimap),
        gt_union=tf(sample.gt_union) if sample.gt_union is not None else None,
    )


def _augmentation_code(task: str, rng: np.random.Generator) -> int:
    # rotations would break the depth task's lower-is-nearer prior
    if task == "depth":
        return int(rng.integers(0, 2))
    return int(rng.integers(0, 8))


def build_input(network: Network, sample: Sample, clicks=None) -> np.ndarray:
    """Assemble the [C,H,W] network input for one sample."""
    task = network.spec.task
    h, w = sample.image.shape[1:]
    if task == "interactive_seg":
        maps = encode_interaction_maps(clicks or [], h, w, network.spec.interaction_clip)
        return np.concatenate([sample.image, maps], axis=0)
    if task == "matting":
        return np.concatenate([sample.image, sample.trimap[None]], axis=0)
    return sample.image


def _batch_loss(network: Network, batch: list[Sample], clicks_per_sample) -> Tensor:
    task = network.spec.task
    xs = np.stack([
        build_input(network, s, clicks_per_sample[i] if clicks_per_sample else None)
        for i, s in enumerate(batch)
    ])
    pred = network.forward(Tensor(xs), raw=(task == "matting"))
    if task == "interactive_seg":
        target = np.stack([s.gt_binary for s in batch]).astype(np.float64)[:, None]
        # softplus(x) - x*y is binary cross-entropy on logits; foreground gets
        # extra weight so the net does not camp on the background majority
        weight = np.where(target == 1.0, 2.0, 1.0)
        bce = T.sub(T.softplus(pred), T.mul(pred, Tensor(target)))
        return T.tmean(T.mul(bce, Tensor(weight)))
    if task == "semantic_seg":
        labels = np.stack([s.gt_classes for s in batch])
        keep = (labels != IGNORE_LABEL).ravel()
        n, _, h, w = pred.data.shape
        nn, yy, xx = np.mgrid[0:n, 0:h, 0:w]
        idx = (
            nn.ravel()[keep],
            labels.ravel()[keep].astype(np.intp),
            yy.ravel()[keep],
            xx.ravel()[keep],
        )
        logp = T.channel_log_softmax(pred)
        return T.neg(T.tmean(T.pick(logp, idx)))
    if task == "matting":
        # soft-target cross-entropy on the pre-sigmoid logits: plain L1 on the
        # sigmoid output saturates within one epoch and collapses to a
        # constant matte, so the alpha target supervises the logits instead
        target = np.stack([s.gt_alpha for s in batch])[:, None]
        return T.tmean(T.sub(T.softplus(pred), T.mul(pred, Tensor(target))))
    if task == "depth":
        target = np.stack([s.gt_depth for s in batch])[:, None]
        d = T.sub(T.log(pred), Tensor(np.log(target)))
        return T.tmean(T.mul(d, d))
    raise ContractError(f"unknown task {task!r}")


def first_click(sample: Sample) -> Click:
    """Deterministic probe click at the instance's distance-transform peak."""
    from .clickgen import distance_transform

    d = distance_transform(sample.gt_binary.astype(bool))
    u, v = np.unravel_index(d.argmax(), d.shape)
    return Click(int(u), int(v), 1.0, 1)


def heldout_score(network: Network, samples: list[Sample]) -> tuple[str, float]:
    """(metric name, value) on a held-out split; used for regression floors.

    Interactive segmentation is evaluated under its input protocol: one
    deterministic positive click marking the instance.
    """
    task = network.spec.task
    scores = []
    for s in samples:
        clicks = [first_click(s)] if task == "interactive_seg" else None
        pred = network.forward(Tensor(build_input(network, s, clicks)[None])).data[0]
        if task == "interactive_seg":
            scores.append(metric_miou((pred[0] > 0).astype(int), s.gt_binary))
        elif task == "semantic_seg":
            scores.append(pixel_accuracy(pred.argmax(axis=0), s.gt_classes, IGNORE_LABEL))
        elif task == "matting":
            scores.append(-metric_matting(np.clip(pred[0], 0, 1), s.gt_alpha)["MSE"])
        else:
            scores.append(metric_depth(pred[0], s.gt_depth)["delta1"])
    names = {"interactive_seg": "miou", "semantic_seg": "pixel_acc",
             "matting": "neg_mse", "depth": "delta1"}
    return names[task], float(np.mean(scores))


def train(network: Network, data: list[Sample], epochs: int, lr: float, seed: int,
          batch_size: int = 5, heldout: list[Sample] | None = None,
          log=None) -> TrainReport:
    """Adam training in place; returns the per-epoch report.

    The learning rate halves at 50% and 77% of the epoch budget; that step
    schedule is what stabilizes the small nets at desk scale.
    """
    if not data:
        raise ContractError("training data must be nonempty")
    network.set_trainable(True)
    report = TrainReport()
    decay_at = {epochs // 2, int(epochs * 0.77)}
    try:
        opt = Adam(list(network.params.values()), lr=lr)
        for epoch in range(epochs):
            if epoch in decay_at:
                opt.lr *= 0.5
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,)))
            order = rng.permutation(len(data))
            epoch_loss = 0.0
            for start in range(0, len(order), batch_size):
                batch = [
                    _augment(data[i], _augmentation_code(network.spec.task, rng))
                    for i in order[start : start + batch_size]
                ]
                clicks = None
                if network.spec.task == "interactive_seg":
                    clicks = [_simulate_training_clicks(s, rng) for s in batch]
                    if rng.random() < 0.5:  # half the batches see corrective clicks
                        network.set_trainable(False)
                        _error_targeted_clicks(network, batch, clicks)
                        network.set_trainable(True)
                opt.zero_grad()
                loss = _batch_loss(network, batch, clicks)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingError(f"loss diverged to {value} at epoch {epoch}")
                T.backward(loss)
                opt.step()
                epoch_loss += value * len(batch)
            report.epoch_losses.append(epoch_loss / len(data))
            if heldout:
                name, score = heldout_score(network, heldout)
                report.heldout_metric = name
                report.heldout_scores.append(score)
                if log:
                    log(f"epoch {epoch + 1}/{epochs} loss={report.epoch_losses[-1]:.5f} {name}={score:.4f}")
            elif log:
                log(f"epoch {epoch + 1}/{epochs} loss={report.epoch_losses[-1]:.5f}")
    finally:
        network.set_trainable(False)
    return report
