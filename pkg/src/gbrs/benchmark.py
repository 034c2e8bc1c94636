"""Simulated-user benchmark: click loops, CSV reports and figures.

Per instance: measure the initial estimation, then alternate click generation
and refinement for a fixed number of clicks or until no refinable error
remains.  Aggregates cover the full set and the worst decile by initial score
(the instances that need refinement most).  Reports are delimited CSV plus a
mean metric-vs-clicks curve rendered to PNG next to the CSVs.

AUC rule (recorded in every CSV header): trapezoidal mean over clicks 0..N,
normalized by N.  SAD/Grad/Conn are raw sums, not /1000-scaled.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .clickgen import CONVERGED, generate_click_classification, generate_click_regression
from .engine import RefinementConfig, Session, create_session
from .errors import ContractError
from .losses import Click
from .metrics import auc_over_clicks, metric_depth, metric_matting, metric_miou
from .networks import IGNORE_LABEL, Network
from .shapes import Sample

PRIMARY_METRIC = {
    "interactive_seg": ("miou", "higher_better"),
    "semantic_seg": ("miou", "higher_better"),
    "matting": ("MSE", "lower_better"),
    "depth": ("delta1", "higher_better"),
}

AUC_RULE = "trapezoid over clicks 0..N divided by N"


@dataclass
class EvalRecord:
    instance_id: int
    metrics: dict[str, list[float]]  # metric name -> values for clicks 0..N
    spc_seconds: list[float]
    auc: float = 0.0
    best: float = 0.0
    converged_at: int | None = None
    error: str | None = None

    def primary_series(self, task: str) -> list[float]:
        return self.metrics[PRIMARY_METRIC[task][0]]


def _measure(task: str, pred: np.ndarray, sample: Sample) -> dict[str, float]:
    if task == "interactive_seg":
        return {"miou": metric_miou((pred[0] > 0).astype(int), sample.gt_binary)}
    if task == "semantic_seg":
        return {"miou": metric_miou(pred.argmax(axis=0), sample.gt_classes,
                                    ignore=sample.gt_classes == IGNORE_LABEL)}
    if task == "matting":
        return metric_matting(np.clip(pred[0], 0.0, 1.0), sample.gt_alpha)
    return metric_depth(pred[0], sample.gt_depth)


def _next_click(task: str, pred: np.ndarray, sample: Sample):
    if task == "interactive_seg":
        click = generate_click_classification(
            (pred[0] > 0).astype(int), sample.gt_binary
        )
        if click is CONVERGED:
            return CONVERGED
        return Click(click.u, click.v, click.r, 1 if sample.gt_binary[click.u, click.v] else -1)
    if task == "semantic_seg":
        return generate_click_classification(
            pred.argmax(axis=0), sample.gt_classes,
            ignore=sample.gt_classes == IGNORE_LABEL,
        )
    if task == "matting":
        return generate_click_regression(np.clip(pred[0], 0.0, 1.0), sample.gt_alpha)
    return generate_click_regression(pred[0], sample.gt_depth)


def config_hash(network: Network, mode: str, kind: str, placements, config: RefinementConfig,
                clicks_per_instance: int, lr: float | None) -> str:
    payload = json.dumps(
        {
            "task": network.spec.task,
            "weights": network.weights_hash(),
            "mode": mode,
            "kind": kind,
            "placements": list(placements),
            "config": asdict(config),
            "clicks": clicks_per_instance,
            "lr": lr,
            "auc_rule": AUC_RULE,
        },
        sort_keys=True,
    ).encode()
    return hashlib.sha256(payload).hexdigest()[:12]


def evaluate_instance(network: Network, sample: Sample, instance_id: int, mode: str,
                      kind: str, placements, config: RefinementConfig,
                      clicks_per_instance: int, lr: float | None) -> EvalRecord:
    task = network.spec.task
    session = create_session(
        network, sample.image, mode=mode, kind=kind, placements=placements,
        config=config, trimap=sample.trimap if task == "matting" else None, lr=lr,
    )
    metrics: dict[str, list[float]] = {}
    record = EvalRecord(instance_id=instance_id, metrics=metrics, spc_seconds=[])

    def push(values: dict[str, float]):
        for k, v in values.items():
            metrics.setdefault(k, []).append(v)

    push(_measure(task, session.pred_current, sample))
    for k in range(clicks_per_instance):
        click = _next_click(task, session.pred_current, sample)
        if click is CONVERGED:
            record.converged_at = k
            break
        t0 = time.perf_counter()
        session.add_click_and_refine(click)
        record.spc_seconds.append(time.perf_counter() - t0)
        push(_measure(task, session.pred_current, sample))

    name, direction = PRIMARY_METRIC[task]
    series = metrics[name]
    if len(series) > 1:
        record.auc = auc_over_clicks(series, direction)
    else:
        record.auc = series[0]  # converged before the first click
    record.best = max(series) if direction == "higher_better" else min(series)
    return record


def run_benchmark(network: Network, eval_set: list[Sample], mode: str = "gbrs",
                  kind: str = "bmconv", placements=("enc8",),
                  config: RefinementConfig | None = None,
                  clicks_per_instance: int = 20, lr: float | None = None,
                  out_dir: str | None = None, make_figures: bool = True,
                  label: str | None = None) -> list[EvalRecord]:
    """Evaluate refinement on an instance set; optionally write CSVs + figure.

    Instance failures are recorded on the EvalRecord and the run continues.
    """
    if not eval_set:
        raise ContractError("evaluation set must be nonempty")
    config = config or RefinementConfig()
    task = network.spec.task
    records: list[EvalRecord] = []
    for i, sample in enumerate(eval_set):
        try:
            records.append(
                evaluate_instance(network, sample, i, mode, kind, placements, config,
                                  clicks_per_instance, lr)
            )
        except Exception as exc:  # per-instance isolation
            records.append(EvalRecord(instance_id=i, metrics={}, spc_seconds=[],
                                      error=f"{type(exc).__name__}: {exc}"))
    if out_dir:
        chash = config_hash(network, mode, kind, placements, config,
                            clicks_per_instance, lr)
        label = label or f"{task}_{kind if mode == 'gbrs' else mode}"
        write_reports(records, task, out_dir, label, chash,
                      clicks_per_instance, make_figures)
    return records


# -- aggregation / reporting -------------------------------------------------------


def _carry_forward(series: list[float], length: int) -> list[float]:
    if not series:
        return []
    return series + [series[-1]] * (length - len(series))


def mean_series(records: list[EvalRecord], task: str, n_clicks: int) -> np.ndarray:
    """Across-instance mean of the primary metric; converged runs carry forward."""
    rows = [
        _carry_forward(r.primary_series(task), n_clicks + 1)
        for r in records
        if r.error is None
    ]
    return np.mean(np.asarray(rows), axis=0)


def bottom_decile(records: list[EvalRecord], task: str) -> list[EvalRecord]:
    """The ceil(n/10) instances with the worst initial score."""
    ok = [r for r in records if r.error is None]
    _, direction = PRIMARY_METRIC[task]
    reverse = direction == "lower_better"
    ranked = sorted(ok, key=lambda r: r.primary_series(task)[0], reverse=reverse)
    n = int(np.ceil(len(ok) / 10))
    return ranked[:n]


def write_reports(records: list[EvalRecord], task: str, out_dir: str, label: str,
                  chash: str, n_clicks: int, make_figures: bool = True) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    header_lines = [
        f"# config_hash={chash}",
        f"# auc_rule={AUC_RULE}",
    ]
    metric_names = sorted({m for r in records if r.error is None for m in r.metrics})
    per_click_path = os.path.join(out_dir, f"{label}_per_click.csv")
    with open(per_click_path, "w", newline="") as f:
        for line in header_lines:
            f.write(line + "\n")
        writer = csv.writer(f)
        writer.writerow(["instance_id", "click_index"] + metric_names + ["spc_seconds"])
        for r in records:
            if r.error is not None:
                continue
            n = len(r.primary_series(task))
            for k in range(n):
                row = [r.instance_id, k]
                row += [f"{r.metrics[m][k]:.10g}" for m in metric_names]
                row.append(f"{r.spc_seconds[k - 1]:.6f}" if k >= 1 else "")
                writer.writerow(row)

    agg_path = os.path.join(out_dir, f"{label}_aggregate.csv")
    ok = [r for r in records if r.error is None]
    worst = bottom_decile(records, task)
    with open(agg_path, "w", newline="") as f:
        for line in header_lines:
            f.write(line + "\n")
        writer = csv.writer(f)
        writer.writerow(["row", "instance_id", "auc", "best", "converged_at", "error"])
        for r in records:
            writer.writerow([
                "instance", r.instance_id,
                f"{r.auc:.10g}" if r.error is None else "",
                f"{r.best:.10g}" if r.error is None else "",
                r.converged_at if r.converged_at is not None else "",
                r.error or "",
            ])
        if ok:
            writer.writerow(["mean_full", "", f"{np.mean([r.auc for r in ok]):.10g}",
                             f"{np.mean([r.best for r in ok]):.10g}", "", ""])
            writer.writerow(["mean_bottom10", "",
                             f"{np.mean([r.auc for r in worst]):.10g}",
                             f"{np.mean([r.best for r in worst]):.10g}", "", ""])
            spc = [t for r in ok for t in r.spc_seconds]
            if spc:
                writer.writerow(["mean_spc_seconds", "", f"{np.mean(spc):.6f}", "", "", ""])

    paths = {"per_click": per_click_path, "aggregate": agg_path}
    if make_figures and ok:
        paths["figure"] = _write_curve_figure(records, task, out_dir, label, n_clicks)
    return paths


def _write_curve_figure(records, task, out_dir, label, n_clicks) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    name, direction = PRIMARY_METRIC[task]
    mean = mean_series(records, task, n_clicks)
    worst = bottom_decile(records, task)
    worst_mean = mean_series(worst, task, n_clicks)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    xs = np.arange(len(mean))
    ax.plot(xs, mean, marker="o", ms=3, label="full set")
    ax.plot(xs, worst_mean, marker="s", ms=3, label="bottom 10%")
    ax.set_xlabel("clicks")
    ax.set_ylabel(name + (" (lower is better)" if direction == "lower_better" else ""))
    ax.set_title(label)
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, f"{label}_curve.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


# -- learning-rate sweep ------------------------------------------------------------


def lr_sweep(network: Network, subset: list[Sample], mode: str = "gbrs",
             kind: str = "bmconv", placements=("enc8",),
             config: RefinementConfig | None = None, clicks_per_instance: int = 20,
             grid=None, out_dir: str | None = None, label: str | None = None) -> dict:
    """AUC for each grid learning rate; the best lr feeds the defaults table.

    Returns {"best_lr", "per_lr": {lr: mean_auc}}.  Ties prefer the smaller
    learning rate; direction follows the task's primary metric.
    """
    from .lr_defaults import GRID

    if not subset:
        raise ContractError("sweep subset must be nonempty")
    grid = list(GRID) if grid is None else list(grid)
    task = network.spec.task
    _, direction = PRIMARY_METRIC[task]
    per_lr: dict[float, float] = {}
    for lr in grid:
        records = run_benchmark(network, subset, mode=mode, kind=kind,
                                placements=placements, config=config,
                                clicks_per_instance=clicks_per_instance, lr=lr)
        ok = [r for r in records if r.error is None]
        per_lr[lr] = float(np.mean([r.auc for r in ok])) if ok else float("nan")

    def better(a, b):
        if direction == "higher_better":
            return a > b
        return a < b

    best_lr = None
    best_score = None
    for lr in sorted(per_lr):  # ascending: ties keep the smaller lr
        score = per_lr[lr]
        if np.isnan(score):
            continue
        if best_score is None or better(score, best_score):
            best_lr, best_score = lr, score
    result = {"task": task, "mode": mode, "kind": kind, "layers": len(placements),
              "best_lr": best_lr, "per_lr": per_lr}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        label = label or f"{task}_{kind if mode == 'gbrs' else mode}_L{len(placements)}"
        path = os.path.join(out_dir, f"sweep_{label}.json")
        with open(path, "w") as f:
            json.dump({**result, "per_lr": {f"{k:.10g}": v for k, v in per_lr.items()}},
                      f, indent=2)
        _write_sweep_figure(per_lr, direction, out_dir, label)
        result["path"] = path
    return result


def _write_sweep_figure(per_lr, direction, out_dir, label) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lrs = sorted(per_lr)
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.semilogx(lrs, [per_lr[lr] for lr in lrs], marker="o")
    ax.set_xlabel("learning rate")
    ax.set_ylabel("AUC" + (" (lower better)" if direction == "lower_better" else ""))
    ax.set_title(label)
    fig.tight_layout()
    path = os.path.join(out_dir, f"sweep_{label}.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
