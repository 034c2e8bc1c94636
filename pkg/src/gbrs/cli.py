"""Command-line entry points: gen-data, train, sweep, bench, refine, serve.

Exit codes: 0 success, 1 usage error, 2 runtime error.  The optional config
file uses one key=value per line (keys match RefinementConfig fields).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .engine import RefinementConfig
from .errors import GbrsError, InputError

KIND_CHOICES = ("sb", "bmsb", "bmsb-m", "bmconv")
MODE_CHOICES = ("gbrs", "rgb-brs", "distmap-brs")
TASK_CHOICES = ("interactive_seg", "semantic_seg", "matting", "depth")

PLACEMENTS_BY_LAYERS = {1: ("enc8",), 2: ("enc8", "dec4"), 3: ("enc8", "dec4", "dec2")}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _norm(value: str) -> str:
    return value.replace("-", "_")


def load_config_file(path: str) -> dict:
    values: dict[str, object] = {}
    fields = {f.name: f.type for f in RefinementConfig.__dataclass_fields__.values()}
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not sep or key not in fields:
                raise InputError(f"bad config line: {raw.strip()!r}")
            if value.lower() in ("true", "false"):
                values[key] = value.lower() == "true"
            elif value.lower() in ("none", ""):
                values[key] = None
            else:
                try:
                    values[key] = int(value) if value.lstrip("+-").isdigit() else float(value)
                except ValueError:
                    values[key] = value
    return values


def make_config(args) -> RefinementConfig:
    overrides = load_config_file(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "consistency", None) is not None:
        overrides["use_consistency"] = args.consistency == "on"
    return RefinementConfig(**overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="gbrs", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset to --out")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--size", type=int, default=64, choices=(64, 96, 128))

    p = sub.add_parser("train", help="pretrain a task network")
    p.add_argument("--task", required=True, choices=TASK_CHOICES)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-heldout", type=int, default=50)
    p.add_argument("--size", type=int, default=64, choices=(64, 96, 128))
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--batch", type=int, default=5)

    p = sub.add_parser("sweep", help="learning-rate sweep for one layout")
    _bench_flags(p)
    p.add_argument("--instances", type=int, default=8)

    p = sub.add_parser("bench", help="simulated-user benchmark")
    _bench_flags(p)
    p.add_argument("--instances", type=int, default=100)

    p = sub.add_parser("refine", help="replay a click file against one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="binary PPM image")
    p.add_argument("--clicks", required=True, help="text file: u v r label per line")
    p.add_argument("--kind", default="bmconv", choices=KIND_CHOICES)
    p.add_argument("--mode", default="gbrs", choices=MODE_CHOICES)
    p.add_argument("--layers", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--lr", type=float)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--checkpoints", required=True, help="directory of <task>.gbrs files")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--ttl", type=float, default=1800.0, help="idle session TTL seconds")
    p.add_argument("--frontend", help="static directory to serve at /")
    return parser


def _bench_flags(p):
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=TASK_CHOICES, help="must match the checkpoint")
    p.add_argument("--kind", default="bmconv", choices=KIND_CHOICES)
    p.add_argument("--layers", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--mode", default="gbrs", choices=MODE_CHOICES)
    p.add_argument("--consistency", choices=("on", "off"))
    p.add_argument("--clicks", type=int, default=20)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-seed", type=int, default=1000)
    p.add_argument("--size", type=int, default=64, choices=(64, 96, 128))


def _load_checkpoint(args):
    from .checkpoint import load_checkpoint

    network = load_checkpoint(args.checkpoint)
    if getattr(args, "task", None) and args.task != network.spec.task:
        raise InputError(
            f"checkpoint is for {network.spec.task}, --task says {args.task}"
        )
    return network


def cmd_gen_data(args) -> int:
    from .shapes import export_dataset, generate_dataset

    samples = generate_dataset(args.n, args.size, args.seed)
    manifest = export_dataset(samples, args.out)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .networks import build_network
    from .shapes import generate_dataset
    from .training import train

    os.makedirs(args.out, exist_ok=True)
    data = generate_dataset(args.n_train, args.size, args.seed)
    heldout = generate_dataset(args.n_heldout, args.size, args.seed + 1)
    network = build_network(args.task, args.seed)
    report = train(network, data, epochs=args.epochs, lr=args.lr, seed=args.seed,
                   batch_size=args.batch, heldout=heldout, log=print)
    path = os.path.join(args.out, f"{args.task}.gbrs")
    save_checkpoint(path, network)
    log_path = os.path.join(args.out, f"{args.task}_train_log.csv")
    with open(log_path, "w") as f:
        f.write(f"epoch,loss,{report.heldout_metric}\n")
        for i, (loss, score) in enumerate(zip(report.epoch_losses, report.heldout_scores)):
            f.write(f"{i + 1},{loss:.8g},{score:.8g}\n")
    _training_figure(report, os.path.join(args.out, f"{args.task}_train_curve.png"))
    print(path)
    return 0


def _training_figure(report, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.plot(range(1, len(report.epoch_losses) + 1), report.epoch_losses, label="loss")
    if report.heldout_scores:
        ax2 = ax.twinx()
        ax2.plot(range(1, len(report.heldout_scores) + 1), report.heldout_scores,
                 color="tab:orange", label=report.heldout_metric)
        ax2.set_ylabel(report.heldout_metric)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def cmd_sweep(args) -> int:
    from .benchmark import lr_sweep
    from .shapes import generate_dataset

    network = _load_checkpoint(args)
    subset = generate_dataset(args.instances, args.size, args.eval_seed)
    result = lr_sweep(
        network, subset, mode=_norm(args.mode), kind=_norm(args.kind),
        placements=PLACEMENTS_BY_LAYERS[args.layers], config=make_config(args),
        clicks_per_instance=args.clicks, out_dir=args.out,
    )
    print(json.dumps({"best_lr": result["best_lr"],
                      "per_lr": {f"{k:.6g}": v for k, v in result["per_lr"].items()}},
                     indent=2))
    return 0


def cmd_bench(args) -> int:
    from .benchmark import run_benchmark
    from .shapes import generate_dataset

    network = _load_checkpoint(args)
    eval_set = generate_dataset(args.instances, args.size, args.eval_seed)
    records = run_benchmark(
        network, eval_set, mode=_norm(args.mode), kind=_norm(args.kind),
        placements=PLACEMENTS_BY_LAYERS[args.layers], config=make_config(args),
        clicks_per_instance=args.clicks, lr=args.lr, out_dir=args.out,
    )
    ok = [r for r in records if r.error is None]
    failures = len(records) - len(ok)
    print(f"instances={len(records)} failures={failures} "
          f"mean_auc={np.mean([r.auc for r in ok]):.6g} reports in {args.out}")
    return 0


def _parse_clicks_file(path, task):
    clicks = []
    from .losses import Click

    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise InputError(f"bad click line: {raw.strip()!r}")
            u, v, r = int(parts[0]), int(parts[1]), float(parts[2])
            label: object = parts[3]
            if task == "interactive_seg":
                label = int(parts[3])
            elif task == "semantic_seg":
                label = int(parts[3])
            elif label not in ("up", "down"):
                label = float(parts[3])
            clicks.append(Click(u, v, r, label))
    return clicks


def cmd_refine(args) -> int:
    from .engine import create_session
    from .shapes import read_ppm

    network = _load_checkpoint(args)
    image = read_ppm(args.image)
    clicks = _parse_clicks_file(args.clicks, network.spec.task)
    session = create_session(
        network, image, mode=_norm(args.mode), kind=_norm(args.kind),
        placements=PLACEMENTS_BY_LAYERS[args.layers], config=make_config(args),
        lr=args.lr,
    )
    os.makedirs(args.out, exist_ok=True)
    reports = []
    for click in clicks:
        if click.label in ("up", "down"):
            reports.append(session.push_click(click).to_dict())
        else:
            reports.append(session.add_click_and_refine(click).to_dict())
    pred = session.pred_current
    np.save(os.path.join(args.out, "prediction.npy"), pred)
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump({"task": network.spec.task, "clicks": len(clicks),
                   "reports": reports}, f, indent=2)
    print(os.path.join(args.out, "report.json"))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.checkpoints, session_ttl=args.ttl, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "refine": cmd_refine,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (GbrsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
