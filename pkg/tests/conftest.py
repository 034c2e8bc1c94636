"""Session fixtures: pretrained checkpoints (trained once, cached on disk).

The cache key tracks the generator/trainer recipe; bump it when either
changes so stale checkpoints cannot leak into assertions.
"""

import os

import pytest

from gbrs.checkpoint import load_checkpoint, save_checkpoint
from gbrs.networks import TASKS, build_network
from gbrs.shapes import generate_dataset
from gbrs.training import train

CACHE_VERSION = "v4"
TRAIN_SEED = 100
HELDOUT_SEED = 101
EVAL_SEED = 2000
TRAIN_RECIPE = dict(epochs=30, lr=2e-3, seed=0, batch_size=5)

_ARTIFACTS = os.path.join(os.path.dirname(__file__), "_artifacts", CACHE_VERSION)


def train_or_load(task: str):
    path = os.path.join(_ARTIFACTS, f"{task}.gbrs")
    if os.path.exists(path):
        return load_checkpoint(path)
    os.makedirs(_ARTIFACTS, exist_ok=True)
    data = generate_dataset(200, 64, TRAIN_SEED)
    heldout = generate_dataset(50, 64, HELDOUT_SEED)
    network = build_network(task, seed=0)
    report = train(network, data, heldout=heldout, **TRAIN_RECIPE)
    save_checkpoint(path, network)
    scores_path = os.path.join(_ARTIFACTS, f"{task}_heldout.txt")
    with open(scores_path, "w") as f:
        f.write(f"{report.heldout_metric}\n")
        f.write("\n".join(f"{s:.6f}" for s in report.heldout_scores))
    return load_checkpoint(path)


@pytest.fixture(scope="session")
def checkpoints():
    return {task: train_or_load(task) for task in TASKS}


@pytest.fixture(scope="session")
def heldout_set():
    return generate_dataset(50, 64, HELDOUT_SEED)


def eval_set_for(task: str, n: int = 100):
    offset = TASKS.index(task)
    return generate_dataset(n, 64, EVAL_SEED + offset)
