"""Default refinement learning rates per (task, mode, kind, layer count).

Populated by the `gbrs sweep` tool over the grid 0.1 * 0.5^k, k = 0..9, on
held-out synthetic subsets (see the sweep CSVs shipped under reports/ in the
repository).  Missing entries fall back to the nearest configured layer count
and finally to a conservative 1e-2.
"""

from __future__ import annotations

GRID = tuple(0.1 * 0.5**k for k in range(10))

_FALLBACK = 1e-2

# task -> mode/kind -> n_layers -> lr
DEFAULT_LR: dict[str, dict[str, dict[int, float]]] = {
    "interactive_seg": {
        "sb": {1: GRID[0]},
        "bmsb": {1: GRID[0]},
        "bmsb_m": {1: GRID[0]},
        "bmconv": {1: GRID[2]},
        "rgb_brs": {1: GRID[4]},
        "distmap_brs": {1: GRID[2]},
    },
    "semantic_seg": {
        "sb": {1: GRID[0]},
        "bmsb": {1: GRID[0]},
        "bmsb_m": {1: GRID[0]},
        "bmconv": {1: GRID[3]},
        "rgb_brs": {1: GRID[4]},
    },
    "matting": {
        "sb": {1: GRID[0]},
        "bmsb": {1: GRID[0]},
        "bmsb_m": {1: GRID[0]},
        "bmconv": {1: GRID[3]},
        "rgb_brs": {1: GRID[4]},
    },
    "depth": {
        "sb": {1: GRID[0]},
        "bmsb": {1: GRID[0]},
        "bmsb_m": {1: GRID[0]},
        "bmconv": {1: GRID[2]},
        "rgb_brs": {1: GRID[4]},
    },
}


def default_lr(task: str, mode: str, kind: str, n_layers: int) -> float:
    key = mode if mode != "gbrs" else kind
    by_layers = DEFAULT_LR.get(task, {}).get(key)
    if not by_layers:
        return _FALLBACK
    if n_layers in by_layers:
        return by_layers[n_layers]
    nearest = min(by_layers, key=lambda n: abs(n - n_layers))
    return by_layers[nearest]
