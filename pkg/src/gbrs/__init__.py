"""gbrs: click-driven test-time refinement for dense-prediction networks.

The package splits into a fully self-contained numerical core (tensor,
networks, auxiliary refinement layers, losses, session engine), a simulated
user that benchmarks refinement quality, and a CLI / HTTP service layer.
"""

from .errors import (
    ContractError,
    DimensionError,
    GbrsError,
    InputError,
    LoadError,
    ModeError,
    NumericError,
    TrainingError,
)

__all__ = [
    "GbrsError",
    "DimensionError",
    "ContractError",
    "InputError",
    "ModeError",
    "LoadError",
    "TrainingError",
    "NumericError",
]

__version__ = "0.1.0"
