"""counterwarp: a desk-scale laboratory for warp-based adversarial defenses.

Builds small classifiers from scratch on a minimal reverse-mode autodiff
engine, generates linear and flow-based adversarial examples, trains a
U-Net + spatial-transformer defense that warps adversarial inputs back
toward the clean distribution, and reproduces the associated
transform-existence experiments.
"""

from .errors import (
    ConfigError,
    ConsistencyError,
    ContractError,
    CounterwarpError,
    DimensionError,
    DomainError,
    FormatError,
)
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "CounterwarpError",
    "ConfigError",
    "ConsistencyError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "FormatError",
    "__version__",
]
