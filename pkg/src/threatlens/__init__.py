"""threatlens: synthetic network-traffic generation, sequence-based threat
detection, and post-hoc model explanation, on a self-contained numeric core."""

__version__ = "0.1.0"

from .errors import DataError, NumericError, ShapeError
from .rng import RngState
from .tensor import Tensor

__all__ = ["DataError", "NumericError", "ShapeError", "RngState", "Tensor",
           "__version__"]
