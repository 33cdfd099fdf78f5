"""Bottom-up position modeling for image features.

Core pieces: a small float64 autodiff tensor library, per-column cross
attention with learnable column queries, a bottom-up cumulative scan with
count normalization and residual fusion, a synthetic pinhole-camera
depth-ambiguity benchmark, rotated-box detection metrics, and a scaling
benchmark for the linear-cost claim. See the CLI (`bottomup --help`) for
the experiment entry points.
"""

from .featuremap import FeatureMap
from .tensor import DiffGraph, GraphError, ShapeMismatch, Tensor

__version__ = "0.1.0"

__all__ = [
    "FeatureMap",
    "Tensor",
    "DiffGraph",
    "ShapeMismatch",
    "GraphError",
    "__version__",
]
