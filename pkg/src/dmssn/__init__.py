"""Distilled mixed spectral-spatial network for hyperspectral salient object
detection, with a synthetic-scene benchmark harness and evaluation suite."""

__version__ = "0.1.0"

from .data import HyperCube, SaliencyMask, SceneSpec, generate_synthetic_scene
from .errors import DmssnError, ValidationError

__all__ = [
    "HyperCube",
    "SaliencyMask",
    "SceneSpec",
    "generate_synthetic_scene",
    "DmssnError",
    "ValidationError",
    "__version__",
]
