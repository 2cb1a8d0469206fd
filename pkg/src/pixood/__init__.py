"""Pixel-level out-of-distribution scoring and threshold-sweep evaluation."""
from .tensor import IGNORE_ID, OOD_ID, load_tensor, save_tensor

__all__ = ["IGNORE_ID", "OOD_ID", "load_tensor", "save_tensor"]
__version__ = "0.1.0"
