"""Robustness evaluation harness for click-based interactive segmentation."""

__version__ = "0.1.0"

from .clickgen import Click, Trajectory  # noqa: E402,F401
from .maskops import boundary_iou, iou  # noqa: E402,F401
