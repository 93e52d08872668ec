"""Slicing-aided inference for small-defect detection, with slice-edge refinement and evaluation tools."""

__version__ = "0.1.0"

from .detectors import Detection, OracleConfig, OracleDetector, Provenance
from .fusion import MergeConfig, merge
from .geometry import BBox, FrameTransform, contains, ios, iou
from .pipeline import InferenceSettings, infer_image
from .raster import GrayImage, read_image, write_image
from .refinement import RefinementConfig, refine
from .tiling import SlicePlan, SliceRegion, plan_slices

__all__ = [
    "BBox", "Detection", "FrameTransform", "GrayImage", "InferenceSettings", "MergeConfig", "OracleConfig",
    "OracleDetector", "Provenance", "RefinementConfig", "SlicePlan", "SliceRegion", "contains", "infer_image",
    "ios", "iou", "merge", "plan_slices", "read_image", "refine", "write_image",
]
