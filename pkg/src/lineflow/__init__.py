"""Line segment tracking by structure-aware line optical flow."""
from .config import RunConfig
from .geometry import Homography, Intrinsics, LinearLine, LineSegment, NormalLine
from .image import Image, build_pyramid, read_pgm, write_pgm
from .metrics import MetricsReport, compute_metrics, is_correct_match
from .synth import GroundTruth, SceneSpec, ground_truth, render_frame, render_sequence
from .tracker import GroundTruthDetector, LineFlowTracker, Track

__all__ = [
    "GroundTruth", "GroundTruthDetector", "Homography", "Image", "Intrinsics", "LineFlowTracker",
    "LineSegment", "LinearLine", "MetricsReport", "NormalLine", "RunConfig", "SceneSpec", "Track",
    "build_pyramid", "compute_metrics", "ground_truth", "is_correct_match", "read_pgm",
    "render_frame", "render_sequence", "write_pgm",
]
__version__ = "0.1.0"
