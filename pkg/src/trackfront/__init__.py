"""Stereo visual-inertial tracking frontend with interchangeable sequential
and data-parallel execution backends, host/backend transfer accounting, and a
trajectory-evaluation benchmark harness."""

from .cameras import FisheyeCamera, PinholeCamera, stereo_depth_from_disparity
from .engine import ExecutionEngine, ParallelMapSpec, StagingLedger
from .geometry import Pose, se3_compose
from .tracker import FrameInput, StereoTracker, TrackerConfig

__all__ = [
    "ExecutionEngine",
    "FisheyeCamera",
    "FrameInput",
    "ParallelMapSpec",
    "PinholeCamera",
    "Pose",
    "StagingLedger",
    "StereoTracker",
    "TrackerConfig",
    "se3_compose",
    "stereo_depth_from_disparity",
]

__version__ = "0.1.0"
