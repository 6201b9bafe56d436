"""Camera pose refinement against 2.5D building maps."""

from .alignment import EstimationInputs, ProbabilityRaster, estimate_pose, multi_start_estimate
from .config import DEFAULT_CONFIG, Config
from .geometry import CameraIntrinsics, Pose
from .map_model import Building, BuildingMap, MapModel

__version__ = "0.1.0"

__all__ = [
    "Building",
    "BuildingMap",
    "CameraIntrinsics",
    "Config",
    "DEFAULT_CONFIG",
    "EstimationInputs",
    "MapModel",
    "Pose",
    "ProbabilityRaster",
    "estimate_pose",
    "multi_start_estimate",
]
