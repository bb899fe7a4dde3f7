"""Indoor RGB-D semantic segmentation toolkit.

Pipeline: oversegmentation into patches, 14-entry per-patch features, a
randomized decision forest, and pairwise MRF smoothing via loopy belief
propagation; plus synthetic scene generation, evaluation, and table-side
robot search positions.
"""

__version__ = "0.1.0"

from .cloud import Intrinsics, PointCloud, ingest_depth_frame
from .labels import LABEL_NAMES, Label
from .pipeline import PipelineConfig, segment_cloud
from .ply_io import read_cloud, write_cloud
from .synth import SceneSpec, generate_scene

__all__ = [
    "Intrinsics",
    "Label",
    "LABEL_NAMES",
    "PipelineConfig",
    "PointCloud",
    "SceneSpec",
    "generate_scene",
    "ingest_depth_frame",
    "read_cloud",
    "segment_cloud",
    "write_cloud",
    "__version__",
]
