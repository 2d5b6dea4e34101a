"""SPDH: 3D robot joint estimation from depth through paired uv and uz heatmaps.

Each joint becomes two 2D heatmaps: one on the image plane (uv) and one on a
grid of image columns by quantized depth slices (uz). Decoding both recovers
the joint in metric camera coordinates.
"""

__version__ = "0.1.0"

from .joints import JointSet3D
from .geometry import (
    DEFAULT_INTRINSICS,
    BehindCameraError,
    DepthImage,
    NormalizationSpec,
    PinholeIntrinsics,
    XyzImage,
    backproject,
    load_intrinsics,
    normalize_xyz,
    pixel_to_point,
    project,
    read_depth,
    resize_depth,
    write_depth_png,
)
from .codec import (
    DEFAULT_QUANTIZATION,
    SpdhStack,
    ZQuantization,
    decode,
    encode,
    encode_uv,
    encode_uz,
    load_stack,
    locate_peaks,
    make_quantization,
    perspective_sigma,
    save_stack,
)
from .robot import RobotChain, forward_kinematics, load_chain
from .synth import NO_NOISE, NoiseModel, SceneSpec, SequenceSpec, default_scene, generate_sequence, render_depth
from .augment import AugmentSpec, apply_rigid, augment_frame, depth_to_pointcloud, pointcloud_to_depth
from .metrics import PoseMetricsReport, add_metric, baseline_2d_to_3d, evaluate_run, map_metric
from .dataset_io import FrameRecord, load_dataset, sample_every, split, SplitSpec

__all__ = [
    "JointSet3D",
    "DEFAULT_INTRINSICS",
    "BehindCameraError",
    "DepthImage",
    "NormalizationSpec",
    "PinholeIntrinsics",
    "XyzImage",
    "backproject",
    "load_intrinsics",
    "normalize_xyz",
    "pixel_to_point",
    "project",
    "read_depth",
    "resize_depth",
    "write_depth_png",
    "DEFAULT_QUANTIZATION",
    "SpdhStack",
    "ZQuantization",
    "decode",
    "encode",
    "encode_uv",
    "encode_uz",
    "load_stack",
    "locate_peaks",
    "make_quantization",
    "perspective_sigma",
    "save_stack",
    "RobotChain",
    "forward_kinematics",
    "load_chain",
    "NO_NOISE",
    "NoiseModel",
    "SceneSpec",
    "SequenceSpec",
    "default_scene",
    "generate_sequence",
    "render_depth",
    "AugmentSpec",
    "apply_rigid",
    "augment_frame",
    "depth_to_pointcloud",
    "pointcloud_to_depth",
    "PoseMetricsReport",
    "add_metric",
    "baseline_2d_to_3d",
    "evaluate_run",
    "map_metric",
    "FrameRecord",
    "load_dataset",
    "sample_every",
    "split",
    "SplitSpec",
]
