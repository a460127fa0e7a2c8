"""Depth from optical tracking + hand-eye calibration vs. stereo triangulation."""

__version__ = "0.1.0"

from .rigid import RigidTransform, Point3D, compose, invert, apply  # noqa: F401
from .camera import CameraIntrinsics, StereoRig, project, undistort, projection_matrix  # noqa: F401
from .calibration import (  # noqa: F401
    PivotResult, pivot_calibrate, solve_pnp, hand_eye_calibrate, stylus_tip_in_world,
    reproject_measured, measured_point_in_camera, Correspondence2D3D,
)
from .stereo import match_true_positives, stereo_correspond, triangulate, PointMatch  # noqa: F401
from .evaluation import error_2d, error_3d, neighbor_distances, build_report  # noqa: F401
from .scene import SceneConfig, generate_scene, generate_annulus  # noqa: F401
