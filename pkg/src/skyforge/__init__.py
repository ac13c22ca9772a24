"""Automated aerial-VLN data generation from Gaussian-splat scenes."""

from .annotate import Box3D, CandidateSet, SelectionParams, fuse_detections, prune_by_camera_distance, select_targets
from .cameras import CameraIntrinsics, CameraPose, OrbitConfig, direction_from_angles, four_view_rig, orbit_pose, orbit_sweep, path_headings
from .config import PipelineConfig
from .navigation import NavConfig, NavTarget, generate_target_sets, run_episode, sample_frames
from .pipeline import compute_stats, run_batch, run_scene
from .planning import PlannerLimits, ReferencePlanner, Trajectory6DoF, WaypointPath, astar, laplacian_smooth, path_length, time_parameterize
from .splat import OccupancyGrid, SplatScene, build_occupancy, load_scene, query_depth, save_scene

__version__ = "0.1.0"
