"""Retrieve human demonstration clips for a command and replay them on a parallel-jaw gripper."""

__version__ = "0.1.0"

from .descriptors import DescriptorGrid, DescriptorSet, KeypointSet, select_common_descriptors
from .errors import RxError, StageError, ValidationError
from .geometry import CameraIntrinsics, RigidTransform, estimate_rigid_transform, robust_rigid_transform
from .gripper import GripperModel, GripperTrajectory, Heuristic, map_trajectory, robotiq_2f85
from .hands import HandJointFrame, HandTrajectory
from .pipeline import PipelineConfig, execute_command, export_result, ingest, load_config, load_live_frame
from .retrieval import ClipSpan, MockVlmClient, evaluate_retrieval, retrieve_clips

__all__ = [
    "CameraIntrinsics", "ClipSpan", "DescriptorGrid", "DescriptorSet", "GripperModel", "GripperTrajectory",
    "HandJointFrame", "HandTrajectory", "Heuristic", "KeypointSet", "MockVlmClient", "PipelineConfig",
    "RigidTransform", "RxError", "StageError", "ValidationError", "__version__", "estimate_rigid_transform",
    "evaluate_retrieval", "execute_command", "export_result", "ingest", "load_config", "load_live_frame",
    "map_trajectory", "retrieve_clips", "robotiq_2f85", "robust_rigid_transform", "select_common_descriptors",
]
