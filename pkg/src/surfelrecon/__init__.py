"""Surfel-based RGB-D reconstruction: depth preprocessing, surfel cloud
fusion and denoising, and incremental triangle-mesh maintenance."""

from .camera import CameraIntrinsics, Pose
from .cloud import SurfelCloud
from .mesh import TriangleMesh
from .octree import CompressedOctree
from .pipeline import Pipeline, PipelineConfig

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "SurfelCloud",
    "TriangleMesh",
    "CompressedOctree",
    "Pipeline",
    "PipelineConfig",
]

__version__ = "0.1.0"
