"""Planar shared-grasp prediction lab.

A desk-scale SE(2) world with an exact kinematic/collision feasibility
oracle, energy-based feasibility models trained with a composite
contrastive objective, F1-calibrated thresholds, and three shared-grasp
prediction strategies (joint-energy, direct, logical conjunction)
benchmarked against analytical baselines.
"""

__version__ = "0.1.0"

from .geometry import Polygon, Se2Pose, compose, invert, polygons_intersect, transform_polygon
from .robot import ArmConfig, ArmGeometry, FeasibilityLabel, GripperGeometry
from .scene import GraspCandidate, GraspCandidateSet, ObjectModel, WorldModel, default_world

__all__ = [
    "ArmConfig",
    "ArmGeometry",
    "FeasibilityLabel",
    "GraspCandidate",
    "GraspCandidateSet",
    "GripperGeometry",
    "ObjectModel",
    "Polygon",
    "Se2Pose",
    "WorldModel",
    "compose",
    "default_world",
    "invert",
    "polygons_intersect",
    "transform_polygon",
]
