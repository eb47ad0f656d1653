"""Planar 3-link arm with a parallel-jaw gripper.

Forward/inverse kinematics, occupancy polygons, and the exact feasibility
check that labels a grasp candidate at an object pose. Together with the
geometry module this is the ground-truth oracle the learned models are
trained against.

All functions are pure over immutable descriptions, so labeling may be
parallelized across poses without synchronization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .geometry import Polygon, Se2Pose, convex_intersect, normalize_angle, wrap_pi

if TYPE_CHECKING:  # circular at type-check time only
    from .scene import GraspCandidate, WorldModel

# Pre-contact jaw opening adds closing travel on top of the grasp width,
# capped by the mechanical maximum.
APPROACH_CLEARANCE = 0.01

_PI = math.pi
_DEGENERATE_TOL = 1e-9


@dataclass(frozen=True)
class ArmGeometry:
    """Three revolute links anchored at a fixed base."""

    base: tuple[float, float] = (0.0, 0.0)
    link_lengths: tuple[float, float, float] = (0.35, 0.30, 0.12)
    link_width: float = 0.04
    joint_limits: tuple[tuple[float, float], ...] = ((-_PI, _PI), (-_PI, _PI), (-_PI, _PI))

    def __post_init__(self) -> None:
        if len(self.link_lengths) != 3 or any(l <= 0 for l in self.link_lengths):
            raise ValueError("need three strictly positive link lengths")
        if self.link_width <= 0:
            raise ValueError("link width must be positive")
        if len(self.joint_limits) != 3 or any(lo > hi for lo, hi in self.joint_limits):
            raise ValueError("need three ordered joint limit intervals")

    @property
    def reach(self) -> float:
        return sum(self.link_lengths)


@dataclass(frozen=True)
class GripperGeometry:
    """Parallel-jaw gripper. The tool frame sits at the palm center with
    +x pointing from palm toward fingertips and the jaw closing along y."""

    finger_length: float = 0.06
    finger_thickness: float = 0.012
    palm_depth: float = 0.03
    max_width: float = 0.10

    def __post_init__(self) -> None:
        if min(self.finger_length, self.finger_thickness, self.palm_depth, self.max_width) <= 0:
            raise ValueError("all gripper dimensions must be positive")

    @property
    def contact_offset(self) -> float:
        """Distance from the tool origin to the mid-finger contact point."""
        return self.palm_depth / 2.0 + self.finger_length / 2.0

    def opening_for(self, width: float) -> float:
        return min(width + APPROACH_CLEARANCE, self.max_width)


@dataclass(frozen=True)
class ArmConfig:
    q1: float
    q2: float
    q3: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.q1, self.q2, self.q3)


@dataclass(frozen=True)
class FeasibilityLabel:
    feasible: bool
    reason: str  # ok | no_ik | collision

    def __post_init__(self) -> None:
        if self.reason not in ("ok", "no_ik", "collision"):
            raise ValueError(f"unknown reason {self.reason!r}")
        if self.feasible != (self.reason == "ok"):
            raise ValueError("feasible must be true exactly when reason is ok")


def joint_points(arm: ArmGeometry, cfg: ArmConfig) -> np.ndarray:
    """Base, elbow, wrist, and tool points of the FK chain, shape (4, 2)."""
    l1, l2, l3 = arm.link_lengths
    a1 = cfg.q1
    a2 = a1 + cfg.q2
    a3 = a2 + cfg.q3
    bx, by = arm.base
    p1 = (bx + l1 * math.cos(a1), by + l1 * math.sin(a1))
    p2 = (p1[0] + l2 * math.cos(a2), p1[1] + l2 * math.sin(a2))
    p3 = (p2[0] + l3 * math.cos(a3), p2[1] + l3 * math.sin(a3))
    return np.array([(bx, by), p1, p2, p3])


def forward_kinematics(arm: ArmGeometry, cfg: ArmConfig) -> Se2Pose:
    """Tool-frame pose: gripper palm center, heading q1+q2+q3."""
    pts = joint_points(arm, cfg)
    return Se2Pose(pts[3, 0], pts[3, 1], cfg.q1 + cfg.q2 + cfg.q3)


def _within_limits(arm: ArmGeometry, q: tuple[float, float, float]) -> bool:
    for qi, (lo, hi) in zip(q, arm.joint_limits):
        if qi < lo - 1e-12 or qi > hi + 1e-12:
            return False
    return True


def inverse_kinematics(arm: ArmGeometry, target: Se2Pose) -> list[ArmConfig]:
    """All analytic solutions reaching the target tool pose.

    The wrist point is the target position pulled back by l3 along the
    target heading; (q1, q2) solve the two-link subproblem with up to two
    elbow branches, and q3 absorbs the remaining heading. An empty list
    means the target is unreachable (outside the wrist annulus or every
    branch violates a joint limit); that is a valid "no IK" outcome, not
    an error.
    """
    l1, l2, l3 = arm.link_lengths
    hx, hy = math.cos(target.theta), math.sin(target.theta)
    wx = target.x - l3 * hx - arm.base[0]
    wy = target.y - l3 * hy - arm.base[1]
    r2 = wx * wx + wy * wy
    r = math.sqrt(r2)
    if r > l1 + l2 + _DEGENERATE_TOL or r < abs(l1 - l2) - _DEGENERATE_TOL:
        return []
    c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c2 = max(-1.0, min(1.0, c2))
    degenerate = r >= l1 + l2 - _DEGENERATE_TOL or r <= abs(l1 - l2) + _DEGENERATE_TOL
    base_q2 = math.acos(c2)
    branches = (base_q2,) if degenerate or base_q2 == 0.0 else (base_q2, -base_q2)
    solutions = []
    phi = math.atan2(wy, wx)
    for q2 in branches:
        q1 = phi - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
        q3 = target.theta - q1 - q2
        q = (wrap_pi(q1), wrap_pi(q2), wrap_pi(q3))
        if _within_limits(arm, q):
            solutions.append(ArmConfig(*q))
    return solutions


def _rect_on_segment(p0x, p0y, p1x, p1y, width: float) -> np.ndarray:
    """CCW rectangle of the given full width centered on the segment."""
    dx, dy = p1x - p0x, p1y - p0y
    n = math.hypot(dx, dy)
    ux, uy = dx / n, dy / n
    hx, hy = -uy * width / 2.0, ux * width / 2.0
    return np.array(
        [
            (p0x - hx, p0y - hy),
            (p1x - hx, p1y - hy),
            (p1x + hx, p1y + hy),
            (p0x + hx, p0y + hy),
        ]
    )


def _gripper_rects(grip: GripperGeometry, tool: Se2Pose, width: float) -> list[np.ndarray]:
    """Palm and finger rectangles in the world frame.

    Local frame: palm spans x in [-pd/2, pd/2]; fingers span
    x in [pd/2, pd/2 + fl] with inner faces at y = +-width/2. The channel
    between the fingers is deliberately open so the jaws may straddle the
    object.
    """
    pd, fl, ft = grip.palm_depth, grip.finger_length, grip.finger_thickness
    half = width / 2.0
    local = [
        np.array([(-pd / 2, -half - ft), (pd / 2, -half - ft), (pd / 2, half + ft), (-pd / 2, half + ft)]),
        np.array([(pd / 2, half), (pd / 2 + fl, half), (pd / 2 + fl, half + ft), (pd / 2, half + ft)]),
        np.array([(pd / 2, -half - ft), (pd / 2 + fl, -half - ft), (pd / 2 + fl, -half), (pd / 2, -half)]),
    ]
    c, s = math.cos(tool.theta), math.sin(tool.theta)
    rot = np.array([[c, -s], [s, c]])
    t = np.array([tool.x, tool.y])
    return [r @ rot.T + t for r in local]


def gripper_occupancy(grip: GripperGeometry, tool_pose: Se2Pose, width: float) -> list[Polygon]:
    """World-frame palm and finger rectangles at the given jaw opening."""
    if width < 0 or width > grip.max_width + 1e-12:
        raise ValueError(f"width {width} outside [0, {grip.max_width}]")
    return [Polygon(r) for r in _gripper_rects(grip, tool_pose, width)]


def _arm_rects(arm: ArmGeometry, cfg: ArmConfig) -> list[np.ndarray]:
    pts = joint_points(arm, cfg)
    return [
        _rect_on_segment(pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1], arm.link_width)
        for i in range(3)
    ]


def arm_occupancy(arm: ArmGeometry, cfg: ArmConfig) -> list[Polygon]:
    """Three link rectangles placed by the FK chain."""
    if not _within_limits(arm, cfg.as_tuple()):
        raise ValueError("configuration violates joint limits")
    return [Polygon(r) for r in _arm_rects(arm, cfg)]


class PoseContext:
    """World-frame obstacle and object pieces cached for one object pose,
    reused across all candidates labeled at that pose."""

    __slots__ = ("object_pose", "pieces", "centers", "radii")

    def __init__(self, world: "WorldModel", outline: Polygon, object_pose: Se2Pose) -> None:
        self.object_pose = object_pose
        c, s = math.cos(object_pose.theta), math.sin(object_pose.theta)
        rot_t = np.array([[c, s], [-s, c]])
        t = np.array([object_pose.x, object_pose.y])
        pieces = [p @ rot_t + t for p in outline.convex_pieces()]
        pieces.extend(world.obstacle_pieces())
        self.pieces = pieces
        self.centers = np.array([p.mean(axis=0) for p in pieces])
        self.radii = np.array(
            [float(np.max(np.linalg.norm(p - c_, axis=1))) for p, c_ in zip(pieces, self.centers)]
        )

    def collides(self, rects: list[np.ndarray]) -> bool:
        for rect in rects:
            center = rect.mean(axis=0)
            radius = float(np.max(np.linalg.norm(rect - center, axis=1)))
            dist = np.linalg.norm(self.centers - center, axis=1)
            for k in np.flatnonzero(dist <= self.radii + radius):
                if convex_intersect(rect, self.pieces[k]):
                    return True
        return False


def check_feasible(
    world: "WorldModel",
    outline: Polygon,
    object_pose: Se2Pose,
    grasp: "GraspCandidate",
    *,
    context: PoseContext | None = None,
) -> FeasibilityLabel:
    """Label one grasp candidate at an object pose.

    The world grasp pose is the object pose composed with the candidate's
    local pose. No IK solution -> (false, no_ik). Otherwise a branch is
    collision-free when the gripper at the pre-contact opening plus the arm
    links (if enabled) clear both the object and every static obstacle; any
    clear branch -> (true, ok), else (false, collision).
    """
    from .geometry import compose

    world_tool = compose(object_pose, grasp.pose)
    solutions = inverse_kinematics(world.arm, world_tool)
    if not solutions:
        return FeasibilityLabel(False, "no_ik")
    ctx = context if context is not None else PoseContext(world, outline, object_pose)
    opening = world.gripper.opening_for(grasp.width)
    grip_rects = _gripper_rects(world.gripper, world_tool, opening)
    if ctx.collides(grip_rects):
        return FeasibilityLabel(False, "collision")
    if not world.check_arm_links:
        return FeasibilityLabel(True, "ok")
    for cfg in solutions:
        if not ctx.collides(_arm_rects(world.arm, cfg)):
            return FeasibilityLabel(True, "ok")
    return FeasibilityLabel(False, "collision")
