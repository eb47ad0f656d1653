"""Object models, grasp candidates, pose sampling, and ground-truth labeling.

Object outlines live in the object's canonical frame with the area centroid
at the origin. Grasp candidates are gripper tool poses in that frame, paired
with the jaw width at contact. Labeling runs the exact oracle from the robot
module; every labeling call is pure, so it parallelizes across poses.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatchError, UsageError
from .geometry import Polygon, Se2Pose, polygons_intersect, transform_polygon
from .robot import ArmGeometry, GripperGeometry, PoseContext, check_feasible, gripper_occupancy
from .rng import substream

DEFAULT_FRICTION_HALF_ANGLE = 0.15

# Workspace sampling lattice, matching the desk-scale sampling space.
POSITION_RESOLUTION = 0.001
ANGLE_RESOLUTION = 0.01

# Antipodal edge pairs whose projected overlap is shorter than this are
# skipped; they would only admit fragile corner pinches.
_MIN_PAIR_OVERLAP = 0.004
_CONTACT_EDGE_MARGIN = 0.002


@dataclass(frozen=True)
class ObjectModel:
    """A named outline in its canonical frame (centroid at the origin)."""

    name: str
    outline: Polygon
    friction_half_angle: float = DEFAULT_FRICTION_HALF_ANGLE

    def __post_init__(self) -> None:
        c = self.outline.centroid
        if float(np.hypot(c[0], c[1])) > 1e-9:
            raise ValueError(f"outline centroid {c} is not at the origin")


@dataclass(frozen=True)
class GraspCandidate:
    """Gripper tool pose in the object frame plus jaw width at contact."""

    pose: Se2Pose
    width: float
    width_normalized: float


def _recenter(verts: np.ndarray) -> np.ndarray:
    poly = Polygon(verts)
    return verts - poly.centroid


def load_object_outline(path: str | Path) -> Polygon:
    """Read a plain-text outline: one "x y" vertex pair per line, meters,
    counter-clockwise. The outline is recentered onto its area centroid."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise UsageError(f"bad outline line {line!r} in {path}")
        rows.append((float(parts[0]), float(parts[1])))
    if len(rows) < 3:
        raise UsageError(f"outline {path} has fewer than 3 vertices")
    return Polygon(_recenter(np.array(rows)))


_BUILTIN_OBJECTS = ("bottle", "mug", "bunny", "drill")


def list_builtin_objects() -> tuple[str, ...]:
    return _BUILTIN_OBJECTS


def builtin_object(name: str, friction_half_angle: float = DEFAULT_FRICTION_HALF_ANGLE) -> ObjectModel:
    if name not in _BUILTIN_OBJECTS:
        raise UsageError(f"unknown object {name!r}; available: {', '.join(_BUILTIN_OBJECTS)}")
    ref = resources.files("sharedgrasp").joinpath(f"objects/{name}.txt")
    with resources.as_file(ref) as path:
        outline = load_object_outline(path)
    return ObjectModel(name=name, outline=outline, friction_half_angle=friction_half_angle)


def _default_obstacles() -> tuple[Polygon, ...]:
    # Two rear wall segments overlapping the workspace top plus one fixed
    # block inside it, so collisions (not only reach) discriminate poses.
    return (
        Polygon([(-0.50, 0.585), (-0.10, 0.585), (-0.10, 0.625), (-0.50, 0.625)]),
        Polygon([(0.10, 0.585), (0.50, 0.585), (0.50, 0.625), (0.10, 0.625)]),
        Polygon([(0.05, 0.30), (0.13, 0.30), (0.13, 0.38), (0.05, 0.38)]),
    )


@dataclass
class WorldModel:
    """Arm, gripper, static obstacles, and the pose-sampling workspace."""

    arm: ArmGeometry = field(default_factory=ArmGeometry)
    gripper: GripperGeometry = field(default_factory=GripperGeometry)
    obstacles: tuple[Polygon, ...] = field(default_factory=_default_obstacles)
    workspace: tuple[tuple[float, float], tuple[float, float]] = ((-0.45, 0.45), (0.1, 0.6))
    check_arm_links: bool = True
    _pieces: list[np.ndarray] | None = field(default=None, init=False, repr=False, compare=False)
    _digest: str | None = field(default=None, init=False, repr=False, compare=False)

    def obstacle_pieces(self) -> list[np.ndarray]:
        if self._pieces is None:
            pieces: list[np.ndarray] = []
            for obs in self.obstacles:
                pieces.extend(obs.convex_pieces())
            self._pieces = pieces
        return self._pieces

    def to_dict(self) -> dict:
        return {
            "arm": {
                "base": list(self.arm.base),
                "link_lengths": list(self.arm.link_lengths),
                "link_width": self.arm.link_width,
                "joint_limits": [list(iv) for iv in self.arm.joint_limits],
            },
            "gripper": {
                "finger_length": self.gripper.finger_length,
                "finger_thickness": self.gripper.finger_thickness,
                "palm_depth": self.gripper.palm_depth,
                "max_width": self.gripper.max_width,
            },
            "obstacles": [o.vertices.tolist() for o in self.obstacles],
            "workspace": [list(self.workspace[0]), list(self.workspace[1])],
            "check_arm_links": self.check_arm_links,
        }

    def digest(self) -> str:
        if self._digest is None:
            payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
            self._digest = hashlib.sha256(payload.encode()).hexdigest()
        return self._digest

    @staticmethod
    def from_dict(d: dict) -> "WorldModel":
        arm = ArmGeometry(
            base=tuple(d["arm"]["base"]),
            link_lengths=tuple(d["arm"]["link_lengths"]),
            link_width=d["arm"]["link_width"],
            joint_limits=tuple(tuple(iv) for iv in d["arm"]["joint_limits"]),
        )
        grip = GripperGeometry(**d["gripper"])
        return WorldModel(
            arm=arm,
            gripper=grip,
            obstacles=tuple(Polygon(v) for v in d["obstacles"]),
            workspace=(tuple(d["workspace"][0]), tuple(d["workspace"][1])),
            check_arm_links=d.get("check_arm_links", True),
        )


def default_world() -> WorldModel:
    return WorldModel()


def _candidate_hash(candidates: tuple[GraspCandidate, ...]) -> str:
    payload = json.dumps(
        [[c.pose.x, c.pose.y, c.pose.theta, c.width, c.width_normalized] for c in candidates],
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _bit_reversed_order(n: int) -> np.ndarray:
    """Deterministic low-discrepancy ordering of range(n): sort indices by
    their van der Corput (bit-reversal) value. Prefixes of the ordering are
    evenly spread over the original sequence, so prefix subsets are both
    stratified and nested."""
    bits = max(1, (n - 1).bit_length())
    keys = np.zeros(n, dtype=np.uint64)
    idx = np.arange(n, dtype=np.uint64)
    for b in range(bits):
        keys |= ((idx >> np.uint64(b)) & np.uint64(1)) << np.uint64(bits - 1 - b)
    return np.argsort(keys, kind="stable")


@dataclass(frozen=True)
class GraspCandidateSet:
    """Ordered, hash-guarded grasp candidates for one object."""

    object: ObjectModel
    gripper: GripperGeometry
    candidates: tuple[GraspCandidate, ...]
    seed: int
    content_hash: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "content_hash", _candidate_hash(self.candidates))

    def __len__(self) -> int:
        return len(self.candidates)

    def grasp_block(self) -> np.ndarray:
        """Per-candidate grasp features [gx, gy, gtheta, width_normalized], shape (N, 4)."""
        cached = self.__dict__.get("_block")
        if cached is None:
            cached = np.array(
                [[c.pose.x, c.pose.y, c.pose.theta, c.width_normalized] for c in self.candidates]
            )
            cached.setflags(write=False)
            object.__setattr__(self, "_block", cached)
        return cached

    def subset(self, count: int) -> "GraspCandidateSet":
        """Stratified subsample of the first `count` candidates in
        bit-reversal order; subsets of increasing count are nested."""
        if count >= len(self.candidates):
            return self
        order = _bit_reversed_order(len(self.candidates))
        keep = np.sort(order[:count])
        return GraspCandidateSet(
            object=self.object,
            gripper=self.gripper,
            candidates=tuple(self.candidates[i] for i in keep),
            seed=self.seed,
        )

    def to_json(self) -> str:
        doc = {
            "object_name": self.object.name,
            "gripper": {
                "finger_length": self.gripper.finger_length,
                "finger_thickness": self.gripper.finger_thickness,
                "palm_depth": self.gripper.palm_depth,
                "max_width": self.gripper.max_width,
            },
            "seed": self.seed,
            "candidates": [
                {"x": c.pose.x, "y": c.pose.y, "theta": c.pose.theta, "width": c.width}
                for c in self.candidates
            ],
            "content_hash": self.content_hash,
        }
        return json.dumps(doc, indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @staticmethod
    def load(path: str | Path, obj: ObjectModel | None = None) -> "GraspCandidateSet":
        doc = json.loads(Path(path).read_text())
        grip = GripperGeometry(**doc["gripper"])
        if obj is None:
            obj = builtin_object(doc["object_name"])
        elif obj.name != doc["object_name"]:
            raise ArtifactMismatchError(
                f"candidate set is for {doc['object_name']!r}, got object {obj.name!r}"
            )
        cands = tuple(
            GraspCandidate(
                pose=Se2Pose(c["x"], c["y"], c["theta"]),
                width=c["width"],
                width_normalized=c["width"] / grip.max_width,
            )
            for c in doc["candidates"]
        )
        cset = GraspCandidateSet(object=obj, gripper=grip, candidates=cands, seed=doc["seed"])
        if cset.content_hash != doc["content_hash"]:
            raise ArtifactMismatchError(f"candidate file {path} failed its content hash check")
        return cset


def _edge_data(outline: Polygon):
    v = outline.vertices
    nxt = np.roll(v, -1, axis=0)
    d = nxt - v
    lengths = np.hypot(d[:, 0], d[:, 1])
    tangents = d / lengths[:, None]
    normals = np.stack((tangents[:, 1], -tangents[:, 0]), axis=1)  # outward for CCW
    return v, nxt, tangents, normals, lengths


def _candidate_collision_free(
    obj: ObjectModel, gripper: GripperGeometry, pose: Se2Pose, width: float
) -> bool:
    occupancy = gripper_occupancy(gripper, pose, gripper.opening_for(width))
    return not any(polygons_intersect(rect, obj.outline) for rect in occupancy)


def sample_antipodal_grasps(
    obj: ObjectModel, gripper: GripperGeometry, count: int, seed: int
) -> GraspCandidateSet:
    """Enumerate antipodal edge pairs, sample contact pairs along their
    overlapping spans, build tool poses for both approach sides, keep the
    candidates that are collision-free at the canonical pose, and trim to
    `count` by deterministic stratified subsampling.

    Deterministic for a fixed seed; returns fewer than `count` candidates
    when the geometry admits fewer.
    """
    if count < 1:
        raise UsageError("count must be >= 1")
    verts, nxt, tangents, normals, lengths = _edge_data(obj.outline)
    n_edges = len(verts)
    cos_tol = math.cos(obj.friction_half_angle)
    pairs = []
    for i in range(n_edges):
        for j in range(i + 1, n_edges):
            if float(normals[i] @ -normals[j]) >= cos_tol:
                pairs.append((i, j))

    # Contact depth measured from the fingertip toward the palm, as a
    # fraction of finger length. Varying it is the planar stand-in for the
    # rotational diversity a 3D sampler gets around the antipodal axis, and
    # it admits fingertip pinches on parts the palm would otherwise strike.
    depth_fractions = (0.2, 0.35, 0.5, 0.65, 0.8)
    reaches = tuple(
        gripper.palm_depth / 2.0 + gripper.finger_length * (1.0 - f) for f in depth_fractions
    )

    def generate(spacing: float, attempt: int) -> list[GraspCandidate]:
        rng = substream(seed, f"grasps:attempt{attempt}")
        out: list[GraspCandidate] = []
        for (i, j) in pairs:
            t = tangents[i]
            si = np.array([float(verts[i] @ t), float(nxt[i] @ t)])
            sj = np.array([float(verts[j] @ t), float(nxt[j] @ t)])
            lo = max(si.min(), sj.min()) + _CONTACT_EDGE_MARGIN
            hi = min(si.max(), sj.max()) - _CONTACT_EDGE_MARGIN
            if hi - lo < _MIN_PAIR_OVERLAP:
                continue
            n_samples = max(1, int((hi - lo) / spacing))
            jitter = float(rng.uniform(0.0, 1.0))
            for k in range(n_samples):
                s = lo + (hi - lo) * (k + jitter) / n_samples
                pi = _point_at_projection(verts[i], nxt[i], t, si, s)
                pj = _point_at_projection(verts[j], nxt[j], t, sj, s)
                if pi is None or pj is None:
                    continue
                delta = pj - pi
                width = float(np.hypot(delta[0], delta[1]))
                if width <= 1e-6 or width > gripper.max_width:
                    continue
                # delta runs from edge i through the interior to edge j, so it
                # aligns with -n_i and +n_j when the pinch is antipodal.
                closing = delta / width
                if float(closing @ -normals[i]) < cos_tol or float(closing @ normals[j]) < cos_tol:
                    continue
                mid = (pi + pj) / 2.0
                approach = np.array([closing[1], -closing[0]])
                for reach in reaches:
                    for flip in (0, 1):
                        d = approach if flip == 0 else -approach
                        origin = mid - d * reach
                        pose = Se2Pose(origin[0], origin[1], math.atan2(d[1], d[0]))
                        if _candidate_collision_free(obj, gripper, pose, width):
                            out.append(
                                GraspCandidate(
                                    pose=pose,
                                    width=width,
                                    width_normalized=width / gripper.max_width,
                                )
                            )
        return out

    raw: list[GraspCandidate] = []
    spacing = 0.02
    for attempt in range(9):
        raw = generate(spacing, attempt)
        if len(raw) >= count or spacing <= 0.0002:
            break
        spacing /= 2.0

    if len(raw) > count:
        order = _bit_reversed_order(len(raw))
        keep = np.sort(order[:count])
        raw = [raw[i] for i in keep]
    return GraspCandidateSet(object=obj, gripper=gripper, candidates=tuple(raw), seed=seed)


def _point_at_projection(v0, v1, t, span, s):
    """Point on segment v0->v1 whose projection on axis t equals s."""
    denom = span[1] - span[0]
    if abs(denom) < 1e-12:
        return None
    u = (s - span[0]) / denom
    if u < -1e-9 or u > 1.0 + 1e-9:
        return None
    return v0 + (v1 - v0) * u


def sample_object_pose(world: WorldModel, rng: np.random.Generator) -> Se2Pose:
    """Uniform draw from the workspace lattice: positions on a 1 mm grid,
    heading on a 0.01 rad grid in [0, 2*pi)."""
    (xlo, xhi), (ylo, yhi) = world.workspace
    nx = int(round((xhi - xlo) / POSITION_RESOLUTION))
    ny = int(round((yhi - ylo) / POSITION_RESOLUTION))
    nt = int(TWO_PI_LATTICE)
    kx = int(rng.integers(0, nx + 1))
    ky = int(rng.integers(0, ny + 1))
    kt = int(rng.integers(0, nt + 1))
    x = min(max((kx + round(xlo / POSITION_RESOLUTION)) * POSITION_RESOLUTION, xlo), xhi)
    y = min(max((ky + round(ylo / POSITION_RESOLUTION)) * POSITION_RESOLUTION, ylo), yhi)
    theta = kt * ANGLE_RESOLUTION
    return Se2Pose(x, y, theta)


TWO_PI_LATTICE = math.floor((2.0 * math.pi) / ANGLE_RESOLUTION)  # 628


def object_world_polygon(obj: ObjectModel, pose: Se2Pose) -> Polygon:
    return transform_polygon(obj.outline, pose)


def pose_is_valid(world: WorldModel, obj: ObjectModel, pose: Se2Pose) -> bool:
    """A pose is valid when the object itself clears every static obstacle."""
    placed = object_world_polygon(obj, pose)
    return not any(polygons_intersect(placed, obs) for obs in world.obstacles)


def sample_valid_pose(world: WorldModel, obj: ObjectModel, rng: np.random.Generator) -> Se2Pose:
    while True:
        pose = sample_object_pose(world, rng)
        if pose_is_valid(world, obj, pose):
            return pose


def label_feasible(
    world: WorldModel,
    obj: ObjectModel,
    candidates: GraspCandidateSet,
    pose: Se2Pose,
) -> tuple[np.ndarray, bool]:
    """Oracle feasibility mask over all candidates at one pose.

    Returns (mask, pose_valid). Poses where the object itself collides with
    an obstacle get an all-false mask and pose_valid=False.
    """
    if candidates.object.name != obj.name:
        raise ArtifactMismatchError(
            f"candidate set belongs to {candidates.object.name!r}, not {obj.name!r}"
        )
    n = len(candidates)
    mask = np.zeros(n, dtype=bool)
    if not pose_is_valid(world, obj, pose):
        return mask, False
    ctx = PoseContext(world, obj.outline, pose)
    for i, cand in enumerate(candidates.candidates):
        mask[i] = check_feasible(world, obj.outline, pose, cand, context=ctx).feasible
    return mask, True


def label_shared(
    world: WorldModel,
    obj: ObjectModel,
    candidates: GraspCandidateSet,
    pose_init: Se2Pose,
    pose_goal: Se2Pose,
) -> np.ndarray:
    """Ground-truth shared mask: feasible at both poses, element-wise."""
    mask_init, valid_init = label_feasible(world, obj, candidates, pose_init)
    if not valid_init or not mask_init.any():
        return np.zeros(len(candidates), dtype=bool)
    mask_goal, valid_goal = label_feasible(world, obj, candidates, pose_goal)
    if not valid_goal:
        return np.zeros(len(candidates), dtype=bool)
    return mask_init & mask_goal
