"""Planar rigid transforms and simple-polygon primitives.

All values are immutable after construction and every operation is a pure
function, so everything here is safe to use concurrently. Lengths are in
meters, angles in radians. Angles are stored normalized to [0, 2*pi).

Collision convention: touching boundaries count as intersecting, so the
feasibility oracle never labels a grazing contact as collision-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Exact single-step operations (compose, transforms) hold to EXACT_TOL;
# iterated or chained constructions are only promised to ITER_TOL.
EXACT_TOL = 1e-12
ITER_TOL = 1e-9


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    t = math.fmod(float(theta), TWO_PI)
    if t < 0.0:
        t += TWO_PI
    if t >= TWO_PI:  # fmod of a tiny negative can land exactly on 2*pi
        t -= TWO_PI
    return t


def wrap_pi(theta: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    t = normalize_angle(theta)
    return t - TWO_PI if t >= math.pi else t


def angle_distance(a: float, b: float) -> float:
    """Circular distance between two angles, in [0, pi]."""
    d = abs(normalize_angle(a) - normalize_angle(b))
    return min(d, TWO_PI - d)


@dataclass(frozen=True)
class Se2Pose:
    """A planar rigid transform (x, y, theta)."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @staticmethod
    def identity() -> "Se2Pose":
        return Se2Pose(0.0, 0.0, 0.0)

    def apply(self, px: float, py: float) -> tuple[float, float]:
        """Map a point through this transform."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (self.x + c * px - s * py, self.y + s * px + c * py)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def compose(a: Se2Pose, b: Se2Pose) -> Se2Pose:
    """Rigid transform equal to applying b first, then a."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Se2Pose(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def invert(p: Se2Pose) -> Se2Pose:
    """Inverse transform: compose(p, invert(p)) is the identity."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Se2Pose(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.theta)


def poses_close(a: Se2Pose, b: Se2Pose, tol: float = EXACT_TOL) -> bool:
    return (
        abs(a.x - b.x) <= tol
        and abs(a.y - b.y) <= tol
        and angle_distance(a.theta, b.theta) <= tol
    )


def _signed_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_touch(p1, p2, q1, q2) -> bool:
    """True if closed segments p1p2 and q1q2 share at least one point."""
    d1 = _orient(*q1, *q2, *p1)
    d2 = _orient(*q1, *q2, *p2)
    d3 = _orient(*p1, *p2, *q1)
    d4 = _orient(*p1, *p2, *q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True

    def on_segment(a, b, c) -> bool:
        if _orient(*a, *b, *c) != 0:
            return False
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    return (
        on_segment(q1, q2, p1)
        or on_segment(q1, q2, p2)
        or on_segment(p1, p2, q1)
        or on_segment(p1, p2, q2)
    )


def _is_simple(verts: np.ndarray) -> bool:
    """No contact between non-adjacent edges (adjacent edges share a vertex)."""
    n = len(verts)
    for i in range(n):
        a1, a2 = verts[i], verts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = verts[j], verts[(j + 1) % n]
            if _segments_touch(tuple(a1), tuple(a2), tuple(b1), tuple(b2)):
                return False
    return True


def _is_convex(verts: np.ndarray) -> bool:
    d = np.roll(verts, -1, axis=0) - verts
    cross = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    return bool(np.all(cross >= -EXACT_TOL))


def _point_strictly_in_triangle(p, a, b, c, eps: float = 1e-14) -> bool:
    d1 = _orient(*a, *b, *p)
    d2 = _orient(*b, *c, *p)
    d3 = _orient(*c, *a, *p)
    return d1 > eps and d2 > eps and d3 > eps


def _ear_clip(verts: np.ndarray) -> list[tuple[int, ...]]:
    """Triangulate a simple CCW polygon into index triples."""
    n = len(verts)
    idx = list(range(n))
    tris: list[tuple[int, ...]] = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * n:
            raise ValueError("ear clipping failed; polygon may be degenerate")
        clipped = False
        for k in range(len(idx)):
            ip, ic, inx = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = verts[ip], verts[ic], verts[inx]
            if _orient(*a, *b, *c) <= EXACT_TOL:  # reflex or collinear corner
                continue
            blocked = False
            for other in idx:
                if other in (ip, ic, inx):
                    continue
                if _point_strictly_in_triangle(verts[other], a, b, c, eps=-EXACT_TOL):
                    blocked = True
                    break
            if blocked:
                continue
            tris.append((ip, ic, inx))
            del idx[k]
            clipped = True
            break
        if not clipped:
            raise ValueError("ear clipping failed; polygon may be degenerate")
    tris.append(tuple(idx))
    return tris


def _merge_convex(verts: np.ndarray, tris: list[tuple[int, ...]]) -> list[list[int]]:
    """Greedily merge triangles across shared edges while the union stays convex."""
    loops: list[list[int]] = [list(t) for t in tris]

    def loop_convex(loop: list[int]) -> bool:
        m = len(loop)
        for i in range(m):
            a, b, c = verts[loop[i - 1]], verts[loop[i]], verts[loop[(i + 1) % m]]
            if _orient(*a, *b, *c) < -EXACT_TOL:
                return False
        return True

    merged = True
    while merged:
        merged = False
        for i in range(len(loops)):
            for j in range(i + 1, len(loops)):
                la, lb = loops[i], loops[j]
                shared = None
                for k in range(len(la)):
                    u, v = la[k], la[(k + 1) % len(la)]
                    for m in range(len(lb)):
                        if lb[m] == v and lb[(m + 1) % len(lb)] == u:
                            shared = (k, m)
                            break
                    if shared:
                        break
                if not shared:
                    continue
                k, m = shared
                # Splice lb's path v..u (exclusive) into la between u and v.
                path = [lb[(m + 1 + t) % len(lb)] for t in range(1, len(lb) - 1)]
                candidate = la[: k + 1] + path + la[k + 1 :]
                if len(set(candidate)) == len(candidate) and loop_convex(candidate):
                    loops[i] = candidate
                    del loops[j]
                    merged = True
                    break
            if merged:
                break
    return loops


class Polygon:
    """A simple polygon with counter-clockwise vertices.

    Vertices are held in a read-only float64 array of shape (n, 2). The
    convex decomposition (used by the collision predicate) is computed
    lazily and cached; rigid transforms reuse the canonical decomposition.
    """

    __slots__ = ("vertices", "_pieces", "_bounding")

    def __init__(self, vertices) -> None:
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon vertices must be finite")
        if _signed_area(v) <= 0.0:
            raise ValueError("vertices must be counter-clockwise with positive area")
        if not _is_simple(v):
            raise ValueError("polygon must be simple (no self-intersection)")
        v.setflags(write=False)
        self.vertices = v
        self._pieces: tuple[np.ndarray, ...] | None = None
        self._bounding: tuple[np.ndarray, float] | None = None

    def __len__(self) -> int:
        return len(self.vertices)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon) and np.array_equal(self.vertices, other.vertices)

    def __repr__(self) -> str:
        return f"Polygon({self.vertices.tolist()!r})"

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        cross = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
        return (v + nxt).T @ cross / (6.0 * self.area)

    @property
    def is_convex(self) -> bool:
        return _is_convex(self.vertices)

    def convex_pieces(self) -> tuple[np.ndarray, ...]:
        """Convex decomposition: the polygon itself if convex, else merged
        ear-clip triangles. Pieces tile the polygon exactly."""
        if self._pieces is None:
            if self.is_convex:
                self._pieces = (self.vertices,)
            else:
                tris = _ear_clip(self.vertices)
                loops = _merge_convex(self.vertices, tris)
                pieces = []
                for loop in loops:
                    arr = self.vertices[loop].copy()
                    arr.setflags(write=False)
                    pieces.append(arr)
                self._pieces = tuple(pieces)
        return self._pieces

    def bounding_circle(self) -> tuple[np.ndarray, float]:
        """Centroid-anchored enclosing circle, used as a cheap collision precheck."""
        if self._bounding is None:
            c = self.centroid
            r = float(np.max(np.linalg.norm(self.vertices - c, axis=1)))
            self._bounding = (c, r)
        return self._bounding


def transform_polygon(p: Polygon, pose: Se2Pose) -> Polygon:
    """Rotate by pose.theta then translate by (pose.x, pose.y). CCW preserved."""
    out = Polygon(transform_vertices(p.vertices, pose))
    if p._pieces is not None and len(p._pieces) > 1:
        pieces = []
        for piece in p._pieces:
            arr = transform_vertices(piece, pose)
            arr.setflags(write=False)
            pieces.append(arr)
        out._pieces = tuple(pieces)
    return out


def transform_vertices(verts: np.ndarray, pose: Se2Pose) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    rot = np.array([[c, -s], [s, c]])
    return verts @ rot.T + np.array([pose.x, pose.y])


def convex_intersect(va: np.ndarray, vb: np.ndarray) -> bool:
    """Separating-axis test for two convex CCW vertex arrays.

    Touching boundaries count as intersecting (separation must be strict).
    """
    amin, amax = va.min(axis=0), va.max(axis=0)
    bmin, bmax = vb.min(axis=0), vb.max(axis=0)
    if amax[0] < bmin[0] or bmax[0] < amin[0] or amax[1] < bmin[1] or bmax[1] < amin[1]:
        return False
    ea = np.roll(va, -1, axis=0) - va
    eb = np.roll(vb, -1, axis=0) - vb
    axes = np.concatenate(
        (np.stack((-ea[:, 1], ea[:, 0]), axis=1), np.stack((-eb[:, 1], eb[:, 0]), axis=1))
    )
    pa = va @ axes.T
    pb = vb @ axes.T
    return not (
        bool(np.any(pa.max(axis=0) < pb.min(axis=0)))
        or bool(np.any(pb.max(axis=0) < pa.min(axis=0)))
    )


def polygons_intersect(a: Polygon, b: Polygon) -> bool:
    """True iff the closed regions overlap or touch. Non-convex polygons are
    tested through their convex decompositions, pairwise."""
    (ca, ra) = a.bounding_circle()
    (cb, rb) = b.bounding_circle()
    if float(np.hypot(*(ca - cb))) > ra + rb:
        return False
    for pa in a.convex_pieces():
        for pb in b.convex_pieces():
            if convex_intersect(pa, pb):
                return True
    return False
