"""Record formats, seeded generation, pose-level splits, and serialization.

A bundle stores the oracle labels for ALL candidates at each sampled pose
(positives and negatives alike), because the training loss normalizes over
every object-grasp pair encountered, regardless of feasibility. Class
imbalance is handled downstream by stratified batch assembly, never by
discarding records here.

File format: one JSON header line followed by one JSON record per line.
The header carries the candidate-set hash, world digest, seed, and counts;
loading verifies them so incompatible artifacts cannot be mixed silently.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatchError, UsageError
from .geometry import Se2Pose
from .rng import substream
from .scene import (
    GraspCandidateSet,
    ObjectModel,
    WorldModel,
    label_feasible,
    label_shared,
    sample_object_pose,
)

_FORMAT = "sharedgrasp-dataset-v1"

SPLIT_TAGS = ("full", "train", "test", "val")


@dataclass(frozen=True)
class FeasibilityRecord:
    pose: Se2Pose
    grasp_index: int
    label: bool


@dataclass(frozen=True)
class SharedRecord:
    pose_init: Se2Pose
    pose_goal: Se2Pose
    grasp_index: int
    label: bool


@dataclass
class DatasetBundle:
    """Labeled records tied to one candidate set and world."""

    kind: str  # feasibility | shared
    candidate_set_hash: str
    world_digest: str
    seed: int
    records: list
    split_tag: str = "full"
    _arrays: dict | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("feasibility", "shared"):
            raise UsageError(f"unknown dataset kind {self.kind!r}")
        if self.split_tag not in SPLIT_TAGS:
            raise UsageError(f"unknown split tag {self.split_tag!r}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def positive_count(self) -> int:
        return sum(1 for r in self.records if r.label)

    def group_keys(self) -> list[tuple]:
        """Pose identity per record; contiguous runs of one key form a group."""
        if self.kind == "feasibility":
            return [r.pose.as_tuple() for r in self.records]
        return [r.pose_init.as_tuple() + r.pose_goal.as_tuple() for r in self.records]

    def groups(self) -> list[tuple[int, int]]:
        """Half-open [start, end) ranges of the contiguous pose groups."""
        keys = self.group_keys()
        bounds = []
        start = 0
        for i in range(1, len(keys) + 1):
            if i == len(keys) or keys[i] != keys[start]:
                bounds.append((start, i))
                start = i
        return bounds

    def to_arrays(self) -> dict:
        """Columnar view used by the encoders; cached."""
        if self._arrays is None:
            labels = np.array([r.label for r in self.records], dtype=bool)
            idx = np.array([r.grasp_index for r in self.records], dtype=np.int64)
            if self.kind == "feasibility":
                poses = np.array([r.pose.as_tuple() for r in self.records])
                self._arrays = {"poses": poses, "grasp_index": idx, "labels": labels}
            else:
                pi = np.array([r.pose_init.as_tuple() for r in self.records])
                pg = np.array([r.pose_goal.as_tuple() for r in self.records])
                self._arrays = {
                    "poses_init": pi,
                    "poses_goal": pg,
                    "grasp_index": idx,
                    "labels": labels,
                }
        return self._arrays

    def serialize(self) -> str:
        header = {
            "format": _FORMAT,
            "kind": self.kind,
            "candidate_set_hash": self.candidate_set_hash,
            "world_digest": self.world_digest,
            "seed": self.seed,
            "split_tag": self.split_tag,
            "n_records": len(self.records),
            "n_poses": len(self.groups()),
            "positive_count": self.positive_count,
        }
        lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
        for r in self.records:
            if self.kind == "feasibility":
                doc = {"pose": list(r.pose.as_tuple()), "grasp": r.grasp_index, "label": int(r.label)}
            else:
                doc = {
                    "pose_init": list(r.pose_init.as_tuple()),
                    "pose_goal": list(r.pose_goal.as_tuple()),
                    "grasp": r.grasp_index,
                    "label": int(r.label),
                }
            lines.append(json.dumps(doc, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def save(bundle: DatasetBundle, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(bundle.serialize())


def load(
    path: str | Path,
    candidates: GraspCandidateSet | None = None,
    world: WorldModel | None = None,
) -> DatasetBundle:
    """Read a bundle, verifying record counts and (when supplied) the
    candidate-set hash and world digest."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise UsageError(f"dataset file {path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != _FORMAT:
        raise UsageError(f"{path} is not a {_FORMAT} file")
    body = lines[1:]
    if len(body) != header["n_records"]:
        raise ArtifactMismatchError(
            f"{path}: header says {header['n_records']} records, body has {len(body)}"
        )
    if candidates is not None and candidates.content_hash != header["candidate_set_hash"]:
        raise ArtifactMismatchError(f"{path}: candidate set hash mismatch")
    if world is not None and world.digest() != header["world_digest"]:
        raise ArtifactMismatchError(f"{path}: world digest mismatch")
    records: list = []
    kind = header["kind"]
    for line in body:
        doc = json.loads(line)
        if kind == "feasibility":
            records.append(
                FeasibilityRecord(Se2Pose(*doc["pose"]), int(doc["grasp"]), bool(doc["label"]))
            )
        else:
            records.append(
                SharedRecord(
                    Se2Pose(*doc["pose_init"]),
                    Se2Pose(*doc["pose_goal"]),
                    int(doc["grasp"]),
                    bool(doc["label"]),
                )
            )
    bundle = DatasetBundle(
        kind=kind,
        candidate_set_hash=header["candidate_set_hash"],
        world_digest=header["world_digest"],
        seed=header["seed"],
        records=records,
        split_tag=header["split_tag"],
    )
    if bundle.positive_count != header["positive_count"]:
        raise ArtifactMismatchError(f"{path}: positive count mismatch")
    return bundle


def generate_feasibility_dataset(
    world: WorldModel,
    obj: ObjectModel,
    candidates: GraspCandidateSet,
    n_records: int,
    seed: int,
) -> DatasetBundle:
    """Sample valid poses and label every candidate at each, flattening to
    (pose, grasp_index, label) records until n_records are collected.

    Records for one pose stay contiguous (the loss needs per-pose grouping);
    the final pose may be truncated. Poses where the object overlaps an
    obstacle are resampled, not recorded.
    """
    if n_records < 1:
        raise UsageError("n_records must be >= 1")
    rng = substream(seed, "poses:feasibility")
    records: list[FeasibilityRecord] = []
    n = len(candidates)
    while len(records) < n_records:
        pose = sample_object_pose(world, rng)
        mask, valid = label_feasible(world, obj, candidates, pose)
        if not valid:
            continue
        take = min(n, n_records - len(records))
        records.extend(FeasibilityRecord(pose, i, bool(mask[i])) for i in range(take))
    return DatasetBundle(
        kind="feasibility",
        candidate_set_hash=candidates.content_hash,
        world_digest=world.digest(),
        seed=seed,
        records=records,
    )


def generate_shared_dataset(
    world: WorldModel,
    obj: ObjectModel,
    candidates: GraspCandidateSet,
    n_records: int,
    seed: int,
) -> DatasetBundle:
    """Like the feasibility generator, over sampled pose pairs with labels
    from the intersection of the two per-pose feasible sets."""
    if n_records < 1:
        raise UsageError("n_records must be >= 1")
    rng = substream(seed, "poses:shared")
    records: list[SharedRecord] = []
    n = len(candidates)

    def valid_pose():
        while True:
            pose = sample_object_pose(world, rng)
            _, ok = label_feasible(world, obj, candidates, pose)
            if ok:
                return pose

    while len(records) < n_records:
        pose_init = valid_pose()
        pose_goal = valid_pose()
        mask = label_shared(world, obj, candidates, pose_init, pose_goal)
        take = min(n, n_records - len(records))
        records.extend(
            SharedRecord(pose_init, pose_goal, i, bool(mask[i])) for i in range(take)
        )
    return DatasetBundle(
        kind="shared",
        candidate_set_hash=candidates.content_hash,
        world_digest=world.digest(),
        seed=seed,
        records=records,
    )


def split(
    bundle: DatasetBundle, fractions: tuple[float, float, float], seed: int
) -> tuple[DatasetBundle, DatasetBundle, DatasetBundle]:
    """Partition at pose granularity into (train, test, val) bundles.

    No pose (or pose pair) ever appears in two splits. Sizes follow the
    cumulative rounding of fractions over the number of pose groups.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise UsageError("need three non-negative fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise UsageError(f"fractions must sum to 1, got {sum(fractions)}")
    groups = bundle.groups()
    order = substream(seed, "split").permutation(len(groups))
    c1 = round(fractions[0] * len(groups))
    c2 = round((fractions[0] + fractions[1]) * len(groups))
    assignment = {}
    for rank, g in enumerate(order):
        assignment[g] = "train" if rank < c1 else ("test" if rank < c2 else "val")
    out = {}
    for tag in ("train", "test", "val"):
        recs: list = []
        for g, (start, end) in enumerate(groups):
            if assignment[g] == tag:
                recs.extend(bundle.records[start:end])
        out[tag] = DatasetBundle(
            kind=bundle.kind,
            candidate_set_hash=bundle.candidate_set_hash,
            world_digest=bundle.world_digest,
            seed=seed,
            records=recs,
            split_tag=tag,
        )
    return out["train"], out["test"], out["val"]


def subsample_groups(bundle: DatasetBundle, ratio: float, seed: int) -> DatasetBundle:
    """Keep a seeded fraction of the pose groups (used by the data-efficiency
    sweep); record order within kept groups is preserved."""
    if not 0.0 < ratio <= 1.0:
        raise UsageError("ratio must be in (0, 1]")
    if ratio == 1.0:
        return bundle
    groups = bundle.groups()
    order = substream(seed, "ratio").permutation(len(groups))
    keep_n = max(1, round(ratio * len(groups)))
    keep = np.sort(order[:keep_n])
    recs: list = []
    for g in keep:
        start, end = groups[g]
        recs.extend(bundle.records[start:end])
    return DatasetBundle(
        kind=bundle.kind,
        candidate_set_hash=bundle.candidate_set_hash,
        world_digest=bundle.world_digest,
        seed=bundle.seed,
        records=recs,
        split_tag=bundle.split_tag,
    )
