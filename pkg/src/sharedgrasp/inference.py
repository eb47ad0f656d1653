"""Threshold calibration and the shared-grasp predictors.

Energies below a threshold mean "predicted feasible". Three shared-grasp
strategies are provided: J sums the two per-pose feasibility energies and
thresholds the sum with h_s; D scores a (pose_init, pose_goal, grasp) row
with a single direct model and threshold h_s_prime; L applies the
per-pose feasibility threshold h_f at both poses and takes the logical AND.
The analytical oracle (A) and the unfiltered random pick (R) serve as
baselines.

predict_shared_J builds the stacked 2N rows once and evaluates the two
pose halves with same-shape forward calls, so its per-pose energies are
bitwise identical to what predict_feasible computes for each pose alone.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .ebm import encode_candidates, encode_candidates_shared
from .errors import ArtifactMismatchError, UsageError
from .geometry import Se2Pose
from .nn import MlpParams, forward
from .scene import GraspCandidateSet, ObjectModel, WorldModel, label_shared

ModelLike = Union[MlpParams, Callable[[np.ndarray], np.ndarray], "EnergyModel"]


@dataclass
class EnergyModel:
    """A scoring function plus the candidate-set hash it was trained on."""

    kind: str  # feasibility | direct_shared
    fn: ModelLike
    candidate_set_hash: str | None = None


def model_energies(model: ModelLike, rows: np.ndarray) -> np.ndarray:
    if isinstance(model, EnergyModel):
        return model_energies(model.fn, rows)
    if isinstance(model, MlpParams):
        return forward(model, rows)
    if callable(model):
        return np.asarray(model(rows), dtype=float)
    raise UsageError(f"cannot score energies with {type(model).__name__}")


def _check_hash(model: ModelLike, candidates: GraspCandidateSet, allow_mismatch: bool) -> None:
    if (
        isinstance(model, EnergyModel)
        and model.candidate_set_hash is not None
        and model.candidate_set_hash != candidates.content_hash
        and not allow_mismatch
    ):
        raise ArtifactMismatchError(
            "model was trained on a different candidate set; "
            "pass allow_hash_mismatch=True only for deliberate transfer runs"
        )


@dataclass
class Thresholds:
    """Calibrated decision thresholds with the digest of the validation
    bundle each one came from."""

    h_f: float | None = None
    h_s: float | None = None
    h_s_prime: float | None = None
    provenance: dict = field(default_factory=dict)

    def require(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise UsageError(f"threshold {name} has not been calibrated")
        return value

    def to_json(self) -> str:
        return json.dumps(
            {
                "h_f": self.h_f,
                "h_s": self.h_s,
                "h_s_prime": self.h_s_prime,
                "provenance": self.provenance,
            },
            indent=1,
        )

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n")

    @staticmethod
    def load(path: str | Path) -> "Thresholds":
        doc = json.loads(Path(path).read_text())
        return Thresholds(
            h_f=doc.get("h_f"),
            h_s=doc.get("h_s"),
            h_s_prime=doc.get("h_s_prime"),
            provenance=doc.get("provenance", {}),
        )


@dataclass(frozen=True)
class Metrics:
    """Pooled binary-classification counts and the derived scores.

    Empty-denominator convention: precision is 0 when nothing was predicted
    positive, recall is 0 when nothing is truly positive, and F1 is 0 when
    either is 0, so degenerate all-negative predictors never win calibration.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    @staticmethod
    def from_counts(tp: int, fp: int, fn: int, tn: int = 0) -> "Metrics":
        precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return Metrics(tp, fp, fn, tn, precision, recall, f1)

    @staticmethod
    def from_masks(predicted: np.ndarray, truth: np.ndarray) -> "Metrics":
        predicted = np.asarray(predicted, dtype=bool)
        truth = np.asarray(truth, dtype=bool)
        if predicted.shape != truth.shape:
            raise UsageError("mask shapes differ")
        tp = int(np.sum(predicted & truth))
        fp = int(np.sum(predicted & ~truth))
        fn = int(np.sum(~predicted & truth))
        tn = int(np.sum(~predicted & ~truth))
        return Metrics.from_counts(tp, fp, fn, tn)


def calibrate_threshold(scores) -> tuple[float, float]:
    """Pick the threshold maximizing F1 of "positive iff energy < h".

    Sweeps the midpoints between consecutive distinct energies plus -inf and
    +inf sentinels; that set contains an exact maximizer. Ties break toward
    the smallest threshold. Returns (threshold, best F1).
    """
    pairs = list(scores)
    if not pairs:
        raise UsageError("scores must be non-empty")
    energies = np.array([float(e) for e, _ in pairs])
    labels = np.array([bool(l) for _, l in pairs])
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("calibration needs at least one positive and one negative")

    order = np.argsort(energies, kind="stable")
    e_sorted = energies[order]
    l_sorted = labels[order]
    cum_pos = np.cumsum(l_sorted)

    # Cut after position k (0..n): everything strictly below the threshold is
    # predicted positive. Distinct-energy boundaries plus the sentinels.
    cuts = [(float("-inf"), 0)]
    for k in range(1, len(e_sorted)):
        if e_sorted[k] > e_sorted[k - 1]:
            cuts.append(((e_sorted[k - 1] + e_sorted[k]) / 2.0, k))
    cuts.append((float("inf"), len(e_sorted)))

    best_threshold, best_f1 = float("-inf"), -1.0
    for threshold, k in cuts:
        tp = int(cum_pos[k - 1]) if k > 0 else 0
        fp = k - tp
        fn = n_pos - tp
        f1 = Metrics.from_counts(tp, fp, fn).f1
        if f1 > best_f1:
            best_f1 = f1
            best_threshold = threshold
    return best_threshold, best_f1


@dataclass
class PredictionResult:
    """Mask plus the energies it was derived from. For J the joint energy is
    exactly the element-wise sum of the stored per-pose energies."""

    method: str  # J | D | L | F | A | R
    mask: np.ndarray
    energies: dict[str, np.ndarray] = field(default_factory=dict)
    threshold_used: float | None = None
    elapsed_s: float | None = None

    def ranking_energy(self) -> np.ndarray | None:
        if "joint" in self.energies:
            return self.energies["joint"]
        if "pose" in self.energies:
            return self.energies["pose"]
        return None


def predict_feasible(
    model: ModelLike,
    thresholds: Thresholds,
    world: WorldModel,
    pose: Se2Pose,
    candidates: GraspCandidateSet,
    allow_hash_mismatch: bool = False,
) -> PredictionResult:
    """Method F: feasible iff the per-pose energy is below h_f."""
    _check_hash(model, candidates, allow_hash_mismatch)
    h_f = thresholds.require("h_f")
    rows = encode_candidates(pose, candidates, world)
    e = model_energies(model, rows)
    return PredictionResult("F", e < h_f, {"pose": e}, threshold_used=h_f)


def predict_shared_J(
    model: ModelLike,
    thresholds: Thresholds,
    world: WorldModel,
    pose_init: Se2Pose,
    pose_goal: Se2Pose,
    candidates: GraspCandidateSet,
    allow_hash_mismatch: bool = False,
) -> PredictionResult:
    """Joint-energy method: shared iff E(init) + E(goal) < h_s."""
    _check_hash(model, candidates, allow_hash_mismatch)
    h_s = thresholds.require("h_s")
    n = len(candidates)
    stacked = np.concatenate(
        [
            encode_candidates(pose_init, candidates, world),
            encode_candidates(pose_goal, candidates, world),
        ]
    )
    e_init = model_energies(model, stacked[:n])
    e_goal = model_energies(model, stacked[n:])
    joint = e_init + e_goal
    return PredictionResult(
        "J",
        joint < h_s,
        {"init": e_init, "goal": e_goal, "joint": joint},
        threshold_used=h_s,
    )


def predict_shared_D(
    model_s: ModelLike,
    thresholds: Thresholds,
    world: WorldModel,
    pose_init: Se2Pose,
    pose_goal: Se2Pose,
    candidates: GraspCandidateSet,
    allow_hash_mismatch: bool = False,
) -> PredictionResult:
    """Direct method: one unified model over both poses, threshold h_s_prime."""
    _check_hash(model_s, candidates, allow_hash_mismatch)
    h = thresholds.require("h_s_prime")
    rows = encode_candidates_shared(pose_init, pose_goal, candidates, world)
    e = model_energies(model_s, rows)
    return PredictionResult("D", e < h, {"joint": e}, threshold_used=h)


def predict_shared_L(
    model: ModelLike,
    thresholds: Thresholds,
    world: WorldModel,
    pose_init: Se2Pose,
    pose_goal: Se2Pose,
    candidates: GraspCandidateSet,
    allow_hash_mismatch: bool = False,
) -> PredictionResult:
    """Logical-conjunction method: h_f thresholding at both poses, ANDed."""
    r_init = predict_feasible(model, thresholds, world, pose_init, candidates, allow_hash_mismatch)
    r_goal = predict_feasible(model, thresholds, world, pose_goal, candidates, allow_hash_mismatch)
    e_init = r_init.energies["pose"]
    e_goal = r_goal.energies["pose"]
    return PredictionResult(
        "L",
        r_init.mask & r_goal.mask,
        {"init": e_init, "goal": e_goal, "joint": e_init + e_goal},
        threshold_used=thresholds.require("h_f"),
    )


def analytical_shared(
    world: WorldModel,
    obj: ObjectModel,
    candidates: GraspCandidateSet,
    pose_init: Se2Pose,
    pose_goal: Se2Pose,
) -> PredictionResult:
    """Method A: the exact oracle intersection, timed for benchmarking."""
    start = time.perf_counter()
    mask = label_shared(world, obj, candidates, pose_init, pose_goal)
    elapsed = time.perf_counter() - start
    return PredictionResult("A", mask, {}, elapsed_s=elapsed)


def select_grasp(
    result: PredictionResult, strategy: str, rng: np.random.Generator
) -> int | None:
    """Pick one candidate index from the predicted-positive set.

    "random" draws uniformly; "min_energy" takes the lowest scoring one
    (joint energy where available). Returns None when the mask is empty.
    """
    if strategy not in ("random", "min_energy"):
        raise UsageError(f"unknown selection strategy {strategy!r}")
    chosen = np.flatnonzero(result.mask)
    if chosen.size == 0:
        return None
    if strategy == "random":
        return int(rng.choice(chosen))
    ranking = result.ranking_energy()
    if ranking is None:
        raise UsageError(f"method {result.method} has no energies to rank by")
    return int(chosen[np.argmin(ranking[chosen])])


def random_baseline(candidates: GraspCandidateSet, rng: np.random.Generator) -> int:
    """Method R: uniform pick over the whole candidate set, no filtering."""
    if len(candidates) == 0:
        raise UsageError("candidate set is empty")
    return int(rng.integers(0, len(candidates)))
