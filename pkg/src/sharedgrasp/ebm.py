"""Input encoding and the composite contrastive training objective.

The energy network scores encoded (object pose, grasp, width) rows. The
loss couples three terms: a negative log-likelihood whose partition sum is
approximated over the minibatch, a contrastive mean-energy separation, and
a quadratic energy regularizer that anchors the absolute scale:

    total = nll + contrastive + reg_weight * reg

with every energy divided by the temperature first. Batches are stratified
so both the feasible and infeasible expectations are defined at every step.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetBundle
from .errors import NumericalError, UsageError
from .geometry import Se2Pose
from .nn import (
    Grads,
    MlpParams,
    backward,
    forward_fast,
    init_optim_state,
    init_params,
    optimizer_step,
)
from .rng import substream
from .scene import GraspCandidate, GraspCandidateSet, WorldModel

FEASIBILITY_DIM = 9
SHARED_DIM = 13


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for EBM training."""

    temperature: float = 0.5
    reg_weight: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 1024
    positive_fraction: float = 0.5
    epochs: int = 30
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (256, 256)
    patience: int = 5
    partition_support: str = "batch"  # batch | pool
    pool_size: int = 4096

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise UsageError("temperature must be positive")
        if self.reg_weight < 0:
            raise UsageError("reg_weight must be non-negative")
        if self.batch_size < 2:
            raise UsageError("batch_size must be at least 2")
        if not 0.0 < self.positive_fraction < 1.0:
            raise UsageError("positive_fraction must be in (0, 1)")
        if self.epochs < 0:
            raise UsageError("epochs must be non-negative")
        if self.partition_support not in ("batch", "pool"):
            raise UsageError("partition_support must be 'batch' or 'pool'")

    def digest(self) -> str:
        doc = json.dumps(self.__dict__, sort_keys=True, default=list)
        return hashlib.sha256(doc.encode()).hexdigest()


def _pose_features(x, y, theta, world: WorldModel):
    (xlo, xhi), (ylo, yhi) = world.workspace
    return (
        2.0 * (x - xlo) / (xhi - xlo) - 1.0,
        2.0 * (y - ylo) / (yhi - ylo) - 1.0,
        np.cos(theta),
        np.sin(theta),
    )


def _grasp_scale(world: WorldModel) -> float:
    (xlo, xhi), _ = world.workspace
    return (xhi - xlo) / 2.0


def _check_in_workspace(pose: Se2Pose, world: WorldModel) -> None:
    (xlo, xhi), (ylo, yhi) = world.workspace
    if not (xlo - 1e-9 <= pose.x <= xhi + 1e-9 and ylo - 1e-9 <= pose.y <= yhi + 1e-9):
        raise UsageError(f"pose {pose} outside the workspace")


def encode_feasibility(pose: Se2Pose, grasp: GraspCandidate, world: WorldModel) -> np.ndarray:
    """Nine features: pose block [x_hat, y_hat, cos, sin], grasp block
    [gx_hat, gy_hat, cos, sin], and the normalized width.

    Pose positions are affinely mapped onto [-1, 1] from the workspace
    bounds; grasp-local positions are divided by the workspace x half-width
    (one isotropic scale, so object-frame rotations are not distorted).
    """
    _check_in_workspace(pose, world)
    s = _grasp_scale(world)
    g = grasp.pose
    return np.array(
        [
            *_pose_features(pose.x, pose.y, pose.theta, world),
            g.x / s,
            g.y / s,
            math.cos(g.theta),
            math.sin(g.theta),
            grasp.width_normalized,
        ]
    )


def encode_shared(
    pose_init: Se2Pose, pose_goal: Se2Pose, grasp: GraspCandidate, world: WorldModel
) -> np.ndarray:
    """Thirteen features: both pose blocks, then the same grasp block."""
    _check_in_workspace(pose_init, world)
    _check_in_workspace(pose_goal, world)
    s = _grasp_scale(world)
    g = grasp.pose
    return np.array(
        [
            *_pose_features(pose_init.x, pose_init.y, pose_init.theta, world),
            *_pose_features(pose_goal.x, pose_goal.y, pose_goal.theta, world),
            g.x / s,
            g.y / s,
            math.cos(g.theta),
            math.sin(g.theta),
            grasp.width_normalized,
        ]
    )


def _pose_block_batch(poses: np.ndarray, world: WorldModel) -> np.ndarray:
    xh, yh, c, s = _pose_features(poses[:, 0], poses[:, 1], poses[:, 2], world)
    return np.stack([xh, yh, c, s], axis=1)


def _grasp_block_batch(block: np.ndarray, world: WorldModel) -> np.ndarray:
    s = _grasp_scale(world)
    return np.stack(
        [block[:, 0] / s, block[:, 1] / s, np.cos(block[:, 2]), np.sin(block[:, 2]), block[:, 3]],
        axis=1,
    )


def encode_feasibility_batch(
    poses: np.ndarray, grasp_rows: np.ndarray, world: WorldModel
) -> np.ndarray:
    """Vectorized encoder: poses (n, 3) and grasp rows (n, 4) -> (n, 9)."""
    return np.concatenate(
        [_pose_block_batch(poses, world), _grasp_block_batch(grasp_rows, world)], axis=1
    )


def encode_shared_batch(
    poses_init: np.ndarray, poses_goal: np.ndarray, grasp_rows: np.ndarray, world: WorldModel
) -> np.ndarray:
    return np.concatenate(
        [
            _pose_block_batch(poses_init, world),
            _pose_block_batch(poses_goal, world),
            _grasp_block_batch(grasp_rows, world),
        ],
        axis=1,
    )


def encode_candidates(
    pose: Se2Pose, candidates: GraspCandidateSet, world: WorldModel
) -> np.ndarray:
    """All candidates at one pose, shape (N, 9)."""
    _check_in_workspace(pose, world)
    n = len(candidates)
    poses = np.tile(np.array(pose.as_tuple()), (n, 1))
    return encode_feasibility_batch(poses, candidates.grasp_block(), world)


def encode_candidates_shared(
    pose_init: Se2Pose, pose_goal: Se2Pose, candidates: GraspCandidateSet, world: WorldModel
) -> np.ndarray:
    _check_in_workspace(pose_init, world)
    _check_in_workspace(pose_goal, world)
    n = len(candidates)
    pi = np.tile(np.array(pose_init.as_tuple()), (n, 1))
    pg = np.tile(np.array(pose_goal.as_tuple()), (n, 1))
    return encode_shared_batch(pi, pg, candidates.grasp_block(), world)


def encode_bundle(bundle: DatasetBundle, candidates: GraspCandidateSet, world: WorldModel):
    """Encode every record of a bundle; returns (X, labels)."""
    arrays = bundle.to_arrays()
    idx = arrays["grasp_index"]
    if idx.size and (idx.min() < 0 or idx.max() >= len(candidates)):
        raise UsageError("record grasp index out of range for the candidate set")
    rows = candidates.grasp_block()[idx]
    if bundle.kind == "feasibility":
        x = encode_feasibility_batch(arrays["poses"], rows, world)
    else:
        x = encode_shared_batch(arrays["poses_init"], arrays["poses_goal"], rows, world)
    return x, arrays["labels"].copy()


def _scaled(values, t: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise UsageError("energy list must be non-empty")
    return v / t


def logsumexp(values: np.ndarray) -> float:
    m = float(np.max(values))
    return m + float(np.log(np.sum(np.exp(values - m))))


def nll_loss(pos_energies, all_energies, t: float) -> float:
    """mean(pos/t) + log sum exp(-all/t), computed in shifted stable form."""
    pos = _scaled(pos_energies, t)
    everything = _scaled(all_energies, t)
    return float(np.mean(pos)) + logsumexp(-everything)


def contrastive_loss(pos_energies, neg_energies, t: float) -> float:
    """mean(pos/t) - mean(neg/t): push the two populations apart."""
    return float(np.mean(_scaled(pos_energies, t)) - np.mean(_scaled(neg_energies, t)))


def reg_loss(pos_energies, neg_energies, t: float) -> float:
    """mean((pos/t)^2) + mean((neg/t)^2): keeps energies from diverging."""
    pos = _scaled(pos_energies, t)
    neg = _scaled(neg_energies, t)
    return float(np.mean(pos**2) + np.mean(neg**2))


def total_loss(pos_energies, neg_energies, all_energies, cfg: TrainConfig):
    """Weighted sum of the three terms; returns (total, breakdown)."""
    nll = nll_loss(pos_energies, all_energies, cfg.temperature)
    con = contrastive_loss(pos_energies, neg_energies, cfg.temperature)
    reg = reg_loss(pos_energies, neg_energies, cfg.temperature)
    total = nll + con + cfg.reg_weight * reg
    return total, {"nll": nll, "contrastive": con, "reg": reg, "total": total}


def loss_and_energy_grad(
    energies: np.ndarray,
    pos_mask: np.ndarray,
    cfg: TrainConfig,
    partition_energies: np.ndarray | None = None,
):
    """Loss breakdown plus d(total)/d(energy) for each row.

    When partition_energies is given (partition_support="pool"), the NLL's
    log-sum runs over those energies instead of the batch and the second
    return value is the gradient for the pool rows.
    """
    t = cfg.temperature
    pos = energies[pos_mask]
    neg = energies[~pos_mask]
    if pos.size == 0 or neg.size == 0:
        raise UsageError("batch must contain at least one positive and one negative")
    support = energies if partition_energies is None else partition_energies
    scaled_support = -support / t
    m = float(np.max(scaled_support))
    w = np.exp(scaled_support - m)
    z = float(np.sum(w))
    lse = m + math.log(z)
    softmax = w / z

    mean_pos = float(np.mean(pos)) / t
    mean_neg = float(np.mean(neg)) / t
    nll = mean_pos + lse
    con = mean_pos - mean_neg
    reg = float(np.mean((pos / t) ** 2) + np.mean((neg / t) ** 2))
    total = nll + con + cfg.reg_weight * reg

    n_pos, n_neg = pos.size, neg.size
    grad = np.where(pos_mask, 2.0 / (t * n_pos), -1.0 / (t * n_neg))
    grad = grad + cfg.reg_weight * 2.0 * energies / (t * t) * np.where(
        pos_mask, 1.0 / n_pos, 1.0 / n_neg
    )
    if partition_energies is None:
        grad = grad - softmax / t
        pool_grad = None
    else:
        pool_grad = -softmax / t
    breakdown = {"nll": nll, "contrastive": con, "reg": reg, "total": total}
    return breakdown, grad, pool_grad


@dataclass
class TrainHistory:
    """Per-epoch loss terms and validation F1 at the running threshold."""

    rows: list[dict] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "nll", "contrastive", "reg", "total", "val_f1"])
            for row in self.rows:
                writer.writerow(
                    [
                        row["epoch"],
                        row["nll"],
                        row["contrastive"],
                        row["reg"],
                        row["total"],
                        row["val_f1"],
                    ]
                )


class _Cycler:
    """Cycles through an index pool in seeded shuffled order, reshuffling
    whenever the pool is exhausted."""

    def __init__(self, indices: np.ndarray, rng: np.random.Generator) -> None:
        self.indices = indices
        self.rng = rng
        self.order = rng.permutation(indices)
        self.ptr = 0

    def take(self, k: int) -> np.ndarray:
        if k > self.indices.size:
            return self.rng.choice(self.indices, size=k, replace=True)
        if self.ptr + k > self.order.size:
            self.order = self.rng.permutation(self.indices)
            self.ptr = 0
        out = self.order[self.ptr : self.ptr + k]
        self.ptr += k
        return out


@dataclass
class TrainResult:
    params: MlpParams
    history: TrainHistory
    best_epoch: int
    best_val_f1: float


def train_encoded(
    x_train: np.ndarray,
    y_train: np.ndarray,
    cfg: TrainConfig,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    track_energy_stats: bool = False,
) -> TrainResult:
    """Core training loop over pre-encoded rows.

    Stratified minibatches hold round(batch_size * positive_fraction)
    positives; each batch is encoded, scored, differentiated through all
    three loss terms, and applied with one Adam step. With a validation set
    the threshold is re-calibrated each epoch and training stops after
    `patience` epochs without an F1 improvement, returning the best-F1
    parameters. Deterministic given cfg.seed.
    """
    from .inference import calibrate_threshold  # local import to avoid a cycle

    if x_train.ndim != 2:
        raise UsageError("x_train must be 2-d")
    pos_idx = np.flatnonzero(y_train)
    neg_idx = np.flatnonzero(~y_train)
    if pos_idx.size == 0 or neg_idx.size == 0:
        raise UsageError("training data needs both positive and negative records")

    params = init_params((x_train.shape[1], *cfg.hidden_sizes, 1), seed=cfg.seed)
    history = TrainHistory()
    if cfg.epochs == 0:
        return TrainResult(params, history, best_epoch=-1, best_val_f1=float("nan"))

    state = init_optim_state(params)
    rng = substream(cfg.seed, "train")
    pos_pool = _Cycler(pos_idx, rng)
    neg_pool = _Cycler(neg_idx, rng)
    k_pos = min(max(1, round(cfg.batch_size * cfg.positive_fraction)), cfg.batch_size - 1)
    k_neg = cfg.batch_size - k_pos
    steps_per_epoch = max(1, x_train.shape[0] // cfg.batch_size)

    pool_x = None
    if cfg.partition_support == "pool":
        take = min(cfg.pool_size, x_train.shape[0])
        pool_x = x_train[:take]

    best_f1 = -np.inf
    best_epoch = -1
    best_params = params
    stall = 0
    for epoch in range(cfg.epochs):
        sums = {"nll": 0.0, "contrastive": 0.0, "reg": 0.0, "total": 0.0}
        for _ in range(steps_per_epoch):
            idx = np.concatenate([pos_pool.take(k_pos), neg_pool.take(k_neg)])
            xb = x_train[idx]
            mask = y_train[idx]
            if pool_x is None:
                e = forward_fast(params, xb)
                breakdown, grad, _ = loss_and_energy_grad(e, mask, cfg)
                grads = backward(params, xb, grad)
            else:
                e = forward_fast(params, xb)
                e_pool = forward_fast(params, pool_x)
                breakdown, grad, pool_grad = loss_and_energy_grad(e, mask, cfg, e_pool)
                grads = backward(params, xb, grad)
                pool_grads = backward(params, pool_x, pool_grad)
                grads = Grads(
                    [a + b for a, b in zip(grads.weights, pool_grads.weights)],
                    [a + b for a, b in zip(grads.biases, pool_grads.biases)],
                )
            params, state = optimizer_step(params, grads, state, cfg.learning_rate)
            for key in sums:
                sums[key] += breakdown[key]
        row = {"epoch": epoch, **{k: v / steps_per_epoch for k, v in sums.items()}}
        if x_val is not None and y_val is not None:
            e_val = forward_fast(params, x_val)
            _, val_f1 = calibrate_threshold(list(zip(e_val, y_val)))
            row["val_f1"] = val_f1
        else:
            row["val_f1"] = float("nan")
        if track_energy_stats:
            e_all = forward_fast(params, x_train)
            row["train_pos_energy"] = float(np.mean(e_all[y_train]))
            row["train_neg_energy"] = float(np.mean(e_all[~y_train]))
        history.rows.append(row)

        if x_val is not None and y_val is not None:
            if row["val_f1"] > best_f1 + 1e-12:
                best_f1 = row["val_f1"]
                best_epoch = epoch
                best_params = params.copy()
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    break
        else:
            best_params = params
            best_epoch = epoch

    if not np.all(np.isfinite(np.concatenate([w.ravel() for w in best_params.weights]))):
        raise NumericalError("training diverged to non-finite parameters")
    return TrainResult(best_params, history, best_epoch, best_f1 if best_f1 > -np.inf else float("nan"))


def train(
    train_bundle: DatasetBundle,
    candidates: GraspCandidateSet,
    world: WorldModel,
    cfg: TrainConfig,
    kind: str,
    val_bundle: DatasetBundle | None = None,
    track_energy_stats: bool = False,
) -> TrainResult:
    """Train a feasibility or direct-shared energy model from a bundle."""
    if kind not in ("feasibility", "direct_shared"):
        raise UsageError(f"unknown model kind {kind!r}")
    expected = "feasibility" if kind == "feasibility" else "shared"
    if train_bundle.kind != expected:
        raise UsageError(f"{kind} model needs a {expected} bundle, got {train_bundle.kind}")
    x_train, y_train = encode_bundle(train_bundle, candidates, world)
    x_val = y_val = None
    if val_bundle is not None:
        if val_bundle.kind != train_bundle.kind:
            raise UsageError("validation bundle kind must match the training bundle")
        x_val, y_val = encode_bundle(val_bundle, candidates, world)
    return train_encoded(x_train, y_train, cfg, x_val, y_val, track_energy_stats)
