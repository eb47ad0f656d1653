"""Experiment harness: classification metrics, success-rate trials, timing
benchmarks, data-efficiency sweeps, and generalization studies.

Every experiment stores raw per-trial or per-cell outcomes next to the
aggregated table, so any reported number can be recomputed from the
persisted artifacts. All randomness is seeded; trials are independent and
could be parallelized, aggregation is single-threaded.

Training is injected through a `train_fn(kind, x_train, y_train, x_val,
y_val, cfg)` hook so the harness can be self-tested with an oracle stub in
place of a real model.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .ebm import (
    TrainConfig,
    encode_feasibility_batch,
    encode_shared_batch,
    train_encoded,
)
from .errors import NumericalError, UsageError
from .inference import (
    Metrics,
    PredictionResult,
    Thresholds,
    analytical_shared,
    calibrate_threshold,
    model_energies,
    predict_shared_D,
    predict_shared_J,
    predict_shared_L,
    random_baseline,
    select_grasp,
)
from .rng import substream
from .scene import (
    GraspCandidateSet,
    ObjectModel,
    WorldModel,
    builtin_object,
    label_shared,
    sample_antipodal_grasps,
    sample_valid_pose,
)

SHARED_METHODS = ("J", "D", "L")


@dataclass(frozen=True)
class ExperimentSpec:
    """Sizes, seeds, and methods for one experiment run."""

    name: str = "experiment"
    objects: tuple[str, ...] = ("bottle",)
    candidate_count: int = 57
    master_candidate_count: int = 922
    candidate_sizes: tuple[int, ...] = (57, 352)
    n_feasibility: int = 12000
    n_shared: int = 12000
    n_shared_val: int = 3000
    n_shared_test: int = 4000
    n_feasibility_test: int = 3000
    split_fractions: tuple[float, float, float] = (2.0 / 3.0, 1.0 / 5.0, 2.0 / 15.0)
    ratios: tuple[float, ...] = (1.0, 0.5, 0.15, 0.05)
    methods: tuple[str, ...] = ("J", "D", "L", "F")
    train_combos: tuple[tuple[str, ...], ...] = (("bottle",),)
    n_trials: int = 500
    seeds: tuple[int, ...] = (0, 1, 2)
    data_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class ReportTable:
    """Named rows of metrics; every row carries the seed it came from."""

    name: str
    columns: list[str]
    rows: list[dict]
    meta: dict = field(default_factory=dict)


def evaluate_classification(pred_masks, true_masks) -> Metrics:
    """Pooled counts over a sequence of (predicted, truth) mask pairs."""
    if len(pred_masks) != len(true_masks):
        raise UsageError("prediction and truth lists have different lengths")
    tp = fp = fn = tn = 0
    for pred, truth in zip(pred_masks, true_masks):
        m = Metrics.from_masks(pred, truth)
        tp += m.tp
        fp += m.fp
        fn += m.fn
        tn += m.tn
    return Metrics.from_counts(tp, fp, fn, tn)


def _default_train_fn(kind, x_train, y_train, x_val, y_val, cfg: TrainConfig):
    return train_encoded(x_train, y_train, cfg, x_val, y_val).params


def _joint_scores(model, world, poses_init, poses_goal, grasp_rows) -> np.ndarray:
    e_i = model_energies(model, encode_feasibility_batch(poses_init, grasp_rows, world))
    e_g = model_energies(model, encode_feasibility_batch(poses_goal, grasp_rows, world))
    return e_i + e_g


def _shared_record_features(bundle: ds.DatasetBundle, candidates: GraspCandidateSet):
    arrays = bundle.to_arrays()
    rows = candidates.grasp_block()[arrays["grasp_index"]]
    return arrays["poses_init"], arrays["poses_goal"], rows, arrays["labels"]


def _metrics_row(metrics: Metrics) -> dict:
    return {
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "tp": metrics.tp,
        "fp": metrics.fp,
        "fn": metrics.fn,
        "tn": metrics.tn,
    }


@dataclass
class SuccessStats:
    """Outcome of a success-rate trial run."""

    method: str
    strategy: str
    success_rate: float
    mean_predict_s: float
    resample_rate: float
    mean_true_shared_fraction: float
    trials: list[dict]


def success_rate_trial(
    world: WorldModel,
    obj: ObjectModel,
    candidates: GraspCandidateSet,
    method: str,
    strategy: str,
    n_trials: int,
    seed: int,
    model=None,
    thresholds: Thresholds | None = None,
) -> SuccessStats:
    """Sample pose pairs with a non-empty true shared set (resampling
    otherwise), run the method, select one grasp, and verify it against the
    oracle. Reports the success rate, mean prediction time, and the
    resampling rate."""
    if method not in ("R", "A", "J", "D", "L"):
        raise UsageError(f"unknown method {method!r}")
    if method in SHARED_METHODS and (model is None or thresholds is None):
        raise UsageError(f"method {method} needs a model and thresholds")
    rng = substream(seed, "trials")
    trials: list[dict] = []
    resamples = 0
    predictors = {
        "J": predict_shared_J,
        "D": predict_shared_D,
        "L": predict_shared_L,
    }
    while len(trials) < n_trials:
        pose_init = sample_valid_pose(world, obj, rng)
        pose_goal = sample_valid_pose(world, obj, rng)
        if method == "A":
            result = analytical_shared(world, obj, candidates, pose_init, pose_goal)
            truth = result.mask
            predict_s = result.elapsed_s
        else:
            truth = label_shared(world, obj, candidates, pose_init, pose_goal)
        if not truth.any():
            resamples += 1
            continue
        if method == "R":
            start = time.perf_counter()
            index = random_baseline(candidates, rng)
            predict_s = time.perf_counter() - start
        elif method == "A":
            index = select_grasp(PredictionResult("A", truth), "random", rng)
        else:
            start = time.perf_counter()
            result = predictors[method](
                model, thresholds, world, pose_init, pose_goal, candidates
            )
            predict_s = time.perf_counter() - start
            index = select_grasp(result, strategy, rng)
        success = bool(truth[index]) if index is not None else False
        trials.append(
            {
                "pose_init": list(pose_init.as_tuple()),
                "pose_goal": list(pose_goal.as_tuple()),
                "selected": index,
                "success": success,
                "predict_s": predict_s,
                "true_shared_fraction": float(truth.mean()),
            }
        )
    return SuccessStats(
        method=method,
        strategy=strategy,
        success_rate=float(np.mean([t["success"] for t in trials])),
        mean_predict_s=float(np.mean([t["predict_s"] for t in trials])),
        resample_rate=resamples / (resamples + n_trials),
        mean_true_shared_fraction=float(np.mean([t["true_shared_fraction"] for t in trials])),
        trials=trials,
    )


def benchmark_timing(
    world: WorldModel,
    obj: ObjectModel,
    candidate_sets: list[GraspCandidateSet],
    methods: tuple[str, ...] = ("A", "J"),
    n_trials: int = 30,
    seed: int = 0,
    model=None,
    thresholds: Thresholds | None = None,
) -> ReportTable:
    """Median/mean shared-set computation time per (candidate count, method)
    over a common set of pose pairs.

    The analytical method must get strictly slower as the candidate count
    grows; a violation raises NumericalError. The batched predictor is
    reported alongside (a non-monotone timing only warns: at these sizes its
    cost is dominated by fixed overhead).
    """
    sets = sorted(candidate_sets, key=len)
    if thresholds is None:
        thresholds = Thresholds(h_f=0.0, h_s=0.0, h_s_prime=0.0)
    rng = substream(seed, "trials")
    pairs = [
        (sample_valid_pose(world, obj, rng), sample_valid_pose(world, obj, rng))
        for _ in range(n_trials)
    ]
    rows = []
    medians: dict[str, list[float]] = {m: [] for m in methods}
    for cset in sets:
        for method in methods:
            times = []
            for pose_init, pose_goal in pairs:
                if method == "A":
                    result = analytical_shared(world, obj, cset, pose_init, pose_goal)
                    times.append(result.elapsed_s)
                elif method == "J":
                    start = time.perf_counter()
                    predict_shared_J(model, thresholds, world, pose_init, pose_goal, cset)
                    times.append(time.perf_counter() - start)
                else:
                    raise UsageError(f"benchmark does not support method {method!r}")
            medians[method].append(float(np.median(times)))
            rows.append(
                {
                    "size": len(cset),
                    "method": method,
                    "median_s": float(np.median(times)),
                    "mean_s": float(np.mean(times)),
                    "n_trials": n_trials,
                    "seed": seed,
                }
            )
    if "A" in methods and len(sets) > 1:
        a = medians["A"]
        if not all(a[i] < a[i + 1] for i in range(len(a) - 1)):
            raise NumericalError(f"analytical timing is not increasing in candidate count: {a}")
    if "J" in methods and len(sets) > 1:
        j = medians["J"]
        if not all(j[i] <= j[i + 1] for i in range(len(j) - 1)):
            print(f"warning: batched predictor timings not monotone across sizes: {j}")
    return ReportTable(
        name="timing",
        columns=["size", "method", "median_s", "mean_s", "n_trials", "seed"],
        rows=rows,
        meta={"object": obj.name, "sizes": [len(s) for s in sets]},
    )


def _calibrate_h_f(model, world, feas_val: ds.DatasetBundle, candidates) -> tuple[float, float]:
    arrays = feas_val.to_arrays()
    rows = candidates.grasp_block()[arrays["grasp_index"]]
    e = model_energies(model, encode_feasibility_batch(arrays["poses"], rows, world))
    return calibrate_threshold(list(zip(e, arrays["labels"])))


def _calibrate_h_s(model, world, shared_val: ds.DatasetBundle, candidates) -> tuple[float, float]:
    pi, pg, rows, labels = _shared_record_features(shared_val, candidates)
    scores = _joint_scores(model, world, pi, pg, rows)
    return calibrate_threshold(list(zip(scores, labels)))


def _calibrate_h_s_prime(model_s, world, shared_val, candidates) -> tuple[float, float]:
    pi, pg, rows, labels = _shared_record_features(shared_val, candidates)
    e = model_energies(model_s, encode_shared_batch(pi, pg, rows, world))
    return calibrate_threshold(list(zip(e, labels)))


def _eval_shared_records(
    method: str, model, world, shared_test: ds.DatasetBundle, candidates, thresholds: Thresholds
) -> Metrics:
    pi, pg, rows, labels = _shared_record_features(shared_test, candidates)
    if method == "J":
        pred = _joint_scores(model, world, pi, pg, rows) < thresholds.require("h_s")
    elif method == "D":
        e = model_energies(model, encode_shared_batch(pi, pg, rows, world))
        pred = e < thresholds.require("h_s_prime")
    elif method == "L":
        h_f = thresholds.require("h_f")
        e_i = model_energies(model, encode_feasibility_batch(pi, rows, world))
        e_g = model_energies(model, encode_feasibility_batch(pg, rows, world))
        pred = (e_i < h_f) & (e_g < h_f)
    else:
        raise UsageError(f"unknown shared method {method!r}")
    return Metrics.from_masks(pred, labels)


def _eval_feasibility_records(
    model, world, feas_test: ds.DatasetBundle, candidates, h_f: float
) -> Metrics:
    arrays = feas_test.to_arrays()
    rows = candidates.grasp_block()[arrays["grasp_index"]]
    e = model_energies(model, encode_feasibility_batch(arrays["poses"], rows, world))
    return Metrics.from_masks(e < h_f, arrays["labels"])


def data_efficiency_sweep(
    world: WorldModel, spec: ExperimentSpec, train_fn=None
) -> ReportTable:
    """Train at several training-data ratios and score each method on a
    fixed held-out shared test set (feasibility test set for method F).

    The ratio subsampling keeps pose groups, and smaller ratios are nested
    inside larger ones for a given seed.
    """
    train_fn = train_fn or _default_train_fn
    obj = builtin_object(spec.objects[0])
    cands = sample_antipodal_grasps(obj, world.gripper, spec.candidate_count, spec.data_seed)
    feas = ds.generate_feasibility_dataset(world, obj, cands, spec.n_feasibility, spec.data_seed)
    feas_train, feas_test, feas_val = ds.split(feas, spec.split_fractions, spec.data_seed)
    shared = ds.generate_shared_dataset(world, obj, cands, spec.n_shared, spec.data_seed)
    shared_train, shared_test, shared_val = ds.split(shared, spec.split_fractions, spec.data_seed)

    from .ebm import encode_bundle

    x_feas_val, y_feas_val = encode_bundle(feas_val, cands, world)
    x_shared_val, y_shared_val = encode_bundle(shared_val, cands, world)

    rows = []
    for seed in spec.seeds:
        cfg = replace(spec.train, seed=seed)
        for ratio in spec.ratios:
            thresholds = Thresholds()
            model_f = None
            if any(m in spec.methods for m in ("J", "L", "F")):
                sub = ds.subsample_groups(feas_train, ratio, seed)
                x_tr, y_tr = encode_bundle(sub, cands, world)
                model_f = train_fn("feasibility", x_tr, y_tr, x_feas_val, y_feas_val, cfg)
                thresholds.h_f = _calibrate_h_f(model_f, world, feas_val, cands)[0]
                thresholds.h_s = _calibrate_h_s(model_f, world, shared_val, cands)[0]
            model_d = None
            if "D" in spec.methods:
                sub = ds.subsample_groups(shared_train, ratio, seed)
                x_tr, y_tr = encode_bundle(sub, cands, world)
                model_d = train_fn("direct_shared", x_tr, y_tr, x_shared_val, y_shared_val, cfg)
                thresholds.h_s_prime = _calibrate_h_s_prime(model_d, world, shared_val, cands)[0]
            for method in spec.methods:
                if method == "F":
                    metrics = _eval_feasibility_records(
                        model_f, world, feas_test, cands, thresholds.require("h_f")
                    )
                else:
                    model = model_d if method == "D" else model_f
                    metrics = _eval_shared_records(
                        method, model, world, shared_test, cands, thresholds
                    )
                rows.append({"seed": seed, "ratio": ratio, "method": method, **_metrics_row(metrics)})
    return ReportTable(
        name=spec.name,
        columns=["seed", "ratio", "method", "precision", "recall", "f1", "tp", "fp", "fn", "tn"],
        rows=rows,
        meta={
            "object": obj.name,
            "candidate_count": len(cands),
            "n_feasibility": spec.n_feasibility,
            "n_shared": spec.n_shared,
            "data_seed": spec.data_seed,
        },
    )


def generalization_unseen_grasps(
    world: WorldModel, spec: ExperimentSpec, train_fn=None
) -> ReportTable:
    """Train on nested candidate subsets, evaluate on the full master set.

    Models never see most of the master candidates during training; the
    shared test set is labeled over all of them.
    """
    train_fn = train_fn or _default_train_fn
    obj = builtin_object(spec.objects[0])
    master = sample_antipodal_grasps(obj, world.gripper, spec.master_candidate_count, spec.data_seed)
    shared_test = ds.generate_shared_dataset(world, obj, master, spec.n_shared_test, spec.data_seed)
    feas_test_master = None
    if "F" in spec.methods:
        feas_test_master = ds.generate_feasibility_dataset(
            world, obj, master, spec.n_feasibility_test, spec.data_seed + 1
        )

    from .ebm import encode_bundle

    rows = []
    for size in spec.candidate_sizes:
        sub = master.subset(size)
        feas = ds.generate_feasibility_dataset(world, obj, sub, spec.n_feasibility, spec.data_seed)
        feas_train, _, feas_val = ds.split(feas, spec.split_fractions, spec.data_seed)
        shared_cal = ds.generate_shared_dataset(world, obj, sub, spec.n_shared_val, spec.data_seed)
        x_tr, y_tr = encode_bundle(feas_train, sub, world)
        x_val, y_val = encode_bundle(feas_val, sub, world)
        shared_train_sub = shared_val_sub = None
        if "D" in spec.methods:
            shared_d = ds.generate_shared_dataset(world, obj, sub, spec.n_shared, spec.data_seed)
            shared_train_sub, _, shared_val_sub = ds.split(shared_d, spec.split_fractions, spec.data_seed)
        for seed in spec.seeds:
            cfg = replace(spec.train, seed=seed)
            thresholds = Thresholds()
            model_f = None
            if any(m in spec.methods for m in ("J", "L", "F")):
                model_f = train_fn("feasibility", x_tr, y_tr, x_val, y_val, cfg)
                thresholds.h_f = _calibrate_h_f(model_f, world, feas_val, sub)[0]
                thresholds.h_s = _calibrate_h_s(model_f, world, shared_cal, sub)[0]
            model_d = None
            if "D" in spec.methods:
                x_dtr, y_dtr = encode_bundle(shared_train_sub, sub, world)
                x_dval, y_dval = encode_bundle(shared_val_sub, sub, world)
                model_d = train_fn("direct_shared", x_dtr, y_dtr, x_dval, y_dval, cfg)
                thresholds.h_s_prime = _calibrate_h_s_prime(model_d, world, shared_val_sub, sub)[0]
            for method in spec.methods:
                if method == "F":
                    metrics = _eval_feasibility_records(
                        model_f, world, feas_test_master, master, thresholds.require("h_f")
                    )
                else:
                    model = model_d if method == "D" else model_f
                    metrics = _eval_shared_records(
                        method, model, world, shared_test, master, thresholds
                    )
                rows.append(
                    {"seed": seed, "train_size": size, "method": method, **_metrics_row(metrics)}
                )
    return ReportTable(
        name=spec.name,
        columns=[
            "seed",
            "train_size",
            "method",
            "precision",
            "recall",
            "f1",
            "tp",
            "fp",
            "fn",
            "tn",
        ],
        rows=rows,
        meta={"object": obj.name, "master_count": len(master), "data_seed": spec.data_seed},
    )


def generalization_unseen_objects(
    world: WorldModel, spec: ExperimentSpec, train_fn=None
) -> ReportTable:
    """Train on object combinations, evaluate on every object's shared test
    set; cells for objects inside the training combo are flagged seen.

    Object identity is never an input feature, so transfer happens purely
    through the geometry-induced energy landscape.
    """
    train_fn = train_fn or _default_train_fn
    from .ebm import encode_bundle

    objects = {name: builtin_object(name) for name in spec.objects}
    cands = {
        name: sample_antipodal_grasps(objects[name], world.gripper, spec.candidate_count, spec.data_seed)
        for name in spec.objects
    }
    feas_splits = {}
    shared_val = {}
    shared_test = {}
    for name, obj in objects.items():
        feas = ds.generate_feasibility_dataset(world, obj, cands[name], spec.n_feasibility, spec.data_seed)
        feas_splits[name] = ds.split(feas, spec.split_fractions, spec.data_seed)
        shared_val[name] = ds.generate_shared_dataset(
            world, obj, cands[name], spec.n_shared_val, spec.data_seed
        )
        shared_test[name] = ds.generate_shared_dataset(
            world, obj, cands[name], spec.n_shared_test, spec.data_seed + 1
        )

    rows = []
    for combo in spec.train_combos:
        unknown = set(combo) - set(spec.objects)
        if unknown:
            raise UsageError(f"train combo references unknown objects {sorted(unknown)}")
        xs, ys, xvs, yvs = [], [], [], []
        for name in combo:
            train_b, _, val_b = feas_splits[name]
            x, y = encode_bundle(train_b, cands[name], world)
            xv, yv = encode_bundle(val_b, cands[name], world)
            xs.append(x)
            ys.append(y)
            xvs.append(xv)
            yvs.append(yv)
        x_tr = np.concatenate(xs)
        y_tr = np.concatenate(ys)
        x_val = np.concatenate(xvs)
        y_val = np.concatenate(yvs)
        for seed in spec.seeds:
            cfg = replace(spec.train, seed=seed)
            model_f = train_fn("feasibility", x_tr, y_tr, x_val, y_val, cfg)
            h_f_scores = []
            h_s_scores = []
            for name in combo:
                _, _, val_b = feas_splits[name]
                arrays = val_b.to_arrays()
                rows_g = cands[name].grasp_block()[arrays["grasp_index"]]
                e = model_energies(model_f, encode_feasibility_batch(arrays["poses"], rows_g, world))
                h_f_scores.extend(zip(e, arrays["labels"]))
                pi, pg, rws, labels = _shared_record_features(shared_val[name], cands[name])
                h_s_scores.extend(zip(_joint_scores(model_f, world, pi, pg, rws), labels))
            thresholds = Thresholds(
                h_f=calibrate_threshold(h_f_scores)[0], h_s=calibrate_threshold(h_s_scores)[0]
            )
            for target in spec.objects:
                for method in spec.methods:
                    if method not in ("J", "L"):
                        continue
                    metrics = _eval_shared_records(
                        method, model_f, world, shared_test[target], cands[target], thresholds
                    )
                    rows.append(
                        {
                            "seed": seed,
                            "train_combo": "+".join(combo),
                            "target": target,
                            "seen": target in combo,
                            "method": method,
                            **_metrics_row(metrics),
                        }
                    )
    return ReportTable(
        name=spec.name,
        columns=[
            "seed",
            "train_combo",
            "target",
            "seen",
            "method",
            "precision",
            "recall",
            "f1",
            "tp",
            "fp",
            "fn",
            "tn",
        ],
        rows=rows,
        meta={"objects": list(spec.objects), "data_seed": spec.data_seed},
    )


def emit_report(tables: list[ReportTable], fmt: str, out_dir: str | Path) -> list[Path]:
    """Write each table as <name>.csv or <name>.md plus a raw JSONL log."""
    if fmt not in ("csv", "markdown"):
        raise UsageError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for table in tables:
        raw = out / f"{table.name}.jsonl"
        with open(raw, "w") as fh:
            fh.write(json.dumps({"meta": table.meta, "columns": table.columns}) + "\n")
            for row in table.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        paths.append(raw)
        if fmt == "csv":
            path = out / f"{table.name}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(table.columns)
                for row in table.rows:
                    writer.writerow([row.get(c, "") for c in table.columns])
        else:
            path = out / f"{table.name}.md"
            lines = ["| " + " | ".join(table.columns) + " |"]
            lines.append("| " + " | ".join("---" for _ in table.columns) + " |")
            for row in table.rows:
                cells = []
                for c in table.columns:
                    v = row.get(c, "")
                    cells.append(f"{v:.3f}" if isinstance(v, float) else str(v))
                lines.append("| " + " | ".join(cells) + " |")
            path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def mean_f1(table: ReportTable, **filters) -> float:
    """Mean F1 over rows matching the given column filters."""
    values = [
        row["f1"]
        for row in table.rows
        if all(row.get(k) == v for k, v in filters.items())
    ]
    if not values:
        raise UsageError(f"no rows match {filters}")
    return float(np.mean(values))
