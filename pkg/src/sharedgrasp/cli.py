"""Command-line entry point binding the pipeline together.

Subcommands: gen-grasps, gen-data, train, calibrate, predict, eval, bench,
report. Every command reads one JSON run-configuration file (--config) and
is idempotent given the same config and seed; timing tables are the only
artifacts whose bytes may differ between runs.

Exit codes: 0 success, 1 usage error, 2 artifact/hash mismatch,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import RunConfig
from .ebm import TrainConfig, encode_bundle, train
from .errors import ArtifactMismatchError, NumericalError, UsageError
from .evaluation import (
    benchmark_timing,
    data_efficiency_sweep,
    emit_report,
    generalization_unseen_grasps,
    generalization_unseen_objects,
    success_rate_trial,
    ReportTable,
)
from .geometry import Se2Pose
from .inference import (
    EnergyModel,
    Thresholds,
    analytical_shared,
    calibrate_threshold,
    model_energies,
    predict_feasible,
    predict_shared_D,
    predict_shared_J,
    predict_shared_L,
    select_grasp,
)
from .nn import init_params, load_checkpoint, save_checkpoint
from .rng import substream
from .scene import GraspCandidateSet, builtin_object, sample_antipodal_grasps


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2; remap usage errors to 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sharedgrasp", description=__doc__)
    parser.add_argument("--config", default=None, help="path to the JSON run configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-grasps", help="generate an antipodal grasp candidate set")
    p.add_argument("--object", default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen-data", help="generate labeled datasets and their splits")
    p.add_argument("--kind", choices=("feasibility", "shared"), required=True)
    p.add_argument("--object", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train an energy model")
    p.add_argument("--kind", choices=("feasibility", "direct_shared"), required=True)
    p.add_argument("--object", default=None)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("calibrate", help="calibrate a decision threshold")
    p.add_argument("--mode", choices=("h_f", "h_s", "h_s_prime"), required=True)
    p.add_argument("--object", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("predict", help="predict a shared-grasp set for one pose pair")
    p.add_argument("--method", choices=("F", "J", "D", "L", "A"), required=True)
    p.add_argument("--pose-init", required=True, help='"x,y,theta"')
    p.add_argument("--pose-goal", default=None, help='"x,y,theta" (not needed for F)')
    p.add_argument("--object", default=None)
    p.add_argument("--strategy", choices=("random", "min_energy"), default="min_energy")

    p = sub.add_parser("eval", help="run a named experiment end to end")
    p.add_argument(
        "--experiment",
        choices=("data_efficiency", "unseen_grasps", "unseen_objects", "success_rate"),
        required=True,
    )
    p.add_argument("--tag", default=None, help="report directory tag (default: timestamp)")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")

    p = sub.add_parser("bench", help="timing benchmark: analytical vs batched prediction")
    p.add_argument("--tag", default=None)
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")

    p = sub.add_parser("report", help="re-emit stored experiment tables")
    p.add_argument("--experiment", required=True)
    p.add_argument("--tag", required=True)
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    return parser


def _load_candidates(cfg: RunConfig, obj_name: str, count: int) -> GraspCandidateSet:
    path = cfg.grasps_path(obj_name, count)
    if not path.exists():
        raise UsageError(f"candidate set {path} missing; run gen-grasps first")
    return GraspCandidateSet.load(path, builtin_object(obj_name))


def _load_model(cfg: RunConfig, kind: str, obj_name: str, count: int, seed: int, ratio: float = 1.0):
    path = cfg.model_path(kind, obj_name, count, seed, ratio)
    if not path.exists():
        raise UsageError(f"model checkpoint {path} missing; run train first")
    params, meta = load_checkpoint(path)
    return EnergyModel(kind=kind, fn=params, candidate_set_hash=meta.get("candidate_set_hash"))


def _load_thresholds(cfg: RunConfig, obj_name: str, count: int) -> Thresholds:
    path = cfg.thresholds_path(obj_name, count)
    if not path.exists():
        raise UsageError(f"thresholds file {path} missing; run calibrate first")
    return Thresholds.load(path)


def _parse_pose(text: str) -> Se2Pose:
    try:
        x, y, theta = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f'pose {text!r} must be "x,y,theta"')
    return Se2Pose(x, y, theta)


def cmd_gen_grasps(cfg: RunConfig, args) -> int:
    obj_name = args.object or cfg.object_name
    count = args.count or cfg.candidate_count
    seed = cfg.seed if args.seed is None else args.seed
    obj = builtin_object(obj_name)
    cset = sample_antipodal_grasps(obj, cfg.world().gripper, count, seed)
    path = cfg.grasps_path(obj_name, count)
    path.parent.mkdir(parents=True, exist_ok=True)
    cset.save(path)
    print(f"wrote {len(cset)} candidates to {path}")
    print(f"content_hash {cset.content_hash}")
    return 0


def cmd_gen_data(cfg: RunConfig, args) -> int:
    obj_name = args.object or cfg.object_name
    seed = cfg.seed if args.seed is None else args.seed
    params = cfg.data_params()
    n = args.n or (params["n_feasibility"] if args.kind == "feasibility" else params["n_shared"])
    if n <= 0:
        raise UsageError("record count must be positive")
    world = cfg.world()
    obj = builtin_object(obj_name)
    cands = _load_candidates(cfg, obj_name, cfg.candidate_count)
    generate = (
        ds.generate_feasibility_dataset if args.kind == "feasibility" else ds.generate_shared_dataset
    )
    bundle = generate(world, obj, cands, n, seed)
    ds.save(bundle, cfg.dataset_path(obj_name, args.kind, seed))
    for tag, split_bundle in zip(
        ("train", "test", "val"), ds.split(bundle, params["split_fractions"], seed)
    ):
        ds.save(split_bundle, cfg.dataset_path(obj_name, args.kind, seed, tag))
    frac = bundle.positive_count / len(bundle)
    print(f"wrote {len(bundle)} records ({frac:.3f} positive) under {cfg.dataset_path(obj_name, args.kind, seed).parent}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    obj_name = args.object or cfg.object_name
    seed = cfg.seed if args.seed is None else args.seed
    world = cfg.world()
    cands = _load_candidates(cfg, obj_name, cfg.candidate_count)
    data_kind = "feasibility" if args.kind == "feasibility" else "shared"
    train_b = ds.load(cfg.dataset_path(obj_name, data_kind, cfg.seed, "train"), cands, world)
    val_b = ds.load(cfg.dataset_path(obj_name, data_kind, cfg.seed, "val"), cands, world)
    if args.ratio != 1.0:
        train_b = ds.subsample_groups(train_b, args.ratio, seed)
    tc = cfg.train_config(seed=seed)
    result = train(train_b, cands, world, tc, args.kind, val_bundle=val_b)
    meta = {
        "kind": args.kind,
        "object": obj_name,
        "candidate_set_hash": cands.content_hash,
        "world_digest": world.digest(),
        "train_config_digest": tc.digest(),
        "ratio": args.ratio,
        "best_epoch": result.best_epoch,
        "best_val_f1": result.best_val_f1,
    }
    model_path = cfg.model_path(args.kind, obj_name, cfg.candidate_count, seed, args.ratio)
    save_checkpoint(result.params, model_path, meta)
    result.history.to_csv(cfg.history_path(args.kind, obj_name, cfg.candidate_count, seed, args.ratio))
    print(f"trained {args.kind} model: best val F1 {result.best_val_f1:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint {model_path}")
    return 0


def cmd_calibrate(cfg: RunConfig, args) -> int:
    obj_name = args.object or cfg.object_name
    seed = cfg.seed if args.seed is None else args.seed
    world = cfg.world()
    cands = _load_candidates(cfg, obj_name, cfg.candidate_count)
    path = cfg.thresholds_path(obj_name, cfg.candidate_count)
    thresholds = Thresholds.load(path) if path.exists() else Thresholds()

    if args.mode in ("h_f", "h_s"):
        model = _load_model(cfg, "feasibility", obj_name, cfg.candidate_count, seed)
    else:
        model = _load_model(cfg, "direct_shared", obj_name, cfg.candidate_count, seed)
    if model.candidate_set_hash != cands.content_hash:
        raise ArtifactMismatchError("model checkpoint does not match the candidate set")

    if args.mode == "h_f":
        val = ds.load(cfg.dataset_path(obj_name, "feasibility", cfg.seed, "val"), cands, world)
        x, y = encode_bundle(val, cands, world)
        threshold, f1 = calibrate_threshold(list(zip(model_energies(model, x), y)))
        thresholds.h_f = threshold
    else:
        val = ds.load(cfg.dataset_path(obj_name, "shared", cfg.seed, "val"), cands, world)
        arrays = val.to_arrays()
        rows = cands.grasp_block()[arrays["grasp_index"]]
        from .ebm import encode_feasibility_batch, encode_shared_batch

        if args.mode == "h_s":
            e = model_energies(model, encode_feasibility_batch(arrays["poses_init"], rows, world))
            e = e + model_energies(model, encode_feasibility_batch(arrays["poses_goal"], rows, world))
        else:
            e = model_energies(
                model, encode_shared_batch(arrays["poses_init"], arrays["poses_goal"], rows, world)
            )
        threshold, f1 = calibrate_threshold(list(zip(e, arrays["labels"])))
        if args.mode == "h_s":
            thresholds.h_s = threshold
        else:
            thresholds.h_s_prime = threshold
    thresholds.provenance[args.mode] = val.digest()
    thresholds.save(path)
    print(f"{args.mode} = {threshold:.6f} (validation F1 {f1:.4f})")
    print(f"thresholds {path}")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    obj_name = args.object or cfg.object_name
    world = cfg.world()
    obj = builtin_object(obj_name)
    cands = _load_candidates(cfg, obj_name, cfg.candidate_count)
    pose_init = _parse_pose(args.pose_init)
    pose_goal = _parse_pose(args.pose_goal) if args.pose_goal else None
    if args.method != "F" and pose_goal is None:
        raise UsageError(f"method {args.method} needs --pose-goal")

    if args.method == "A":
        result = analytical_shared(world, obj, cands, pose_init, pose_goal)
    else:
        thresholds = _load_thresholds(cfg, obj_name, cfg.candidate_count)
        kind = "direct_shared" if args.method == "D" else "feasibility"
        model = _load_model(cfg, kind, obj_name, cfg.candidate_count, cfg.seed)
        if args.method == "F":
            result = predict_feasible(model, thresholds, world, pose_init, cands)
        elif args.method == "J":
            result = predict_shared_J(model, thresholds, world, pose_init, pose_goal, cands)
        elif args.method == "D":
            result = predict_shared_D(model, thresholds, world, pose_init, pose_goal, cands)
        else:
            result = predict_shared_L(model, thresholds, world, pose_init, pose_goal, cands)
    strategy = args.strategy if result.ranking_energy() is not None else "random"
    selected = select_grasp(result, strategy, substream(cfg.seed, "trials"))
    doc = {
        "method": args.method,
        "pose_init": list(pose_init.as_tuple()),
        "pose_goal": list(pose_goal.as_tuple()) if pose_goal else None,
        "mask": [bool(v) for v in result.mask],
        "energies": {k: [float(x) for x in v] for k, v in result.energies.items()},
        "selected_index": selected,
        "threshold_used": result.threshold_used,
    }
    print(json.dumps(doc))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    world = cfg.world()
    tag = args.tag or time.strftime("%Y%m%d-%H%M%S")
    out = cfg.reports_dir(args.experiment, tag)
    if args.experiment == "success_rate":
        spec = cfg.experiment_spec("success_rate")
        obj = builtin_object(cfg.object_name)
        cands = _load_candidates(cfg, cfg.object_name, cfg.candidate_count)
        model = thresholds = None
        if any(m in spec.methods for m in ("J", "D", "L")):
            model = _load_model(cfg, "feasibility", cfg.object_name, cfg.candidate_count, cfg.seed)
            thresholds = _load_thresholds(cfg, cfg.object_name, cfg.candidate_count)
        rows = []
        for method in spec.methods:
            strategies = ("random", "min_energy") if method in ("J", "D", "L") else ("random",)
            for strategy in strategies:
                stats = success_rate_trial(
                    world, obj, cands, method, strategy, spec.n_trials, spec.data_seed,
                    model=model, thresholds=thresholds,
                )
                rows.append(
                    {
                        "method": method,
                        "strategy": strategy,
                        "success_rate": stats.success_rate,
                        "mean_predict_s": stats.mean_predict_s,
                        "resample_rate": stats.resample_rate,
                        "mean_true_shared_fraction": stats.mean_true_shared_fraction,
                        "n_trials": spec.n_trials,
                        "seed": spec.data_seed,
                    }
                )
        table = ReportTable(
            name="success_rate",
            columns=[
                "method",
                "strategy",
                "success_rate",
                "mean_predict_s",
                "resample_rate",
                "mean_true_shared_fraction",
                "n_trials",
                "seed",
            ],
            rows=rows,
            meta={"object": obj.name, "candidate_count": len(cands)},
        )
    elif args.experiment == "data_efficiency":
        table = data_efficiency_sweep(world, cfg.experiment_spec("data_efficiency"))
    elif args.experiment == "unseen_grasps":
        table = generalization_unseen_grasps(world, cfg.experiment_spec("unseen_grasps"))
    else:
        table = generalization_unseen_objects(world, cfg.experiment_spec("unseen_objects"))
    paths = emit_report([table], args.format, out)
    for p in paths:
        print(p)
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    world = cfg.world()
    obj = builtin_object(cfg.object_name)
    spec = cfg.experiment_spec("bench")
    sizes = sorted(spec.candidate_sizes)
    master = sample_antipodal_grasps(obj, world.gripper, max(sizes), cfg.seed)
    sets = [master.subset(s) for s in sizes]
    model_path = cfg.model_path("feasibility", cfg.object_name, cfg.candidate_count, cfg.seed)
    if model_path.exists():
        params, _ = load_checkpoint(model_path)
    else:
        params = init_params((9, 256, 256, 1), seed=cfg.seed)
    table = benchmark_timing(
        world, obj, sets, methods=("A", "J"), n_trials=spec.n_trials, seed=cfg.seed, model=params
    )
    tag = args.tag or time.strftime("%Y%m%d-%H%M%S")
    out = cfg.reports_dir("bench", tag)
    for p in emit_report([table], args.format, out):
        print(p)
    a = {r["size"]: r["median_s"] for r in table.rows if r["method"] == "A"}
    j = {r["size"]: r["median_s"] for r in table.rows if r["method"] == "J"}
    for size in sizes:
        print(f"N={size}: A median {a[size]*1e3:.1f} ms, J median {j[size]*1e3:.1f} ms, speedup {a[size]/j[size]:.1f}x")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    raw_dir = cfg.reports_dir(args.experiment, args.tag)
    raw_files = sorted(raw_dir.glob("*.jsonl"))
    if not raw_files:
        raise UsageError(f"no stored tables under {raw_dir}")
    tables = []
    for raw in raw_files:
        lines = raw.read_text().splitlines()
        head = json.loads(lines[0])
        rows = [json.loads(line) for line in lines[1:]]
        tables.append(
            ReportTable(name=raw.stem, columns=head["columns"], rows=rows, meta=head.get("meta", {}))
        )
    for p in emit_report(tables, args.format, raw_dir):
        print(p)
    return 0


_COMMANDS = {
    "gen-grasps": cmd_gen_grasps,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = RunConfig.from_file(args.config)
        return _COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ArtifactMismatchError as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
