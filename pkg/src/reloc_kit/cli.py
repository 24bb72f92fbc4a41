"""Command-line interface.

Subcommands::

    reloc-kit localize      absolute poses from a pose DB + pairs + estimates
    reloc-kit eval-relpose  AUC / RRA / RTA / mAA for relative-pose estimates
    reloc-kit synth         generate a synthetic scene + noisy estimates
    reloc-kit avg-bench     Monte-Carlo robustness table, median vs mean
    reloc-kit toy-train     overfit the toy regressor, save checkpoint + trace

Exit codes: 0 success, 1 input error, 2 ran but some queries failed
(degenerate or too few usable pairs). ``--format json`` prints a report
that round-trips through the report-file loader. The RELOC_KIT_THREADS
environment variable caps query-level worker threads (0 = auto).
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import fileio
from .averaging import (
    AveragingConfig,
    PairObservation,
    solve_absolute_pose,
)
from .errors import KeyMismatchError, RelocError
from .geometry import Pose, camera_center, rotation_angle
from .metrics import pair_error, relative_pose_report
from .pipeline import (
    EstimateTableProvider,
    OracleProvider,
    build_retrieval_plan,
    database_from_scene,
    localize,
    query_truth_from_scene,
    retrieve_oracle,
)
from .synthetic import NoiseModel, generate_scene, mix_seed, oracle_relative


def _worker_count() -> int | None:
    """Resolve RELOC_KIT_THREADS: unset/1 -> sequential, 0 -> all cores."""
    raw = os.environ.get("RELOC_KIT_THREADS", "").strip()
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise RelocError(f"RELOC_KIT_THREADS must be an integer, got '{raw}'") from None
    if value < 0:
        raise RelocError("RELOC_KIT_THREADS must be >= 0")
    if value == 0:
        return os.cpu_count()
    return value


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise RelocError(f"expected a comma-separated number list, got '{text}'") from None


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in _parse_float_list(text)]


def _emit(args, report: dict, text_lines: list[str]) -> None:
    if args.format == "json":
        sys.stdout.write(fileio.report_to_json(report))
    else:
        for line in text_lines:
            print(line)


# ---------------------------------------------------------------------------
# localize
# ---------------------------------------------------------------------------

def cmd_localize(args) -> int:
    database = fileio.load_pose_file(args.db)
    plan = fileio.load_pairs(args.pairs)
    estimates = fileio.load_estimates(args.estimates)
    config = AveragingConfig(
        rotation_mode=args.averaging,
        degeneracy_threshold=args.degeneracy_threshold,
        min_pairs=args.min_pairs,
    )
    results = localize(database, plan, EstimateTableProvider(estimates),
                       config, max_workers=_worker_count())
    report = fileio.make_report(results=results)
    if args.out:
        fileio.write_report(report, args.out)
    n_failed = sum(1 for r in results if r.error is not None)
    lines = [f"{r.query_id}: {r.error or 'ok'} ({r.pairs_used} pairs)" for r in results]
    lines.append(f"localized {len(results) - n_failed}/{len(results)} queries")
    if args.out:
        lines.append(f"report written to {args.out}")
    _emit(args, report, lines)
    return 2 if n_failed else 0


# ---------------------------------------------------------------------------
# eval-relpose
# ---------------------------------------------------------------------------

def cmd_eval_relpose(args) -> int:
    pred = fileio.load_estimates(args.pred)
    truth = fileio.load_estimates(args.gt)
    missing_pred = sorted(set(truth) - set(pred))
    missing_gt = sorted(set(pred) - set(truth))
    if missing_pred or missing_gt:
        parts = []
        if missing_pred:
            parts.append(f"pairs missing from predictions: {missing_pred[:5]}")
        if missing_gt:
            parts.append(f"pairs missing from ground truth: {missing_gt[:5]}")
        raise KeyMismatchError("; ".join(parts))
    errors = [
        pair_error(pred[key], Pose(truth[key].rotation, truth[key].direction))
        for key in truth
    ]
    metrics = relative_pose_report(
        errors, thresholds=_parse_float_list(args.thresholds), reducer=args.reducer)
    report = fileio.make_report(metrics=metrics)
    lines = [f"AUC@{threshold:g}: {value:.4f}" for threshold, value in metrics.auc.items()]
    lines += [
        f"RRA@15: {metrics.rra15:.4f}",
        f"RTA@15: {metrics.rta15:.4f}",
        f"mAA@30: {metrics.maa30:.4f}",
        f"pairs: {metrics.n_total} (undefined: {metrics.n_failed})",
    ]
    _emit(args, report, lines)
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    scene = generate_scene(args.n_db, args.n_query, extent=args.extent,
                           layout=args.layout, seed=args.seed)
    database = database_from_scene(scene)
    truth = query_truth_from_scene(scene)
    plan = build_retrieval_plan(database, truth, args.topk)
    noise = NoiseModel(
        rotation_sigma=args.noise_rot,
        direction_sigma=args.noise_dir,
        outlier_fraction=args.outlier_fraction,
        outlier_rotation=args.outlier_rotation,
        seed=args.seed,
    )
    provider = OracleProvider(database, truth, noise)
    clean = OracleProvider(database, truth, NoiseModel())
    estimates = {}
    gt_relposes = {}
    for query_id, db_ids in plan.items():
        for db_id in db_ids:
            estimates[(query_id, db_id)] = provider.estimate(query_id, db_id)
            gt_relposes[(query_id, db_id)] = clean.estimate(query_id, db_id)

    prefix = args.out_prefix
    files = {
        "db": f"{prefix}_db.txt",
        "query_gt": f"{prefix}_query_gt.txt",
        "pairs": f"{prefix}_pairs.txt",
        "estimates": f"{prefix}_estimates.txt",
        "gt_relposes": f"{prefix}_gt_relposes.txt",
    }
    fileio.save_pose_file(database, files["db"])
    fileio.save_pose_file(truth, files["query_gt"])
    fileio.save_pairs(plan, files["pairs"])
    fileio.save_estimates(estimates, files["estimates"])
    fileio.save_estimates(gt_relposes, files["gt_relposes"])

    report = fileio.make_report(seed=args.seed, extras={
        "scene": {"layout": scene.layout, "n_db": args.n_db, "n_query": args.n_query,
                  "extent": args.extent, "topk": args.topk},
        "files": files,
    })
    lines = [f"{kind}: {path}" for kind, path in files.items()]
    lines.append(f"layout: {scene.layout}, {args.n_db} database / {args.n_query} query cameras")
    lines.append(f"seed: {args.seed}")
    _emit(args, report, lines)
    return 0


# ---------------------------------------------------------------------------
# avg-bench
# ---------------------------------------------------------------------------

def _bench_trial(k_list, mode, trial_seed, noise_rot, noise_dir,
                 outlier_fraction, outlier_rotation, extent):
    """One Monte-Carlo trial; returns {k: (rot_err_deg, trans_err_m)}.

    The outlier count per K is deterministic, round(outlier_fraction * K),
    so every trial carries exactly the advertised contamination.
    """
    n_db = max(k_list)
    scene = generate_scene(n_db, 1, extent=extent, layout="general", seed=trial_seed)
    database = database_from_scene(scene)
    query_id, query_pose = scene.queries[0]
    neighbors = retrieve_oracle(database, query_pose, n_db)
    inlier_noise = NoiseModel(rotation_sigma=noise_rot, direction_sigma=noise_dir)
    outlier_noise = NoiseModel(rotation_sigma=0.0, direction_sigma=noise_dir,
                               outlier_fraction=1.0, outlier_rotation=outlier_rotation)
    rng = np.random.default_rng(mix_seed(trial_seed, "outliers"))
    out = {}
    for k in k_list:
        chosen = neighbors[:k]
        n_outliers = int(round(outlier_fraction * k))
        outlier_ids = set(rng.choice(k, size=n_outliers, replace=False)) if n_outliers else set()
        observations = []
        for index, db_id in enumerate(chosen):
            noise = outlier_noise if index in outlier_ids else inlier_noise
            rel = oracle_relative(query_pose, database.entries[db_id], noise,
                                  seed=mix_seed(trial_seed, query_id, db_id))
            observations.append(PairObservation(database.entries[db_id], rel))
        pose = solve_absolute_pose(observations, AveragingConfig(rotation_mode=mode))
        rot_err = math.degrees(rotation_angle(pose.rotation, query_pose.rotation))
        trans_err = float(np.linalg.norm(camera_center(pose) - camera_center(query_pose)))
        out[k] = (rot_err, trans_err)
    return out


def cmd_avg_bench(args) -> int:
    k_list = _parse_int_list(args.k_list)
    if not k_list or min(k_list) < 2:
        raise RelocError("--k-list needs integers >= 2")
    records = {(mode, k): [] for mode in ("median", "mean") for k in k_list}
    for trial in range(args.trials):
        trial_seed = mix_seed(args.seed, "trial", str(trial))
        for mode in ("median", "mean"):
            result = _bench_trial(k_list, mode, trial_seed, args.noise_rot,
                                  args.noise_dir, args.outlier_fraction,
                                  args.outlier_rotation, args.extent)
            for k, errors in result.items():
                records[(mode, k)].append(errors)

    rows = []
    for mode in ("median", "mean"):
        for k in k_list:
            rot, trans = zip(*records[(mode, k)])
            rows.append({
                "mode": mode, "k": k,
                "median_rotation_deg": float(np.median(rot)),
                "median_translation_m": float(np.median(trans)),
            })
    k_max = max(k_list)
    wins = sum(
        1 for a, b in zip(records[("median", k_max)], records[("mean", k_max)])
        if a[0] < b[0])

    report = fileio.make_report(seed=args.seed, extras={
        "bench": rows,
        "median_rotation_wins": {"k": k_max, "wins": wins, "trials": args.trials},
    })
    lines = [f"{'mode':<8}{'K':>4}  {'med rot (deg)':>14}  {'med trans (m)':>14}"]
    for row in rows:
        lines.append(f"{row['mode']:<8}{row['k']:>4}  "
                     f"{row['median_rotation_deg']:>14.6f}  "
                     f"{row['median_translation_m']:>14.6f}")
    lines.append(f"median beats mean on rotation (K={k_max}): {wins}/{args.trials} trials")
    lines.append(f"seed: {args.seed}")
    _emit(args, report, lines)
    return 0


# ---------------------------------------------------------------------------
# toy-train
# ---------------------------------------------------------------------------

def cmd_toy_train(args) -> int:
    # imported lazily so the geometry-only commands don't need torch loaded
    from .toy import (
        ToyModel,
        ToyModelConfig,
        forward_pair,
        make_training_pairs,
        save_checkpoint,
        save_trace,
        train_toy,
    )

    head_modes = {"9d": "directional_9d", "4d": "directional_4d",
                  "3d": "directional_3d", "metric": "metric_9d"}
    config = ToyModelConfig(head_mode=head_modes[args.head], seed=args.seed)
    pairs = make_training_pairs(args.pairs, config, seed=args.seed)
    model = ToyModel(config)
    trace = train_toy(model, pairs, steps=args.steps, learning_rate=args.lr)
    save_checkpoint(model, args.out)
    save_trace(trace, args.trace)

    sample = pairs[0]
    ab, ba = forward_pair(model, sample.image_a, sample.image_b)
    ba2, ab2 = forward_pair(model, sample.image_b, sample.image_a)
    symmetric = (np.array_equal(ab.rotation, ab2.rotation)
                 and np.array_equal(ab.direction, ab2.direction)
                 and np.array_equal(ba.rotation, ba2.rotation)
                 and np.array_equal(ba.direction, ba2.direction))

    final = trace[-1]
    report = fileio.make_report(seed=args.seed, extras={
        "training": {
            "head": args.head, "steps": args.steps, "pairs": args.pairs,
            "learning_rate": args.lr,
            "final_loss_r": final.loss_r, "final_loss_t": final.loss_t,
            "swap_symmetric": symmetric,
            "checkpoint": args.out, "trace": args.trace,
        },
    })
    lines = [
        f"trained {args.steps} steps on {args.pairs} pairs (head: {args.head})",
        f"final loss: rotation {final.loss_r:.6f} rad, translation {final.loss_t:.6f} rad",
        f"swap symmetry: {'exact' if symmetric else 'BROKEN'}",
        f"checkpoint: {args.out}",
        f"trace: {args.trace}",
        f"seed: {args.seed}",
    ]
    _emit(args, report, lines)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reloc-kit",
        description="Camera relocalization from pairwise relative poses.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("localize", help="solve absolute poses from relative estimates")
    p.add_argument("--db", required=True, help="database pose file")
    p.add_argument("--pairs", required=True, help="retrieval pairs file")
    p.add_argument("--estimates", required=True, help="relative pose estimates file")
    p.add_argument("--out", default=None, help="report JSON output path")
    p.add_argument("--averaging", choices=["median", "mean"], default="median")
    p.add_argument("--min-pairs", type=int, default=2)
    p.add_argument("--degeneracy-threshold", type=float, default=1e-6)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval-relpose", help="score relative-pose estimates")
    p.add_argument("--pred", required=True, help="predicted estimates file")
    p.add_argument("--gt", required=True, help="ground-truth estimates file")
    p.add_argument("--thresholds", default="5,10,20", help="AUC thresholds, degrees")
    p.add_argument("--reducer", choices=["max", "min"], default="max")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_eval_relpose)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--layout", choices=["general", "collinear", "planar"],
                   default="general")
    p.add_argument("--n-db", type=int, default=10)
    p.add_argument("--n-query", type=int, default=5)
    p.add_argument("--extent", type=float, default=5.0)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--noise-rot", type=float, default=0.0, help="rotation sigma, degrees")
    p.add_argument("--noise-dir", type=float, default=0.0, help="direction sigma, degrees")
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--outlier-rotation", type=float, default=90.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("avg-bench", help="median vs mean averaging robustness")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--k-list", default="2,5,10")
    p.add_argument("--noise-rot", type=float, default=5.0, help="rotation sigma, degrees")
    p.add_argument("--noise-dir", type=float, default=5.0, help="direction sigma, degrees")
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--outlier-rotation", type=float, default=90.0)
    p.add_argument("--extent", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_avg_bench)

    p = sub.add_parser("toy-train", help="overfit the toy pose regressor")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--head", choices=["9d", "4d", "3d", "metric"], default="9d")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--trace", required=True, help="loss trace CSV output path")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_toy_train)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RelocError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
