"""Evaluation metrics for relative and absolute pose estimates.

All thresholds and reported angles are in degrees; absolute translation
errors are meters (distance between camera centers). Samples whose error
is undefined or whose localization failed enter ranking metrics as +inf,
so they reduce recall instead of being silently dropped.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import EmptyInputError, MissingGroundTruthError
from .geometry import (
    DirectionalPose,
    Pose,
    camera_center,
    rotation_angle,
    translation_angle,
)

REDUCERS = ("max", "min")


@dataclasses.dataclass(frozen=True)
class PairError:
    """Angular errors of one relative-pose estimate, in degrees.

    ``translation_error_deg`` is None when the ground-truth baseline is
    numerically zero (< 1e-9 m), where a direction error is undefined.
    """

    rotation_error_deg: float
    translation_error_deg: float | None


def pair_error(pred: DirectionalPose, gt: Pose) -> PairError:
    """Rotation and translation-direction angular errors against ground truth."""
    rot = math.degrees(rotation_angle(pred.rotation, gt.rotation))
    if float(np.linalg.norm(gt.translation)) < 1e-9:
        return PairError(rot, None)
    trans = math.degrees(translation_angle(pred.direction, gt.translation))
    return PairError(rot, trans)


def reduce_errors(pair_errors, reducer: str = "max") -> list[float]:
    """Collapse each PairError to one scalar; undefined entries become +inf."""
    if reducer not in REDUCERS:
        raise ValueError(f"reducer must be one of {REDUCERS}")
    combine = max if reducer == "max" else min
    out = []
    for e in pair_errors:
        if e.translation_error_deg is None:
            out.append(math.inf)
        else:
            out.append(float(combine(e.rotation_error_deg, e.translation_error_deg)))
    return out


def pose_auc(errors, tau: float) -> float:
    """Area under the recall-vs-error-threshold curve, normalized to [0, 1].

    The curve passes through (0, 0) and (e_i, i/N) for the sorted errors;
    the area is the trapezoidal integral up to the last error <= tau plus
    the terminal rectangle ``r_last * (tau - e_last)``, divided by tau.
    Errors of +inf (failures) lower the achievable recall.
    """
    errors = [float(e) for e in errors]
    if not errors:
        raise EmptyInputError("pose_auc needs at least one error")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if any(math.isnan(e) for e in errors):
        raise ValueError("errors must not contain NaN")
    errors.sort()
    n = len(errors)
    area = 0.0
    prev_e, prev_r = 0.0, 0.0
    for i, e in enumerate(errors, start=1):
        if e > tau:
            break
        r = i / n
        area += 0.5 * (prev_r + r) * (e - prev_e)
        prev_e, prev_r = e, r
    area += prev_r * (tau - prev_e)
    return area / tau


def rra_rta_maa(
    pair_errors,
    rra_threshold: float = 15.0,
    rta_threshold: float = 15.0,
    maa_threshold: float = 30.0,
    maa_reducer: str = "max",
) -> tuple[float, float, float]:
    """(RRA@15, RTA@15, mAA@30) over a list of PairError.

    RRA / RTA are the fractions of samples whose rotation / translation
    error is within the threshold (undefined translation errors count as
    misses). mAA is :func:`pose_auc` of the reduced errors at
    ``maa_threshold``.
    """
    pair_errors = list(pair_errors)
    if not pair_errors:
        raise EmptyInputError("rra_rta_maa needs at least one sample")
    n = len(pair_errors)
    rra = sum(1 for e in pair_errors if e.rotation_error_deg <= rra_threshold) / n
    rta = sum(
        1 for e in pair_errors
        if e.translation_error_deg is not None and e.translation_error_deg <= rta_threshold
    ) / n
    maa = pose_auc(reduce_errors(pair_errors, maa_reducer), maa_threshold)
    return rra, rta, maa


@dataclasses.dataclass(frozen=True)
class AbsoluteErrorSummary:
    """Medians over successful queries; failures are only counted.

    ``median_translation_m`` / ``median_rotation_deg`` are None when no
    query succeeded.
    """

    median_translation_m: float | None
    median_rotation_deg: float | None
    n_failed: int


def absolute_errors(results, ground_truth: dict[str, Pose]) -> AbsoluteErrorSummary:
    """Median absolute localization errors against ground-truth poses.

    ``results`` is an iterable of localization results (objects with
    ``query_id``, ``pose`` and ``error`` attributes). Translation error is
    the distance between camera centers in meters, rotation error the
    geodesic angle in degrees.

    Raises MissingGroundTruthError when a result has no ground-truth pose
    and EmptyInputError when ``results`` is empty.
    """
    results = list(results)
    if not results:
        raise EmptyInputError("absolute_errors needs at least one result")
    t_errors, r_errors = [], []
    n_failed = 0
    for result in results:
        if result.query_id not in ground_truth:
            raise MissingGroundTruthError(f"no ground truth for query '{result.query_id}'")
        if result.pose is None:
            n_failed += 1
            continue
        gt = ground_truth[result.query_id]
        t_errors.append(float(np.linalg.norm(camera_center(result.pose) - camera_center(gt))))
        r_errors.append(math.degrees(rotation_angle(result.pose.rotation, gt.rotation)))
    if not t_errors:
        return AbsoluteErrorSummary(None, None, n_failed)
    return AbsoluteErrorSummary(
        float(np.median(t_errors)), float(np.median(r_errors)), n_failed)


@dataclasses.dataclass(frozen=True)
class MetricReport:
    """Aggregate metrics in reporting form; fields not computed stay None.

    ``auc`` maps threshold (degrees) to AUC value. ``median_t`` is meters,
    ``median_r`` degrees.
    """

    auc: dict[float, float] | None = None
    rra15: float | None = None
    rta15: float | None = None
    maa30: float | None = None
    median_t: float | None = None
    median_r: float | None = None
    n_total: int = 0
    n_failed: int = 0


def relative_pose_report(
    pair_errors,
    thresholds=(5.0, 10.0, 20.0),
    reducer: str = "max",
) -> MetricReport:
    """AUC table plus RRA/RTA/mAA for a batch of relative-pose errors."""
    pair_errors = list(pair_errors)
    reduced = reduce_errors(pair_errors, reducer)
    auc = {float(t): pose_auc(reduced, float(t)) for t in thresholds}
    rra, rta, maa = rra_rta_maa(pair_errors)
    n_failed = sum(1 for e in pair_errors if e.translation_error_deg is None)
    return MetricReport(
        auc=auc, rra15=rra, rta15=rta, maa30=maa,
        n_total=len(pair_errors), n_failed=n_failed)
