"""Plain-text dataset formats and the JSON report format.

All files are UTF-8 with LF line endings and '#' comments. Floats are
written with 17 significant digits, so save -> load -> save is
byte-identical. Formats:

* pose file:      ``<image_id> r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz``
  (the 3x4 ``[R|t]`` matrix, row-major)
* pairs file:     ``<query_id> <db_id_1> ... <db_id_K>`` with K >= 2
* estimates file: ``<query_id> <db_id> r11 .. r33 tx ty tz``
  (translation holds a direction; it is unit-normalized on load)
* report file:    JSON with a ``version`` tag; see :func:`make_report`

Rotations are accepted when ``||R^T R - I||_F`` and ``|det - 1|`` are
within 1e-4; entries outside the strict 1e-9 invariant are re-projected
onto SO(3) on load, and every such fix is logged and counted in the
returned metadata.
"""

from __future__ import annotations

import json
import logging
import math

import numpy as np

from .errors import (
    DuplicateIdError,
    InvalidRotationError,
    ParseError,
)
from .geometry import (
    DirectionalPose,
    Pose,
    ROTATION_ATOL,
    orthogonalize_9d,
    rotation_residual,
)
from .metrics import MetricReport
from .pipeline import LocalizationResult, SceneDatabase

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
# Parsed rotations may deviate this much before they are rejected.
INPUT_ROTATION_ATOL = 1e-4


def _format_floats(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)


def _iter_data_lines(path):
    """Yield (line_no, tokens) for non-empty lines, with '#' comments stripped."""
    with open(path, "r", encoding="utf-8", newline=None) as handle:
        for line_no, line in enumerate(handle, start=1):
            body = line.split("#", 1)[0]
            tokens = body.split()
            if tokens:
                yield line_no, tokens


def _parse_floats(path, line_no, tokens) -> list[float]:
    values = []
    for token in tokens:
        try:
            values.append(float(token))
        except ValueError:
            raise ParseError(path, line_no, f"not a number: '{token}'") from None
    if not all(math.isfinite(v) for v in values):
        raise ParseError(path, line_no, "numbers must be finite")
    return values


def _parse_rotation(path, line_no, values9) -> tuple[np.ndarray, bool]:
    """3x3 rotation from 9 row-major floats, tolerantly re-orthogonalized.

    Residuals within the strict invariant keep their exact parsed values
    (so round-trips are bitwise); residuals up to INPUT_ROTATION_ATOL are
    projected back onto SO(3); anything worse raises InvalidRotationError.
    Returns (rotation, was_reorthogonalized).
    """
    r = np.array(values9, dtype=np.float64).reshape(3, 3)
    residual = rotation_residual(r)
    det = float(np.linalg.det(r))
    if residual > INPUT_ROTATION_ATOL or abs(det - 1.0) > INPUT_ROTATION_ATOL:
        raise InvalidRotationError(
            path, line_no,
            f"not a rotation (||R^T R - I|| = {residual:.3e}, det = {det:.6f})")
    if residual > ROTATION_ATOL or abs(det - 1.0) > ROTATION_ATOL:
        fixed = orthogonalize_9d(r)
        logger.warning("%s:%d: re-orthogonalized rotation (residual %.3e)",
                       path, line_no, residual)
        return fixed, True
    return r, False


# ---------------------------------------------------------------------------
# pose files
# ---------------------------------------------------------------------------

def load_pose_file(path) -> SceneDatabase:
    """Parse a pose file into a SceneDatabase (insertion order preserved).

    ``metadata["reorthogonalized"]`` counts rotations that needed fixing.
    """
    entries: dict[str, Pose] = {}
    fixed = 0
    for line_no, tokens in _iter_data_lines(path):
        if len(tokens) != 13:
            raise ParseError(path, line_no,
                             f"expected id + 12 numbers, got {len(tokens)} fields")
        image_id = tokens[0]
        if image_id in entries:
            raise DuplicateIdError(path, line_no, f"duplicate id '{image_id}'")
        values = _parse_floats(path, line_no, tokens[1:])
        mat = np.array(values, dtype=np.float64).reshape(3, 4)
        rotation, was_fixed = _parse_rotation(path, line_no, mat[:, :3].ravel())
        fixed += was_fixed
        entries[image_id] = Pose(rotation, mat[:, 3])
    metadata = {"reorthogonalized": str(fixed)} if fixed else {}
    return SceneDatabase(entries, metadata)


def save_pose_file(database: SceneDatabase | dict, path) -> None:
    entries = database.entries if isinstance(database, SceneDatabase) else database
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for image_id, pose in entries.items():
            mat = np.hstack([pose.rotation, pose.translation[:, None]])
            handle.write(f"{image_id} {_format_floats(mat.ravel())}\n")


# ---------------------------------------------------------------------------
# pairs files
# ---------------------------------------------------------------------------

def load_pairs(path) -> dict[str, list[str]]:
    """Parse a retrieval plan: one query per line, >= 2 database ids."""
    plan: dict[str, list[str]] = {}
    for line_no, tokens in _iter_data_lines(path):
        if len(tokens) < 3:
            raise ParseError(path, line_no,
                             "a query needs at least 2 database ids")
        query_id, db_ids = tokens[0], tokens[1:]
        if query_id in plan:
            raise DuplicateIdError(path, line_no, f"duplicate query id '{query_id}'")
        if len(set(db_ids)) != len(db_ids):
            raise ParseError(path, line_no, "duplicate database id in pair list")
        plan[query_id] = db_ids
    return plan


def save_pairs(plan: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for query_id, db_ids in plan.items():
            handle.write(f"{query_id} {' '.join(db_ids)}\n")


# ---------------------------------------------------------------------------
# estimates files
# ---------------------------------------------------------------------------

def load_estimates(path) -> dict[tuple[str, str], DirectionalPose]:
    """Parse relative-pose estimates keyed by (query_id, database_id).

    Directions are unit-normalized on load (bitwise-preserved when
    already unit within 1e-9); zero directions are a ParseError.
    """
    estimates: dict[tuple[str, str], DirectionalPose] = {}
    for line_no, tokens in _iter_data_lines(path):
        if len(tokens) != 14:
            raise ParseError(path, line_no,
                             f"expected 2 ids + 12 numbers, got {len(tokens)} fields")
        key = (tokens[0], tokens[1])
        if key in estimates:
            raise DuplicateIdError(path, line_no, f"duplicate pair {key}")
        values = _parse_floats(path, line_no, tokens[2:])
        rotation, _ = _parse_rotation(path, line_no, values[:9])
        direction = np.array(values[9:], dtype=np.float64)
        norm = float(np.linalg.norm(direction))
        if norm <= 1e-12:
            raise ParseError(path, line_no, "translation direction is numerically zero")
        if abs(norm - 1.0) > 1e-9:
            direction = direction / norm
        estimates[key] = DirectionalPose(rotation, direction)
    return estimates


def save_estimates(estimates: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for (query_id, db_id), rel in estimates.items():
            values = np.concatenate([rel.rotation.ravel(), rel.direction])
            handle.write(f"{query_id} {db_id} {_format_floats(values)}\n")


# ---------------------------------------------------------------------------
# report files (JSON)
# ---------------------------------------------------------------------------

def _result_to_dict(result: LocalizationResult) -> dict:
    out: dict = {"query_id": result.query_id}
    if result.pose is not None:
        out["status"] = "ok"
        out["rotation"] = [[float(v) for v in row] for row in result.pose.rotation]
        out["translation"] = [float(v) for v in result.pose.translation]
    else:
        out["status"] = result.error
    out["pairs_used"] = result.pairs_used
    if result.condition_ratio is not None:
        out["condition_ratio"] = float(result.condition_ratio)
    if result.rotation_spread_deg is not None:
        out["rotation_spread_deg"] = float(result.rotation_spread_deg)
    return out


def _result_from_dict(entry: dict) -> LocalizationResult:
    status = entry["status"]
    pose = None
    error = None
    if status == "ok":
        pose = Pose(np.array(entry["rotation"]), np.array(entry["translation"]))
    else:
        error = status
    return LocalizationResult(
        query_id=entry["query_id"],
        pose=pose,
        error=error,
        pairs_used=int(entry["pairs_used"]),
        condition_ratio=entry.get("condition_ratio"),
        rotation_spread_deg=entry.get("rotation_spread_deg"),
    )


def _metrics_to_dict(metrics: MetricReport) -> dict:
    out: dict = {}
    if metrics.auc is not None:
        out["auc"] = {f"{threshold:g}": value for threshold, value in metrics.auc.items()}
    for field in ("rra15", "rta15", "maa30", "median_t", "median_r"):
        value = getattr(metrics, field)
        if value is not None:
            out[field] = float(value)
    out["n_total"] = metrics.n_total
    out["n_failed"] = metrics.n_failed
    return out


def metrics_from_report(report: dict) -> MetricReport | None:
    entry = report.get("metrics")
    if entry is None:
        return None
    auc = None
    if "auc" in entry:
        auc = {float(k): float(v) for k, v in entry["auc"].items()}
    return MetricReport(
        auc=auc,
        rra15=entry.get("rra15"),
        rta15=entry.get("rta15"),
        maa30=entry.get("maa30"),
        median_t=entry.get("median_t"),
        median_r=entry.get("median_r"),
        n_total=int(entry.get("n_total", 0)),
        n_failed=int(entry.get("n_failed", 0)),
    )


def results_from_report(report: dict) -> list[LocalizationResult] | None:
    entries = report.get("results")
    if entries is None:
        return None
    return [_result_from_dict(e) for e in entries]


def make_report(
    *,
    seed: int | None = None,
    results=None,
    metrics: MetricReport | None = None,
    extras: dict | None = None,
) -> dict:
    """Assemble the canonical report dictionary (JSON-serializable)."""
    report: dict = {"version": REPORT_VERSION}
    if seed is not None:
        report["seed"] = int(seed)
    if results is not None:
        report["results"] = [_result_to_dict(r) for r in results]
    if metrics is not None:
        report["metrics"] = _metrics_to_dict(metrics)
    if extras:
        report.update(extras)
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(report_to_json(report))


def load_report(path) -> dict:
    """Load and minimally validate a report file."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            report = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(report, dict) or "version" not in report:
        raise ParseError(path, None, "report must be a JSON object with a 'version' tag")
    if report["version"] != REPORT_VERSION:
        raise ParseError(path, None, f"unsupported report version {report['version']}")
    return report
