"""Aggregate pairwise relative poses into an absolute query pose.

Each observation pairs a database camera (known absolute pose) with an
estimated query->database relative pose whose translation is a unit
direction. The absolute query rotation comes from quaternion averaging of
the per-pair candidates; the query camera center comes from least-squares
triangulation of the rays database-center -> query-center.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import (
    DegenerateGeometryError,
    DegenerateMeanError,
    EmptyInputError,
    TooFewPairsError,
)
from .geometry import (
    DirectionalPose,
    Pose,
    camera_center,
    quaternion_to_rotation,
    rotation_angle,
    rotation_to_quaternion,
    validate_unit_vector,
    _as_array,
)

ROTATION_MODES = ("median", "mean")


@dataclasses.dataclass(frozen=True)
class PairObservation:
    """One retrieved database camera plus the relative pose estimated against it."""

    database_pose: Pose
    rel: DirectionalPose


@dataclasses.dataclass(frozen=True)
class Ray:
    """Half-line ``origin + s * direction`` (s >= 0) with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _as_array(self.origin, (3,), "origin")
        d = validate_unit_vector(self.direction)
        o.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclasses.dataclass(frozen=True)
class AveragingConfig:
    """Knobs for the absolute-pose solver.

    rotation_mode: "median" (component-wise, robust to outliers) or "mean".
    degeneracy_threshold: minimum allowed ratio of smallest to largest
        singular value of the triangulation normal matrix.
    min_pairs: observations below this count are rejected outright.
    """

    rotation_mode: str = "median"
    degeneracy_threshold: float = 1e-6
    min_pairs: int = 2

    def __post_init__(self):
        if self.rotation_mode not in ROTATION_MODES:
            raise ValueError(f"rotation_mode must be one of {ROTATION_MODES}")
        if not (0.0 < self.degeneracy_threshold < 1.0):
            raise ValueError("degeneracy_threshold must lie in (0, 1)")
        if self.min_pairs < 2:
            raise ValueError("min_pairs must be at least 2")


def absolute_rotation_from_pair(observation: PairObservation) -> np.ndarray:
    """Absolute query rotation implied by one observation.

    With the query->database convention ``X_db = R_rel @ X_q + t_rel`` the
    candidate is ``R_q = R_rel^T @ R_db``.
    """
    return observation.rel.rotation.T @ observation.database_pose.rotation


def average_rotations(rotations, mode: str = "median") -> np.ndarray:
    """Average rotation matrices through quaternion space.

    Quaternions are sign-aligned to the first element (so the input list
    should not contain near-antipodal spreads), averaged component-wise by
    mean or median, renormalized, and converted back.

    Raises EmptyInputError on an empty list and DegenerateMeanError when
    the averaged quaternion has norm below 1e-9.
    """
    rotations = list(rotations)
    if not rotations:
        raise EmptyInputError("average_rotations needs at least one rotation")
    if mode not in ROTATION_MODES:
        raise ValueError(f"mode must be one of {ROTATION_MODES}")
    quats = np.array([rotation_to_quaternion(r) for r in rotations])
    signs = np.where(quats @ quats[0] < 0.0, -1.0, 1.0)
    quats = quats * signs[:, None]
    if mode == "mean":
        q = quats.mean(axis=0)
    else:
        # component-wise median; even counts average the two middle values
        q = np.median(quats, axis=0)
    norm = float(np.linalg.norm(q))
    if norm < 1e-9:
        raise DegenerateMeanError(f"averaged quaternion norm {norm:.3e} is numerically zero")
    return quaternion_to_rotation(q / norm)


def center_ray_from_pair(observation: PairObservation) -> Ray:
    """World-frame ray from the database camera center toward the query center.

    ``t_rel`` is the query center in database-camera coordinates, so the
    world direction is ``R_db^T @ direction`` (normalized defensively).
    """
    origin = camera_center(observation.database_pose)
    d = observation.database_pose.rotation.T @ observation.rel.direction
    return Ray(origin, d / np.linalg.norm(d))


def normal_system(rays) -> tuple[np.ndarray, np.ndarray]:
    """Normal equations of min_C sum_i ||(I - u_i u_i^T)(C - o_i)||^2.

    Returns (A, b) with ``A = sum_i (I - u_i u_i^T)`` and
    ``b = sum_i (I - u_i u_i^T) o_i``.
    """
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for ray in rays:
        p = np.eye(3) - np.outer(ray.direction, ray.direction)
        a += p
        b += p @ ray.origin
    return a, b


def condition_ratio(a) -> float:
    """Smallest over largest singular value of a 3x3 normal matrix."""
    s = np.linalg.svd(np.asarray(a, dtype=np.float64), compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return float(s[-1] / s[0])


def triangulate_center(rays, config: AveragingConfig | None = None) -> np.ndarray:
    """Least-squares point closest to all rays, solved through the SVD of A.

    Raises TooFewPairsError below ``config.min_pairs`` rays and
    DegenerateGeometryError when the normal matrix condition ratio falls
    below ``config.degeneracy_threshold`` (e.g. all rays parallel, which
    happens when every camera center is collinear).
    """
    config = config or AveragingConfig()
    rays = list(rays)
    if len(rays) < config.min_pairs:
        raise TooFewPairsError(f"got {len(rays)} rays, need at least {config.min_pairs}")
    a, b = normal_system(rays)
    u, s, vt = np.linalg.svd(a)
    ratio = float(s[-1] / s[0]) if s[0] > 0.0 else 0.0
    if ratio < config.degeneracy_threshold:
        raise DegenerateGeometryError(
            f"triangulation is degenerate (condition ratio {ratio:.3e} "
            f"< {config.degeneracy_threshold:.1e})",
            condition_ratio=ratio,
        )
    return vt.T @ ((u.T @ b) / s)


@dataclasses.dataclass(frozen=True)
class SolveDiagnostics:
    """Numbers worth reporting alongside a solved pose."""

    pairs_used: int
    condition_ratio: float
    rotation_spread_deg: float


def rotation_spread_deg(rotations, reference) -> float:
    """Largest geodesic angle (degrees) from ``reference`` to any rotation."""
    return math.degrees(max(rotation_angle(reference, r) for r in rotations))


def solve_absolute_pose(observations, config: AveragingConfig | None = None) -> Pose:
    """Absolute query pose from >= min_pairs observations.

    Rotation by quaternion averaging of the per-pair candidates, camera
    center by ray triangulation, then ``t = -R @ C``.
    """
    pose, _ = solve_absolute_pose_detailed(observations, config)
    return pose


def solve_absolute_pose_detailed(
    observations, config: AveragingConfig | None = None,
) -> tuple[Pose, SolveDiagnostics]:
    """Like :func:`solve_absolute_pose` but also returns diagnostics."""
    config = config or AveragingConfig()
    observations = list(observations)
    if len(observations) < config.min_pairs:
        raise TooFewPairsError(
            f"got {len(observations)} observations, need at least {config.min_pairs}")
    rotations = [absolute_rotation_from_pair(o) for o in observations]
    rotation = average_rotations(rotations, config.rotation_mode)
    spread = rotation_spread_deg(rotations, rotation)
    rays = [center_ray_from_pair(o) for o in observations]
    a, _ = normal_system(rays)
    ratio = condition_ratio(a)
    center = triangulate_center(rays, config)
    pose = Pose(rotation, -rotation @ center)
    return pose, SolveDiagnostics(len(observations), ratio, spread)
