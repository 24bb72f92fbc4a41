"""Seeded synthetic scenes and a ground-truth relative-pose oracle.

Scenes are sets of database and query cameras with known world-to-camera
poses. The oracle converts any camera pair into the exact relative pose
and optionally perturbs it with a configurable noise model, which makes
end-to-end accuracy claims checkable against a known answer.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math

import numpy as np

from .errors import ZeroBaselineError
from .geometry import (
    DirectionalPose,
    Pose,
    camera_center,
    quaternion_to_rotation,
    relative_pose,
    rotation_from_3d,
)

LAYOUTS = ("general", "collinear", "planar")

# "general position" guarantees: no triple of camera centers collinear
# within this angle (radians), no pair closer than this fraction of extent.
COLLINEARITY_TOL = 1e-3
MIN_SEPARATION_FRACTION = 1e-3


@dataclasses.dataclass(frozen=True)
class SyntheticScene:
    """Named database and query cameras drawn inside a cube of side ``extent``."""

    database: list[tuple[str, Pose]]
    queries: list[tuple[str, Pose]]
    extent: float
    layout: str
    seed: int


@dataclasses.dataclass(frozen=True)
class NoiseModel:
    """Perturbation applied by the oracle to each relative pose.

    rotation_sigma / direction_sigma are in degrees; the applied angles
    are half-normal, ``|N(0, sigma)|``, about uniformly random axes. With
    probability ``outlier_fraction`` the rotation perturbation is replaced
    by a rotation of exactly ``outlier_rotation`` degrees.
    """

    rotation_sigma: float = 0.0
    direction_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_rotation: float = 90.0
    seed: int = 0

    def __post_init__(self):
        if self.rotation_sigma < 0 or self.direction_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not (0.0 <= self.outlier_fraction <= 1.0):
            raise ValueError("outlier_fraction must lie in [0, 1]")


def mix_seed(seed: int, *parts: str) -> int:
    """Derive a 64-bit stream seed from a base seed and string parts.

    Uses BLAKE2b with the base seed as key, so per-item streams are
    reproducible and independent of processing order.
    """
    h = hashlib.blake2b(
        "|".join(parts).encode("utf-8"),
        digest_size=8,
        key=int(seed).to_bytes(8, "little", signed=False),
    )
    return int.from_bytes(h.digest(), "little")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    return quaternion_to_rotation(q / np.linalg.norm(q))


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _line_angle(p, q, r) -> float:
    """Angle (radians, in [0, pi/2]) between directions q-p and r-p."""
    a = q - p
    b = r - p
    cross = np.linalg.norm(np.cross(a, b))
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return math.asin(min(1.0, cross / denom))


def _worst_triple(centers: np.ndarray) -> tuple[float, int]:
    """Smallest line angle over all center triples and one offending index."""
    n = len(centers)
    worst = math.inf
    idx = -1
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                ang = _line_angle(centers[i], centers[j], centers[k])
                if ang < worst:
                    worst = ang
                    idx = k
    return worst, idx


def _sample_general_positions(rng, count: int, extent: float, planar: bool) -> np.ndarray:
    """Centers in a cube (or a random plane slice of it) in general position."""
    if planar:
        normal = random_unit_vector(rng)
        e1 = random_unit_vector(rng)
        e1 = e1 - (e1 @ normal) * normal
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(normal, e1)
        offset = rng.uniform(-extent / 2, extent / 2, size=3)

    def draw(n):
        if planar:
            coords = rng.uniform(-extent / 2, extent / 2, size=(n, 2))
            return offset + coords[:, :1] * e1 + coords[:, 1:] * e2
        return rng.uniform(-extent / 2, extent / 2, size=(n, 3))

    centers = draw(count)
    min_sep = MIN_SEPARATION_FRACTION * extent
    for _ in range(10_000):
        dists = np.linalg.norm(centers[:, None] - centers[None, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        close = np.argwhere(dists < min_sep)
        if len(close):
            centers[close[0][1]] = draw(1)[0]
            continue
        if count >= 3:
            worst, idx = _worst_triple(centers)
            if worst <= COLLINEARITY_TOL:
                centers[idx] = draw(1)[0]
                continue
        return centers
    raise RuntimeError("could not place cameras in general position")


def generate_scene(
    n_database: int,
    n_queries: int,
    extent: float = 5.0,
    layout: str = "general",
    seed: int = 0,
) -> SyntheticScene:
    """Deterministically generate a synthetic scene.

    Layouts: "general" re-samples until no three camera centers are
    collinear within ~1e-3 rad; "planar" does the same inside one random
    plane; "collinear" places every center exactly on one random line
    (the known failure mode of ray triangulation).
    """
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}")
    if n_database < 2 or n_queries < 1:
        raise ValueError("need at least 2 database cameras and 1 query")
    if extent <= 0:
        raise ValueError("extent must be positive")
    rng = np.random.default_rng(seed)
    count = n_database + n_queries

    if layout == "collinear":
        base = rng.uniform(-extent / 2, extent / 2, size=3)
        direction = random_unit_vector(rng)
        # distinct offsets along the line, well separated
        offsets = (np.arange(count) + rng.uniform(0.05, 0.45, size=count)) \
            * (extent / max(count, 1)) - extent / 2
        centers = base + offsets[:, None] * direction
    else:
        centers = _sample_general_positions(rng, count, extent, planar=(layout == "planar"))

    poses = []
    for c in centers:
        r = random_rotation(rng)
        poses.append(Pose(r, -r @ c))
    database = [(f"db{i:03d}", poses[i]) for i in range(n_database)]
    queries = [(f"q{i:03d}", poses[n_database + i]) for i in range(n_queries)]
    return SyntheticScene(database, queries, float(extent), layout, int(seed))


def _perturb_direction(direction, angle_rad: float, rng) -> np.ndarray:
    """Rotate a unit vector by ``angle_rad`` about a random orthogonal axis."""
    if angle_rad == 0.0:
        return direction
    while True:
        v = random_unit_vector(rng)
        v = v - (v @ direction) * direction
        n = np.linalg.norm(v)
        if n > 1e-6:
            v /= n
            break
    return math.cos(angle_rad) * direction + math.sin(angle_rad) * v


def oracle_relative(
    query: Pose,
    database: Pose,
    noise: NoiseModel | None = None,
    seed: int | None = None,
) -> DirectionalPose:
    """Ground-truth query->database relative pose, optionally perturbed.

    The unperturbed output reproduces ``relative_pose(query, database)``
    with unit-normalized translation. Noise draws come from
    ``np.random.default_rng(seed)`` (default: ``noise.seed``), so a call
    is a pure function of its inputs; use :func:`mix_seed` to derive
    per-pair seeds. Draw order: outlier coin, rotation angle, rotation
    axis, direction angle, direction axis.

    Raises ZeroBaselineError when the two camera centers are within 1e-9.
    """
    noise = noise or NoiseModel()
    baseline = float(np.linalg.norm(camera_center(query) - camera_center(database)))
    if baseline <= 1e-9:
        raise ZeroBaselineError(f"camera centers coincide (baseline {baseline:.3e} m)")
    rel = relative_pose(query, database)
    direction = rel.translation / np.linalg.norm(rel.translation)

    rng = np.random.default_rng(noise.seed if seed is None else seed)
    is_outlier = rng.random() < noise.outlier_fraction
    angle = abs(rng.normal(0.0, math.radians(noise.rotation_sigma)))
    if is_outlier:
        angle = math.radians(noise.outlier_rotation)
    axis = random_unit_vector(rng)
    rotation = rel.rotation if angle == 0.0 else rotation_from_3d(axis * angle) @ rel.rotation

    dir_angle = abs(rng.normal(0.0, math.radians(noise.direction_sigma)))
    direction = _perturb_direction(direction, dir_angle, rng)
    return DirectionalPose(rotation, direction)
