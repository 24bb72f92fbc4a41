"""Rigid-transform primitives: rotations, poses, angular distances, and
angular pose losses with analytic gradients.

Conventions used throughout the package:

* Poses are world-to-camera: ``X_cam = R @ X_world + t`` with OpenCV axes
  (x right, y down, z forward). The camera center in world coordinates is
  ``C = -R.T @ t``.
* Quaternions are ``(w, x, y, z)``, unit norm, sign-canonicalized so that
  ``w >= 0`` (if ``w == 0``, the first nonzero component is positive).
* Raw 9D rotation parameters are the row-major entries of an
  unconstrained 3x3 matrix; they are mapped onto SO(3) by
  :func:`orthogonalize_9d`.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import SingularInputError, ZeroVectorError

# Tolerance for the SO(3) invariants ||R^T R - I||_F and |det R - 1|.
ROTATION_ATOL = 1e-9
# Unit-norm tolerance for quaternions and direction vectors.
UNIT_ATOL = 1e-9
# Singular values below this count as zero when ranking a 3x3 input.
RANK_EPS = 1e-12
# Floor for inverse singular-value gaps in the orthogonalization backward
# pass; keeps the subgradient bounded near repeated singular values.
GAP_CLAMP = 1e-6


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def _as_array(value, shape, name: str) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: values must be finite")
    return a


def rotation_residual(matrix) -> float:
    """Frobenius norm of ``R^T R - I`` (0 for a perfect rotation)."""
    m = np.asarray(matrix, dtype=np.float64)
    return float(np.linalg.norm(m.T @ m - np.eye(3)))


def validate_rotation(matrix, atol: float = ROTATION_ATOL) -> np.ndarray:
    """Return ``matrix`` as float64 after checking it lies on SO(3).

    Raises ValueError when orthonormality or the determinant deviates by
    more than ``atol``.
    """
    m = _as_array(matrix, (3, 3), "rotation")
    residual = rotation_residual(m)
    if residual > atol:
        raise ValueError(f"rotation: ||R^T R - I|| = {residual:.3e} exceeds {atol:.1e}")
    det = float(np.linalg.det(m))
    if abs(det - 1.0) > atol:
        raise ValueError(f"rotation: det = {det:.12f} is not 1 within {atol:.1e}")
    return m


def validate_unit_vector(vector, atol: float = UNIT_ATOL, name: str = "direction") -> np.ndarray:
    v = _as_array(vector, (3,), name)
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > atol:
        raise ValueError(f"{name}: norm = {norm:.12f} is not 1 within {atol:.1e}")
    return v


# ---------------------------------------------------------------------------
# core value types
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform ``X_cam = rotation @ X_world + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = validate_rotation(self.rotation)
        t = _as_array(self.translation, (3,), "translation")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


@dataclasses.dataclass(frozen=True)
class DirectionalPose:
    """Relative transform whose translation is known only up to scale.

    ``direction`` is the unit vector along the relative translation; the
    rotation carries full information.
    """

    rotation: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        r = validate_rotation(self.rotation)
        d = validate_unit_vector(self.direction)
        r.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "direction", d)


# ---------------------------------------------------------------------------
# 9D / 4D / 3D rotation parameterizations
# ---------------------------------------------------------------------------

def orthogonalize_9d(raw) -> np.ndarray:
    """Project 9 unconstrained values onto the closest rotation matrix.

    The input (row-major 9-vector or 3x3 matrix) is decomposed as
    ``M = U S V^T`` and mapped to ``R = U diag(1, 1, det(U V^T)) V^T``, the
    special-orthogonal matrix minimizing ``||R - M||_F``.

    Raises SingularInputError when the two smallest singular values are
    below ``RANK_EPS`` (the projection is not well defined below rank 2).
    """
    m = np.asarray(raw, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(m)):
        raise ValueError("orthogonalize_9d: values must be finite")
    u, s, vt = np.linalg.svd(m)
    if s[1] < RANK_EPS:
        raise SingularInputError(
            f"input is numerically rank deficient (singular values {s})")
    sign = math.copysign(1.0, float(np.linalg.det(u) * np.linalg.det(vt)))
    return (u * np.array([1.0, 1.0, sign])) @ vt


def orthogonalize_batch(raw) -> np.ndarray:
    """Vectorized :func:`orthogonalize_9d` for inputs shaped (N, 9) or (N, 3, 3)."""
    m = np.asarray(raw, dtype=np.float64).reshape(-1, 3, 3)
    if not np.all(np.isfinite(m)):
        raise ValueError("orthogonalize_batch: values must be finite")
    u, s, vt = np.linalg.svd(m)
    if np.any(s[:, 1] < RANK_EPS):
        raise SingularInputError("batch contains a rank-deficient input")
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    fix = np.ones_like(s)
    fix[:, 2] = sign
    return (u * fix[:, None, :]) @ vt


def orthogonalize_9d_backward(raw, grad_rotation, gap_clamp: float = GAP_CLAMP) -> np.ndarray:
    """Backpropagate through :func:`orthogonalize_9d`.

    Given ``dL/dR`` for ``R = orthogonalize_9d(raw)``, returns ``dL/draw``
    as a row-major 9-vector. Uses the closed-form differential of the SVD
    projection; inverse singular-value gaps are clamped at ``gap_clamp``
    so the result stays a bounded subgradient near repeated singular
    values (where the true Jacobian blows up).
    """
    m = np.asarray(raw, dtype=np.float64).reshape(3, 3)
    g = _as_array(grad_rotation, (3, 3), "grad_rotation")
    u, s, vt = np.linalg.svd(m)
    if s[1] < RANK_EPS:
        raise SingularInputError("input is numerically rank deficient")
    sign = math.copysign(1.0, float(np.linalg.det(u) * np.linalg.det(vt)))
    h = np.array([1.0, 1.0, sign])
    ghat = u.T @ g @ vt.T
    w = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            denom = s[j] ** 2 - s[i] ** 2
            if abs(denom) < gap_clamp:
                denom = gap_clamp if denom >= 0.0 else -gap_clamp
            num = ghat[i, j] * (h[j] * s[j] - h[i] * s[i]) \
                - ghat[j, i] * (h[i] * s[j] - h[j] * s[i])
            w[i, j] = num / denom
    return (u @ w @ vt).ravel()


def rotation_from_3d(vector) -> np.ndarray:
    """Exponential map: axis-angle 3-vector (radians) to rotation matrix.

    The zero vector maps to the identity exactly.
    """
    v = _as_array(vector, (3,), "axis-angle")
    angle = float(np.linalg.norm(v))
    if angle == 0.0:
        return np.eye(3)
    axis = v / angle
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_from_4d(vector) -> np.ndarray:
    """Normalize a raw 4-vector to a unit quaternion and convert to a matrix.

    Raises ZeroVectorError when the norm is at or below 1e-12.
    """
    v = _as_array(vector, (4,), "quaternion")
    norm = float(np.linalg.norm(v))
    if norm <= 1e-12:
        raise ZeroVectorError("cannot normalize a zero 4-vector")
    return quaternion_to_rotation(v / norm)


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def canonicalize_quaternion(q) -> np.ndarray:
    """Flip the quaternion sign so w >= 0 (ties: first nonzero component > 0)."""
    v = _as_array(q, (4,), "quaternion")
    for component in v:
        if component != 0.0:
            return -v if component < 0.0 else v.copy()
    raise ZeroVectorError("cannot canonicalize a zero quaternion")


def quaternion_to_rotation(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    v = _as_array(q, (4,), "quaternion")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"quaternion norm {norm:.15f} is not 1 within 1e-12")
    w, x, y, z = v
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_to_quaternion(matrix) -> np.ndarray:
    """Rotation matrix to canonical unit quaternion (w, x, y, z).

    Uses the numerically stable branch on the largest of trace / diagonal
    entries, then renormalizes and canonicalizes the sign.
    """
    m = validate_rotation(matrix)
    trace = float(np.trace(m))
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        ])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([
            (m[2, 1] - m[1, 2]) / s,
            0.25 * s,
            (m[0, 1] + m[1, 0]) / s,
            (m[0, 2] + m[2, 0]) / s,
        ])
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([
            (m[0, 2] - m[2, 0]) / s,
            (m[0, 1] + m[1, 0]) / s,
            0.25 * s,
            (m[1, 2] + m[2, 1]) / s,
        ])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([
            (m[1, 0] - m[0, 1]) / s,
            (m[0, 2] + m[2, 0]) / s,
            (m[1, 2] + m[2, 1]) / s,
            0.25 * s,
        ])
    return canonicalize_quaternion(q / np.linalg.norm(q))


# ---------------------------------------------------------------------------
# angular distances
# ---------------------------------------------------------------------------

def rotation_angle(a, b) -> float:
    """Geodesic angle (radians, in [0, pi]) between two rotation matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cos = (float(np.trace(a.T @ b)) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos)))


def translation_angle(a, b) -> float:
    """Angle (radians, in [0, pi]) between two nonzero 3-vectors.

    Raises ZeroVectorError when either norm is at or below 1e-12.
    """
    va = _as_array(a, (3,), "vector a")
    vb = _as_array(b, (3,), "vector b")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na <= 1e-12 or nb <= 1e-12:
        raise ZeroVectorError("translation_angle requires nonzero vectors")
    cos = float(va @ vb) / (na * nb)
    return math.acos(min(1.0, max(-1.0, cos)))


# ---------------------------------------------------------------------------
# pose algebra
# ---------------------------------------------------------------------------

def compose(a: Pose, b: Pose) -> Pose:
    """Composition ``a after b``: the transform X -> a(b(X))."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(pose: Pose) -> Pose:
    return Pose(pose.rotation.T, -pose.rotation.T @ pose.translation)


def camera_center(pose: Pose) -> np.ndarray:
    """Camera center in world coordinates, ``C = -R^T t``."""
    return -pose.rotation.T @ pose.translation


def relative_pose(query: Pose, database: Pose) -> Pose:
    """Transform mapping query-camera coordinates into database-camera ones.

    Defined by ``P_rel = database o inverse(query)``, i.e.
    ``X_db = R_rel @ X_q + t_rel``. Note ``t_rel`` equals the query camera
    center expressed in the database camera frame, so ``||t_rel||`` is the
    baseline length.
    """
    r_rel = database.rotation @ query.rotation.T
    t_rel = database.translation - r_rel @ query.translation
    return Pose(r_rel, t_rel)


# ---------------------------------------------------------------------------
# angular pose loss with analytic gradients
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class PoseLoss:
    """Loss value plus gradients w.r.t. the raw prediction parameters.

    ``total = rotation_part + translation_part`` (both radians).
    ``grad_rotation_raw`` is the gradient w.r.t. the 9 raw (pre-SVD)
    rotation values; ``grad_direction`` is w.r.t. the translation
    direction vector.
    """

    total: float
    rotation_part: float
    translation_part: float
    grad_rotation_raw: np.ndarray
    grad_direction: np.ndarray


def _clamped_acos_with_grad(cos: float) -> tuple[float, float]:
    """acos of a clamped cosine and d(acos)/d(cos); 0 where the clamp is active."""
    if cos >= 1.0:
        return 0.0, 0.0
    if cos <= -1.0:
        return math.pi, 0.0
    return math.acos(cos), -1.0 / math.sqrt(1.0 - cos * cos)


def pose_loss(rotation_raw, direction, gt: Pose, gap_clamp: float = GAP_CLAMP) -> PoseLoss:
    """Angular rotation + translation-direction loss against a ground-truth pose.

    The prediction is given in its raw parameterization: 9 unconstrained
    rotation values (mapped through :func:`orthogonalize_9d`) and a
    translation direction vector (normalized internally, so gradients are
    valid for non-unit inputs too).

    loss = acos((trace(R_hat^T R_gt) - 1) / 2) + acos(<d_hat, t_gt> / (|d_hat| |t_gt|))

    Both arccos arguments are clamped to [-1, 1]; where the clamp is
    active the corresponding gradient is zero. The rotation gradient is
    propagated analytically through the SVD projection.

    Raises ZeroVectorError when the ground-truth translation or the
    predicted direction is numerically zero.
    """
    raw = np.asarray(rotation_raw, dtype=np.float64).reshape(9)
    if not np.all(np.isfinite(raw)):
        raise ValueError("pose_loss: rotation_raw must be finite")
    d = _as_array(direction, (3,), "direction")

    t_gt = gt.translation
    nt = float(np.linalg.norm(t_gt))
    nd = float(np.linalg.norm(d))
    if nt <= 1e-12 or nd <= 1e-12:
        raise ZeroVectorError("pose_loss requires nonzero direction and gt translation")

    # rotation term
    r_hat = orthogonalize_9d(raw)
    cos_r = (float(np.trace(r_hat.T @ gt.rotation)) - 1.0) / 2.0
    loss_r, dacos_r = _clamped_acos_with_grad(cos_r)
    if dacos_r == 0.0:
        grad_raw = np.zeros(9)
    else:
        grad_rhat = dacos_r * 0.5 * gt.rotation
        grad_raw = orthogonalize_9d_backward(raw, grad_rhat, gap_clamp)

    # translation term
    u = d / nd
    v = t_gt / nt
    cos_t = float(u @ v)
    loss_t, dacos_t = _clamped_acos_with_grad(min(1.0, max(-1.0, cos_t)))
    if dacos_t == 0.0:
        grad_d = np.zeros(3)
    else:
        grad_d = dacos_t * (v - cos_t * u) / nd

    return PoseLoss(
        total=loss_r + loss_t,
        rotation_part=loss_r,
        translation_part=loss_t,
        grad_rotation_raw=grad_raw,
        grad_direction=grad_d,
    )
