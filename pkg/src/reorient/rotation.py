"""Unit-quaternion algebra and the rotation samplers used across the pipeline.

Scalar-first convention: q = (qr, qi, qj, qk), serialized in that order.
All angles are radians. q and -q encode the same rotation; canonicalize()
picks the representative with qr >= 0. All dot products are clamped to
[-1, 1] before arccos.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IDENTITY",
    "UndefinedAxisError",
    "UnitQuaternion",
    "ZeroNormError",
    "angle_between",
    "canonicalize",
    "conjugate",
    "from_axis_angle",
    "from_matrix",
    "multiply",
    "normalize",
    "quat_to_angle",
    "rotation_axis",
    "rotation_difference",
    "sample_constrained",
    "sample_uniform_so3",
    "satisfies_constraints",
    "slerp",
    "to_matrix",
]


class ZeroNormError(ValueError):
    """4-vector is too close to zero to normalize."""


class UndefinedAxisError(ValueError):
    """Rotation axis requested for a (near-)identity quaternion."""


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation of angle 2*acos(qr) about axis (qi, qj, qk)/sqrt(1-qr^2).

    Instances are plain value objects; the unit-norm invariant is guaranteed
    by the factory functions in this module (normalize, samplers, slerp, ...),
    not by the constructor.
    """

    qr: float
    qi: float
    qj: float
    qk: float

    @classmethod
    def from_array(cls, a) -> "UnitQuaternion":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.qr, self.qi, self.qj, self.qk])

    def norm(self) -> float:
        return math.sqrt(
            self.qr * self.qr + self.qi * self.qi + self.qj * self.qj + self.qk * self.qk
        )


IDENTITY = UnitQuaternion(1.0, 0.0, 0.0, 0.0)


def _clamp(x: float) -> float:
    return max(-1.0, min(1.0, x))


def normalize(raw) -> UnitQuaternion:
    """Convert a 4-vector to a unit quaternion by dividing by its norm."""
    raw = np.asarray(raw, dtype=float)
    n = float(np.linalg.norm(raw))
    if n < 1e-12:
        raise ZeroNormError(f"cannot normalize 4-vector with norm {n}")
    return UnitQuaternion.from_array(raw / n)


def conjugate(q: UnitQuaternion) -> UnitQuaternion:
    """Inverse of a unit quaternion (negated imaginary components)."""
    return UnitQuaternion(q.qr, -q.qi, -q.qj, -q.qk)


def multiply(q0: UnitQuaternion, q1: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product q0 * q1; composes as to_matrix(q0) @ to_matrix(q1)."""
    a, b, c, d = q0.qr, q0.qi, q0.qj, q0.qk
    e, f, g, h = q1.qr, q1.qi, q1.qj, q1.qk
    return UnitQuaternion(
        a * e - b * f - c * g - d * h,
        a * f + b * e + c * h - d * g,
        a * g - b * h + c * e + d * f,
        a * h + b * g - c * f + d * e,
    )


def angle_between(q0: UnitQuaternion, q1: UnitQuaternion) -> float:
    """Rotation angle between two quaternions: 2*acos|<q0, q1>|, in [0, pi]."""
    dot = float(np.dot(q0.as_array(), q1.as_array()))
    return 2.0 * math.acos(_clamp(abs(dot)))


def rotation_difference(q0: UnitQuaternion, q1: UnitQuaternion) -> UnitQuaternion:
    """Quaternion rotation between two quaternions: q0 * q1^-1."""
    return multiply(q0, conjugate(q1))


def slerp(q0: UnitQuaternion, q1: UnitQuaternion, t: float) -> UnitQuaternion:
    """Spherical linear interpolation along the shortest arc.

    Constant angular speed: angle_between(q0, result) = t * angle_between(q0, q1).
    Falls back to normalized linear interpolation when the inputs are closer
    than 1e-7 rad (the sin(theta) denominator degenerates there).
    """
    a0 = q0.as_array()
    a1 = q1.as_array()
    dot = float(a0 @ a1)
    if dot < 0.0:  # shortest arc
        a1 = -a1
        dot = -dot
    dot = _clamp(dot)
    if 2.0 * math.acos(dot) < 1e-7:
        return normalize(a0 + t * (a1 - a0))
    omega = math.acos(dot)
    s = math.sin(omega)
    out = (math.sin((1.0 - t) * omega) * a0 + math.sin(t * omega) * a1) / s
    return normalize(out)


def quat_to_angle(q: UnitQuaternion) -> float:
    """Angle of rotation of a quaternion: 2*acos(qr), in [0, 2*pi)."""
    return 2.0 * math.acos(_clamp(q.qr))


def rotation_axis(q: UnitQuaternion) -> np.ndarray:
    """Axis of rotation (qi, qj, qk)/sqrt(1-qr^2) as a unit 3-vector."""
    s2 = 1.0 - q.qr * q.qr
    if s2 < 1e-12:
        raise UndefinedAxisError("rotation axis undefined for identity quaternion")
    return np.array([q.qi, q.qj, q.qk]) / math.sqrt(s2)


def canonicalize(q: UnitQuaternion) -> UnitQuaternion:
    """Pick the double-coverage representative with qr >= 0."""
    if q.qr < 0.0:
        return UnitQuaternion(-q.qr, -q.qi, -q.qj, -q.qk)
    return q


def from_axis_angle(axis, angle: float) -> UnitQuaternion:
    """Unit quaternion rotating by `angle` about (the normalization of) `axis`."""
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        raise ZeroNormError("rotation axis has zero norm")
    half = 0.5 * angle
    s = math.sin(half) / n
    return UnitQuaternion(math.cos(half), s * axis[0], s * axis[1], s * axis[2])


def to_matrix(q: UnitQuaternion) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion; to_matrix(q) == to_matrix(-q)."""
    w, x, y, z = q.qr, q.qi, q.qj, q.qk
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def from_matrix(m) -> UnitQuaternion:
    """Unit quaternion of a rotation matrix (Shepperd's method), canonicalized."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    return canonicalize(normalize(q))


def sample_uniform_so3(rng: np.random.Generator) -> UnitQuaternion:
    """Haar-uniform rotation: normalized 4-vector of independent Gaussians."""
    while True:
        v = rng.standard_normal(4)
        n = math.sqrt(float(v @ v))
        if n >= 1e-12:
            return UnitQuaternion.from_array(v / n)


def satisfies_constraints(q: UnitQuaternion, max_angle: float = math.pi / 6) -> bool:
    """Check the four dataset-sampling constraints.

    (1) unit norm, (2) qr > 0, (3) qr strictly larger than every |imaginary|
    component, (4) qr >= cos(max_angle / 2), which bounds the rotation angle
    by max_angle.
    """
    if abs(q.norm() - 1.0) > 1e-9:
        return False
    if q.qr <= 0.0:
        return False
    if q.qr <= abs(q.qi) or q.qr <= abs(q.qj) or q.qr <= abs(q.qk):
        return False
    return q.qr >= math.cos(max_angle / 2.0)


def sample_constrained(
    rng: np.random.Generator, max_angle: float = math.pi / 6
) -> UnitQuaternion:
    """Rejection-sample a rotation of angle <= max_angle meeting all four constraints.

    max_angle = 0 degenerates to the identity, which satisfies the constraint
    set exactly (used to force zero-rotation dataset records).
    """
    if max_angle <= 0.0:
        return IDENTITY
    qr_min = math.cos(max_angle / 2.0)
    while True:
        v = rng.standard_normal(4)
        n = math.sqrt(float(v @ v))
        if n < 1e-12:
            continue
        v /= n
        if v[0] < 0.0:
            v = -v
        if v[0] < qr_min or v[0] == 0.0:
            continue
        if v[0] <= abs(v[1]) or v[0] <= abs(v[2]) or v[0] <= abs(v[3]):
            continue
        return UnitQuaternion.from_array(v)
