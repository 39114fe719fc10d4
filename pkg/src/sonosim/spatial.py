"""Shared 3D math vocabulary: vectors, unit-quaternion rotations, rigid transforms, poses.

All types are immutable values; operations return new instances. The frame
convention is right-handed with z pointing up (out of the tissue).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_UNIT_TOL = 1e-9


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite component: {v!r}")


@dataclass(frozen=True)
class Vec3:
    """3D vector in meters (or unitless when used as a direction)."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))
        _check_finite(self.x, self.y, self.z)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "Vec3") -> "Vec3":
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def distance_to(self, other: "Vec3") -> float:
        return (self - other).norm()

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    @staticmethod
    def zero() -> "Vec3":
        return Vec3(0.0, 0.0, 0.0)

    def is_close(self, other: "Vec3", tol: float = 1e-9) -> bool:
        return self.distance_to(other) <= tol


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion (w, x, y, z), canonicalized to w >= 0.

    The constructor renormalizes when the norm has drifted beyond 1e-12 so
    long composition chains stay on the unit sphere.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        w, x, y, z = float(self.w), float(self.x), float(self.y), float(self.z)
        _check_finite(w, x, y, z)
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n == 0.0:
            raise ValueError("zero quaternion is not a rotation")
        if abs(n - 1.0) > 1e-12:
            w, x, y, z = w / n, x / n, y / n, z / n
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis: Vec3, angle: float) -> "Rotation":
        u = axis.normalized()
        half = 0.5 * angle
        s = math.sin(half)
        return Rotation(math.cos(half), u.x * s, u.y * s, u.z * s)

    @staticmethod
    def between_vectors(a: Vec3, b: Vec3) -> "Rotation":
        """Minimal-angle rotation carrying direction a onto direction b.

        For antipodal inputs any axis perpendicular to a is valid; a
        deterministic one is chosen.
        """
        ua = a.normalized()
        ub = b.normalized()
        d = max(-1.0, min(1.0, ua.dot(ub)))
        if d > 1.0 - 1e-14:
            return Rotation.identity()
        if d < -1.0 + 1e-12:
            # 180 degrees: pick any perpendicular axis deterministically.
            helper = Vec3(1.0, 0.0, 0.0) if abs(ua.x) < 0.9 else Vec3(0.0, 1.0, 0.0)
            axis = ua.cross(helper).normalized()
            return Rotation.from_axis_angle(axis, math.pi)
        axis = ua.cross(ub).normalized()
        return Rotation.from_axis_angle(axis, math.acos(d))

    @staticmethod
    def from_matrix(m) -> "Rotation":
        """Unit quaternion from a 3x3 rotation matrix (Shepperd's method)."""
        m = np.asarray(m, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0.0:
            s = 0.5 / math.sqrt(tr + 1.0)
            w = 0.25 / s
            x = (m[2, 1] - m[1, 2]) * s
            y = (m[0, 2] - m[2, 0]) * s
            z = (m[1, 0] - m[0, 1]) * s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return Rotation(w, x, y, z)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=float,
        )

    def apply(self, v: Vec3) -> Vec3:
        # q v q* expanded to avoid building intermediate quaternions.
        w, x, y, z = self.w, self.x, self.y, self.z
        tx = 2.0 * (y * v.z - z * v.y)
        ty = 2.0 * (z * v.x - x * v.z)
        tz = 2.0 * (x * v.y - y * v.x)
        return Vec3(
            v.x + w * tx + (y * tz - z * ty),
            v.y + w * ty + (z * tx - x * tz),
            v.z + w * tz + (x * ty - y * tx),
        )

    def compose(self, other: "Rotation") -> "Rotation":
        """Rotation equal to applying `other` first, then `self`."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Rotation(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "Rotation":
        return Rotation(self.w, -self.x, -self.y, -self.z)

    def angle(self) -> float:
        """Rotation angle in [0, pi]; atan2 form stays precise near identity."""
        vec = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        return 2.0 * math.atan2(vec, abs(self.w))

    def angle_to(self, other: "Rotation") -> float:
        return self.inverse().compose(other).angle()

    def axis_angle(self) -> tuple[Vec3, float]:
        s = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        if s < 1e-300:
            return Vec3(1.0, 0.0, 0.0), 0.0
        return Vec3(self.x / s, self.y / s, self.z / s), 2.0 * math.atan2(s, self.w)

    def rotation_vector(self) -> Vec3:
        """Axis-angle as a single 3-vector (axis * angle)."""
        axis, ang = self.axis_angle()
        return axis * ang

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def is_close(self, other: "Rotation", tol: float = 1e-9) -> bool:
        return self.angle_to(other) <= tol


def slerp(a: Rotation, b: Rotation, t: float) -> Rotation:
    """Spherical interpolation from a (t=0) to b (t=1) along the short arc."""
    dot = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z
    bw, bx, by, bz = b.w, b.x, b.y, b.z
    if dot < 0.0:
        dot, bw, bx, by, bz = -dot, -bw, -bx, -by, -bz
    dot = min(1.0, dot)
    if dot > 1.0 - 1e-10:
        # Nearly parallel: linear blend then renormalize.
        return Rotation(
            a.w + t * (bw - a.w),
            a.x + t * (bx - a.x),
            a.y + t * (by - a.y),
            a.z + t * (bz - a.z),
        )
    theta = math.acos(dot)
    sin_theta = math.sin(theta)
    ka = math.sin((1.0 - t) * theta) / sin_theta
    kb = math.sin(t * theta) / sin_theta
    return Rotation(
        ka * a.w + kb * bw,
        ka * a.x + kb * bx,
        ka * a.y + kb * by,
        ka * a.z + kb * bz,
    )


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: p -> R p + t."""

    rotation: Rotation
    translation: Vec3

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(Rotation.identity(), Vec3.zero())

    @staticmethod
    def from_translation(t: Vec3) -> "RigidTransform":
        return RigidTransform(Rotation.identity(), t)

    @staticmethod
    def from_rotation(r: Rotation) -> "RigidTransform":
        return RigidTransform(r, Vec3.zero())

    def apply(self, p: Vec3) -> Vec3:
        return self.rotation.apply(p) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then `self`."""
        return RigidTransform(
            self.rotation.compose(other.rotation),
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rinv = self.rotation.inverse()
        return RigidTransform(rinv, -rinv.apply(self.translation))

    def is_close(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (
            self.rotation.is_close(other.rotation, tol)
            and self.translation.is_close(other.translation, tol)
        )


@dataclass(frozen=True)
class Pose:
    """Position plus orientation of a body (probe, end effector, waypoint)."""

    position: Vec3
    orientation: Rotation

    @staticmethod
    def identity() -> "Pose":
        return Pose(Vec3.zero(), Rotation.identity())

    def as_transform(self) -> RigidTransform:
        return RigidTransform(self.orientation, self.position)

    def is_close(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (
            self.position.is_close(other.position, tol)
            and self.orientation.is_close(other.orientation, tol)
        )
