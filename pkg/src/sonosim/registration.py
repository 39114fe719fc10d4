"""Paired-point rigid registration between virtual and real spaces.

Solves for the transform mapping virtual-space points onto their measured
real-space counterparts (rotation first via the Kabsch SVD construction,
then translation), reports residual diagnostics, and persists the result
as a reusable anchor file so calibration only has to happen once.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .spatial import RigidTransform, Rotation, Vec3


class LengthMismatch(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


class DegenerateConfiguration(ValueError):
    pass


class ParseError(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


POINTS_CSV_HEADER = ["vx", "vy", "vz", "rx", "ry", "rz"]
ANCHOR_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PointCorrespondences:
    """Ordered virtual/real point pairs, in meters."""

    virtual_points: tuple[Vec3, ...]
    real_points: tuple[Vec3, ...]

    def __post_init__(self) -> None:
        if len(self.virtual_points) != len(self.real_points):
            raise LengthMismatch(
                f"{len(self.virtual_points)} virtual vs {len(self.real_points)} real points"
            )
        object.__setattr__(self, "virtual_points", tuple(self.virtual_points))
        object.__setattr__(self, "real_points", tuple(self.real_points))

    def __len__(self) -> int:
        return len(self.virtual_points)

    def virtual_array(self) -> np.ndarray:
        return np.array([[p.x, p.y, p.z] for p in self.virtual_points], dtype=float)

    def real_array(self) -> np.ndarray:
        return np.array([[p.x, p.y, p.z] for p in self.real_points], dtype=float)


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    rms_residual: float
    per_point_residuals: tuple[float, ...]


@dataclass(frozen=True)
class AnchorRecord:
    """Persisted virtual-to-real transform reusable across sessions."""

    transform: RigidTransform
    label: str
    created_at: datetime
    source_points: PointCorrespondences

    @staticmethod
    def create(transform: RigidTransform, label: str,
               source_points: PointCorrespondences,
               created_at: datetime | None = None) -> "AnchorRecord":
        if created_at is None:
            created_at = datetime.now(timezone.utc)
        return AnchorRecord(transform, label, created_at, source_points)


def _check_not_degenerate(points: np.ndarray, what: str) -> None:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] <= 1e-15 or s[1] <= 1e-10 * s[0]:
        raise DegenerateConfiguration(
            f"{what} points are coincident or collinear; rotation is not unique"
        )


def kabsch_solve(c: PointCorrespondences) -> RegistrationResult:
    """Least-squares rigid transform from virtual onto real points.

    Subtracts centroids, takes the SVD of the cross-covariance, corrects a
    reflection through the sign of det(V U^T) on the smallest singular
    direction, then recovers the translation from the rotated centroids.
    The returned rotation is always proper (det = +1).
    """
    if len(c) < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {len(c)}")
    a = c.virtual_array()
    b = c.real_array()
    _check_not_degenerate(a, "virtual")
    _check_not_degenerate(b, "real")

    centroid_a = a.mean(axis=0)
    centroid_b = b.mean(axis=0)
    h = (a - centroid_a).T @ (b - centroid_b)
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = centroid_b - r @ centroid_a

    transform = RigidTransform(Rotation.from_matrix(r), Vec3.from_array(t))
    rms, per_point = registration_residual(transform, c)
    return RegistrationResult(transform, rms, per_point)


def registration_residual(
    t: RigidTransform, c: PointCorrespondences
) -> tuple[float, tuple[float, ...]]:
    """RMS and per-point distances between transformed virtual and real points."""
    per_point = tuple(
        t.apply(v).distance_to(r)
        for v, r in zip(c.virtual_points, c.real_points)
    )
    rms = math.sqrt(sum(d * d for d in per_point) / len(per_point)) if per_point else 0.0
    return rms, per_point


def _anchor_to_dict(a: AnchorRecord) -> dict:
    r = a.transform.rotation
    t = a.transform.translation
    return {
        "version": ANCHOR_FORMAT_VERSION,
        "label": a.label,
        "created_at": a.created_at.astimezone(timezone.utc).isoformat(),
        "rotation_wxyz": [r.w, r.x, r.y, r.z],
        "translation_m": [t.x, t.y, t.z],
        "points": [
            [v.x, v.y, v.z, rp.x, rp.y, rp.z]
            for v, rp in zip(a.source_points.virtual_points, a.source_points.real_points)
        ],
    }


def save_anchor(a: AnchorRecord, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_anchor_to_dict(a), f, indent=2)
        f.write("\n")


def load_anchor(path) -> AnchorRecord:
    with open(path, "r", encoding="utf-8") as f:
        raw = f.read()
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ParseError(f"anchor file is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ParseError("anchor file must contain a JSON object")
    version = obj.get("version")
    if version != ANCHOR_FORMAT_VERSION:
        raise VersionMismatch(f"unsupported anchor version: {version!r}")
    try:
        w, x, y, z = (float(v) for v in obj["rotation_wxyz"])
        tx, ty, tz = (float(v) for v in obj["translation_m"])
        label = obj["label"]
        created_at = datetime.fromisoformat(obj["created_at"])
        rows = obj["points"]
        virtual = tuple(Vec3(float(row[0]), float(row[1]), float(row[2])) for row in rows)
        real = tuple(Vec3(float(row[3]), float(row[4]), float(row[5])) for row in rows)
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise ParseError(f"malformed anchor file: {e}") from e
    transform = RigidTransform(Rotation(w, x, y, z), Vec3(tx, ty, tz))
    points = PointCorrespondences(virtual, real)
    return AnchorRecord(transform, str(label), created_at, points)


def load_points_csv(path) -> PointCorrespondences:
    """Read a point-capture CSV with header vx,vy,vz,rx,ry,rz (meters)."""
    virtual: list[Vec3] = []
    real: list[Vec3] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("points file is empty") from None
        if [h.strip() for h in header] != POINTS_CSV_HEADER:
            raise ParseError(
                f"expected header {','.join(POINTS_CSV_HEADER)}, got {','.join(header)}"
            )
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 6:
                raise ParseError(f"row {i}: expected 6 values, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as e:
                raise ParseError(f"row {i}: {e}") from e
            virtual.append(Vec3(vals[0], vals[1], vals[2]))
            real.append(Vec3(vals[3], vals[4], vals[5]))
    return PointCorrespondences(tuple(virtual), tuple(real))


def save_points_csv(c: PointCorrespondences, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(POINTS_CSV_HEADER)
        for v, r in zip(c.virtual_points, c.real_points):
            writer.writerow([repr(v.x), repr(v.y), repr(v.z), repr(r.x), repr(r.y), repr(r.z)])
