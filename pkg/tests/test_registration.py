import json
import math
from datetime import datetime, timezone

import numpy as np
import pytest
from scipy.optimize import minimize

from sonosim.registration import (
    AnchorRecord,
    DegenerateConfiguration,
    LengthMismatch,
    ParseError,
    PointCorrespondences,
    TooFewPoints,
    VersionMismatch,
    kabsch_solve,
    load_anchor,
    load_points_csv,
    registration_residual,
    save_anchor,
    save_points_csv,
)
from sonosim.spatial import RigidTransform, Rotation, Vec3

CUBE = [
    Vec3(x, y, z)
    for x in (0.0, 0.1)
    for y in (0.0, 0.1)
    for z in (0.0, 0.1)
]


def rand_rigid(rng) -> RigidTransform:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return RigidTransform(Rotation(*q), Vec3(*rng.normal(scale=0.5, size=3)))


def correspondences(points, transform, noise=None):
    real = [transform.apply(p) for p in points]
    if noise is not None:
        real = [Vec3(p.x + n[0], p.y + n[1], p.z + n[2]) for p, n in zip(real, noise)]
    return PointCorrespondences(tuple(points), tuple(real))


def brute_force_best_rms(c: PointCorrespondences) -> float:
    """Independent oracle: coarse rotation grid, then gradient refinement of
    the squared-distance objective over (rotation vector, translation)."""
    virtual = c.virtual_array()
    real = c.real_array()

    def objective(params):
        rvec = params[:3]
        t = params[3:]
        angle = np.linalg.norm(rvec)
        if angle < 1e-12:
            rot = np.eye(3)
        else:
            k = rvec / angle
            kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
            rot = np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * (kx @ kx)
        residuals = virtual @ rot.T + t - real
        return float(np.sum(residuals**2))

    seeds = [np.zeros(3)]
    for axis in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0])):
        for angle in (math.pi / 2, math.pi, 3 * math.pi / 2):
            seeds.append(axis * angle)
    best = math.inf
    centroid_shift = real.mean(axis=0) - virtual.mean(axis=0)
    for seed in seeds:
        x0 = np.concatenate([seed, centroid_shift])
        res = minimize(objective, x0, method="Powell",
                       options={"xtol": 1e-12, "ftol": 1e-14, "maxiter": 20000})
        best = min(best, res.fun)
    return math.sqrt(best / len(virtual))


class TestKabschSolve:
    def test_identity_on_equal_sets(self):
        res = kabsch_solve(PointCorrespondences(tuple(CUBE), tuple(CUBE)))
        assert res.transform.is_close(RigidTransform.identity(), 1e-12)
        assert res.rms_residual < 1e-12

    def test_pure_translation(self):
        t = RigidTransform.from_translation(Vec3(1.0, 2.0, 3.0))
        res = kabsch_solve(correspondences(CUBE, t))
        assert res.transform.rotation.is_close(Rotation.identity(), 1e-9)
        assert res.transform.translation.distance_to(Vec3(1, 2, 3)) < 1e-12
        assert res.rms_residual < 1e-12

    def test_rot_z_90_recovered(self):
        rng = np.random.default_rng(10)
        pts = [Vec3(*p) for p in rng.normal(size=(8, 3))]
        rot = Rotation.from_axis_angle(Vec3(0, 0, 1), math.pi / 2)
        res = kabsch_solve(correspondences(pts, RigidTransform.from_rotation(rot)))
        assert res.transform.rotation.angle_to(rot) < 1e-9

    def test_random_rigid_recovery(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            pts = [Vec3(*p) for p in rng.normal(size=(8, 3))]
            truth = rand_rigid(rng)
            res = kabsch_solve(correspondences(pts, truth))
            assert res.transform.rotation.angle_to(truth.rotation) < 1e-9
            assert res.transform.translation.distance_to(truth.translation) < 1e-9

    def test_noisy_matches_brute_force_oracle(self):
        rng = np.random.default_rng(12)
        pts = [Vec3(*p) for p in rng.normal(scale=0.2, size=(8, 3))]
        truth = rand_rigid(rng)
        noise = rng.normal(scale=1e-3, size=(8, 3))
        c = correspondences(pts, truth, noise)
        res = kabsch_solve(c)
        assert abs(res.rms_residual - brute_force_best_rms(c)) < 1e-6

    def test_mirrored_points_still_proper_rotation(self):
        rng = np.random.default_rng(13)
        pts = [Vec3(*p) for p in rng.normal(size=(8, 3))]
        mirrored = [Vec3(-p.x, p.y, p.z) for p in pts]
        res = kabsch_solve(PointCorrespondences(tuple(pts), tuple(mirrored)))
        det = np.linalg.det(res.transform.rotation.to_matrix())
        assert abs(det - 1.0) < 1e-9

    def test_local_optimality_of_solution(self):
        rng = np.random.default_rng(14)
        pts = [Vec3(*p) for p in rng.normal(size=(10, 3))]
        truth = rand_rigid(rng)
        noise = rng.normal(scale=2e-3, size=(10, 3))
        c = correspondences(pts, truth, noise)
        res = kabsch_solve(c)
        base = sum(d * d for d in res.per_point_residuals)
        for axis in (Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)):
            for sign in (1.0, -1.0):
                bumped_rot = Rotation.from_axis_angle(axis, sign * 1e-3).compose(
                    res.transform.rotation
                )
                perturbed = RigidTransform(bumped_rot, res.transform.translation)
                _, per_point = registration_residual(perturbed, c)
                assert sum(d * d for d in per_point) >= base - 1e-15
                shifted = RigidTransform(
                    res.transform.rotation, res.transform.translation + axis * (sign * 1e-4)
                )
                _, per_point = registration_residual(shifted, c)
                assert sum(d * d for d in per_point) >= base - 1e-15

    def test_permutation_invariance(self):
        rng = np.random.default_rng(15)
        pts = [Vec3(*p) for p in rng.normal(size=(8, 3))]
        truth = rand_rigid(rng)
        c = correspondences(pts, truth)
        res = kabsch_solve(c)
        perm = rng.permutation(8)
        shuffled = PointCorrespondences(
            tuple(c.virtual_points[i] for i in perm),
            tuple(c.real_points[i] for i in perm),
        )
        res2 = kabsch_solve(shuffled)
        assert res.transform.is_close(res2.transform, 1e-9)

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            kabsch_solve(PointCorrespondences(tuple(CUBE[:2]), tuple(CUBE[:2])))

    def test_collinear_points_degenerate(self):
        line = tuple(Vec3(float(i), 2.0 * i, -i) for i in range(5))
        with pytest.raises(DegenerateConfiguration):
            kabsch_solve(PointCorrespondences(line, line))

    def test_coincident_points_degenerate(self):
        same = tuple(Vec3(1.0, 1.0, 1.0) for _ in range(4))
        with pytest.raises(DegenerateConfiguration):
            kabsch_solve(PointCorrespondences(same, same))


class TestRegistrationResidual:
    def test_zero_on_perfect_fit(self):
        t = rand_rigid(np.random.default_rng(16))
        c = correspondences(CUBE, t)
        rms, per_point = registration_residual(t, c)
        assert rms < 1e-12
        assert all(d < 1e-12 for d in per_point)

    def test_unit_offsets(self):
        real = tuple(p + Vec3(0, 0, 1) for p in CUBE)
        c = PointCorrespondences(tuple(CUBE), real)
        rms, per_point = registration_residual(RigidTransform.identity(), c)
        assert all(abs(d - 1.0) < 1e-12 for d in per_point)
        assert abs(rms - 1.0) < 1e-12

    def test_solution_beats_identity_baseline(self):
        rng = np.random.default_rng(17)
        pts = [Vec3(*p) for p in rng.normal(size=(8, 3))]
        truth = rand_rigid(rng)
        c = correspondences(pts, truth, rng.normal(scale=1e-3, size=(8, 3)))
        solved = kabsch_solve(c)
        rms_identity, _ = registration_residual(RigidTransform.identity(), c)
        assert solved.rms_residual <= rms_identity

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            PointCorrespondences(tuple(CUBE), tuple(CUBE[:4]))


class TestAnchorFiles:
    def _record(self, transform) -> AnchorRecord:
        c = correspondences(CUBE, transform)
        return AnchorRecord(
            transform, "bench", datetime(2026, 3, 1, 12, 0, tzinfo=timezone.utc), c
        )

    def test_identity_round_trip(self, tmp_path):
        record = self._record(RigidTransform.identity())
        path = tmp_path / "anchor.json"
        save_anchor(record, path)
        assert load_anchor(path) == record

    def test_rot_z_90_round_trip_bit_exact(self, tmp_path):
        rot = Rotation.from_axis_angle(Vec3(0, 0, 1), math.pi / 2)
        record = self._record(RigidTransform(rot, Vec3(0.1, -0.2, 0.3)))
        path = tmp_path / "anchor.json"
        save_anchor(record, path)
        loaded = load_anchor(path)
        assert loaded.transform.rotation == record.transform.rotation
        assert loaded.transform.translation == record.transform.translation
        assert loaded.source_points == record.source_points

    def test_random_transforms_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(18)
        for i in range(20):
            record = self._record(rand_rigid(rng))
            path = tmp_path / f"anchor_{i}.json"
            save_anchor(record, path)
            assert load_anchor(path) == record

    def test_truncated_file_is_parse_error(self, tmp_path):
        record = self._record(RigidTransform.identity())
        path = tmp_path / "anchor.json"
        save_anchor(record, path)
        data = path.read_text()
        path.write_text(data[: len(data) // 2])
        with pytest.raises(ParseError):
            load_anchor(path)

    def test_version_mismatch(self, tmp_path):
        record = self._record(RigidTransform.identity())
        path = tmp_path / "anchor.json"
        save_anchor(record, path)
        obj = json.loads(path.read_text())
        obj["version"] = 2
        path.write_text(json.dumps(obj))
        with pytest.raises(VersionMismatch):
            load_anchor(path)

    def test_missing_field_is_parse_error(self, tmp_path):
        record = self._record(RigidTransform.identity())
        path = tmp_path / "anchor.json"
        save_anchor(record, path)
        obj = json.loads(path.read_text())
        del obj["rotation_wxyz"]
        path.write_text(json.dumps(obj))
        with pytest.raises(ParseError):
            load_anchor(path)


class TestPointsCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(19)
        c = correspondences(CUBE, rand_rigid(rng))
        path = tmp_path / "points.csv"
        save_points_csv(c, path)
        assert load_points_csv(path) == c

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "points.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ParseError):
            load_points_csv(path)

    def test_bad_row_named(self, tmp_path):
        path = tmp_path / "points.csv"
        path.write_text("vx,vy,vz,rx,ry,rz\n0,0,0,0,0,0\n1,2,oops,4,5,6\n")
        with pytest.raises(ParseError, match="row 3"):
            load_points_csv(path)
