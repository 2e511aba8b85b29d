import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import rotation_angle_deg
from posekit.errors import BehindCameraError, DegenerateGeometryError
from posekit.geometry import (CameraModel, RigidTransform, StereoRig, epipolar_line,
                              fundamental_from_pose, point_line_distance, pose_errors, project,
                              triangulate_linear, triangulate_pairs, triangulate_stereo, unproject)

CAM = CameraModel(600.0, 600.0, 320.0, 240.0, 640, 480)


def random_pose(rng, sigma=0.3, t=0.5):
    return RigidTransform.from_rotvec(rng.normal(0, sigma, 3), rng.normal(0, t, 3))


def rig(baseline=0.1):
    return StereoRig(CAM, CAM, RigidTransform(np.eye(3), [-baseline, 0.0, 0.0]))


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel(0.0, 1.0, 0.0, 0.0, 10, 10)
    with pytest.raises(ValueError):
        CameraModel(1.0, 1.0, 20.0, 0.0, 10, 10)
    assert np.allclose(CAM.K, [[600, 0, 320], [0, 600, 240], [0, 0, 1]])
    assert CameraModel.from_dict(CAM.to_dict()) == CAM


def test_project_on_axis_and_hand_example():
    assert np.allclose(project(CAM, RigidTransform.identity(), [0, 0, 7.3]), (320, 240))
    cam = CameraModel(100.0, 100.0, 0.0, 0.0, 200, 200)
    assert np.allclose(project(cam, RigidTransform.identity(), [1.0, 0.0, 2.0]), (50.0, 0.0))


def test_project_behind_camera():
    with pytest.raises(BehindCameraError):
        project(CAM, RigidTransform.identity(), [0.0, 0.0, -1.0])


def test_unproject_inverts_project():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pose = random_pose(rng)
        X = pose.inverse().apply(rng.uniform([-1, -1, 1], [1, 1, 4], (1, 3)))[0]
        c, d = unproject(CAM, pose, project(CAM, pose, X))
        ray = (X - c) / np.linalg.norm(X - c)
        assert np.abs(ray - d).max() < 1e-9


def test_rigid_transform_invariants():
    rng = np.random.default_rng(1)
    for _ in range(20):
        T = random_pose(rng, 1.0)
        R = T.rotation
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1) < 1e-9
        I = T.compose(T.inverse())
        assert np.abs(I.rotation - np.eye(3)).max() < 1e-9 and np.abs(I.translation).max() < 1e-9
        A, B, C = random_pose(rng), random_pose(rng), random_pose(rng)
        L, Rr = A.compose(B).compose(C), A.compose(B.compose(C))
        assert np.allclose(L.rotation, Rr.rotation, atol=1e-12)
        assert np.allclose(L.translation, Rr.translation, atol=1e-12)
        back = RigidTransform.from_dict(T.to_dict())
        assert np.allclose(back.rotation, R, atol=1e-12)


def test_rigid_transform_rejects_reflection():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 1.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 10 ** 6))
def test_projection_scale_invariance(s, seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(rng, 0.2, 0.2)
    X = pose.inverse().apply(rng.uniform([-1, -1, 2], [1, 1, 4], (1, 3)))[0]
    scaled = RigidTransform(pose.rotation, s * pose.translation)
    assert np.allclose(project(CAM, pose, X), project(CAM, scaled, s * X), atol=1e-9)


def test_stereo_exact_recovery():
    r = rig(0.1)
    X = np.array([0.0, 0.0, 2.0])
    pL = project(CAM, RigidTransform.identity(), X)
    pR = project(CAM, r.right_from_left, X)
    assert np.abs(triangulate_stereo(r, pL, pR) - X).max() < 1e-9


def test_stereo_identity_on_random_points():
    rng = np.random.default_rng(2)
    r = StereoRig(CAM, CAM, random_pose(rng, 0.05, 0.1))
    for X in rng.uniform([-0.5, -0.5, 1.0], [0.5, 0.5, 3.0], (30, 3)):
        pL = project(CAM, RigidTransform.identity(), X)
        pR = project(CAM, r.right_from_left, X)
        assert np.abs(triangulate_stereo(r, pL, pR) - X).max() < 1e-9


def test_stereo_perturbed_depth_error():
    rng = np.random.default_rng(3)
    r = rig(0.1)
    X = np.array([0.0, 0.0, 2.0])
    pL = project(CAM, RigidTransform.identity(), X)
    pR = project(CAM, r.right_from_left, X)
    for _ in range(100):
        d = rng.normal(size=(2, 2))
        d *= 0.5 / np.linalg.norm(d, axis=1, keepdims=True)
        est = triangulate_stereo(r, pL + d[0], pR + d[1])
        assert abs(est[2] - 2.0) / 2.0 < 0.05


def test_stereo_parallel_rays():
    r = rig(0.1)
    with pytest.raises(DegenerateGeometryError) as e:
        triangulate_stereo(r, (320.0, 240.0), (320.0, 240.0))
    assert "ray_angle" in str(e.value.to_dict())


def test_linear_matches_stereo_and_three_views():
    rng = np.random.default_rng(4)
    r = StereoRig(CAM, CAM, random_pose(rng, 0.05, 0.1))
    ident = RigidTransform.identity()
    for X in rng.uniform([-0.5, -0.5, 1.0], [0.5, 0.5, 3.0], (20, 3)):
        pL, pR = project(CAM, ident, X), project(CAM, r.right_from_left, X)
        lin = triangulate_linear([(CAM, ident), (CAM, r.right_from_left)], [pL, pR])
        assert np.abs(lin.point - triangulate_stereo(r, pL, pR)).max() < 1e-6
        P3 = random_pose(rng, 0.1, 0.3)
        Xw = X
        if P3.apply(Xw[None])[0, 2] <= 0.1:
            continue
        views = [(CAM, ident), (CAM, r.right_from_left), (CAM, P3)]
        obs = [project(c, p, Xw) for c, p in views]
        tri = triangulate_linear(views, obs)
        assert np.abs(tri.point - Xw).max() < 1e-8 and tri.rms < 1e-6


def test_linear_degenerate():
    ident = RigidTransform.identity()
    with pytest.raises(DegenerateGeometryError):
        triangulate_linear([(CAM, ident), (CAM, ident)], [(100.0, 80.0), (100.0, 80.0)])
    with pytest.raises(DegenerateGeometryError):
        triangulate_linear([(CAM, ident)], [(1.0, 1.0)])


def test_triangulate_pairs_matches_linear():
    rng = np.random.default_rng(5)
    pose = random_pose(rng, 0.1, 0.3)
    X = rng.uniform([-0.5, -0.5, 2.0], [0.5, 0.5, 3.0], (15, 3))
    ident = RigidTransform.identity()
    uvA, uvB = project(CAM, ident, X), project(CAM, pose, X)
    batch = triangulate_pairs(CAM, ident, CAM, pose, uvA, uvB)
    for i in range(len(X)):
        one = triangulate_linear([(CAM, ident), (CAM, pose)], [uvA[i], uvB[i]]).point
        assert np.abs(batch[i] - one).max() < 1e-9


def test_epipolar_line_distance_and_normalization():
    rng = np.random.default_rng(6)
    pose = random_pose(rng, 0.1, 0.3)
    F = fundamental_from_pose(CAM, CAM, pose)
    X = rng.uniform([-0.5, -0.5, 2.0], [0.5, 0.5, 3.0], (30, 3))
    pA, pB = project(CAM, RigidTransform.identity(), X), project(CAM, pose, X)
    for a, b in zip(pA, pB):
        line = epipolar_line(F, a)
        assert abs(np.hypot(line[0], line[1]) - 1) < 1e-12
        assert point_line_distance(line, b) < 1e-6


def test_epipolar_line_at_epipole():
    pose = RigidTransform(np.eye(3), [0.2, 0.1, 1.0])
    F = fundamental_from_pose(CAM, CAM, pose)
    # the epipole in view A is the projection of view B's center
    center = pose.inverse().translation
    e = project(CAM, RigidTransform.identity(), -center) if center[2] < 0 else \
        project(CAM, RigidTransform.identity(), center)
    with pytest.raises(DegenerateGeometryError):
        epipolar_line(F, e)


def test_pose_errors():
    a = RigidTransform.from_rotvec([0, 0, np.radians(2.0)], [1.0, 0, 0])
    b = RigidTransform(np.eye(3), [1.01, 0, 0])
    rot, trans = pose_errors(a, b)
    assert rot == pytest.approx(2.0, abs=1e-9)
    assert rot == pytest.approx(rotation_angle_deg(a.rotation, b.rotation), abs=1e-9)
    assert trans == pytest.approx(0.01 / 1.01, rel=1e-9)
