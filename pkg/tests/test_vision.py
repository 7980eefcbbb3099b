import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labscan.vision import (
    CameraExtrinsics,
    CameraIntrinsics,
    Correspondence,
    PoseError,
    back_project,
    camera_to_world,
    estimate_extrinsics,
    load_correspondences,
    project,
    world_to_camera,
)
from labscan.vision.pnp import _rotation_exp

K = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=960.0, cy=540.0)

IDENTITY = CameraExtrinsics(rotation=np.eye(3), translation=np.zeros(3))


def tilted_pose(tilt_deg=0.0, azim_deg=0.0, roll_deg=0.0,
                position=(0.0, 0.0, 150.0)) -> CameraExtrinsics:
    """Downward-looking pose tilted about the world x axis, then spun."""
    a, b, g = np.deg2rad([tilt_deg, azim_deg, roll_deg])
    rx = np.array([[1, 0, 0],
                   [0, np.cos(a), -np.sin(a)],
                   [0, np.sin(a), np.cos(a)]])
    rz = np.array([[np.cos(b), -np.sin(b), 0],
                   [np.sin(b), np.cos(b), 0],
                   [0, 0, 1]])
    rz2 = np.array([[np.cos(g), -np.sin(g), 0],
                    [np.sin(g), np.cos(g), 0],
                    [0, 0, 1]])
    flip = np.array([[1.0, 0.0, 0.0],
                     [0.0, -1.0, 0.0],
                     [0.0, 0.0, -1.0]])
    r = rz2 @ flip @ rx @ rz
    c = np.asarray(position, dtype=float)
    return CameraExtrinsics(rotation=r, translation=-r @ c)


def board(nx=7, ny=5, half_x=60.0, half_y=40.0) -> np.ndarray:
    gx, gy = np.meshgrid(np.linspace(-half_x, half_x, nx),
                         np.linspace(-half_y, half_y, ny))
    return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])


def correspondences(world, pose, noise=0.0, rng=None):
    out = []
    for w in world:
        uv = np.array(project(w, K, pose))
        if noise:
            uv = uv + rng.normal(0.0, noise, 2)
        out.append(Correspondence(world=tuple(w), pixel=tuple(uv)))
    return out


def rotation_error_deg(r_a, r_b):
    c = np.clip((np.trace(r_a @ r_b.T) - 1.0) / 2.0, -1.0, 1.0)
    return np.degrees(np.arccos(c))


# ---------------------------------------------------------------- transforms

def test_back_project_principal_ray():
    assert np.allclose(back_project(960.0, 540.0, 500.0, K), [0.0, 0.0, 500.0])


def test_back_project_hand_computed_offset():
    p = back_project(960.0 + 200.0, 540.0, 500.0, K)
    assert p[0] == pytest.approx(100.0, abs=1e-12)
    assert p[1] == 0.0


def test_back_project_zero_depth_collapses_to_origin():
    assert np.array_equal(back_project(123.0, 456.0, 0.0, K), np.zeros(3))


def test_back_project_negative_depth_rejected():
    with pytest.raises(ValueError):
        back_project(100.0, 100.0, -1.0, K)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0.0, fy=1000.0, cx=0.0, cy=0.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1000.0, fy=-5.0, cx=0.0, cy=0.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1000.0, fy=1000.0, cx=float("nan"), cy=0.0)


def test_extrinsics_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        CameraExtrinsics(rotation=np.eye(3) * 1.1, translation=np.zeros(3))


def test_extrinsics_rejects_reflection():
    with pytest.raises(ValueError):
        CameraExtrinsics(rotation=np.diag([1.0, 1.0, -1.0]),
                         translation=np.zeros(3))


def test_camera_to_world_identity_pose():
    p = camera_to_world([3.0, -2.0, 7.0], IDENTITY)
    assert np.allclose(p, [3.0, -2.0, 7.0])


def test_camera_to_world_pure_translation():
    e = CameraExtrinsics(rotation=np.eye(3),
                         translation=np.array([10.0, 0.0, 0.0]))
    assert np.allclose(camera_to_world([3.0, 1.0, 2.0], e),
                       [-7.0, 1.0, 2.0])


def test_camera_to_world_revalidates_mutated_rotation():
    e = CameraExtrinsics(rotation=np.eye(3), translation=np.zeros(3))
    e.rotation[0, 0] = 2.0   # dataclass is frozen but the array is not
    with pytest.raises(ValueError):
        camera_to_world([1.0, 2.0, 3.0], e)


@settings(max_examples=100, deadline=None)
@given(st.tuples(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0),
                 st.floats(-1.0, 1.0)),
       st.tuples(st.floats(-50.0, 50.0), st.floats(-50.0, 50.0),
                 st.floats(-50.0, 50.0)),
       st.tuples(st.floats(-100.0, 100.0), st.floats(-100.0, 100.0),
                 st.floats(-100.0, 100.0)))
def test_world_camera_round_trip(axis_angle, translation, point):
    e = CameraExtrinsics(rotation=_rotation_exp(np.array(axis_angle)),
                         translation=np.array(translation))
    p = np.array(point)
    assert np.allclose(camera_to_world(world_to_camera(p, e), e), p,
                       atol=1e-9)


def test_project_principal_ray_point():
    pose = tilted_pose()
    p_w = pose.camera_position() + pose.rotation.T @ np.array([0.0, 0.0, 80.0])
    u, v = project(p_w, K, pose)
    assert u == pytest.approx(960.0, abs=1e-9)
    assert v == pytest.approx(540.0, abs=1e-9)


def test_project_behind_camera_rejected():
    with pytest.raises(ValueError):
        project([0.0, 0.0, 200.0], K, tilted_pose())   # above the camera
    with pytest.raises(ValueError):
        project(tilted_pose().camera_position(), K, tilted_pose())


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1920.0), st.floats(0.0, 1080.0),
       st.floats(1.0, 2000.0))
def test_project_back_project_round_trip(u, v, z_c):
    p_c = back_project(u, v, z_c, K)
    u2, v2 = project(p_c, K, IDENTITY)
    assert u2 == pytest.approx(u, abs=1e-9)
    assert v2 == pytest.approx(v, abs=1e-9)


def test_camera_position_of_known_pose():
    pose = tilted_pose(position=(12.0, -3.0, 90.0))
    assert np.allclose(pose.camera_position(), [12.0, -3.0, 90.0], atol=1e-12)


# ----------------------------------------------------------- pose estimation

def test_estimate_noise_free_recovers_pose():
    truth = tilted_pose(tilt_deg=18.0, azim_deg=40.0, roll_deg=-8.0,
                        position=(10.0, 5.0, 150.0))
    est = estimate_extrinsics(correspondences(board(), truth), K)
    assert est.rms_px < 1e-6
    assert rotation_error_deg(est.rotation, truth.rotation) < 1e-7
    assert np.allclose(est.translation, truth.translation, atol=1e-6)


def test_estimate_pose_is_valid_rotation():
    est = estimate_extrinsics(correspondences(board(), tilted_pose(9.0)), K)
    assert np.max(np.abs(est.rotation.T @ est.rotation - np.eye(3))) < 1e-9
    assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)


def test_estimate_order_invariant():
    rng = np.random.default_rng(11)
    corrs = correspondences(board(), tilted_pose(14.0, 70.0), noise=0.2,
                            rng=rng)
    est_a = estimate_extrinsics(corrs, K)
    est_b = estimate_extrinsics([corrs[i] for i in rng.permutation(len(corrs))], K)
    assert np.allclose(est_a.rotation, est_b.rotation, atol=1e-9)
    assert np.allclose(est_a.translation, est_b.translation, atol=1e-8)


def test_estimate_with_pixel_noise():
    worst = 0.0
    for i in range(10):
        rng = np.random.default_rng(300 + i)
        truth = tilted_pose(tilt_deg=rng.uniform(3, 30),
                            azim_deg=rng.uniform(0, 360),
                            roll_deg=rng.uniform(-15, 15),
                            position=(rng.uniform(-15, 15),
                                      rng.uniform(-15, 15),
                                      rng.uniform(120, 180)))
        est = estimate_extrinsics(
            correspondences(board(), truth, noise=0.2, rng=rng), K)
        worst = max(worst, rotation_error_deg(est.rotation, truth.rotation))
        assert est.rms_px < 0.5
    assert worst < 0.2


def test_estimate_too_few_points():
    corrs = correspondences(board()[:3], tilted_pose())
    with pytest.raises(PoseError) as err:
        estimate_extrinsics(corrs, K)
    assert err.value.code == "INSUFFICIENT_POINTS"


def test_estimate_collinear_points():
    line = np.column_stack([np.linspace(-30, 30, 8),
                            np.linspace(-20, 20, 8),
                            np.zeros(8)])
    with pytest.raises(PoseError) as err:
        estimate_extrinsics(correspondences(line, tilted_pose()), K)
    assert err.value.code == "DEGENERATE"


def test_estimate_requires_planar_world_points():
    corrs = correspondences(board(), tilted_pose())
    w = corrs[0].world
    corrs[0] = Correspondence(world=(w[0], w[1], 5.0), pixel=corrs[0].pixel)
    with pytest.raises(ValueError):
        estimate_extrinsics(corrs, K)


# ---------------------------------------------------------------- file input

def test_load_correspondences(tmp_path):
    path = tmp_path / "corrs.txt"
    path.write_text(
        "# board corners, mm and px\n"
        "\n"
        "-60.0 -40.0 0.0 312.5 128.25   # corner A\n"
        "60.0 -40.0 0.0 1640.0 131.0\n")
    corrs = load_correspondences(path)
    assert len(corrs) == 2
    assert corrs[0].world == (-60.0, -40.0, 0.0)
    assert corrs[0].pixel == (312.5, 128.25)


def test_load_correspondences_wrong_columns(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1.0 2.0 0.0 50.0\n")
    with pytest.raises(ValueError, match="line 1"):
        load_correspondences(path)


def test_load_correspondences_bad_number(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1.0 2.0 0.0 50.0 oops\n")
    with pytest.raises(ValueError, match="line 1"):
        load_correspondences(path)


def test_correspondence_rejects_non_finite():
    with pytest.raises(ValueError):
        Correspondence(world=(0.0, float("inf"), 0.0), pixel=(1.0, 2.0))
