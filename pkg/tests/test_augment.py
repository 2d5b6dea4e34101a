import numpy as np
import pytest
from scipy import stats

from spdh.augment import (
    AugmentSpec,
    RigidSample,
    apply_rigid,
    augment_frame,
    check_rigid,
    depth_to_pointcloud,
    frame_rng,
    pointcloud_to_depth,
    sample_transform,
)
from spdh.geometry import DEFAULT_INTRINSICS, DepthImage, project
from spdh.joints import JointSet3D
from spdh.robot import make_transform, rpy_to_matrix
from spdh.synth import NO_NOISE, SceneSpec, default_scene, home_pose, render_depth
from spdh.robot import chain_from_dict

K = DEFAULT_INTRINSICS.scaled(128, 106)


def random_depth(rng, shape=(106, 128), holes=0.2):
    d = rng.uniform(800, 3000, shape)
    d[rng.random(shape) < holes] = 0.0
    return DepthImage(d)


def test_empty_cloud():
    assert depth_to_pointcloud(DepthImage(np.zeros(K.shape)), K).shape == (0, 3)


def test_cloud_count_and_order(rng):
    d = random_depth(rng)
    cloud = depth_to_pointcloud(d, K)
    assert len(cloud) == np.count_nonzero(d.data)
    assert np.array_equal(cloud[:, 2], d.data[d.data > 0])  # row-major order


def test_plane_cloud_constant_z():
    chain = chain_from_dict({"joints": [{"name": "a", "parent": -1, "xyz_mm": [0, 0, 0], "axis": [0, 0, 1],
                                         "radius_mm": 0}]})
    d = render_depth(SceneSpec(chain, K, ground_height_mm=1700.0, noise=NO_NOISE), [0.0])
    cloud = depth_to_pointcloud(d, K)
    assert len(cloud) == K.width * K.height and np.all(cloud[:, 2] == 1700.0)


def test_identity_and_translation(rng):
    cloud = rng.uniform(-1000, 1000, (50, 3))
    joints = JointSet3D(rng.uniform(-1000, 1000, (4, 3)))
    c2, j2 = apply_rigid(cloud, joints, np.eye(4))
    assert np.array_equal(c2, cloud) and j2 == joints
    c3, j3 = apply_rigid(cloud, joints, make_transform(None, (80.0, 0.0, 0.0)))
    assert np.array_equal(c3[:, 0], cloud[:, 0] + 80.0) and np.array_equal(c3[:, 1:], cloud[:, 1:])
    assert np.array_equal(j3.positions[:, 0], joints.positions[:, 0] + 80.0)


def test_distances_preserved(rng):
    cloud = rng.uniform(-1000, 1000, (60, 3))
    joints = JointSet3D(rng.uniform(-1000, 1000, (5, 3)))
    T = make_transform(rpy_to_matrix(rng.uniform(-3, 3, 3)), rng.uniform(-500, 500, 3))
    c2, j2 = apply_rigid(cloud, joints, T)
    d0 = np.linalg.norm(cloud[:, None] - cloud[None], axis=-1)
    d1 = np.linalg.norm(c2[:, None] - c2[None], axis=-1)
    assert np.allclose(d1, d0, rtol=1e-6, atol=0)
    both0 = np.vstack([cloud, joints.positions])
    both1 = np.vstack([c2, j2.positions])
    assert np.allclose(np.linalg.norm(both1[:, None] - both1[None], axis=-1),
                       np.linalg.norm(both0[:, None] - both0[None], axis=-1), rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("T", [np.diag([2.0, 1, 1, 1]), np.diag([-1.0, 1, 1, 1]), np.eye(3)])
def test_non_rigid_rejected(T):
    with pytest.raises(ValueError):
        check_rigid(T)
    if T.shape == (4, 4):
        with pytest.raises(ValueError):
            apply_rigid(np.zeros((1, 3)), JointSet3D([[0, 0, 1]]), T)


def test_identity_roundtrip_reproduces_depth(rng):
    d = random_depth(rng)
    back = pointcloud_to_depth(depth_to_pointcloud(d, K), K)
    assert np.array_equal(back.data, d.data)


def test_zbuffer_min():
    cloud = np.array([[0.0, 0.0, 1100.0], [0.0, 0.0, 900.0]])
    d = pointcloud_to_depth(cloud, K)
    v, u = int(round(K.cy)), int(round(K.cx))
    assert d.data[v, u] == 900.0
    assert np.count_nonzero(d.data) == 1


def test_drops_behind_and_outside():
    cloud = np.array([[0.0, 0.0, -500.0], [1e6, 0.0, 1000.0], [0.0, 0.0, 9000.0]])
    assert not pointcloud_to_depth(cloud, K).data.any()


def test_rotation_holes_match_coverage(rng):
    d = DepthImage(np.full(K.shape, 2000.0))
    cloud = depth_to_pointcloud(d, K)
    T = RigidSample("y", 5.0, "x", 0.0).matrix()
    moved, _ = apply_rigid(cloud, JointSet3D([[0, 0, 1]]), T)
    out = pointcloud_to_depth(moved, K)
    uv = project(moved, K)
    u, v = np.rint(uv).astype(int).T
    inside = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    covered = np.zeros(K.shape, bool)
    covered[v[inside], u[inside]] = True
    assert np.array_equal(out.valid, covered)
    assert (~covered).any()  # the rotation leaves holes
    assert np.all(out.data[~covered] == 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(rot_range_deg=(5, -5))
    with pytest.raises(ValueError):
        AugmentSpec(trans_range_mm=(80, -80))
    with pytest.raises(ValueError):
        AugmentSpec(rot_axes=("w",))
    with pytest.raises(ValueError):
        AugmentSpec(pivot="middle")
    s = AugmentSpec(seed=4)
    assert AugmentSpec.from_dict(s.to_dict()) == s


def test_samples_in_range_and_uniform():
    spec = AugmentSpec()
    rng = np.random.default_rng(0)
    draws = [sample_transform(spec, rng) for _ in range(10_000)]
    ang = np.array([d.angle_deg for d in draws])
    off = np.array([d.offset_mm for d in draws])
    assert ang.min() >= -5 and ang.max() <= 5
    assert off.min() >= -80 and off.max() <= 80
    for axis in ("x", "y"):
        a = np.array([d.angle_deg for d in draws if d.rot_axis == axis])
        counts, _ = np.histogram(a, bins=10, range=(-5, 5))
        assert stats.chisquare(counts).pvalue > 0.001
    for axis in ("x", "z"):
        t = np.array([d.offset_mm for d in draws if d.trans_axis == axis])
        counts, _ = np.histogram(t, bins=10, range=(-80, 80))
        assert stats.chisquare(counts).pvalue > 0.001
    # fair coin for the axis choice
    n_x = sum(d.rot_axis == "x" for d in draws)
    assert stats.binomtest(n_x, 10_000, 0.5).pvalue > 0.001


def test_rotation_axis_of_sample():
    T = RigidSample("x", 5.0, "z", 30.0).matrix()
    assert np.allclose(T[:3, :3] @ [1, 0, 0], [1, 0, 0])
    assert np.allclose(T[:3, 3], [0, 0, 30])
    c = np.array([10.0, 20.0, 2000.0])
    Tc = RigidSample("y", 4.0, "x", 0.0).matrix(pivot=c)
    assert np.allclose(Tc[:3, :3] @ c + Tc[:3, 3], c)


def test_per_frame_seeding():
    spec = AugmentSpec(seed=100)
    a = sample_transform(spec, frame_rng(spec, 7))
    b = sample_transform(spec, frame_rng(spec, 7))
    c = sample_transform(AugmentSpec(seed=101), frame_rng(AugmentSpec(seed=101), 6))
    assert a == b == c


def test_augment_frame_consistency(chain):
    scene = default_scene(chain, K, NO_NOISE)
    depth = render_depth(scene, home_pose(chain))
    from spdh.synth import render_clean

    _, joints = render_clean(scene, home_pose(chain))
    for fid in range(5):
        d2, j2, T = augment_frame(depth, joints, K, AugmentSpec(seed=3), fid)
        check_rigid(T)
        assert np.allclose(j2.positions, joints.positions @ T[:3, :3].T + T[:3, 3])
        assert d2.data.shape == depth.data.shape
    _, _, Tc = augment_frame(depth, joints, K, AugmentSpec(seed=3, pivot="centroid"), 0)
    c = depth_to_pointcloud(depth, K).mean(axis=0)
    moved = Tc[:3, :3] @ c + Tc[:3, 3]
    # rotating about the centroid moves it only by the translation component
    assert np.count_nonzero(np.abs(moved - c) > 1e-6) <= 1
