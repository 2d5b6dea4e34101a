import json

import numpy as np
import pytest

from spdh.geometry import PinholeIntrinsics, backproject, DepthImage
from spdh.robot import chain_from_dict, forward_kinematics, joint_radii, link_segments, load_chain
from spdh.synth import (
    NO_NOISE,
    BoxSpec,
    NoiseModel,
    SceneSpec,
    SequenceSpec,
    apply_noise,
    default_scene,
    generate_sequence,
    home_pose,
    interpolate_keyframes,
    intersect_box,
    joint_visibility,
    pick_and_place_keyframes,
    pixel_rays,
    render_clean,
    render_depth,
    sample_in_ball,
)

K64 = PinholeIntrinsics(60.0, 60.0, 32.0, 32.0, 64, 64)


def single_sphere(radius, z):
    return chain_from_dict({"joints": [{"name": "ball", "parent": -1, "xyz_mm": [0, 0, 0], "axis": [0, 0, 1],
                                        "radius_mm": radius}],
                            "base": {"translation_mm": [0, 0, z]}})


def point_segment_distance(p, a, b):
    ab = b - a
    L2 = ab @ ab
    t = np.zeros(len(p)) if L2 == 0 else np.clip((p - a) @ ab / L2, 0, 1)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def test_empty_scene_renders_zero():
    scene = SceneSpec(single_sphere(0.0, 1000), K64, noise=NO_NOISE)
    assert not render_depth(scene, [0.0]).data.any()


def test_sphere_on_axis_front_surface():
    scene = SceneSpec(single_sphere(50.0, 1000), K64, noise=NO_NOISE)
    d = render_depth(scene, [0.0]).data
    assert d[32, 32] == 950.0


def test_rays_have_unit_z():
    r = pixel_rays(K64)
    assert r.shape == (64 * 64, 3) and np.all(r[:, 2] == 1.0)


def test_capsule_hits_on_surface(chain):
    # bundled robot seen closely on a 64x64 grid, no props
    K = PinholeIntrinsics(40.0, 40.0, 32.0, 32.0, 64, 64)
    scene = SceneSpec(chain, K, noise=NO_NOISE)
    q = home_pose(chain)
    depth, joints = render_clean(scene, q)
    xyz = backproject(DepthImage(depth), K)
    pts = xyz.data[xyz.mask]
    assert len(pts) > 100
    segs = link_segments(scene.camera_chain(), joints.positions)
    dist = np.min([point_segment_distance(pts, a, b) - r for a, b, r in segs], axis=0)
    assert np.max(np.abs(dist)) < 0.5


def test_fronto_parallel_plane_constant():
    chain = single_sphere(0.0, 0.0)
    scene = SceneSpec(chain, K64, ground_height_mm=2000.0, noise=NO_NOISE)
    d = render_depth(scene, [0.0]).data
    assert np.all(d == 2000.0)


def test_box_front_face():
    chain = single_sphere(0.0, 0.0)
    scene = SceneSpec(chain, K64, table=BoxSpec((0, 0, 1500), (400, 400, 200)), noise=NO_NOISE)
    d = render_depth(scene, [0.0]).data
    hit = d > 0
    assert hit[32, 32] and np.all(d[hit] == 1400.0)
    # front face spans +-200 mm at Z=1400, i.e. +-60*200/1400 px around the center
    cols = np.nonzero(hit[32])[0]
    assert cols.min() == 32 - 8 and cols.max() == 32 + 8


def test_box_rotated_slab():
    rays = np.array([[0.0, 0.0, 1.0]])
    T = np.eye(4)
    T[:3, 3] = [0, 0, 1000]
    assert intersect_box(rays, T, [10, 10, 10])[0] == 990.0
    assert np.isnan(intersect_box(np.array([[1.0, 0.0, 1.0]]), T, [10, 10, 10])[0])


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(-1.0, 0.0)
    with pytest.raises(ValueError):
        NoiseModel(1.0, 1.5)
    assert not NO_NOISE.active


def test_noise_statistics():
    rng = np.random.default_rng(0)
    clean = np.full((200, 200), 2000.0)
    noisy = apply_noise(clean, NoiseModel(3.0, 0.01), rng, 8000.0)
    dropped = noisy == 0
    assert 0.005 < dropped.mean() < 0.015
    resid = noisy[~dropped] - 2000.0
    assert abs(resid.std() - 3.0) < 0.1 and abs(resid.mean()) < 0.1
    zero = np.zeros((10, 10))
    assert not apply_noise(zero, NoiseModel(3.0, 0.0), rng, 8000.0).any()


def test_visible_joints_consistent_with_depth(chain):
    K = PinholeIntrinsics(120.0, 120.0, 64.0, 53.0, 128, 106)
    scene = default_scene(chain, K, NO_NOISE)
    rng = np.random.default_rng(1)
    radii = joint_radii(chain)
    checked = 0
    for q in pick_and_place_keyframes(chain, rng, 4):
        depth, joints = render_clean(scene, q)
        vis = joint_visibility(depth, joints, K, radii, 0.0)
        px = np.rint(joints.positions[:, :2] / joints.positions[:, 2:] * [K.fx, K.fy] + [K.cx, K.cy]).astype(int)
        for i in np.nonzero(vis)[0]:
            d = depth[px[i, 1], px[i, 0]]
            assert d <= joints.positions[i, 2]
            assert d >= joints.positions[i, 2] - radii[i] - 1.0
            checked += 1
    assert checked > 10


def test_keyframes_alternate_arms(chain):
    kf = pick_and_place_keyframes(chain, np.random.default_rng(0), motions=10)
    assert kf.shape == (1 + 4 * 10, chain.num_dof)
    names = [j.name for j in chain.joints]
    left = np.array([n.startswith("left_") for n in names])
    right = np.array([n.startswith("right_") for n in names])
    home = home_pose(chain)
    for m in range(10):
        seg = kf[1 + 4 * m: 5 + 4 * m]
        idle = right if m % 2 == 0 else left
        assert np.allclose(seg[:, idle], home[idle])
    lim = chain.limits
    assert np.all(kf >= lim[:, 0]) and np.all(kf <= lim[:, 1])


def test_interpolation_endpoints():
    kf = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 0.0]])
    q = interpolate_keyframes(kf, 5)
    assert np.array_equal(q[0], kf[0]) and np.array_equal(q[-1], kf[-1]) and np.array_equal(q[2], kf[1])
    assert interpolate_keyframes(kf, 1).shape == (1, 2)


def test_ball_samples_inside():
    rng = np.random.default_rng(0)
    pts = np.array([sample_in_ball(rng, 500.0) for _ in range(2000)])
    assert np.linalg.norm(pts, axis=1).max() <= 500.0
    # uniform in volume: a quarter of the radius cubed share is ~1/8 of the samples at half radius
    assert abs((np.linalg.norm(pts, axis=1) < 250).mean() - 0.125) < 0.03


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_single_frame_sequence(tmp_path, small_k):
    chain = load_chain()
    scene = default_scene(chain, small_k)
    recs = generate_sequence(scene, SequenceSpec(1, seed=5), tmp_path, "s")
    assert len(recs) == 1
    assert sorted(p.name for p in (tmp_path / "s" / "depth").iterdir()) == ["000000.png"]
    lines = (tmp_path / "s" / "annotations.jsonl").read_text().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert {"frame_id", "joints", "camera", "seed"} <= set(rec)
    assert len(rec["joints"]) == 16 and {"name", "xyz_mm", "visible"} == set(rec["joints"][0])
    assert set(rec["camera"]) == {"intrinsics", "pose"}


def test_sequence_deterministic_and_parallel(tmp_path, small_k):
    chain = load_chain()
    scene = default_scene(chain, small_k)
    kf = tuple(map(tuple, pick_and_place_keyframes(chain, np.random.default_rng(2), 1)))
    spec = SequenceSpec(4, kf, seed=11)
    generate_sequence(scene, spec, tmp_path / "a")
    generate_sequence(scene, spec, tmp_path / "b")
    generate_sequence(scene, spec, tmp_path / "c", jobs=3)
    ta, tb, tc = _tree(tmp_path / "a"), _tree(tmp_path / "b"), _tree(tmp_path / "c")
    assert ta == tb == tc
    generate_sequence(scene, SequenceSpec(4, kf, seed=12), tmp_path / "d")
    assert _tree(tmp_path / "d") != ta


def test_jitter_within_half_diameter(tmp_path):
    chain = load_chain()
    K = PinholeIntrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)
    scene = default_scene(chain, K)
    for seed in range(40):
        rec = generate_sequence(scene, SequenceSpec(1, seed=seed, jitter_diameter_mm=1000.0), tmp_path, f"s{seed}")[0]
        t = np.asarray(rec["camera"]["pose"]["translation_mm"])
        assert np.linalg.norm(t) <= 500.0


def test_annotations_match_fk_in_camera_frame(tmp_path, small_k):
    chain = load_chain()
    scene = default_scene(chain, small_k)
    rec = generate_sequence(scene, SequenceSpec(1, seed=3), tmp_path, "s")[0]
    T = np.eye(4)
    T[:3, :3] = rec["camera"]["pose"]["rotation"]
    T[:3, 3] = rec["camera"]["pose"]["translation_mm"]
    world = forward_kinematics(chain, rec["q_rad"]).positions
    cam = (world - T[:3, 3]) @ T[:3, :3]
    got = np.array([j["xyz_mm"] for j in rec["joints"]])
    assert np.allclose(got, cam, atol=1e-9)
