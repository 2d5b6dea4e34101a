import json

import numpy as np
import pytest

from spdh.robot import (
    ChainError,
    chain_from_dict,
    chain_to_dict,
    forward_kinematics,
    joint_radii,
    link_segments,
    load_chain,
    make_transform,
    rpy_to_matrix,
    save_chain,
)


def two_link(base_xyz=(0, 0, 0), **child):
    joints = [{"name": "root", "parent": -1, "xyz_mm": list(base_xyz), "axis": [0, 0, 1], "radius_mm": 10},
              {"name": "tip", "parent": 0, "xyz_mm": [100, 0, 0], "axis": [0, 0, 1], "radius_mm": 5, **child}]
    return chain_from_dict({"joints": joints})


def random_q(chain, rng):
    lim = chain.limits
    return rng.uniform(lim[:, 0], lim[:, 1])


def test_bundled_chain_has_16_joints(chain):
    assert len(chain.joints) == 16
    assert chain.num_dof == 16
    assert len(set(chain.names)) == 16


def test_zero_angles_cumulative_translation(chain):
    fk = forward_kinematics(chain, np.zeros(chain.num_dof))
    # with all rotations at identity, each joint sits at the sum of its ancestors' offsets
    for i, j in enumerate(chain.joints):
        total = np.zeros(3)
        k = i
        while k >= 0:
            total += chain.joints[k].xyz_mm
            k = chain.joints[k].parent
        expect = chain.base[:3, :3] @ total + chain.base[:3, 3]
        assert np.allclose(fk.positions[i], expect, atol=1e-9)
    assert fk.visibility.all()


def test_quarter_turn():
    fk = forward_kinematics(two_link(), [np.pi / 2, 0.0])
    assert np.allclose(fk.positions[1], [0, 100, 0], atol=1e-12)


def test_link_lengths_invariant(chain, rng):
    p0 = forward_kinematics(chain, np.zeros(chain.num_dof)).positions
    par = chain.parents
    ref = np.linalg.norm(p0[1:] - p0[par[1:]], axis=1)
    for _ in range(100):
        p = forward_kinematics(chain, random_q(chain, rng)).positions
        d = np.linalg.norm(p[1:] - p[par[1:]], axis=1)
        assert np.allclose(d, ref, rtol=1e-6, atol=0)


def test_base_equivariance(chain, rng):
    T = make_transform(rpy_to_matrix(rng.uniform(-np.pi, np.pi, 3)), rng.uniform(-1000, 1000, 3))
    q = random_q(chain, rng)
    ident = chain.with_base(np.eye(4))
    a = forward_kinematics(chain.with_base(T), q).positions
    b = forward_kinematics(ident, q).positions @ T[:3, :3].T + T[:3, 3]
    assert np.allclose(a, b, atol=1e-9)


def test_limits_enforced(chain):
    q = np.zeros(chain.num_dof)
    q[0] = 1.0  # base yaw is limited to +-0.3
    with pytest.raises(ValueError, match="outside limits"):
        forward_kinematics(chain, q)
    forward_kinematics(chain, q, check_limits=False)
    with pytest.raises(ValueError):
        forward_kinematics(chain, np.zeros(3))
    with pytest.raises(ValueError):
        forward_kinematics(chain, np.full(chain.num_dof, np.nan))


def test_default_limits_pi():
    c = two_link()
    assert np.allclose(c.limits, [[-np.pi, np.pi]] * 2)


def test_topological_order_error():
    d = chain_to_dict(two_link())
    d["joints"][1]["parent"] = 1
    with pytest.raises(ChainError, match="topological"):
        chain_from_dict(d)


def test_non_unit_axis_error():
    with pytest.raises(ChainError, match="unit"):
        two_link(axis=[0, 0, 2])


def test_prismatic_rejected():
    with pytest.raises(ChainError, match="prismatic"):
        two_link(type="prismatic")


def test_fixed_joint_has_no_dof():
    c = two_link(type="fixed", axis=[0, 0, 0])
    assert c.num_dof == 1
    fk = forward_kinematics(c, [np.pi / 2])
    assert np.allclose(fk.positions[1], [0, 100, 0], atol=1e-12)


def test_malformed_file(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ChainError):
        load_chain(tmp_path / "bad.json")
    (tmp_path / "nojoints.json").write_text(json.dumps({"joints": [{"name": "a"}]}))
    with pytest.raises(ChainError):
        load_chain(tmp_path / "nojoints.json")


def test_save_load_identity(chain, tmp_path):
    save_chain(chain, tmp_path / "c.json")
    back = load_chain(tmp_path / "c.json")
    assert back == chain
    assert chain_to_dict(back) == chain_to_dict(chain)


def test_segments_and_radii():
    c = two_link()
    p = forward_kinematics(c, [0, 0]).positions
    segs = link_segments(c, p)
    assert len(segs) == 2
    assert np.array_equal(segs[0][0], segs[0][1])  # root sphere
    assert segs[1][2] == 5
    assert list(joint_radii(c)) == [10, 5]
