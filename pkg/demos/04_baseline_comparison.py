"""
Why not just read Z off the depth map?
======================================

Given perfect 2D joints, the simplest lift to 3D samples the depth map at each
joint's pixel. That lands on the robot's skin, in front of the joint centre.
The heatmap codec has no such bias; its only error is the depth quantization.
"""
# %%
import numpy as np

from spdh import DEFAULT_INTRINSICS, DepthImage, JointSet3D, baseline_2d_to_3d, decode, encode, load_chain
from spdh.metrics import evaluate_frames, format_table
from spdh.robot import joint_radii
from spdh.synth import NO_NOISE, default_scene, interpolate_keyframes, joint_visibility, pick_and_place_keyframes, render_clean
from spdh.geometry import project

chain = load_chain()
K = DEFAULT_INTRINSICS
Kh = K.scaled(384, 192)
scene = default_scene(chain, K, NO_NOISE)
poses = interpolate_keyframes(pick_and_place_keyframes(chain, np.random.default_rng(1), motions=2), 10)
radii = joint_radii(chain)

# %%
base_pairs, spdh_pairs, dz = [], [], []
for q in poses:
    depth, joints = render_clean(scene, q)
    gt = JointSet3D(joints.positions, joint_visibility(depth, joints, K, radii), joints.joint_names)
    base = baseline_2d_to_3d(project(gt.positions, K), DepthImage(depth), K, gt.joint_names)
    base_pairs.append((base, gt))
    spdh_pairs.append((decode(encode(gt, Kh), Kh), gt))
    dz.append(base.positions[gt.visibility, 2] - gt.positions[gt.visibility, 2])

dz = np.concatenate(dz)
print(f"baseline Z error on {dz.size} visible joints: mean {dz.mean():.1f} mm, range {dz.min():.1f}..{dz.max():.1f} mm")
print("every sample is in front of the joint:", bool(np.all(dz < 0)))

# %%
print(format_table([evaluate_frames(spdh_pairs, label="SPDH round trip"),
                    evaluate_frames(base_pairs, label="2D + depth")]))
