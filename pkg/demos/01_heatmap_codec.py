"""
Encoding and decoding joints with semi-perspective heatmaps
===========================================================

A joint becomes a uv heatmap (image plane) and a uz heatmap (image column by
depth slice). Decoding picks the peaks back out and lifts them to 3D.
"""
# %%
import numpy as np

from spdh import JointSet3D, PinholeIntrinsics, decode, encode, make_quantization, perspective_sigma

# a 384x192 heatmap grid; with fx = 365 a 50 mm Gaussian is 10 px wide at 1825 mm
K = PinholeIntrinsics(365.0, 365.0, 192.0, 96.0, 384, 192)
quant = make_quantization(500, 3380, 15)
print("depth slices:", quant.num_slices, "uv rows:", K.height)

# %%
# the blob shrinks with distance, so it always covers the same 50 mm of the scene
for z in (600.0, 1825.0, 3300.0):
    print(f"Z = {z:6.0f} mm  sigma = {perspective_sigma(50.0, K.fx, z):6.2f} px")

# %%
joints = JointSet3D([[120.0, -80.0, 1400.0], [-600.0, 250.0, 2710.0], [15.0, 5.0, 900.0]],
                    joint_names=["shoulder", "elbow", "wrist"])
stack = encode(joints, K, sigma_m=50.0, quant=quant)
print("uv maps", stack.uv_maps.shape, "uz maps", stack.uz_maps.shape)

back = decode(stack, K)
for name, p, q in zip(joints.joint_names, joints.positions, back.positions):
    print(f"{name:9s} true {np.round(p, 1)}  decoded {np.round(q, 1)}  |dZ| {abs(p[2] - q[2]):.2f} mm")

# %%
# quantization is the only loss: Z is off by at most half a slice
rng = np.random.default_rng(0)
u = rng.uniform(-0.5, 383.5, 500)
v = rng.uniform(-0.5, 191.5, 500)
z = rng.uniform(515, 3365, 500)
pts = np.column_stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])
err = []
for chunk in np.array_split(pts, 10):
    got = decode(encode(JointSet3D(chunk), K, quant=quant), K)
    err.append(got.positions - chunk)
err = np.vstack(err)
print(f"500 random joints: max |dZ| {np.abs(err[:, 2]).max():.2f} mm, max 3D error {np.linalg.norm(err, axis=1).max():.2f} mm")

# %%
# peak picking ignores the overall scale of a map, so predicted heatmaps need no calibration
scaled = stack.scaled([3.0, 0.01, 250.0], [0.5, 7.0, 1e-3])
print("scale-free:", np.array_equal(decode(scaled, K, peak_threshold=0.0).positions, back.positions))
