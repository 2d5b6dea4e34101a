import json

import numpy as np
import pytest

from spdh.geometry import (
    DEFAULT_INTRINSICS,
    BehindCameraError,
    DepthImage,
    NormalizationSpec,
    PinholeIntrinsics,
    backproject,
    load_intrinsics,
    nearest_indices,
    normalize_xyz,
    pixel_to_point,
    project,
    read_depth,
    read_depth_png,
    read_depth_raw,
    resize_depth,
    save_intrinsics,
    write_depth_png,
    write_depth_raw,
)

K = DEFAULT_INTRINSICS


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        PinholeIntrinsics(0, 365, 256, 212, 512, 424)
    with pytest.raises(ValueError):
        PinholeIntrinsics(365, 365, 512, 212, 512, 424)
    with pytest.raises(ValueError):
        PinholeIntrinsics(365, 365, 256, -1, 512, 424)


def test_intrinsics_json_roundtrip(tmp_path):
    save_intrinsics(K, tmp_path / "cam.json")
    assert load_intrinsics(tmp_path / "cam.json") == K
    assert json.loads((tmp_path / "cam.json").read_text()).keys() == {"fx", "fy", "cx", "cy", "width", "height"}


def test_depth_image_invariants():
    with pytest.raises(ValueError):
        DepthImage(np.array([[-1.0]]))
    with pytest.raises(ValueError):
        DepthImage(np.array([[9000.0]]))
    with pytest.raises(ValueError):
        DepthImage(np.array([[np.nan]]))
    d = DepthImage(np.zeros((2, 3)))
    assert d.data.flags.writeable is False


def test_backproject_principal_point():
    d = np.zeros(K.shape)
    d[212, 256] = 1000.0
    xyz = backproject(DepthImage(d), K)
    assert np.array_equal(xyz.data[212, 256], [0.0, 0.0, 1000.0])


def test_backproject_zero_is_invalid():
    d = np.zeros(K.shape)
    xyz = backproject(DepthImage(d), K)
    assert not xyz.mask.any()
    assert np.all(xyz.data == 0.0)


def test_backproject_one_focal_off_axis():
    # u = 621 lies outside a 512-wide sensor, so use a wider camera for this hand case
    Kw = PinholeIntrinsics(365.0, 365.0, 256.0, 212.0, 700, 424)
    d = np.zeros(Kw.shape)
    d[212, 621] = 1000.0
    xyz = backproject(DepthImage(d), Kw)
    assert np.allclose(xyz.data[212, 621], [1000.0, 0.0, 1000.0], atol=0, rtol=0)


def test_backproject_dimension_mismatch():
    with pytest.raises(ValueError):
        backproject(DepthImage(np.zeros((10, 10))), K)


def test_project_examples():
    assert np.array_equal(project([0, 0, 1500], K), [K.cx, K.cy])
    assert project([1000, 0, 1000], K)[0] == 621.0
    with pytest.raises(BehindCameraError):
        project([0, 0, 0], K)
    with pytest.raises(BehindCameraError):
        project([[0, 0, 10], [0, 0, -5]], K)


def test_project_backproject_roundtrip(rng):
    d = rng.uniform(300, 7000, K.shape)
    d[rng.random(K.shape) < 0.2] = 0.0
    xyz = backproject(DepthImage(d), K)
    uv = project(xyz.data[xyz.mask], K)
    v, u = np.nonzero(xyz.mask)
    assert np.max(np.abs(uv - np.stack([u, v], 1))) < 1e-9
    assert np.array_equal(xyz.data[..., 2][xyz.mask], d[xyz.mask])
    assert xyz.mask.sum() == np.count_nonzero(d)


def test_pixel_to_point_inverts_project(rng):
    p = np.column_stack([rng.uniform(-500, 500, 50), rng.uniform(-500, 500, 50), rng.uniform(500, 3000, 50)])
    uv = project(p, K)
    assert np.allclose(pixel_to_point(uv[:, 0], uv[:, 1], p[:, 2], K), p, atol=1e-9)


def test_normalize_endpoints_and_midpoint():
    spec = NormalizationSpec()
    data = np.array([[[-2000, -2000, 500], [2000, 2000, 3380], [0, 0, 1940], [0, 0, 0]]], float)
    mask = np.array([[True, True, True, False]])
    from spdh.geometry import XyzImage

    out = normalize_xyz(XyzImage(data, mask), spec)
    assert np.array_equal(out[0, 0], [0, 0, 0])
    assert np.array_equal(out[0, 1], [1, 1, 1])
    assert out[0, 2, 2] == pytest.approx(0.5, abs=1e-15)
    assert np.array_equal(out[0, 3], [0, 0, 0])


def test_normalize_monotone_and_idempotent(rng):
    from spdh.geometry import XyzImage

    data = rng.uniform(-3000, 4000, (8, 8, 3))
    mask = np.ones((8, 8), bool)
    out = normalize_xyz(XyzImage(data, mask))
    for c in range(3):
        order = np.argsort(data[..., c].ravel())
        assert np.all(np.diff(out[..., c].ravel()[order]) >= 0)
    unit = NormalizationSpec((0, 0, 0), (1, 1, 1))
    assert np.array_equal(normalize_xyz(XyzImage(out, mask), unit), out)


def test_normalize_minmax_mode(rng):
    from spdh.geometry import XyzImage

    data = rng.uniform(-100, 100, (4, 4, 3))
    out = normalize_xyz(XyzImage(data, np.ones((4, 4), bool)), NormalizationSpec(mode="minmax"))
    assert np.allclose(out.reshape(-1, 3).min(0), 0) and np.allclose(out.reshape(-1, 3).max(0), 1)


def test_normalization_spec_validation():
    with pytest.raises(ValueError):
        NormalizationSpec((0, 0, 10), (1, 1, 5))
    with pytest.raises(ValueError):
        NormalizationSpec(mode="robust")


def test_resize_identity_and_values(rng):
    d = DepthImage(rng.integers(0, 5000, (424, 512)).astype(float))
    assert resize_depth(d, 512, 424) is d
    r = resize_depth(d, 384, 192)
    assert r.data.shape == (192, 384)
    assert np.isin(r.data, d.data).all()


def test_resize_reprojection_toy_exhaustive():
    # every source pixel center on a 16x16 toy camera, reprojected with scaled intrinsics
    src = PinholeIntrinsics(20.0, 18.0, 7.5, 8.0, 16, 16)
    for new_w, new_h in [(8, 8), (12, 6), (16, 16), (24, 10)]:
        dst = src.scaled(new_w, new_h)
        cols = nearest_indices(16, new_w)
        rows = nearest_indices(16, new_h)
        for v in range(new_h):
            for u in range(new_w):
                su, sv = cols[u], rows[v]
                p = pixel_to_point(su, sv, 1000.0, src)
                pu, pv = project(p, dst)
                assert abs(pu - u) <= 1.0 and abs(pv - v) <= 1.0


def test_scaled_intrinsics_formula():
    s = K.scaled(384, 192)
    assert s.fx == 365 * 384 / 512 and s.cx == 256 * 384 / 512
    assert s.fy == 365 * 192 / 424 and s.cy == 212 * 192 / 424


def test_png_roundtrip(tmp_path, rng):
    d = np.rint(rng.uniform(0, 8000, (20, 30)))
    d[0, 0] = 0
    write_depth_png(tmp_path / "d.png", DepthImage(d))
    back = read_depth_png(tmp_path / "d.png")
    assert np.array_equal(back.data, d)
    assert np.array_equal(read_depth(tmp_path / "d.png").data, d)


def test_png_rejects_8bit(tmp_path):
    import cv2

    cv2.imwrite(str(tmp_path / "x.png"), np.zeros((4, 4), np.uint8))
    with pytest.raises(ValueError):
        read_depth_png(tmp_path / "x.png")


def test_raw_roundtrip_and_header(tmp_path, rng):
    d = rng.uniform(0, 8000, (7, 9)).astype(np.float32).astype(float)
    write_depth_raw(tmp_path / "d.raw", DepthImage(d))
    buf = (tmp_path / "d.raw").read_bytes()
    assert buf[:8] == b"SPDHDPTH" and len(buf) == 16 + 4 * 63
    assert int.from_bytes(buf[8:12], "little") == 9 and int.from_bytes(buf[12:16], "little") == 7
    assert np.array_equal(read_depth_raw(tmp_path / "d.raw").data, d)
    (tmp_path / "bad.raw").write_bytes(b"XXXXXXXX" + buf[8:])
    with pytest.raises(ValueError):
        read_depth_raw(tmp_path / "bad.raw")
