import struct

import numpy as np
import pytest

from mscd.raster import (
    Raster,
    RasterFormatError,
    load_raster,
    replicate_band,
    save_raster,
    standardize,
    to_decibels,
)


def test_raster_shape_and_invariants():
    r = Raster(np.zeros((2, 4, 5), dtype=np.float32))
    assert (r.bands, r.rows, r.cols) == (2, 4, 5)
    with pytest.raises(ValueError):
        Raster(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        Raster(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        Raster(np.zeros((0, 3, 3)))


def test_raster_is_immutable():
    r = Raster(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        r.data[0, 0, 0] = 1.0
    with pytest.raises(AttributeError):
        r.data = np.zeros((1, 2, 2))


def test_load_rf32_known_bytes(tmp_path):
    path = tmp_path / "a.rf32"
    payload = struct.pack("<4f", 0.0, 1.0, 2.0, 3.0)
    path.write_bytes(b"RF32 2 2 1\n" + payload)
    r = load_raster(path)
    assert (r.rows, r.cols, r.bands) == (2, 2, 1)
    assert r.data.ravel().tolist() == [0.0, 1.0, 2.0, 3.0]


def test_save_rf32_smallest_raster_exact_layout(tmp_path):
    path = tmp_path / "s.rf32"
    save_raster(Raster(np.full((1, 1, 1), 0.5)), path)
    blob = path.read_bytes()
    assert blob == b"RF32 1 1 1\n" + struct.pack("<f", 0.5)
    assert len(blob) == 15


def test_rf32_roundtrip_random_rasters(tmp_path):
    rng = np.random.default_rng(7)
    for i in range(20):
        data = rng.standard_normal((3, 7, 5)).astype(np.float32)
        r = Raster(data)
        path = tmp_path / f"r{i}.rf32"
        save_raster(r, path)
        back = load_raster(path)
        assert back == r
        assert back.data.tobytes() == r.data.tobytes()


def test_pgm_full_scale_normalization(tmp_path):
    path = tmp_path / "white.pgm"
    path.write_bytes(b"P5\n3 2\n255\n" + bytes([255] * 6))
    r = load_raster(path)
    assert r.bands == 1 and (r.rows, r.cols) == (2, 3)
    assert np.all(r.data == 1.0)


def test_pgm_binary_map_mapping(tmp_path):
    path = tmp_path / "map.pgm"
    save_raster(Raster(np.array([[[0.0, 1.0], [1.0, 0.0]]])), path)
    blob = path.read_bytes()
    assert blob.endswith(bytes([0, 255, 255, 0]))
    back = load_raster(path)
    assert back.data.ravel().tolist() == [0.0, 1.0, 1.0, 0.0]


def test_pgm_ascii_variant_and_comments(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_text("P2\n# comment line\n2 2\n255\n0 255\n128 0\n")
    r = load_raster(path)
    assert r.data[0, 0, 1] == 1.0
    assert abs(r.data[0, 1, 0] - 128 / 255) < 1e-7


def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    data = rng.integers(0, 256, (3, 4, 6)).astype(np.float32) / 255.0
    path = tmp_path / "c.ppm"
    save_raster(Raster(data), path)
    back = load_raster(path)
    assert np.allclose(back.data, data, atol=1e-7)


@pytest.mark.parametrize(
    "blob",
    [
        b"XF32 1 1 1\n" + b"\x00" * 4,          # bad magic
        b"RF32 1 1\n" + b"\x00" * 4,            # missing field
        b"RF32 1 x 1\n" + b"\x00" * 4,          # non-integer
        b"RF32 0 1 1\n",                        # non-positive dim
        b"RF32 2 2 1\n" + b"\x00" * 8,          # truncated payload
        b"RF32 99999 99999 999\n",              # dimension overflow
    ],
)
def test_rf32_malformed_inputs(tmp_path, blob):
    path = tmp_path / "bad.rf32"
    path.write_bytes(blob)
    with pytest.raises(RasterFormatError) as err:
        load_raster(path)
    assert "byte" in str(err.value)


@pytest.mark.parametrize(
    "blob",
    [
        b"P7\n1 1\n255\n\x00",                  # unknown magic
        b"P5\n2 2\n65535\n" + b"\x00" * 8,      # unsupported maxval
        b"P5\n2 2\n255\n\x00\x00",              # truncated
        b"P2\n2 2\n255\n0 1 2",                 # missing ascii sample
    ],
)
def test_pnm_malformed_inputs(tmp_path, blob):
    path = tmp_path / "bad.pgm"
    path.write_bytes(blob)
    with pytest.raises(RasterFormatError):
        load_raster(path)


def test_unknown_extension(tmp_path):
    with pytest.raises(ValueError):
        load_raster(tmp_path / "x.tif")
    with pytest.raises(ValueError):
        save_raster(Raster(np.zeros((1, 1, 1))), tmp_path / "x.tif")


def test_pnm_band_count_enforced(tmp_path):
    with pytest.raises(ValueError):
        save_raster(Raster(np.zeros((3, 2, 2))), tmp_path / "x.pgm")
    with pytest.raises(ValueError):
        save_raster(Raster(np.zeros((1, 2, 2))), tmp_path / "x.ppm")


def test_replicate_band():
    r = Raster(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    rep = replicate_band(r)
    assert rep.bands == 3
    for b in range(3):
        assert np.array_equal(rep.band(b), r.band(0))
    with pytest.raises(ValueError):
        replicate_band(rep)


def test_replicate_band_uniform_stats():
    rng = np.random.default_rng(11)
    rep = replicate_band(Raster(rng.random((1, 8, 8))))
    means = rep.data.mean(axis=(1, 2))
    stds = rep.data.std(axis=(1, 2))
    assert np.all(means == means[0]) and np.all(stds == stds[0])


def test_standardize_two_point_band():
    out, stats = standardize(Raster(np.array([[[2.0, 4.0]]])))
    assert np.allclose(out.data, [[[-1.0, 1.0]]])
    assert stats.mean[0] == 3.0 and stats.std[0] == 1.0  # population std


def test_standardize_constant_band():
    out, stats = standardize(Raster(np.full((1, 1, 3), 5.0)))
    assert np.all(out.data == 0.0)
    assert stats.std[0] == 0.0


def test_standardize_random_scene_and_idempotency():
    rng = np.random.default_rng(5)
    r = Raster(rng.normal(3.0, 2.5, (3, 64, 64)))
    out, _ = standardize(r)
    for b in range(3):
        assert abs(out.band(b).mean()) < 1e-5
        assert abs(out.band(b).std() - 1.0) < 1e-5
    again, _ = standardize(out)
    assert np.allclose(again.data, out.data, atol=1e-5)


def test_to_decibels():
    r = to_decibels(Raster(np.array([[[1.0, 10.0]]])))
    assert abs(r.data[0, 0, 0] - 10 * np.log10(1 + 1e-6)) < 1e-5
    assert abs(r.data[0, 0, 1] - 10 * np.log10(10 + 1e-6)) < 1e-5
    with pytest.raises(ValueError):
        to_decibels(Raster(np.array([[[-1.0]]])))
