import numpy as np
import pytest

from lumbarseg.volume import (
    AXIAL,
    CORONAL,
    SAGITTAL,
    BoundingBox,
    LabelVolume,
    Volume,
    VolumeFormatError,
    crop,
    cuboid_mean,
    extract_slice,
    integral_image,
    load_labels,
    load_volume,
    normalize,
    read_mhd,
    resample_isotropic,
    save_volume,
    stack_slices,
)


def write_pair(tmp_path, dims, etype, payload, name="vol"):
    hdr = tmp_path / f"{name}.mhd"
    hdr.write_text(
        "NDims = 3\n"
        f"DimSize = {dims[0]} {dims[1]} {dims[2]}\n"
        "ElementSpacing = 1 1 1\n"
        f"ElementType = {etype}\n"
        "ElementByteOrderMSB = False\n"
        f"ElementDataFile = {name}.raw\n"
    )
    (tmp_path / f"{name}.raw").write_bytes(payload)
    return str(hdr)


def test_load_hand_written_file(tmp_path):
    path = write_pair(tmp_path, (2, 2, 2), "MET_SHORT", np.arange(8, dtype="<i2").tobytes())
    v = load_volume(path)
    assert v.dims == (2, 2, 2)
    assert v.spacing == (1.0, 1.0, 1.0)
    np.testing.assert_array_equal(v.flat(), np.arange(8))
    # x fastest: voxel (1, 0, 0) is the second stored value, (0, 0, 1) the fifth
    assert v.data[1, 0, 0] == 1 and v.data[0, 1, 0] == 2 and v.data[0, 0, 1] == 4


def test_size_mismatch(tmp_path):
    path = write_pair(tmp_path, (10, 10, 10), "MET_FLOAT", np.zeros(999, "<f4").tobytes())
    with pytest.raises(VolumeFormatError, match="declares"):
        load_volume(path)


def test_malformed_and_unsupported(tmp_path):
    bad = tmp_path / "bad.mhd"
    bad.write_text("NDims 3\n")
    with pytest.raises(VolumeFormatError):
        load_volume(str(bad))
    path = write_pair(tmp_path, (1, 1, 1), "MET_LONG", b"\0" * 4)
    with pytest.raises(VolumeFormatError, match="unsupported"):
        load_volume(path)


@pytest.mark.parametrize("etype,dtype", [
    ("MET_SHORT", "<i2"), ("MET_USHORT", "<u2"), ("MET_FLOAT", "<f4"),
    ("MET_DOUBLE", "<f8"), ("MET_UCHAR", "u1"),
])
def test_round_trip_byte_identical(tmp_path, etype, dtype):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 200, size=3 * 4 * 5).astype(dtype).tobytes()
    src = write_pair(tmp_path, (3, 4, 5), etype, raw, "src")
    v = load_volume(src)
    out = str(tmp_path / "out.mhd")
    save_volume(v, out, etype)
    assert (tmp_path / "out.raw").read_bytes() == raw
    w = load_volume(out)
    assert w.dims == v.dims and w.spacing == v.spacing
    np.testing.assert_array_equal(w.data, v.data)


def test_save_load_identity(tmp_path):
    rng = np.random.default_rng(1)
    v = Volume(rng.normal(size=(4, 3, 2)), (0.5, 1.5, 2.0))
    save_volume(v, str(tmp_path / "a.mhd"))
    w = load_volume(str(tmp_path / "a.mhd"))
    assert w.spacing == v.spacing
    np.testing.assert_array_equal(w.data, v.data)
    lab = LabelVolume(rng.integers(0, 6, size=(4, 3, 2)))
    save_volume(lab, str(tmp_path / "l.mhd"))
    assert read_mhd(str(tmp_path / "l.mhd"))[2] == "MET_UCHAR"
    np.testing.assert_array_equal(load_labels(str(tmp_path / "l.mhd")).data, lab.data)


def test_volume_invariants():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), (1, 0, 1))
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), np.nan))
    with pytest.raises(ValueError):
        LabelVolume(np.full((2, 2, 2), 6))
    with pytest.raises(ValueError):
        BoundingBox(3, 2, 0, 0, 0, 0)


def test_normalize_window():
    v = Volume(np.array([-100.0, 0, 500, 1000, 2000]).reshape(5, 1, 1))
    np.testing.assert_allclose(normalize(v).data.ravel(), [0, 0, 0.5, 1, 1])


class TestResample:
    def test_identity(self):
        v = Volume(np.random.default_rng(0).normal(size=(5, 4, 3)))
        np.testing.assert_array_equal(resample_isotropic(v, 1.0).data, v.data)

    def test_constant(self):
        v = Volume(np.full((4, 5, 6), 7.5), (2.0, 0.5, 1.3))
        out = resample_isotropic(v, 0.8)
        assert out.spacing == (0.8, 0.8, 0.8)
        assert out.dims == (10, 3, 10)
        np.testing.assert_allclose(out.data, 7.5)

    def test_linear_ramp(self):
        ramp = np.broadcast_to(np.arange(4.0)[:, None, None] * 10.0, (4, 4, 4))
        out = resample_isotropic(Volume(ramp, (2.0, 1.0, 1.0)), 1.0)
        assert out.dims == (8, 4, 4)
        # output voxel i sits at input coordinate i/2; past the last voxel the edge value holds
        expected = np.minimum(np.arange(8) / 2.0, 3.0) * 10.0
        np.testing.assert_allclose(out.data[:, 2, 1], expected, atol=1e-12)

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            resample_isotropic(Volume(np.zeros((2, 2, 2))), 0)


class TestIntegral:
    def test_all_ones(self):
        ii = integral_image(Volume(np.ones((3, 3, 3))))
        assert ii.cuboid_sum((0, 0, 0), (2, 2, 2)) == 27

    def test_single_voxel(self):
        data = np.random.default_rng(2).normal(size=(5, 6, 7))
        ii = integral_image(Volume(data))
        for ijk in [(0, 0, 0), (4, 5, 6), (2, 3, 1)]:
            assert ii.cuboid_sum(ijk, ijk) == pytest.approx(data[ijk], rel=1e-9, abs=1e-12)

    def test_random_cuboids_vs_brute_force(self):
        rng = np.random.default_rng(3)
        data = rng.uniform(0, 1000, size=(20, 20, 20))
        ii = integral_image(Volume(data))
        assert ii.cuboid_sum((0, 0, 0), (19, 19, 19)) == pytest.approx(data.sum(), rel=1e-9)
        for _ in range(100):
            a, b = rng.integers(0, 20, size=(2, 3))
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            brute = 0.0
            for i in range(lo[0], hi[0] + 1):
                for j in range(lo[1], hi[1] + 1):
                    for k in range(lo[2], hi[2] + 1):
                        brute += data[i, j, k]
            assert ii.cuboid_sum(lo, hi) == pytest.approx(brute, rel=1e-9)


class TestCuboidMean:
    def test_constant(self):
        ii = integral_image(Volume(np.full((6, 6, 6), 3.25)))
        assert cuboid_mean(ii, (1, 1, 1), (4, -2, 0), (3, 1, 2)) == pytest.approx(3.25)

    def test_outside_is_zero(self):
        ii = integral_image(Volume(np.full((6, 6, 6), 3.0)))
        assert cuboid_mean(ii, (0, 0, 0), (20, 0, 0), (2, 2, 2)) == 0.0
        assert cuboid_mean(ii, (0, 0, 0), (-5, 0, 0), (2, 2, 2)) == 0.0

    def test_random_vs_brute_force(self):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(16, 16, 16))
        ii = integral_image(Volume(data))
        for _ in range(50):
            c = rng.integers(0, 16, 3)
            off = rng.integers(-12, 13, 3)
            half = rng.integers(0, 6, 3)
            lo = np.maximum(c + off - half, 0)
            hi = np.minimum(c + off + half, 15)
            if np.any(hi < lo):
                expected = 0.0
            else:
                vals = [data[i, j, k] for i in range(lo[0], hi[0] + 1)
                        for j in range(lo[1], hi[1] + 1) for k in range(lo[2], hi[2] + 1)]
                expected = sum(vals) / len(vals)
            assert cuboid_mean(ii, c, off, half) == pytest.approx(expected, rel=1e-9, abs=1e-12)


class TestSlicesAndCrops:
    def setup_method(self):
        self.v = Volume(np.arange(8.0).reshape(2, 2, 2, order="F"))

    def test_sagittal_face(self):
        s = extract_slice(self.v, SAGITTAL, 0)
        # rows run along z, columns along y
        np.testing.assert_array_equal(s, [[0, 2], [4, 6]])
        assert extract_slice(self.v, AXIAL, 1).shape == (2, 2)
        with pytest.raises(IndexError):
            extract_slice(self.v, CORONAL, 2)

    @pytest.mark.parametrize("axis", [SAGITTAL, CORONAL, AXIAL])
    def test_partition_identity(self, axis):
        data = np.random.default_rng(5).normal(size=(3, 4, 5))
        v = Volume(data, (1.0, 2.0, 3.0))
        n = v.dims[{SAGITTAL: 0, CORONAL: 1, AXIAL: 2}[axis]]
        back = stack_slices([extract_slice(v, axis, i) for i in range(n)], axis, v.spacing)
        np.testing.assert_array_equal(back.data, v.data)

    def test_label_slice_alphabet(self):
        lab = LabelVolume(np.random.default_rng(6).integers(0, 6, size=(4, 4, 4)))
        s = extract_slice(lab, SAGITTAL, 2)
        assert set(np.unique(s)) <= set(range(6))

    def test_crop_identity_and_block(self):
        data = np.arange(64.0).reshape(4, 4, 4)
        v = Volume(data, (1.0, 1.0, 2.0))
        whole = crop(v, BoundingBox(0, 3, 0, 3, 0, 3))
        np.testing.assert_array_equal(whole.data, data)
        sub = crop(v, BoundingBox(1, 2, 1, 2, 1, 2))
        assert sub.spacing == v.spacing
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    assert sub.data[i, j, k] == (i + 1) * 16 + (j + 1) * 4 + (k + 1)

    def test_crop_clamps_and_rejects_empty(self):
        v = Volume(np.zeros((4, 4, 4)))
        assert crop(v, BoundingBox(2, 9, 0, 3, 0, 3)).dims == (2, 4, 4)
        with pytest.raises(ValueError):
            crop(v, BoundingBox(5, 9, 0, 3, 0, 3))


def test_flat_round_trip():
    v = Volume(np.random.default_rng(7).normal(size=(3, 4, 5)))
    w = Volume.from_flat(v.flat(), v.dims)
    np.testing.assert_array_equal(w.data, v.data)
