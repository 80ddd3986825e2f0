"""Tensor plumbing: channel ops, padding, SBT1 round trips."""

import numpy as np
import pytest

from sbdenoise import tensor as ts


class TestConcatSplit:
    def test_concat_order(self):
        a = np.full((1, 2, 3, 3), 1.0)
        b = np.full((1, 1, 3, 3), 2.0)
        out = ts.concat_channels([a, b])
        assert out.shape == (1, 3, 3, 3)
        np.testing.assert_array_equal(out[:, :2], a)
        np.testing.assert_array_equal(out[:, 2:], b)

    def test_single_part_is_identity(self):
        a = np.random.default_rng(3).normal(size=(2, 3, 4, 5))
        out = ts.concat_channels([a])
        np.testing.assert_array_equal(out, a)
        assert out is not a  # caller owns the result

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            sizes = list(rng.integers(1, 5, size=int(rng.integers(1, 5))))
            parts = [rng.normal(size=(2, int(s), 4, 6)) for s in sizes]
            back = ts.split_channels(ts.concat_channels(parts), sizes)
            assert len(back) == len(parts)
            for orig, got in zip(parts, back):
                np.testing.assert_array_equal(orig, got)

    def test_mismatch_reports_offending_index(self):
        parts = [np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 5, 4))]
        with pytest.raises(ValueError, match="part 2"):
            ts.concat_channels(parts)

    def test_split_size_mismatch(self):
        with pytest.raises(ValueError, match="sum to 5"):
            ts.split_channels(np.zeros((1, 4, 2, 2)), [2, 3])

    def test_empty_concat_rejected(self):
        with pytest.raises(ValueError):
            ts.concat_channels([])


class TestPad:
    def test_zero_pad_identity(self):
        x = np.random.default_rng(1).normal(size=(1, 2, 3, 3))
        np.testing.assert_array_equal(ts.pad_spatial(x, 0), x)

    def test_border_zero_interior_kept(self):
        x = np.ones((1, 1, 2, 2))
        out = ts.pad_spatial(x, 2)
        assert out.shape == (1, 1, 6, 6)
        np.testing.assert_array_equal(out[0, 0, 2:4, 2:4], x[0, 0])
        assert out.sum() == x.sum()  # padding adds nothing

    def test_sum_preserved_random(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = rng.normal(size=(2, 3, 4, 5))
            p = int(rng.integers(0, 4))
            assert np.isclose(ts.pad_spatial(x, p).sum(), x.sum())

    def test_negative_pad_rejected(self):
        with pytest.raises(ValueError):
            ts.pad_spatial(np.zeros((1, 1, 2, 2)), -1)


class TestSbtFormat:
    def test_roundtrip_f64(self, tmp_path):
        rng = np.random.default_rng(11)
        arr = rng.normal(size=(3, 2, 5, 4))
        path = tmp_path / "t.sbt"
        ts.save_sbt(path, arr)
        np.testing.assert_array_equal(ts.load_sbt(path), arr)

    def test_f32_tag(self, tmp_path):
        arr = np.random.default_rng(2).normal(size=(1, 1, 4, 4))
        path = tmp_path / "t32.sbt"
        ts.save_sbt(path, arr, dtype="f32")
        got = ts.load_sbt(path)
        assert got.dtype == np.float64  # loader always upcasts
        np.testing.assert_allclose(got, arr, atol=1e-6)

    def test_header_layout(self, tmp_path):
        arr = np.arange(8.0).reshape(1, 2, 2, 2)
        path = tmp_path / "h.sbt"
        ts.save_sbt(path, arr)
        raw = path.read_bytes()
        assert raw[:4] == b"SBT1"
        assert raw[20] == 0
        assert len(raw) == 21 + 8 * 8

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.sbt"
        path.write_bytes(b"NOPE" + bytes(32))
        with pytest.raises(ValueError, match="magic"):
            ts.load_sbt(path)

    def test_truncated_rejected(self, tmp_path):
        arr = np.ones((1, 1, 4, 4))
        path = tmp_path / "t.sbt"
        ts.save_sbt(path, arr)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ValueError, match="truncated"):
            ts.load_sbt(path)

    def test_non_4d_rejected(self):
        with pytest.raises(ValueError, match="4-D"):
            ts.as_nchw(np.zeros((3, 3)))
