"""Model assembly: identity at zero init, seeded determinism, He scaling,
kind swappability, and checkpoint round trips."""

import numpy as np
import pytest

from sbdenoise import autodiff as ad
from sbdenoise import model as md


def small_cfg(kind="sdwt", **kw):
    return md.ModelConfig(kind=kind, blocks=kw.pop("blocks", 1),
                          filters=kw.pop("filters", 8), **kw)


class TestInit:
    def test_zero_model_is_identity(self):
        m = md.zero_params(small_cfg())
        x = np.random.default_rng(0).normal(size=(2, 4, 8, 8))
        np.testing.assert_array_equal(md.model_forward(m, x), x)

    def test_fresh_model_is_identity(self):
        # residual conv starts at zero: a fresh model scores exactly like
        # its input, so training can only improve on the noisy baseline
        m = md.init_params(small_cfg(seed=4))
        np.testing.assert_array_equal(m.tail_out.w, 0.0)
        x = np.random.default_rng(1).normal(size=(1, 4, 8, 8))
        np.testing.assert_array_equal(md.model_forward(m, x), x)

    def test_same_seed_bit_identical(self):
        a = md.init_params(small_cfg(seed=7))
        b = md.init_params(small_cfg(seed=7))
        for (na, va), (nb, vb) in zip(a.named(), b.named()):
            assert na == nb
            np.testing.assert_array_equal(va, vb)

    def test_different_seed_differs(self):
        a = md.init_params(small_cfg(seed=7))
        b = md.init_params(small_cfg(seed=8))
        assert any(not np.array_equal(va, vb)
                   for (_, va), (_, vb) in zip(a.named(), b.named()))

    def test_biases_zero_weights_he_scaled(self):
        m = md.init_params(md.ModelConfig(kind="sdwt", blocks=1, filters=64, seed=3))
        for name, arr in m.named():
            if name.endswith(".b"):
                np.testing.assert_array_equal(arr, 0.0)
        w = m.head_out.w  # (64, 128, 3, 3): large enough for a tight estimate
        fan_in = w.shape[1] * w.shape[2] * w.shape[3]
        expect = np.sqrt(2.0 / fan_in)
        assert abs(w.std() - expect) / expect < 0.10

    def test_map_and_named_walk_same_order(self):
        # bind_model and checkpoints rely on this exact agreement
        m = md.init_params(small_cfg(blocks=2))
        seen = []
        m.map(lambda arr: seen.append(arr) or arr)
        named = [arr for _, arr in m.named()]
        assert len(seen) == len(named)
        assert all(a is b for a, b in zip(seen, named))

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            md.init_params(md.ModelConfig(kind="best"))
        with pytest.raises(ValueError, match="multiple of 4"):
            md.init_params(md.ModelConfig(filters=10))
        with pytest.raises(ValueError, match="blocks"):
            md.init_params(md.ModelConfig(blocks=0))


class TestForward:
    @pytest.mark.parametrize("kind", ["sdwt", "dwt", "nodwt"])
    def test_shape_preserved_any_kind(self, kind):
        m = md.init_params(small_cfg(kind=kind))
        x = np.random.default_rng(1).normal(size=(2, 4, 6, 10))
        assert md.model_forward(m, x).shape == x.shape

    def test_odd_dims_rejected(self):
        m = md.init_params(small_cfg())
        with pytest.raises(ValueError, match="even"):
            md.model_forward(m, np.zeros((1, 4, 7, 8)))

    def test_wrong_channels_rejected(self):
        m = md.init_params(small_cfg())
        with pytest.raises(ValueError, match="expected"):
            md.model_forward(m, np.zeros((1, 3, 8, 8)))

    def test_gradients_match_fd_tiny(self):
        rng = np.random.default_rng(2)
        m = md.init_params(md.ModelConfig(kind="sdwt", blocks=1, filters=4, seed=1))
        # the residual conv starts at zero, which would zero out every
        # upstream gradient; randomize it so the check spans the full depth
        m.tail_out.w[...] = rng.normal(0.0, 0.2, m.tail_out.w.shape)
        x = rng.normal(size=(1, 4, 4, 4))
        wout = rng.normal(size=x.shape)
        params = {"x": x, **dict(m.named())}

        def f(vals):
            names = iter([n for n, _ in m.named()])
            mv = m.map(lambda _: vals[next(names)])
            return ad.sum_all(ad.mul(md.model_forward(mv, vals["x"]), wout))

        assert ad.finite_diff_check(f, params) <= 1e-5

    def test_kind_parity_at_bench_width(self):
        counts = {k: md.param_count(md.init_params(md.ModelConfig(kind=k, blocks=2,
                                                                  filters=16)))
                  for k in ("sdwt", "dwt", "nodwt")}
        ref = counts["sdwt"]
        for k, n in counts.items():
            assert abs(n - ref) / ref <= 0.05, (k, n, ref)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        m = md.init_params(small_cfg(blocks=2, seed=11))
        path = tmp_path / "m.ckpt"
        md.save_checkpoint(path, m, epoch=4, extra={"note": "x"})
        m2, manifest = md.load_checkpoint(path)
        assert manifest["epoch"] == "4"
        assert manifest["note"] == "x"
        assert m2.cfg == m.cfg
        for (na, va), (nb, vb) in zip(m.named(), m2.named()):
            assert na == nb
            np.testing.assert_array_equal(va, vb)

    def test_forward_identical_after_reload(self, tmp_path):
        m = md.init_params(small_cfg(seed=5))
        path = tmp_path / "m.ckpt"
        md.save_checkpoint(path, m)
        m2, _ = md.load_checkpoint(path)
        x = np.random.default_rng(3).normal(size=(1, 4, 8, 8))
        np.testing.assert_array_equal(md.model_forward(m, x), md.model_forward(m2, x))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not-a-checkpoint\n\nxxxx")
        with pytest.raises(ValueError, match="magic"):
            md.load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        m = md.init_params(small_cfg())
        path = tmp_path / "m.ckpt"
        md.save_checkpoint(path, m)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(ValueError):
            md.load_checkpoint(path)
