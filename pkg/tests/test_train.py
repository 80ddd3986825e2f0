"""Optimizers against a scalar reference, PSNR/frequency-balance metrics,
the self-ensemble, and the training loop end to end (small)."""

import math

import numpy as np
import pytest

from sbdenoise import data as dt
from sbdenoise import transforms as tf
from sbdenoise import train as tr
from sbdenoise.loss import LossSpec
from sbdenoise.model import ModelConfig, init_params, load_checkpoint, model_forward, zero_params


def scalar_reference(kind, steps=100, lr=0.1, theta0=1.0):
    """Independent Adam/RAdam on f(t) = t^2, written against the update
    equations rather than the package code."""
    b1, b2, eps = 0.9, 0.999, 1e-8
    rho_inf = 2.0 / (1.0 - b2) - 1.0
    theta, m, v = theta0, 0.0, 0.0
    traj = []
    for t in range(1, steps + 1):
        g = 2.0 * theta
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        if kind == "adam":
            theta -= lr * mhat / (math.sqrt(vhat) + eps)
        else:
            rho_t = rho_inf - 2.0 * t * b2**t / (1.0 - b2**t)
            if rho_t > 4.0:
                rect = math.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                                 / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                theta -= lr * rect * mhat / (math.sqrt(vhat) + eps)
            else:
                theta -= lr * mhat
        traj.append(theta)
    return traj


def run_package_optimizer(kind, steps=100, lr=0.1, theta0=1.0):
    params = {"p": np.full((1, 1, 1, 1), theta0)}
    state = tr.make_optimizer(params, kind)
    traj = []
    for _ in range(steps):
        tr.optimizer_step(state, params, {"p": 2.0 * params["p"]}, lr)
        traj.append(float(params["p"][0, 0, 0, 0]))
    return traj


class TestOptimizer:
    @pytest.mark.parametrize("kind", tr.OPTIMIZER_KINDS)
    def test_matches_scalar_reference(self, kind):
        got = run_package_optimizer(kind)
        want = scalar_reference(kind)
        assert max(abs(a - b) for a, b in zip(got, want)) <= 1e-12

    @pytest.mark.parametrize("kind,n_decreasing", [("adam", 19), ("radam", 75)])
    def test_quadratic_convergence_profile(self, kind, n_decreasing):
        # both optimizers overshoot zero on the quadratic before settling;
        # the descent is strict only for an initial stretch
        traj = [1.0] + run_package_optimizer(kind)
        for i in range(n_decreasing):
            assert traj[i + 1] < traj[i]
        assert traj[n_decreasing + 1] >= traj[n_decreasing]
        assert min(traj) < 0.0
        assert abs(traj[-1]) < 0.05

    def test_radam_warmup_is_momentum_only(self):
        # rectifier is undefined until t = 5; step 1 must be lr * mhat exactly
        got = run_package_optimizer("radam", steps=1)
        assert got[0] == pytest.approx(0.8, abs=1e-15)

    def test_zero_gradient_is_identity(self):
        for kind in tr.OPTIMIZER_KINDS:
            params = {"w": np.full((1, 2, 1, 1), 3.5)}
            state = tr.make_optimizer(params, kind)
            for _ in range(3):
                tr.optimizer_step(state, params, {"w": np.zeros((1, 2, 1, 1))}, 0.1)
            np.testing.assert_array_equal(params["w"], 3.5)

    def test_key_mismatch_rejected(self):
        params = {"a": np.zeros((1, 1, 1, 1))}
        state = tr.make_optimizer(params)
        with pytest.raises(ValueError, match="keys"):
            tr.optimizer_step(state, params, {"b": np.zeros((1, 1, 1, 1))}, 0.1)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="optimizer"):
            tr.make_optimizer({}, "sgd")


class TestMetrics:
    def test_psnr_identical_is_inf(self):
        x = np.random.default_rng(0).uniform(size=(1, 1, 4, 4))
        assert tr.psnr(x, x) == math.inf

    def test_psnr_known_values(self):
        a = np.zeros((1, 1, 8, 8))
        b = np.ones((1, 1, 8, 8))
        assert tr.psnr(a, b, peak=255.0) == pytest.approx(48.1308, abs=1e-3)
        assert tr.psnr(a, 0.1 * b, peak=1.0) == pytest.approx(20.0, abs=1e-9)

    def test_psnr_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            tr.psnr(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 4)))

    def test_freq_balance_exact_is_one(self):
        x = np.random.default_rng(1).uniform(size=(1, 1, 8, 8))
        assert tr.freq_balance(x, x) == 1.0

    def test_freq_balance_dc_only_error(self):
        # a constant offset concentrates all error at DC: one nonzero DCT
        # entry per packed channel, so max/mean = h*w/4
        clean = np.random.default_rng(2).uniform(size=(1, 1, 8, 8))
        assert tr.freq_balance(clean + 0.25, clean) == pytest.approx(16.0)

    def test_freq_balance_white_error_is_small(self):
        rng = np.random.default_rng(3)
        clean = rng.uniform(size=(1, 1, 16, 16))
        noisy = clean + rng.normal(0.0, 0.01, clean.shape)
        assert tr.freq_balance(noisy, clean) < 16.0


def tiny_pairs(count=6, size=24, seed=0):
    nm = dt.NoiseModel()
    pairs = []
    for i in range(count):
        kind = dt.SCENE_KINDS[i % len(dt.SCENE_KINDS)]
        clean = dt.mosaic_rggb(dt.gen_clean_scene(kind, size, seed + i))
        noisy = dt.add_noise(clean, nm, seed + i + 1000)
        pairs.append(dt.Pair(f"pair{i:04d}", kind, seed + i, nm, noisy, clean))
    return pairs


class TestEnsemble:
    def test_zero_model_identity_on_window(self):
        m = zero_params(ModelConfig("sdwt", blocks=1, filters=8))
        noisy = dt.BayerImage(np.random.default_rng(5).uniform(size=(1, 1, 16, 20)))
        out = tr.ensemble_denoise(m, noisy)
        r0, c0, h, w = tr.ensemble_window(16, 20)
        assert out.plane.shape == (1, 1, h, w)
        np.testing.assert_array_equal(out.plane,
                                      noisy.plane[..., r0:r0 + h, c0:c0 + w])

    def test_single_member_equals_plain_forward(self):
        m = init_params(ModelConfig("sdwt", blocks=1, filters=8, seed=3))
        noisy = dt.BayerImage(np.random.default_rng(6).uniform(size=(1, 1, 16, 16)))
        out = tr.ensemble_denoise(m, noisy, flags_list=[(False, False, False)])
        full = tr.denoise_plane(m, noisy.plane)
        r0, c0, h, w = tr.ensemble_window(16, 16, [(False, False, False)])
        np.testing.assert_array_equal(out.plane, full[..., r0:r0 + h, c0:c0 + w])

    def test_window_geometry(self):
        r0, c0, h, w = tr.ensemble_window(16, 20)
        assert r0 % 2 == 0 and c0 % 2 == 0
        assert h % 2 == 0 and w % 2 == 0
        assert 0 < h <= 16 and 0 < w <= 20
        # rotated members shed rows/cols, so the window cannot be everything
        assert h < 16 or w < 20

    def test_identity_member_mask_is_full(self):
        mask = tr._member_mask(16, 16, (False, False, False))
        np.testing.assert_array_equal(mask, np.ones((1, 1, 16, 16)))

    def test_too_small_rejected(self):
        m = zero_params(ModelConfig("sdwt", blocks=1, filters=8))
        with pytest.raises(ValueError, match="ensemble"):
            tr.ensemble_denoise(m, dt.BayerImage(np.zeros((1, 1, 12, 12))))
        with pytest.raises(ValueError, match="ensemble"):
            tr.ensemble_window(16, 18)

    def test_pairwise_mean_of_identical_is_exact(self):
        # power-of-two counts divide exactly (the ensemble always uses 8);
        # other counts are only correct to rounding
        x = np.random.default_rng(7).uniform(size=(1, 1, 4, 4))
        for n in (1, 2, 4, 8):
            np.testing.assert_array_equal(tr._pairwise_mean([x.copy() for _ in range(n)]), x)
        for n in (3, 5):
            np.testing.assert_allclose(tr._pairwise_mean([x.copy() for _ in range(n)]), x,
                                       rtol=1e-15)

    def test_denoise_plane_needs_mod4(self):
        m = zero_params(ModelConfig("sdwt", blocks=1, filters=8))
        with pytest.raises(ValueError, match="divisible by 4"):
            tr.denoise_plane(m, np.zeros((1, 1, 10, 16)))


class TestEvaluate:
    def test_identity_model_on_noiseless_pairs(self):
        m = zero_params(ModelConfig("sdwt", blocks=1, filters=8))
        pairs = [dt.Pair(p.pair_id, p.kind, p.seed, p.noise, p.clean, p.clean)
                 for p in tiny_pairs(3)]
        rep = tr.evaluate(m, pairs)
        assert len(rep.rows) == 3
        assert rep.mean_psnr_noisy == math.inf
        assert rep.mean_psnr_denoised == math.inf
        assert rep.mean_freq_balance == 1.0
        assert not rep.used_ensemble

    def test_ensemble_path_scores_common_window(self):
        m = zero_params(ModelConfig("sdwt", blocks=1, filters=8))
        pairs = tiny_pairs(2)
        rep = tr.evaluate(m, pairs, use_ensemble=True)
        plain = tr.evaluate(m, pairs, use_ensemble=False)
        assert rep.used_ensemble
        # identity model: both reduce to noisy-vs-clean PSNR on their crops
        for r, p in zip(rep.rows, plain.rows):
            assert r.psnr_denoised == pytest.approx(r.psnr_noisy)
            assert abs(r.psnr_noisy - p.psnr_noisy) < 1.0


def small_tcfg(**kw):
    base = dict(epochs=2, steps_per_epoch=4, batch_size=2, patch_size=16,
                lr=1e-3, lr_drop_epoch=100, loss=LossSpec("l1"), seed=0)
    base.update(kw)
    return tr.TrainConfig(**base)


class TestTrainLoop:
    def test_history_and_outputs(self, tmp_path):
        pairs = tiny_pairs()
        res = tr.train(ModelConfig("sdwt", blocks=1, filters=8, seed=1),
                       small_tcfg(), pairs[:4], pairs[4:], out_dir=tmp_path)
        assert [h.epoch for h in res.history] == [0, 1]
        assert [h.step for h in res.history] == [4, 8]
        assert all(math.isfinite(h.train_loss) and h.train_loss >= 0 for h in res.history)
        assert all(h.k_percent == 100.0 for h in res.history)  # l1 logs k=100
        assert all(h.val_psnr > 5.0 for h in res.history)
        assert res.best_val_psnr == max(h.val_psnr for h in res.history)
        assert res.history[res.best_epoch].val_psnr == res.best_val_psnr
        assert res.checkpoint_path.exists()
        assert res.metrics_path.exists()

    def test_returned_model_carries_best_params(self, tmp_path):
        pairs = tiny_pairs()
        res = tr.train(ModelConfig("sdwt", blocks=1, filters=8, seed=1),
                       small_tcfg(epochs=3), pairs[:4], pairs[4:], out_dir=tmp_path)
        reloaded, manifest = load_checkpoint(res.checkpoint_path)
        assert manifest["epoch"] == str(res.best_epoch)
        x = tf.space_to_depth(pairs[0].noisy.plane[..., :16, :16], 2)
        np.testing.assert_array_equal(model_forward(res.model, x),
                                      model_forward(reloaded, x))

    def test_deterministic(self):
        pairs = tiny_pairs()
        cfg = ModelConfig("sdwt", blocks=1, filters=8, seed=2)
        a = tr.train(cfg, small_tcfg(), pairs[:4], pairs[4:])
        b = tr.train(cfg, small_tcfg(), pairs[:4], pairs[4:])
        for (na, pa), (nb, pb) in zip(a.model.named(), b.model.named()):
            assert na == nb
            np.testing.assert_array_equal(pa, pb)

    def test_topk_schedule_is_logged(self):
        pairs = tiny_pairs()
        spec = LossSpec("topk_dct", k_start=100.0, k_min=10.0, k_decay_per_epoch=30.0)
        res = tr.train(ModelConfig("sdwt", blocks=1, filters=8, seed=1),
                       small_tcfg(epochs=3, loss=spec), pairs[:4], pairs[4:])
        assert [h.k_percent for h in res.history] == [100.0, 70.0, 40.0]

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_divergence_aborts(self):
        pairs = tiny_pairs()
        with pytest.raises(RuntimeError, match="diverged"):
            tr.train(ModelConfig("sdwt", blocks=1, filters=8, seed=1),
                     small_tcfg(lr=1e12, epochs=4), pairs[:4], pairs[4:])

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            tr.train(ModelConfig("sdwt", blocks=1, filters=8), small_tcfg(),
                     [], tiny_pairs(2))

    def test_patch_larger_than_image_rejected(self):
        pairs = tiny_pairs(4, size=16)  # augmented planes can shrink to 14
        with pytest.raises(ValueError, match="patch_size"):
            tr.train(ModelConfig("sdwt", blocks=1, filters=8),
                     small_tcfg(patch_size=16), pairs[:2], pairs[2:])


class TestBench:
    def test_rows_and_determinism(self):
        pairs = tiny_pairs()
        mcfg = ModelConfig("sdwt", blocks=1, filters=8)
        tcfg = small_tcfg(epochs=1, steps_per_epoch=2)
        seen = []
        rows = tr.run_bench(mcfg, tcfg, pairs[:4], pairs[4:], seeds=(0,),
                            variants=("nodwt", "sdwt", "sdwt_topk"),
                            progress=seen.append)
        assert [r.variant for r in rows] == ["nodwt", "sdwt", "sdwt_topk"]
        assert len(seen) == 3
        assert all(r.params > 0 for r in rows)
        assert all(math.isfinite(r.best_val_psnr) for r in rows)
        # sdwt and sdwt_topk share a seed and kind, so parameter counts match
        assert rows[1].params == rows[2].params
        again = tr.run_bench(mcfg, tcfg, pairs[:4], pairs[4:], seeds=(0,),
                             variants=("nodwt", "sdwt", "sdwt_topk"))
        for a, b in zip(rows, again):
            assert (a.variant, a.seed, a.params, a.best_val_psnr) == \
                   (b.variant, b.seed, b.params, b.best_val_psnr)

    def test_unknown_variant(self):
        pairs = tiny_pairs(4)
        with pytest.raises(ValueError, match="variant"):
            tr.run_bench(ModelConfig("sdwt", 1, 8), small_tcfg(),
                         pairs[:2], pairs[2:], seeds=(0,), variants=("mystery",))
