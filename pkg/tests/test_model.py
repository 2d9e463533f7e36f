import numpy as np
import pytest

from layoutdiff.model import (
    ModelConfig,
    UnsupportedModeError,
    adapter_decode,
    adapter_encode,
    ar_loss_and_grads,
    forward_ar,
    forward_ar_all,
    forward_nonar,
    init_adapter,
    init_params,
    nonar_loss_and_grads,
    param_count,
    param_shapes,
    train_adapter,
)
from layoutdiff.schedule import ConfigError, build_schedule

TINY = ModelConfig(layers=2, heads=2, hidden=8, n_max=3)
TINY_AR = ModelConfig(layers=2, heads=2, hidden=8, n_max=3, ar_mode=True)


def random_params(cfg, seed, scale=0.05, dtype=np.float64):
    """All-nonzero parameters so every gradient path is exercised."""
    rng = np.random.default_rng(seed)
    return {
        name: (rng.standard_normal(shape) * scale).astype(dtype)
        for name, shape in param_shapes(cfg).items()
    }


def relative_errors(loss_fn, params, grads, seed, n_coords=500, h=1e-5):
    """Central finite differences at randomly sampled coordinates."""
    rng = np.random.default_rng(seed)
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    picks = rng.integers(0, sizes.sum(), size=n_coords)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errs = []
    for pick in picks:
        which = int(np.searchsorted(offsets, pick, side="right") - 1)
        name = names[which]
        idx = int(pick - offsets[which])
        flat = params[name].reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + h
        up = loss_fn(params)
        flat[idx] = keep - h
        down = loss_fn(params)
        flat[idx] = keep
        num = (up - down) / (2.0 * h)
        ana = grads[name].reshape(-1)[idx]
        errs.append(abs(num - ana) / max(1e-6, abs(num), abs(ana)))
    return np.array(errs)


class TestConfig:
    def test_param_count_closed_form(self):
        cfg = TINY
        h, td, n, L = cfg.hidden, cfg.token_dim, cfg.n_max, cfg.layers
        expect = (
            td * h + h                     # input projection
            + 2 * (h * h + h)              # timestep MLP
            + L * (h * 6 * h + 6 * h       # per-block modulation
                   + h * 3 * h + 3 * h     # qkv
                   + h * h + h             # attn out
                   + h * 4 * h + 4 * h + 4 * h * h + h)  # mlp
            + h * 2 * h + 2 * h            # final modulation
            + h * td + td                  # head
            + n * h                        # positions
        )
        assert param_count(cfg) == expect

    def test_ar_adds_start_seg_and_positions(self):
        base = param_count(TINY)
        h, n = TINY.hidden, TINY.n_max
        assert param_count(TINY_AR) == base + (n + 1) * h + h + 3 * h

    def test_variance_head_doubles_out_dim(self):
        cfg = ModelConfig(layers=1, heads=2, hidden=8, n_max=2, variance_head=True)
        assert cfg.out_dim == 32

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            ModelConfig(layers=0, heads=2, hidden=8, n_max=2)
        with pytest.raises(ConfigError):
            ModelConfig(layers=1, heads=3, hidden=8, n_max=2)
        with pytest.raises(ConfigError):
            ModelConfig(layers=1, heads=2, hidden=8, n_max=0)


class TestForwardNonAR:
    def test_untrained_model_outputs_exact_zero(self):
        params = init_params(TINY, seed=0)
        x = np.random.default_rng(0).standard_normal((2, 3, 16)).astype(np.float32)
        pred = forward_nonar(params, TINY, x, np.array([5, 9]))
        assert np.array_equal(pred.eps_hat, np.zeros_like(x))

    def test_batch_rows_independent(self):
        params = random_params(TINY, 1)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 3, 16))
        t = np.array([1, 7, 7])
        batch = forward_nonar(params, TINY, x, t).eps_hat
        for i in range(3):
            single = forward_nonar(params, TINY, x[i], t[i]).eps_hat
            assert np.allclose(batch[i], single, atol=1e-12)

    def test_timestep_changes_output(self):
        params = random_params(TINY, 3)
        x = np.random.default_rng(4).standard_normal((1, 3, 16))
        a = forward_nonar(params, TINY, x, np.array([0])).eps_hat
        b = forward_nonar(params, TINY, x, np.array([50])).eps_hat
        assert not np.allclose(a, b)

    def test_shape_check(self):
        params = random_params(TINY, 5)
        with pytest.raises(ValueError):
            forward_nonar(params, TINY, np.zeros((2, 4, 16)), np.array([0, 0]))

    def test_variance_head_coef_in_unit_interval(self):
        cfg = ModelConfig(layers=1, heads=2, hidden=8, n_max=2, variance_head=True)
        params = random_params(cfg, 6, scale=0.3)
        pred = forward_nonar(params, cfg, np.zeros((2, 2, 16)), np.array([3, 8]))
        assert pred.var_coef.shape == (2, 2, 16)
        assert np.all(pred.var_coef > 0) and np.all(pred.var_coef < 1)


class TestGradients:
    def test_nonar_mse_gradcheck(self):
        params = random_params(TINY, 10)
        rng = np.random.default_rng(11)
        xt = rng.standard_normal((2, 3, 16))
        eps = rng.standard_normal((2, 3, 16))
        t = np.array([5, 60])
        _, grads = nonar_loss_and_grads(params, TINY, xt, t, eps)
        errs = relative_errors(
            lambda p: nonar_loss_and_grads(p, TINY, xt, t, eps)[0],
            params, grads, seed=12)
        assert errs.max() < 1e-3

    def test_ar_gradcheck(self):
        params = random_params(TINY_AR, 13)
        rng = np.random.default_rng(14)
        xt = rng.standard_normal((2, 3, 16))
        eps = rng.standard_normal((2, 3, 16))
        t = np.array([20, 80])
        _, grads = ar_loss_and_grads(params, TINY_AR, xt, t, eps)
        errs = relative_errors(
            lambda p: ar_loss_and_grads(p, TINY_AR, xt, t, eps)[0],
            params, grads, seed=15)
        assert errs.max() < 1e-3

    def test_variance_head_gradcheck(self):
        cfg = ModelConfig(layers=2, heads=2, hidden=8, n_max=3, variance_head=True)
        sched = build_schedule(100)
        params = random_params(cfg, 16)
        rng = np.random.default_rng(17)
        x0 = rng.uniform(-1, 1, (2, 3, 16))
        eps = rng.standard_normal((2, 3, 16))
        t = np.array([5, 60])
        from layoutdiff.schedule import q_sample
        xt = q_sample(x0, t, eps, sched)
        kw = dict(sched=sched, x0=x0, kl_weight=1e-3)
        _, grads = nonar_loss_and_grads(params, cfg, xt, t, eps, **kw)
        errs = relative_errors(
            lambda p: nonar_loss_and_grads(p, cfg, xt, t, eps, **kw)[0],
            params, grads, seed=18, n_coords=300)
        # the KL term's gradients can sit near the finite-difference noise
        # floor (~1e-8); the 1e-6 denominator floor absorbs that
        assert errs.max() < 2e-3


class TestForwardAR:
    def test_requires_ar_mode(self):
        params = random_params(TINY, 20)
        with pytest.raises(UnsupportedModeError):
            forward_ar(params, TINY, np.zeros((3, 16)), np.zeros((0, 16)), 0)

    def test_prefix_length_bounds(self):
        params = random_params(TINY_AR, 21)
        with pytest.raises(ValueError):
            forward_ar(params, TINY_AR, np.zeros((3, 16)), np.zeros((3, 16)), 0)

    def test_masked_pass_matches_incremental(self):
        params = random_params(TINY_AR, 22)
        rng = np.random.default_rng(23)
        xt = rng.standard_normal((2, 3, 16))
        noise = rng.standard_normal((2, 3, 16))
        t = np.array([10, 90])
        all_preds, _ = forward_ar_all(params, TINY_AR, xt, noise, t)
        for i in range(3):
            step = forward_ar(params, TINY_AR, xt, noise[:, :i, :], t)
            assert np.allclose(all_preds[:, i], step, atol=1e-12)

    def test_causality_under_prefix_perturbation(self):
        """Prediction for token i ignores noise entries at indices >= i."""
        params = random_params(TINY_AR, 24)
        rng = np.random.default_rng(25)
        xt = rng.standard_normal((1, 3, 16))
        noise = rng.standard_normal((1, 3, 16))
        t = np.array([40])
        base, _ = forward_ar_all(params, TINY_AR, xt, noise, t)
        for j in range(3):
            bent = noise.copy()
            bent[:, j, :] += rng.standard_normal(16)
            pred, _ = forward_ar_all(params, TINY_AR, xt, bent, t)
            assert np.array_equal(pred[:, : j + 1], base[:, : j + 1])
            if j < 2:
                assert not np.allclose(pred[:, j + 1], base[:, j + 1])


class TestAdapter:
    CFG = ModelConfig(layers=1, heads=2, hidden=8, n_max=2, adapter_latent=16)

    def test_requires_latent_config(self):
        with pytest.raises(UnsupportedModeError):
            init_adapter(TINY, seed=0)

    def test_identity_init_roundtrips_exactly(self):
        ad = init_adapter(self.CFG, seed=0, identity=True)
        x = np.random.default_rng(0).uniform(-1, 1, (5, 2, 16))
        z = adapter_encode(ad, self.CFG, x)
        assert np.array_equal(adapter_decode(ad, self.CFG, z), x)

    def test_full_rank_training_reaches_near_zero(self):
        ad = init_adapter(self.CFG, seed=1)
        x = np.random.default_rng(1).uniform(-1, 1, (64, 16))
        losses = train_adapter(ad, self.CFG, x, steps=2000, lr=1e-2)
        assert losses[-1] < 1e-3

    def test_bottleneck_is_lossy(self):
        cfg = ModelConfig(layers=1, heads=2, hidden=8, n_max=2, adapter_latent=4)
        ad = init_adapter(cfg, seed=2)
        x = np.random.default_rng(2).uniform(-1, 1, (64, 16))
        losses = train_adapter(ad, cfg, x, steps=1500, lr=1e-2)
        # rank-4 linear autoencoder cannot reconstruct rank-16 data
        assert losses[-1] > 1e-2

    def test_identity_requires_matching_width(self):
        cfg = ModelConfig(layers=1, heads=2, hidden=8, n_max=2, adapter_latent=4)
        with pytest.raises(ConfigError):
            init_adapter(cfg, seed=0, identity=True)
