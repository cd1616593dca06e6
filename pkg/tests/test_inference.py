"""Sampler tests: DDIM arithmetic oracles, guidance identities, pipeline behavior."""

import math

import numpy as np
import pytest
import torch

from lightsplit.autoencoder import AutoencoderConfig, train_autoencoder
from lightsplit.denoiser import DenoiserConfig, LatentDecomposition, denoise_decompose, init_denoiser
from lightsplit.inference import (
    InferenceConfig,
    apply_guidance,
    ddim_step,
    guided_decompose,
    predict_albedo,
    sample_albedo_latent,
    timestep_sequence,
)
from lightsplit.schedule import NoiseSchedule, make_schedule
from lightsplit.scene import gen_scene

TINY_DEN = DenoiserConfig(latent_channels=2, widths=(8, 16), blocks_per_level=1, time_dim=16, timesteps=40)


def two_level_schedule(abar1: float, abar2: float) -> NoiseSchedule:
    b1 = 1.0 - abar1
    b2 = 1.0 - abar2 / abar1
    return NoiseSchedule(betas=np.array([b1, b2]), alpha_bars=np.array([abar1, abar2]))


class TestDdimStep:
    def test_scalar_oracle(self):
        # abar_t = 0.75 at t=2, abar_prev = 0.9 at t=1; independent arithmetic
        sched = two_level_schedule(0.9, 0.75)
        z_t = torch.full((3, 3, 1), 1.0, dtype=torch.float64)
        x0 = torch.full((3, 3, 1), 0.5, dtype=torch.float64)
        out = ddim_step(z_t, x0, 2, 1, sched, eta=0.0)
        eps_hat = (1.0 - math.sqrt(0.75) * 0.5) / math.sqrt(0.25)
        expected = math.sqrt(0.9) * 0.5 + math.sqrt(0.1) * eps_hat
        np.testing.assert_allclose(out.numpy(), expected, rtol=0, atol=1e-12)

    def test_endpoint_returns_x0(self):
        sched = make_schedule(10)
        gen = torch.Generator().manual_seed(0)
        z_t = torch.randn(4, 4, 2, generator=gen, dtype=torch.float64)
        x0 = torch.randn(4, 4, 2, generator=gen, dtype=torch.float64)
        out = ddim_step(z_t, x0, 3, 0, sched, eta=0.0)
        np.testing.assert_allclose(out.numpy(), x0.numpy(), rtol=0, atol=1e-9)

    def test_fixed_point(self):
        # equal alpha_bar at both levels: predicting z_t as clean leaves z_t unchanged
        sched = NoiseSchedule(betas=np.array([0.25, 0.0]), alpha_bars=np.array([0.75, 0.75]))
        gen = torch.Generator().manual_seed(1)
        z_t = torch.randn(4, 4, 2, generator=gen, dtype=torch.float64)
        out = ddim_step(z_t, z_t, 2, 1, sched, eta=0.0)
        np.testing.assert_allclose(out.numpy(), z_t.numpy(), rtol=0, atol=1e-9)

    def test_order_validation(self):
        sched = make_schedule(10)
        z = torch.zeros(2, 2, 1)
        with pytest.raises(ValueError):
            ddim_step(z, z, 3, 3, sched)
        with pytest.raises(ValueError):
            ddim_step(z, z, 11, 1, sched)
        with pytest.raises(ValueError):
            ddim_step(z, z, 3, 1, sched, eta=-0.1)

    def test_eta_reproducible_with_generator(self):
        sched = make_schedule(10)
        gen = torch.Generator().manual_seed(5)
        z = torch.randn(4, 4, 1, generator=gen)
        x0 = torch.randn(4, 4, 1, generator=gen)
        a = ddim_step(z, x0, 5, 2, sched, eta=1.0, generator=torch.Generator().manual_seed(9))
        b = ddim_step(z, x0, 5, 2, sched, eta=1.0, generator=torch.Generator().manual_seed(9))
        assert torch.equal(a, b)


class TestGuidance:
    def test_scalar_oracle(self):
        u = LatentDecomposition(albedo=torch.zeros(1, dtype=torch.float64), lighting=torch.zeros(1, dtype=torch.float64))
        c = LatentDecomposition(albedo=torch.full((1,), 2.0, dtype=torch.float64), lighting=torch.full((1,), 2.0, dtype=torch.float64))
        out = apply_guidance(c, u, 1.5)
        assert out.albedo.item() == pytest.approx(3.0, abs=0)
        assert out.lighting.item() == pytest.approx(3.0, abs=0)

    def test_scale_one_identity_f64(self):
        params = init_denoiser(TINY_DEN, seed=0)
        params.module.double()
        gen = torch.Generator().manual_seed(2)
        noisy = torch.randn(8, 8, 2, generator=gen, dtype=torch.float64)
        cond = torch.randn(8, 8, 2, generator=gen, dtype=torch.float64)
        guided = guided_decompose(noisy, 5, cond, 1.0, params)
        direct = denoise_decompose(noisy, 5, cond, params)
        np.testing.assert_allclose(guided.albedo.numpy(), direct.albedo.numpy(), rtol=0, atol=1e-12)
        np.testing.assert_allclose(guided.lighting.numpy(), direct.lighting.numpy(), rtol=0, atol=1e-12)

    def test_scale_zero_gives_unconditional(self):
        params = init_denoiser(TINY_DEN, seed=0)
        gen = torch.Generator().manual_seed(3)
        noisy = torch.randn(8, 8, 2, generator=gen)
        cond = torch.randn(8, 8, 2, generator=gen)
        guided = guided_decompose(noisy, 5, cond, 0.0, params)
        uncond = denoise_decompose(noisy, 5, None, params)
        assert torch.equal(guided.albedo, uncond.albedo)
        assert torch.equal(guided.lighting, uncond.lighting)

    def test_null_cond_passthrough(self):
        params = init_denoiser(TINY_DEN, seed=0)
        noisy = torch.randn(8, 8, 2)
        guided = guided_decompose(noisy, 5, None, 1.5, params)
        uncond = denoise_decompose(noisy, 5, None, params)
        assert torch.equal(guided.albedo, uncond.albedo)


class TestTimestepSequence:
    def test_default_shape(self):
        seq = timestep_sequence(1000, 50)
        assert len(seq) == 50
        assert seq[0] == 1000
        assert seq[-1] == 1
        diffs = [seq[i] - seq[i + 1] for i in range(len(seq) - 1)]
        assert all(d > 0 for d in diffs)
        assert max(diffs) - min(diffs) <= 1  # uniform stride up to rounding

    def test_more_steps_than_timesteps(self):
        assert timestep_sequence(10, 50) == list(range(10, 0, -1))

    def test_single_step(self):
        assert timestep_sequence(1000, 1) == [1000]

    def test_bad_steps(self):
        with pytest.raises(ValueError):
            timestep_sequence(1000, 0)


class TestSampling:
    def make_params(self, trained=True):
        params = init_denoiser(TINY_DEN, seed=0)
        params.trained = trained
        params.latent_scale = 1.0
        return params

    def test_untrained_rejected(self):
        params = self.make_params(trained=False)
        cond = torch.randn(8, 8, 2)
        cfg = InferenceConfig(ddim_steps=4, n_samples=1, seed=0)
        with pytest.raises(RuntimeError, match="untrained"):
            sample_albedo_latent(cond, cfg, params)
        out = sample_albedo_latent(cond, cfg, params, allow_untrained=True)
        assert out.shape == (8, 8, 2)

    def test_deterministic(self):
        params = self.make_params()
        gen = torch.Generator().manual_seed(4)
        cond = torch.randn(8, 8, 2, generator=gen)
        cfg = InferenceConfig(ddim_steps=6, n_samples=1, seed=3)
        a = sample_albedo_latent(cond, cfg, params)
        b = sample_albedo_latent(cond, cfg, params)
        assert torch.equal(a, b)

    def test_seed_changes_output(self):
        params = self.make_params()
        cond = torch.randn(8, 8, 2)
        a = sample_albedo_latent(cond, InferenceConfig(ddim_steps=6, seed=0), params)
        b = sample_albedo_latent(cond, InferenceConfig(ddim_steps=6, seed=1), params)
        assert not torch.equal(a, b)

    def test_return_lighting(self):
        params = self.make_params()
        cond = torch.randn(8, 8, 2)
        albedo, lighting = sample_albedo_latent(
            cond, InferenceConfig(ddim_steps=4, seed=0), params, return_lighting=True
        )
        assert albedo.shape == lighting.shape == (8, 8, 2)

    def test_nan_weights_detected(self):
        params = self.make_params()
        with torch.no_grad():
            next(iter(params.module.parameters())).fill_(float("nan"))
        cond = torch.randn(8, 8, 2)
        with pytest.raises(FloatingPointError):
            sample_albedo_latent(cond, InferenceConfig(ddim_steps=4, seed=0), params)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            InferenceConfig(ddim_steps=0).validate()
        with pytest.raises(ValueError):
            InferenceConfig(n_samples=0).validate()
        with pytest.raises(ValueError):
            InferenceConfig(eta=-1.0).validate()


@pytest.fixture(scope="module")
def pipeline():
    scenes = [gen_scene(seed, k=2, height=16, width=16) for seed in range(4)]
    ae_cfg = AutoencoderConfig(downsample_factor=4, latent_channels=2, base_width=8, epochs=2, seed=0)
    ae_params, _ = train_autoencoder(scenes, ae_cfg)
    den = init_denoiser(
        DenoiserConfig(latent_channels=2, widths=(8, 16), blocks_per_level=1, time_dim=16, timesteps=40),
        seed=0,
    )
    den.trained = True
    return scenes, ae_params, den


class TestPredictAlbedo:
    def test_output_shape_range_and_determinism(self, pipeline):
        scenes, ae_params, den = pipeline
        cfg = InferenceConfig(ddim_steps=4, n_samples=2, seed=0)
        a = predict_albedo(scenes[0].images[0], cfg, ae_params, den)
        b = predict_albedo(scenes[0].images[0], cfg, ae_params, den)
        assert a.shape == (16, 16, 3)
        assert a.min() >= 0.0 and a.max() <= 1.0
        np.testing.assert_array_equal(a, b)

    def test_full_prediction_components(self, pipeline):
        scenes, ae_params, den = pipeline
        cfg = InferenceConfig(ddim_steps=4, n_samples=2, seed=0)
        from lightsplit.inference import predict_albedo_full

        pred = predict_albedo_full(scenes[0].images[0], cfg, ae_params, den)
        assert pred.albedo_latent.shape == (4, 4, 2)
        assert pred.lighting_latent.shape == (4, 4, 2)
        np.testing.assert_array_equal(pred.albedo, predict_albedo(scenes[0].images[0], cfg, ae_params, den))
        from lightsplit.autoencoder import decode

        np.testing.assert_array_equal(pred.albedo, decode(pred.albedo_latent, ae_params))

    def test_latent_mean_variance_not_larger_than_single(self, pipeline):
        # Monte-Carlo over 20 independent runs: elementwise variance of the
        # 10-sample latent mean must not exceed that of single-sample latents.
        scenes, ae_params, den = pipeline
        from lightsplit.autoencoder import encode

        cond = encode(scenes[0].images[0], ae_params)
        sched = make_schedule(den.config.timesteps)
        runs = 20
        n = 10
        singles, means = [], []
        for r in range(runs):
            base = 7919 * r
            sample_list = [
                sample_albedo_latent(
                    cond, InferenceConfig(ddim_steps=3, n_samples=1, seed=base + s), den, sched
                )
                for s in range(n)
            ]
            singles.append(sample_list[0])
            means.append(torch.stack(sample_list).mean(dim=0))
        var_single = torch.stack(singles).var(dim=0)
        var_mean = torch.stack(means).var(dim=0)
        assert bool((var_mean <= var_single).all())
