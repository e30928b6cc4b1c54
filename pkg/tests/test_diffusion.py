import math

import numpy as np
import torch
import pytest

from avpretrain import diffusion
from avpretrain.diffusion import (Denoiser, NoiseSchedule, ancestral_sample,
                                  conditioning_sequences, ddim_sample,
                                  diffusion_loss, make_schedule, q_sample, sample)
from avpretrain.encoders import initialize_module
from avpretrain.errors import ConfigError
from avpretrain.pyramid import FeaturePyramid, FeatureSequence

torch.set_num_threads(1)


def make_denoiser(channels=(4, 6), cond_dim=5, seed=0, dtype=torch.float64):
    dn = Denoiser(channels, cond_dim).to(dtype)
    initialize_module(dn, torch.Generator().manual_seed(seed))
    return dn


def random_cond(batch, cond_dim=5, levels=2, seed=1, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(batch, cond_dim, generator=g, dtype=dtype)
            for _ in range(levels)]


# ---------------------------------------------------------------------------
# schedules

def test_linear_single_step():
    sched = make_schedule("linear", 1, 0.1, 0.1)
    assert np.allclose(sched.betas, [0.1])
    assert np.allclose(sched.alpha_bars, [0.9])


def test_linear_schedule_matches_cumprod_oracle():
    sched = make_schedule("linear", 100, 1e-4, 0.02)
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert sched.alpha_bars[0] > 0.99
    expected = 1.0
    for beta in np.linspace(1e-4, 0.02, 100):
        expected *= 1.0 - beta
    assert abs(sched.alpha_bars[-1] - expected) < 1e-12


def test_cosine_schedule_contracts():
    sched = make_schedule("cosine", 50)
    assert sched.alpha_bars[0] > sched.alpha_bars[-1]
    assert np.all(sched.betas < 1.0)
    assert np.all(sched.betas >= 0.0)
    assert np.all(np.diff(sched.alpha_bars) < 0)


@pytest.mark.parametrize("kwargs", [
    dict(kind="linear", steps=0),
    dict(kind="linear", steps=10, beta_start=0.0),
    dict(kind="linear", steps=10, beta_start=0.5, beta_end=0.1),
    dict(kind="linear", steps=10, beta_start=0.5, beta_end=1.0),
    dict(kind="mystery", steps=10),
])
def test_bad_schedule_configs(kwargs):
    with pytest.raises(ConfigError):
        make_schedule(**kwargs)


def test_alpha_bar_boundaries():
    sched = make_schedule("linear", 10)
    assert sched.alpha_bar(0) == 1.0
    assert sched.alpha_bar(10) == sched.alpha_bars[-1]
    with pytest.raises(ValueError):
        sched.alpha_bar(11)
    with pytest.raises(ValueError):
        sched.alpha_bar(-1)


# ---------------------------------------------------------------------------
# forward process

def test_q_sample_no_noise_at_step_zero():
    sched = make_schedule("linear", 5)
    a0 = torch.randn(2, 4, 4, dtype=torch.float64)
    noise = torch.randn_like(a0)
    state = q_sample(a0, 0, noise, sched)
    assert torch.allclose(state.a_t, a0)


def test_q_sample_closed_form():
    # alpha_bar = 0.25 -> A_t = 0.5 A_0 + sqrt(0.75) eps
    sched = NoiseSchedule(kind="linear", steps=1, betas=np.array([0.75]),
                          alphas=np.array([0.25]), alpha_bars=np.array([0.25]))
    a0 = torch.randn(3, 2, 2, dtype=torch.float64)
    noise = torch.randn_like(a0)
    state = q_sample(a0, 1, noise, sched)
    assert torch.allclose(state.a_t, 0.5 * a0 + math.sqrt(0.75) * noise, atol=1e-12)


def test_q_sample_shape_and_range_checks():
    sched = make_schedule("linear", 5)
    a0 = torch.zeros(1, 2, 2)
    with pytest.raises(ValueError):
        q_sample(a0, 6, torch.zeros_like(a0), sched)
    with pytest.raises(ValueError):
        q_sample(a0, 1, torch.zeros(1, 2, 3), sched)


def test_q_sample_monte_carlo_variance():
    sched = make_schedule("linear", 20)
    g = torch.Generator().manual_seed(0)
    draws = torch.randn(100_000, 1, 1, generator=g, dtype=torch.float64)
    for t in (1, 10, 20):
        state = q_sample(torch.zeros_like(draws), t, draws, sched)
        target = 1.0 - sched.alpha_bar(t)
        assert abs(state.a_t.var().item() - target) / target < 0.02


def test_forward_composition_matches_closed_form():
    """Iterating single-step transitions reproduces q_sample moments."""
    sched = make_schedule("linear", 20, 1e-3, 0.05)
    g = torch.Generator().manual_seed(1)
    n = 100_000
    a0 = torch.full((n,), 0.7, dtype=torch.float64)
    x = a0.clone()
    for t in range(1, sched.steps + 1):
        z = torch.randn(n, generator=g, dtype=torch.float64)
        x = math.sqrt(sched.alphas[t - 1]) * x + math.sqrt(sched.betas[t - 1]) * z
        mean_target = math.sqrt(sched.alpha_bar(t)) * 0.7
        var_target = 1.0 - sched.alpha_bar(t)
        assert abs(x.mean().item() - mean_target) < 3e-2 * max(abs(mean_target), 0.1)
        assert abs(x.var().item() - var_target) / var_target < 0.02


# ---------------------------------------------------------------------------
# denoiser network

def test_fresh_denoiser_predicts_zero():
    dn = Denoiser((4, 6), cond_dim=5).double()
    a_t = torch.randn(2, 8, 8, dtype=torch.float64)
    out = dn(a_t, 3, random_cond(2))
    assert torch.all(out == 0)
    assert out.shape == a_t.shape


def test_output_shape_tracks_input():
    dn = make_denoiser()
    for shape in [(1, 8, 8), (3, 16, 8)]:
        a_t = torch.randn(*shape, dtype=torch.float64)
        assert dn(a_t, 1, random_cond(shape[0])).shape == a_t.shape


def test_missing_pyramid_level_rejected():
    dn = make_denoiser(channels=(4, 6))
    a_t = torch.randn(1, 8, 8, dtype=torch.float64)
    with pytest.raises(ValueError):
        dn(a_t, 1, random_cond(1, levels=1))


def test_conditioning_levels_matter_and_zeroing_goes_unconditional():
    dn = make_denoiser(channels=(4, 6), seed=5)
    a_t = torch.randn(2, 8, 8, dtype=torch.float64)
    cond = random_cond(2, levels=2, seed=2)
    base = dn(a_t, 4, cond)
    for level in range(2):
        bumped = [c.clone() for c in cond]
        bumped[level] = bumped[level] + 1.0
        assert (dn(a_t, 4, bumped) - base).abs().max() > 1e-8

    unconditional = make_denoiser(channels=(4, 6), seed=5)
    unconditional.zero_conditioning()
    expected = unconditional(a_t, 4, [torch.zeros_like(c) for c in cond])
    dn.zero_conditioning()
    assert torch.allclose(dn(a_t, 4, cond), expected, atol=1e-12)


def test_conditioning_sequences_expose_level_features():
    features = torch.arange(12, dtype=torch.float64).reshape(1, 4, 3)
    pyr = FeaturePyramid([FeatureSequence(features, "video", 1)], "video")
    seqs = conditioning_sequences(pyr)
    assert torch.equal(seqs[0], features)


def test_time_resolved_modulation_varies_along_time():
    """A conditioning sequence with a step change modulates early and late
    stage positions differently; a constant sequence does not."""
    dn = make_denoiser(channels=(4,), cond_dim=3, seed=11)
    a_t = torch.zeros(1, 8, 8, dtype=torch.float64)
    ramp = torch.zeros(1, 4, 3, dtype=torch.float64)
    ramp[0, 2:] = 1.0
    out_ramp = dn(a_t, 1, [ramp])
    constant = torch.full((1, 4, 3), 0.5, dtype=torch.float64)
    out_const = dn(a_t, 1, [constant])
    # the ramp's effect must differ between the first and second half in a way
    # the constant conditioning's does not
    diff = (out_ramp - out_const).abs().mean(dim=2)[0]
    early, late = diff[:4].mean(), diff[4:].mean()
    assert not torch.allclose(early, late, rtol=1e-3)


# ---------------------------------------------------------------------------
# training loss

def test_oracle_denoiser_gives_zero_loss():
    sched = make_schedule("linear", 10)
    a0 = torch.randn(4, 8, 8, dtype=torch.float64)
    bars = torch.tensor(np.concatenate([[1.0], sched.alpha_bars]))

    class OracleDenoiser:
        def __call__(self, a_t, t, cond):
            if not isinstance(t, torch.Tensor):
                t = torch.full((a_t.shape[0],), t)
            ab = bars[t.long()].reshape(-1, 1, 1)
            return (a_t - torch.sqrt(ab) * a0) / torch.sqrt(1 - ab)

    g = torch.Generator().manual_seed(0)
    terms = diffusion_loss(OracleDenoiser(), a0, random_cond(4), sched,
                           terminal_weight=1.0, generator=g)
    assert terms.total.item() < 1e-12
    assert terms.base.item() < 1e-12
    assert terms.terminal.item() < 1e-12


def test_zero_denoiser_expected_loss():
    sched = make_schedule("linear", 10)
    a0 = torch.zeros(8, 8, 8, dtype=torch.float64)

    class ZeroDenoiser:
        def __call__(self, a_t, t, cond):
            return torch.zeros_like(a_t)

    g = torch.Generator().manual_seed(0)
    for lam in (0.0, 1.0, 2.5):
        totals = [diffusion_loss(ZeroDenoiser(), a0, random_cond(8), sched,
                                 terminal_weight=lam, generator=g).total.item()
                  for _ in range(60)]
        expected = 1.0 + lam
        assert abs(np.mean(totals) - expected) / expected < 0.02


def test_lambda_zero_reduces_to_single_term():
    sched = make_schedule("linear", 10)
    dn = make_denoiser()
    a0 = torch.randn(2, 8, 8, dtype=torch.float64)
    cond = random_cond(2)
    g1 = torch.Generator().manual_seed(3)
    g2 = torch.Generator().manual_seed(3)
    with_term = diffusion_loss(dn, a0, cond, sched, 0.0, g1)
    assert with_term.terminal is None
    assert with_term.total.item() == with_term.base.item()
    skipped = diffusion_loss(dn, a0, cond, sched, 1.0, g2, include_terminal=False)
    assert skipped.total.item() == with_term.total.item()


def test_loss_decomposition_exact():
    sched = make_schedule("linear", 10)
    dn = make_denoiser(seed=7)
    a0 = torch.randn(3, 8, 8, dtype=torch.float64)
    g = torch.Generator().manual_seed(4)
    lam = 0.7
    terms = diffusion_loss(dn, a0, random_cond(3), sched, lam, g)
    assert terms.total.item() == terms.base.item() + lam * terms.terminal.item()


# ---------------------------------------------------------------------------
# samplers

def test_single_step_ancestral_closed_form():
    sched = make_schedule("linear", 1, 0.2, 0.2)
    eps_hat_value = 0.3

    def eps_fn(x, t):
        return torch.full_like(x, eps_hat_value)

    g = torch.Generator().manual_seed(5)
    out = ancestral_sample(eps_fn, (1, 2, 2), sched, g, dtype=torch.float64)
    g2 = torch.Generator().manual_seed(5)
    x_init = torch.empty(1, 2, 2, dtype=torch.float64).normal_(generator=g2)
    # one-step posterior mean: (x - beta/sqrt(1-ab) eps_hat) / sqrt(alpha)
    expected = (x_init - 0.2 / math.sqrt(1 - 0.8) * eps_hat_value) / math.sqrt(0.8)
    assert torch.allclose(out, expected, atol=1e-12)


def test_deterministic_sampler_reproducible():
    sched = make_schedule("linear", 25)
    dn = make_denoiser(seed=8, dtype=torch.float32)
    cond = random_cond(2, seed=9, dtype=torch.float32)
    outs = []
    for _ in range(2):
        g = torch.Generator().manual_seed(11)
        outs.append(sample(dn, cond, (2, 8, 8), sched, "deterministic", 10, g))
    assert torch.equal(outs[0], outs[1])


def test_oracle_denoiser_recovers_zero_data():
    """With A_0 = 0 the true noise is x_t / sqrt(1 - alpha_bar)."""
    sched = make_schedule("linear", 50)

    def eps_fn(x, t):
        return x / math.sqrt(1.0 - sched.alpha_bar(t))

    g = torch.Generator().manual_seed(6)
    for n_steps in (50, 10, 3):
        out = ddim_sample(eps_fn, (2, 4, 4), sched, g, n_steps, dtype=torch.float64)
        assert out.abs().max().item() < 1e-6


def test_sampler_step_validation():
    sched = make_schedule("linear", 10)

    def eps_fn(x, t):
        return torch.zeros_like(x)

    g = torch.Generator().manual_seed(0)
    with pytest.raises(ValueError):
        ddim_sample(eps_fn, (1, 2, 2), sched, g, 0)
    with pytest.raises(ValueError):
        ddim_sample(eps_fn, (1, 2, 2), sched, g, 11)
    with pytest.raises(ValueError):
        ancestral_sample(eps_fn, (1, 2, 2), sched, g, 5)
    with pytest.raises(ValueError):
        sample(None, [], (1, 2, 2), sched, "warp", 5, g)


def test_ancestral_full_chain_runs():
    sched = make_schedule("linear", 5)
    dn = make_denoiser(seed=10, dtype=torch.float32)
    cond = random_cond(1, seed=12, dtype=torch.float32)
    g = torch.Generator().manual_seed(13)
    out = sample(dn, cond, (1, 8, 8), sched, "ancestral", 5, g)
    assert out.shape == (1, 8, 8)
    assert torch.isfinite(out).all()
