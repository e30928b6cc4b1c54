"""Conditional denoising diffusion over audio spectrograms.

Forward process: A_t = sqrt(alpha_bar_t) * A_0 + sqrt(1 - alpha_bar_t) * eps,
with step indices t in [0, T] and alpha_bar_0 = 1. The denoiser is a small
conv encoder-decoder with one depth stage per pyramid level; each level's
time-pooled conditioning vector enters its stage through feature-wise affine
modulation (coarsest level at the deepest stage). The training objective is
the noise-prediction MSE at a uniformly drawn step plus a terminal-step MSE
term scaled by a configurable weight.

Sampling: ancestral (stochastic posterior updates over the full chain) or
deterministic (noise-free updates over a strided subset of steps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError

COSINE_OFFSET = 0.008
MAX_BETA = 0.999
TIME_EMBED_DIM = 32


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    steps: int
    betas: np.ndarray        # (T,), index i <-> diffusion step t = i + 1
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal coefficient at step t in [0, steps]; t=0 is clean."""
        if not 0 <= t <= self.steps:
            raise ValueError(f"step {t} outside [0, {self.steps}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def make_schedule(kind: str, steps: int, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    if steps < 1:
        raise ConfigError(f"diffusion steps must be >= 1, got {steps}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError("need 0 < beta_start <= beta_end < 1")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, steps)
    elif kind == "cosine":
        grid = np.arange(steps + 1) / steps
        f = np.cos((grid + COSINE_OFFSET) / (1 + COSINE_OFFSET) * np.pi / 2) ** 2
        bars = f / f[0]
        betas = np.clip(1.0 - bars[1:] / bars[:-1], 0.0, MAX_BETA)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(kind=kind, steps=steps, betas=betas, alphas=alphas,
                         alpha_bars=alpha_bars)


@dataclass
class NoisyState:
    a_t: torch.Tensor
    step: int | torch.Tensor
    noise: torch.Tensor


def _gather_alpha_bar(schedule: NoiseSchedule, t: torch.Tensor,
                      like: torch.Tensor) -> torch.Tensor:
    """Per-element alpha_bar for integer step tensor t (values in [0, steps])."""
    bars = torch.as_tensor(np.concatenate([[1.0], schedule.alpha_bars]),
                           dtype=like.dtype, device=like.device)
    if (t < 0).any() or (t > schedule.steps).any():
        raise ValueError("step tensor outside [0, steps]")
    ab = bars[t.long()]
    return ab.reshape(ab.shape + (1,) * (like.ndim - ab.ndim))


def q_sample(a0: torch.Tensor, t: int | torch.Tensor, noise: torch.Tensor,
             schedule: NoiseSchedule) -> NoisyState:
    """Closed-form forward noising to step t."""
    if noise.shape != a0.shape:
        raise ValueError("noise must match the data shape")
    if isinstance(t, torch.Tensor):
        ab = _gather_alpha_bar(schedule, t, a0)
    else:
        ab = a0.new_tensor(schedule.alpha_bar(int(t)))
    a_t = torch.sqrt(ab) * a0 + torch.sqrt(1.0 - ab) * noise
    return NoisyState(a_t=a_t, step=t, noise=noise)


def sinusoidal_step_embedding(t: torch.Tensor, dim: int = TIME_EMBED_DIM) -> torch.Tensor:
    """Standard transformer-style sin/cos embedding of integer steps."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype,
                                                        device=t.device) / (half - 1))
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class Denoiser(nn.Module):
    """Conditional noise predictor over (B, T_a, F_a) spectrograms.

    One encoder stage per conditioning level; stage i is modulated by
    conditioning level i (finest first), so the coarsest level reaches the
    deepest stage. Modulation is feature-wise affine and time-resolved: each
    level's feature sequence maps to per-channel (gain, shift) curves that
    are resampled onto the stage's time axis. Two fixed coordinate channels
    give the conv stack absolute time/frequency positions, so conditioning
    can place energy at specific bins and steps. The output conv is
    zero-initialized, making a freshly built network predict zero noise.
    """

    def __init__(self, channels: tuple[int, ...], cond_dim: int):
        super().__init__()
        if not channels:
            raise ValueError("need at least one denoiser stage")
        self.channels = tuple(channels)
        widths = (3,) + self.channels  # input: spectrogram + 2 coord channels
        n = len(self.channels)
        self.encoders = nn.ModuleList([
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)
            for i in range(n)
        ])
        self.films = nn.ModuleList([
            nn.Linear(cond_dim, 2 * self.channels[i]) for i in range(n)
        ])
        self.time_mlp = nn.Sequential(
            nn.Linear(TIME_EMBED_DIM, 2 * TIME_EMBED_DIM), nn.SiLU(),
            nn.Linear(2 * TIME_EMBED_DIM, 2 * TIME_EMBED_DIM),
        )
        self.time_proj = nn.ModuleList([
            nn.Linear(2 * TIME_EMBED_DIM, self.channels[i]) for i in range(n)
        ])
        self.mid = nn.Conv2d(self.channels[-1], self.channels[-1], 3, padding=1)
        self.decoders = nn.ModuleList([
            nn.ConvTranspose2d(widths[i + 1], max(widths[i], self.channels[0]),
                               4, stride=2, padding=1)
            for i in reversed(range(n))
        ])
        self.out = nn.Conv2d(self.channels[0], 1, 3, padding=1)
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias.zero_()
        # modulation starts exactly off: gains grow only where conditioning
        # helps, so early training cannot collapse the conditioning features
        self.zero_conditioning()

    def zero_conditioning(self) -> None:
        """Disable conditioning: FiLM gains and shifts become identically zero."""
        with torch.no_grad():
            for film in self.films:
                film.weight.zero_()
                film.bias.zero_()

    @staticmethod
    def _coordinate_channels(a_t: torch.Tensor) -> torch.Tensor:
        b, t_a, f_a = a_t.shape
        time_coord = torch.linspace(-1.0, 1.0, t_a, dtype=a_t.dtype,
                                    device=a_t.device)
        freq_coord = torch.linspace(-1.0, 1.0, f_a, dtype=a_t.dtype,
                                    device=a_t.device)
        grid_t = time_coord[:, None].expand(t_a, f_a)
        grid_f = freq_coord[None, :].expand(t_a, f_a)
        return torch.stack([grid_t, grid_f]).expand(b, 2, t_a, f_a)

    @staticmethod
    def _modulation(film: nn.Linear, level: torch.Tensor,
                    target_t: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel (gain, shift) curves resampled to the stage time axis."""
        if level.ndim == 2:  # single conditioning vector = constant curve
            level = level[:, None, :]
        curves = film(level).transpose(1, 2)  # (B, 2*ch, T_l)
        if curves.shape[-1] != target_t:
            curves = torch.nn.functional.interpolate(
                curves, size=target_t, mode="linear", align_corners=False)
        return curves.chunk(2, dim=1)

    def forward(self, a_t: torch.Tensor, t: torch.Tensor | int,
                cond: list[torch.Tensor]) -> torch.Tensor:
        if a_t.ndim != 3:
            raise ValueError(f"expected (B, T_a, F_a), got {tuple(a_t.shape)}")
        if len(cond) != len(self.encoders):
            raise ValueError(
                f"need {len(self.encoders)} conditioning levels, got {len(cond)}")
        b = a_t.shape[0]
        if not isinstance(t, torch.Tensor):
            t = torch.full((b,), float(t), dtype=a_t.dtype, device=a_t.device)
        temb = self.time_mlp(sinusoidal_step_embedding(t.to(a_t.dtype)))
        x = torch.cat([a_t[:, None], self._coordinate_channels(a_t)], dim=1)
        skips = []
        for encoder, film, tproj, level in zip(self.encoders, self.films,
                                               self.time_proj, cond):
            h = encoder(x)
            gamma, beta = self._modulation(film, level, h.shape[2])
            h = h * (1.0 + gamma[..., None]) + beta[..., None]
            h = h + tproj(temb)[:, :, None, None]
            x = torch.nn.functional.silu(h)
            skips.append(x)
        x = torch.nn.functional.silu(self.mid(x))
        for i, decoder in enumerate(self.decoders):
            x = decoder(x)
            skip_index = len(skips) - 2 - i
            if skip_index >= 0:
                x = x + skips[skip_index]
            x = torch.nn.functional.silu(x)
        return self.out(x)[:, 0]


def conditioning_sequences(pyramid) -> list[torch.Tensor]:
    """Per-level conditioning feature sequences (B, T_l, D), finest first."""
    return [level.features for level in pyramid.levels]


@dataclass
class DiffusionLossTerms:
    total: torch.Tensor
    base: torch.Tensor
    terminal: torch.Tensor | None


def diffusion_loss(denoiser: Denoiser, a0: torch.Tensor, cond: list[torch.Tensor],
                   schedule: NoiseSchedule, terminal_weight: float,
                   generator: torch.Generator,
                   include_terminal: bool = True) -> DiffusionLossTerms:
    """Noise-prediction MSE at a uniform step, plus the weighted terminal term."""
    b = a0.shape[0]
    t = torch.randint(1, schedule.steps + 1, (b,), generator=generator)
    noise = torch.empty_like(a0).normal_(generator=generator)
    state = q_sample(a0, t, noise, schedule)
    pred = denoiser(state.a_t, t, cond)
    base = ((noise - pred) ** 2).mean()
    if include_terminal and terminal_weight > 0:
        noise_t = torch.empty_like(a0).normal_(generator=generator)
        terminal_state = q_sample(a0, schedule.steps, noise_t, schedule)
        pred_t = denoiser(terminal_state.a_t, schedule.steps, cond)
        terminal = ((noise_t - pred_t) ** 2).mean()
        total = base + terminal_weight * terminal
    else:
        terminal = None
        total = base
    return DiffusionLossTerms(total=total, base=base, terminal=terminal)


def _strided_steps(steps: int, n_steps: int) -> list[int]:
    ts = np.unique(np.round(np.linspace(steps, 1, n_steps)).astype(int))
    return [int(t) for t in ts[::-1]]


def ancestral_sample(eps_fn, shape: tuple[int, ...], schedule: NoiseSchedule,
                     generator: torch.Generator,
                     n_steps: int | None = None,
                     dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stochastic reverse chain from pure noise using posterior updates."""
    n_steps = schedule.steps if n_steps is None else n_steps
    if not 1 <= n_steps <= schedule.steps:
        raise ValueError(f"n_steps must lie in [1, {schedule.steps}], got {n_steps}")
    if n_steps != schedule.steps:
        raise ValueError("ancestral sampling runs the full chain; "
                         "use deterministic mode for fewer steps")
    x = torch.empty(shape, dtype=dtype).normal_(generator=generator)
    for t in range(schedule.steps, 0, -1):
        eps_hat = eps_fn(x, t)
        alpha_t = schedule.alphas[t - 1]
        beta_t = schedule.betas[t - 1]
        ab_t = schedule.alpha_bar(t)
        mean = (x - beta_t / math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(alpha_t)
        if t > 1:
            ab_prev = schedule.alpha_bar(t - 1)
            sigma = math.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta_t)
            z = torch.empty_like(x).normal_(generator=generator)
            x = mean + sigma * z
        else:
            x = mean
    return x


def ddim_sample(eps_fn, shape: tuple[int, ...], schedule: NoiseSchedule,
                generator: torch.Generator, n_steps: int | None = None,
                dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Deterministic reverse updates over a strided subset of steps."""
    n_steps = schedule.steps if n_steps is None else n_steps
    if not 1 <= n_steps <= schedule.steps:
        raise ValueError(f"n_steps must lie in [1, {schedule.steps}], got {n_steps}")
    ts = _strided_steps(schedule.steps, n_steps)
    x = torch.empty(shape, dtype=dtype).normal_(generator=generator)
    for i, t in enumerate(ts):
        t_next = ts[i + 1] if i + 1 < len(ts) else 0
        ab_t = schedule.alpha_bar(t)
        ab_next = schedule.alpha_bar(t_next)
        eps_hat = eps_fn(x, t)
        x0 = (x - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
        x = math.sqrt(ab_next) * x0 + math.sqrt(1.0 - ab_next) * eps_hat
    return x


def sample(denoiser: Denoiser, cond: list[torch.Tensor], shape: tuple[int, ...],
           schedule: NoiseSchedule, mode: str, n_steps: int,
           generator: torch.Generator,
           dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Generate spectrograms conditioned on a video feature pyramid."""
    def eps_fn(x, t):
        with torch.no_grad():
            return denoiser(x, t, cond)

    if mode == "ancestral":
        return ancestral_sample(eps_fn, shape, schedule, generator, n_steps, dtype)
    if mode == "deterministic":
        return ddim_sample(eps_fn, shape, schedule, generator, n_steps, dtype)
    raise ValueError(f"unknown sampler mode {mode!r}")
