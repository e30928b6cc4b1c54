"""Experiment configuration: a flat ``key = value`` text file, strictly validated.

Schema (all keys optional, defaults in `ExperimentConfig`):
  - ints / floats / bools (``true``/``false``) / strings are bare values
  - integer lists are comma separated, e.g. ``pyramid_factors = 1,2,4``
  - ``#`` starts a comment; blank lines are ignored
Unknown or duplicate keys are rejected. The canonical serialization of a
config (sorted ``key = value`` lines) is hashed into a fingerprint that is
stamped on every output file.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# Supported quotients between audio spectrogram frames and video frames;
# the audio encoder's stride ladder realizes exactly these reductions.
SUPPORTED_TIME_REDUCTIONS = (1, 2, 4)


@dataclass(frozen=True)
class ExperimentConfig:
    # synthetic corpus
    n_pairs: int = 2048
    video_frames: int = 16
    frame_height: int = 32
    frame_width: int = 32
    audio_frames: int = 64
    audio_bins: int = 64
    n_scales: int = 3
    traj_lengths: tuple[int, ...] = (4, 8, 16)
    n_classes: int = 8
    traj_amplitude: float = 1.0
    # encoders
    embed_dim: int = 64
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    # feature pyramid
    pyramid_levels: int = 3
    pyramid_factors: tuple[int, ...] = (1, 2, 4)
    spatial_pyramid: bool = False
    spatial_grids: tuple[int, ...] = (1, 2)
    # contrastive objective
    temperature: float = 0.07
    attention: bool = True
    attention_mode: str = "feature"
    contrastive_weight: float = 1.0
    # diffusion objective
    diffusion_weight: float = 1.0
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    schedule: str = "linear"
    terminal_weight: float = 1.0
    terminal_interval: int = 1
    denoiser_channels: tuple[int, ...] = (12, 24, 48)
    # training
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-3
    seed: int = 0
    # evaluation
    retrieval_size: int = 256
    generation_samples: int = 96
    sampler_mode: str = "deterministic"
    sampler_steps: int = 25
    # ablation driver
    ablation_workers: int = 2
    ablate_sampler_steps: tuple[int, ...] = (5, 10, 25, 50, 100)
    ablate_terminal_intervals: tuple[int, ...] = ()
    ablate_spatial: bool = False
    ablate_corpus_sizes: tuple[int, ...] = ()

    @property
    def time_reduction(self) -> int:
        return self.audio_frames // self.video_frames


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str, default) -> object:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(f"expected true/false, got {raw!r}")
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if raw == "":
                return ()
            return tuple(int(part.strip()) for part in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse the flat key=value format into a validated ExperimentConfig."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, _FIELDS[key].default)
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def config_to_text(cfg: ExperimentConfig) -> str:
    """Canonical flat serialization (round-trips through parse_config_text)."""
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{name} = {rendered}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(cfg))


def config_fingerprint(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:16]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def validate_config(cfg: ExperimentConfig) -> None:
    """Check every cross-field invariant before any compute happens."""
    _require(cfg.n_pairs >= 1, "n_pairs must be >= 1")
    for name in ("video_frames", "frame_height", "frame_width", "audio_frames", "audio_bins"):
        _require(getattr(cfg, name) >= 1, f"{name} must be >= 1")
    _require(cfg.n_scales >= 1, "n_scales must be >= 1")
    _require(len(cfg.traj_lengths) == cfg.n_scales,
             f"traj_lengths needs n_scales={cfg.n_scales} entries, got {len(cfg.traj_lengths)}")
    _require(all(t >= 1 for t in cfg.traj_lengths), "traj_lengths must be positive")
    _require(all(a < b for a, b in zip(cfg.traj_lengths, cfg.traj_lengths[1:])),
             "traj_lengths must strictly increase (coarse to fine)")
    for t in cfg.traj_lengths:
        _require(cfg.video_frames % t == 0 and cfg.audio_frames % t == 0,
                 f"trajectory length {t} must divide video_frames and audio_frames")
    _require(cfg.audio_bins >= cfg.n_scales, "audio_bins must be >= n_scales (one band per scale)")
    _require(cfg.n_classes >= 1, "n_classes must be >= 1")
    _require(cfg.traj_amplitude >= 0, "traj_amplitude must be >= 0")

    _require(cfg.embed_dim >= 1, "embed_dim must be >= 1")
    _require(len(cfg.encoder_channels) == 3, "encoder_channels must list 3 block widths")
    _require(all(c >= 1 for c in cfg.encoder_channels), "encoder_channels must be positive")
    _require(cfg.encoder_channels[-1] == cfg.embed_dim,
             "encoder_channels[-1] must equal embed_dim")
    _require(cfg.audio_frames % cfg.video_frames == 0,
             "audio_frames must be a multiple of video_frames")
    _require(cfg.time_reduction in SUPPORTED_TIME_REDUCTIONS,
             f"audio_frames/video_frames must be one of {SUPPORTED_TIME_REDUCTIONS}")

    _require(cfg.pyramid_levels >= 1, "pyramid_levels must be >= 1")
    _require(len(cfg.pyramid_factors) == cfg.pyramid_levels,
             "pyramid_factors must have pyramid_levels entries")
    _require(cfg.pyramid_factors[0] == 1, "pyramid_factors[0] must be 1 (finest level)")
    _require(all(a < b for a, b in zip(cfg.pyramid_factors, cfg.pyramid_factors[1:])),
             "pyramid_factors must strictly increase")
    _require(cfg.pyramid_factors[-1] <= cfg.video_frames,
             "largest pyramid factor exceeds the feature sequence length")
    _require(all(s >= 1 for s in cfg.spatial_grids), "spatial_grids must be positive")

    _require(cfg.temperature > 0, "temperature must be > 0")
    _require(cfg.attention_mode in ("feature", "loss"),
             "attention_mode must be 'feature' or 'loss'")
    _require(cfg.contrastive_weight >= 0, "contrastive_weight must be >= 0")

    _require(cfg.diffusion_weight >= 0, "diffusion_weight must be >= 0")
    _require(cfg.diffusion_steps >= 1, "diffusion_steps must be >= 1")
    _require(0 < cfg.beta_start <= cfg.beta_end < 1,
             "need 0 < beta_start <= beta_end < 1")
    _require(cfg.schedule in ("linear", "cosine"), "schedule must be 'linear' or 'cosine'")
    _require(cfg.terminal_weight >= 0, "terminal_weight must be >= 0")
    _require(cfg.terminal_interval >= 1, "terminal_interval must be >= 1")
    _require(len(cfg.denoiser_channels) == cfg.pyramid_levels,
             "denoiser_channels must have one entry per pyramid level")
    _require(all(c >= 1 for c in cfg.denoiser_channels), "denoiser_channels must be positive")
    depth = len(cfg.denoiser_channels)
    _require(cfg.audio_frames % (2 ** depth) == 0 and cfg.audio_bins % (2 ** depth) == 0,
             "audio_frames and audio_bins must be divisible by 2**len(denoiser_channels)")

    _require(cfg.batch_size >= 2, "batch_size must be >= 2 (contrastive loss needs negatives)")
    _require(cfg.epochs >= 0, "epochs must be >= 0")
    _require(cfg.learning_rate > 0, "learning_rate must be > 0")
    _require(0 <= cfg.seed < 2 ** 63, "seed must fit in a 64-bit integer")

    _require(cfg.retrieval_size >= 2, "retrieval_size must be >= 2")
    _require(cfg.generation_samples >= 1, "generation_samples must be >= 1")
    _require(cfg.sampler_mode in ("deterministic", "ancestral"),
             "sampler_mode must be 'deterministic' or 'ancestral'")
    _require(1 <= cfg.sampler_steps <= cfg.diffusion_steps,
             "sampler_steps must lie in [1, diffusion_steps]")

    _require(cfg.ablation_workers >= 1, "ablation_workers must be >= 1")
    _require(all(1 <= s <= cfg.diffusion_steps for s in cfg.ablate_sampler_steps),
             "ablate_sampler_steps must lie in [1, diffusion_steps]")
    _require(all(k >= 1 for k in cfg.ablate_terminal_intervals),
             "ablate_terminal_intervals must be >= 1")
    _require(all(n >= 1 for n in cfg.ablate_corpus_sizes),
             "ablate_corpus_sizes must be >= 1")


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Return a validated copy with the given fields replaced."""
    new = dataclasses.replace(cfg, **overrides)
    validate_config(new)
    return new
