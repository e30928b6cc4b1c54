"""Synthetic paired video/audio corpus with known multi-scale correspondence.

Every sample is a pure function of (config, seed). A latent truth holds one
random trajectory per temporal scale (coarse to fine, strictly increasing
lengths). The video renders each trajectory as a moving, brightness-modulated
stripe inside a dedicated horizontal band of the frame; the audio renders the
same trajectory as energy modulation inside a dedicated, disjoint frequency
band of the spectrogram. Band-disjointness makes scale-swap negatives exact:
touching one scale's trajectory changes only that scale's audio band.

Class identity enters only through static (time-constant) assets: a per-class
background texture in the video and a per-class spectral template in the
audio. Instance identity therefore lives purely in the temporal structure.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig, validate_config
from .errors import ConfigError

_MASK64 = (1 << 64) - 1
_SWAP_SALT = 0xA5A55A5AD00DF00D
_CLASS_SALT = 0x0C1A55E5

STRIPE_SIGMA_FRACTION = 1 / 16  # stripe width relative to frame width
STRIPE_AMP_LO, STRIPE_AMP_HI = 0.25, 0.60
BACKGROUND_LO, BACKGROUND_SPAN = 0.10, 0.15
AUDIO_GAIN = 0.5
AUDIO_PROFILE_LO = 0.4
CLASS_TONE_SPAN = 0.3


@dataclass(frozen=True)
class LatentTruth:
    """Per-scale latent trajectories (coarse to fine) plus the class label."""
    scale_trajectories: tuple[np.ndarray, ...]
    class_id: int
    seed: int


@dataclass
class RawPair:
    """One synchronized sample; `truth` is the latent that generated the video."""
    video: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    audio: np.ndarray  # (T_a, F_a) float32, log-magnitude-like, zero-centered
    truth: LatentTruth
    aligned: bool


def sample_seed(corpus_seed: int, index: int) -> int:
    """Per-sample seed; XOR keeps parallel generation equal to serial."""
    return (corpus_seed ^ index) & _MASK64


def audio_band_slices(cfg: ExperimentConfig) -> list[slice]:
    """Disjoint contiguous frequency bands, coarsest scale in the lowest bins."""
    edges = np.linspace(0, cfg.audio_bins, cfg.n_scales + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def video_band_slices(cfg: ExperimentConfig) -> list[slice]:
    """Disjoint horizontal pixel bands, coarsest scale in the top rows."""
    edges = np.linspace(0, cfg.frame_height, cfg.n_scales + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _scale_color(scale_index: int, n_scales: int) -> np.ndarray:
    theta = 2 * np.pi * scale_index / max(n_scales, 3)
    rgb = 0.55 + 0.45 * np.cos(theta + np.array([0.0, -2 * np.pi / 3, 2 * np.pi / 3]))
    return rgb


@functools.lru_cache(maxsize=64)
def _class_assets(class_id: int, cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Static per-class video texture (H, W) and audio template (F_a,)."""
    rng = np.random.default_rng((_CLASS_SALT, class_id))
    texture = rng.uniform(0.0, 1.0, size=(cfg.frame_height, cfg.frame_width))
    tones = rng.uniform(-CLASS_TONE_SPAN, CLASS_TONE_SPAN, size=cfg.audio_bins)
    return texture, tones


def _draw_truth(cfg: ExperimentConfig, seed: int) -> LatentTruth:
    rng = np.random.default_rng(seed & _MASK64)
    class_id = int(rng.integers(0, cfg.n_classes))
    trajectories = tuple(
        cfg.traj_amplitude * rng.uniform(-1.0, 1.0, size=length)
        for length in cfg.traj_lengths
    )
    return LatentTruth(scale_trajectories=trajectories, class_id=class_id, seed=seed)


def _render_video(cfg: ExperimentConfig, truth: LatentTruth) -> np.ndarray:
    frames = np.empty((cfg.video_frames, cfg.frame_height, cfg.frame_width, 3))
    texture, _ = _class_assets(truth.class_id, cfg)
    background = BACKGROUND_LO + BACKGROUND_SPAN * texture
    frames[:] = background[None, :, :, None]
    cols = np.arange(cfg.frame_width)
    sigma = max(cfg.frame_width * STRIPE_SIGMA_FRACTION, 1.0)
    bands = video_band_slices(cfg)
    for s, traj in enumerate(truth.scale_trajectories):
        traj_v = np.repeat(traj, cfg.video_frames // len(traj))
        unit = (traj_v + 1.0) / 2.0
        center = unit * cfg.frame_width
        amp = STRIPE_AMP_LO + (STRIPE_AMP_HI - STRIPE_AMP_LO) * unit
        dist = np.abs(cols[None, :] - center[:, None])
        dist = np.minimum(dist, cfg.frame_width - dist)  # wrap-around, constant mass
        stripe = amp[:, None] * np.exp(-0.5 * (dist / sigma) ** 2)  # (T, W)
        color = _scale_color(s, cfg.n_scales)
        frames[:, bands[s], :, :] += stripe[:, None, :, None] * color[None, None, None, :]
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def _render_audio(cfg: ExperimentConfig, trajectories: tuple[np.ndarray, ...],
                  class_id: int) -> np.ndarray:
    spec = np.empty((cfg.audio_frames, cfg.audio_bins))
    _, tones = _class_assets(class_id, cfg)
    spec[:] = tones[None, :]
    bands = audio_band_slices(cfg)
    for s, traj in enumerate(trajectories):
        band = bands[s]
        width = band.stop - band.start
        idx = np.arange(width)
        profile = AUDIO_PROFILE_LO + (1 - AUDIO_PROFILE_LO) * np.sin(np.pi * (idx + 0.5) / width)
        traj_a = np.repeat(traj, cfg.audio_frames // len(traj))
        spec[:, band] += AUDIO_GAIN * traj_a[:, None] * profile[None, :]
    return spec.astype(np.float32)


def generate_pair(cfg: ExperimentConfig, seed: int) -> RawPair:
    """Render one aligned pair; bit-identical for identical (cfg, seed)."""
    try:
        validate_config(cfg)
    except ConfigError:
        raise
    truth = _draw_truth(cfg, seed)
    video = _render_video(cfg, truth)
    audio = _render_audio(cfg, truth.scale_trajectories, truth.class_id)
    return RawPair(video=video, audio=audio, truth=truth, aligned=True)


def make_negative(pair: RawPair, cfg: ExperimentConfig, mode: str, *,
                  k: int | None = None, level: int | None = None,
                  other: RawPair | None = None) -> RawPair:
    """Controlled misaligned variant of an aligned pair (aligned is always False).

    Modes: ``temporal_shift`` rolls the audio by k frames; ``scale_swap``
    re-renders the audio with scale ``level`` (1 = coarsest) replaced by a
    fresh trajectory; ``cross_sample`` grafts audio from a different sample.
    The returned ``truth`` stays the one that generated the video.
    """
    if not pair.aligned:
        raise ValueError("make_negative requires an aligned pair")
    if mode == "temporal_shift":
        if k is None or not 1 <= k <= cfg.audio_frames - 1:
            raise ValueError(f"shift k must lie in [1, {cfg.audio_frames - 1}], got {k}")
        audio = np.roll(pair.audio, k, axis=0)
        return replace(pair, audio=audio, aligned=False)
    if mode == "scale_swap":
        if level is None or not 1 <= level <= cfg.n_scales:
            raise ValueError(f"level must lie in [1, {cfg.n_scales}], got {level}")
        rng = np.random.default_rng((_SWAP_SALT, pair.truth.seed & _MASK64, level))
        length = cfg.traj_lengths[level - 1]
        fresh = cfg.traj_amplitude * rng.uniform(-1.0, 1.0, size=length)
        trajectories = list(pair.truth.scale_trajectories)
        trajectories[level - 1] = fresh
        audio = _render_audio(cfg, tuple(trajectories), pair.truth.class_id)
        return replace(pair, audio=audio, aligned=False)
    if mode == "cross_sample":
        if other is None:
            raise ValueError("cross_sample needs the other pair")
        if other.truth.seed == pair.truth.seed:
            raise ValueError("cross_sample requires audio from a different seed")
        return replace(pair, audio=other.audio.copy(), aligned=False)
    raise ValueError(f"unknown negative mode {mode!r}")


@dataclass
class CorpusBatch:
    """Dense arrays for a rendered set of samples."""
    video: np.ndarray       # (N, T, H, W, 3) float32
    audio: np.ndarray       # (N, T_a, F_a) float32
    class_ids: np.ndarray   # (N,) int64
    seeds: np.ndarray       # (N,) uint64
    aligned: np.ndarray     # (N,) bool


def render_batch(cfg: ExperimentConfig, corpus_seed: int,
                 indices: np.ndarray | list[int]) -> CorpusBatch:
    indices = np.asarray(indices, dtype=np.int64)
    n = len(indices)
    video = np.empty((n, cfg.video_frames, cfg.frame_height, cfg.frame_width, 3),
                     dtype=np.float32)
    audio = np.empty((n, cfg.audio_frames, cfg.audio_bins), dtype=np.float32)
    class_ids = np.empty(n, dtype=np.int64)
    seeds = np.empty(n, dtype=np.uint64)
    for row, index in enumerate(indices):
        pair = generate_pair(cfg, sample_seed(corpus_seed, int(index)))
        video[row] = pair.video
        audio[row] = pair.audio
        class_ids[row] = pair.truth.class_id
        seeds[row] = pair.truth.seed
    return CorpusBatch(video=video, audio=audio, class_ids=class_ids, seeds=seeds,
                       aligned=np.ones(n, dtype=bool))


def train_indices(cfg: ExperimentConfig) -> np.ndarray:
    return np.arange(cfg.n_pairs, dtype=np.int64)


def test_indices(cfg: ExperimentConfig, count: int | None = None) -> np.ndarray:
    """Held-out indices; disjoint from training by construction."""
    count = cfg.retrieval_size if count is None else count
    return np.arange(cfg.n_pairs, cfg.n_pairs + count, dtype=np.int64)


def band_energy_profiles(cfg: ExperimentConfig, audio: np.ndarray) -> np.ndarray:
    """Mean energy per scale band over time: (..., T_a, F_a) -> (..., L, T_a)."""
    bands = audio_band_slices(cfg)
    profiles = [audio[..., :, band].mean(axis=-1) for band in bands]
    return np.stack(profiles, axis=-2)


def save_corpus(directory, cfg: ExperimentConfig, corpus_seed: int,
                indices: np.ndarray, fingerprint: str) -> None:
    """Persist a rendered split in the raw-array-plus-manifest format."""
    from . import tensorstore

    batch = render_batch(cfg, corpus_seed, indices)
    tensorstore.write_tensors(
        directory,
        {"video": batch.video, "audio": batch.audio},
        extra={
            "kind": "corpus",
            "config_fingerprint": fingerprint,
            "corpus_seed": int(corpus_seed),
            "indices": [int(i) for i in indices],
            "seeds": [int(s) for s in batch.seeds],
            "class_ids": [int(c) for c in batch.class_ids],
            "aligned": [bool(a) for a in batch.aligned],
        },
    )


def load_corpus(directory) -> CorpusBatch:
    from . import tensorstore

    tensors, extra = tensorstore.read_tensors(directory)
    if extra.get("kind") != "corpus":
        raise ValueError(f"{directory} is not a corpus store")
    return CorpusBatch(
        video=tensors["video"],
        audio=tensors["audio"],
        class_ids=np.asarray(extra["class_ids"], dtype=np.int64),
        seeds=np.asarray(extra["seeds"], dtype=np.uint64),
        aligned=np.asarray(extra["aligned"], dtype=bool),
    )
