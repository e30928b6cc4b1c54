"""Log-magnitude spectrogram frontend with mel-style frequency binning.

Pipeline: Hann-windowed magnitude STFT -> triangular aggregation of the raw
FFT bins onto a mel-spaced grid -> log with a hard floor -> temporal
crop/pool onto a fixed number of frames. The configured 50 ms / 25 ms
windowing of a 10 s / 8 kHz clip yields 399 raw frames; the final pooling
step is the explicit bridge onto the configured (time x frequency) grid
regardless of the raw frame count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class StftConfig:
    sample_rate: float
    window_ms: float
    hop_ms: float
    n_freq_bins: int
    n_time_frames: int
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.sample_rate <= 0 or self.window_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("sample_rate, window_ms and hop_ms must be positive")
        if self.hop_ms > self.window_ms:
            raise ConfigError("hop_ms must not exceed window_ms")
        if self.n_freq_bins <= 0 or self.n_time_frames <= 0:
            raise ConfigError("n_freq_bins and n_time_frames must be positive")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    """Number of raw STFT frames for a waveform of the given length."""
    return (n_samples - cfg.window_length) // cfg.hop_length + 1


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(cfg: StftConfig) -> np.ndarray:
    """Triangular filters (n_freq_bins, n_fft_bins) spanning 0..Nyquist."""
    n_fft_bins = cfg.window_length // 2 + 1
    fft_freqs = np.arange(n_fft_bins) * cfg.sample_rate / cfg.window_length
    mel_edges = np.linspace(_hz_to_mel(0.0), _hz_to_mel(cfg.sample_rate / 2.0),
                            cfg.n_freq_bins + 2)
    hz_edges = _mel_to_hz(mel_edges)
    filters = np.zeros((cfg.n_freq_bins, n_fft_bins))
    for b in range(cfg.n_freq_bins):
        lo, mid, hi = hz_edges[b], hz_edges[b + 1], hz_edges[b + 2]
        rising = (fft_freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - mid, 1e-12)
        filters[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return filters


def filter_center_frequencies(cfg: StftConfig) -> np.ndarray:
    mel_edges = np.linspace(_hz_to_mel(0.0), _hz_to_mel(cfg.sample_rate / 2.0),
                            cfg.n_freq_bins + 2)
    return _mel_to_hz(mel_edges[1:-1])


def _resample_time(frames: np.ndarray, target: int) -> np.ndarray:
    """Adaptive mean-pool down or nearest-index repeat up to `target` rows."""
    n = frames.shape[0]
    if n == target:
        return frames
    if n > target:
        edges = (np.arange(target + 1) * n) // target
        return np.stack([frames[a:b].mean(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    idx = (np.arange(target) * n) // target
    return frames[idx]


def stft_log_spectrogram(waveform: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Waveform -> (n_time_frames, n_freq_bins) log-magnitude spectrogram."""
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.ndim != 1:
        raise ValueError(f"waveform must be 1-D, got shape {waveform.shape}")
    win = cfg.window_length
    hop = cfg.hop_length
    if waveform.shape[0] < win:
        raise ValueError(f"waveform shorter than one window ({waveform.shape[0]} < {win})")
    n_frames = frame_count(waveform.shape[0], cfg)
    offsets = np.arange(n_frames) * hop
    frames = waveform[offsets[:, None] + np.arange(win)[None, :]]
    window = np.hanning(win)
    magnitude = np.abs(np.fft.rfft(frames * window, axis=1))
    binned = magnitude @ mel_filterbank(cfg).T
    log_spec = np.log(np.maximum(binned, cfg.log_floor))
    return _resample_time(log_spec, cfg.n_time_frames)
