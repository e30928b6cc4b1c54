import numpy as np
import pytest

from avpretrain import spectrogram
from avpretrain.errors import ConfigError
from avpretrain.spectrogram import StftConfig, stft_log_spectrogram

PAPER_CFG = StftConfig(sample_rate=8000, window_ms=50, hop_ms=25,
                       n_freq_bins=128, n_time_frames=128)
DESK_CFG = StftConfig(sample_rate=8000, window_ms=50, hop_ms=25,
                      n_freq_bins=64, n_time_frames=64)


def test_invalid_configs():
    with pytest.raises(ConfigError):
        StftConfig(8000, 25, 50, 64, 64)  # hop > window
    with pytest.raises(ConfigError):
        StftConfig(8000, 50, 25, 0, 64)
    with pytest.raises(ConfigError):
        StftConfig(8000, 50, 25, 64, 64, log_floor=0.0)


def test_raw_frame_count_for_paper_setting():
    # 10 s at 8000 Hz with 50 ms window / 25 ms hop: (80000 - 400) / 200 + 1
    assert spectrogram.frame_count(80000, PAPER_CFG) == 399


def test_silence_hits_log_floor():
    out = stft_log_spectrogram(np.zeros(80000), DESK_CFG)
    assert out.shape == (64, 64)
    assert np.allclose(out, np.log(DESK_CFG.log_floor))


def test_too_short_waveform():
    with pytest.raises(ValueError, match="shorter"):
        stft_log_spectrogram(np.zeros(399), DESK_CFG)


@pytest.mark.parametrize("n_samples", [400, 5000, 80000, 100001])
def test_output_shape_contract(n_samples):
    rng = np.random.default_rng(0)
    out = stft_log_spectrogram(rng.standard_normal(n_samples), DESK_CFG)
    assert out.shape == (DESK_CFG.n_time_frames, DESK_CFG.n_freq_bins)
    assert np.isfinite(out).all()


def test_sinusoid_lands_in_its_bin():
    """Full pipeline argmax matches a direct one-frame DFT evaluation."""
    cfg = DESK_CFG
    centers = spectrogram.filter_center_frequencies(cfg)
    for bin_index in (10, 25, 40):
        freq = centers[bin_index]
        t = np.arange(16000) / cfg.sample_rate
        wave = np.sin(2 * np.pi * freq * t)
        spec = stft_log_spectrogram(wave, cfg)
        pipeline_argmax = int(np.argmax(spec.mean(axis=0)))

        # oracle: explicit DFT of the first windowed frame
        win = cfg.window_length
        frame = wave[:win] * np.hanning(win)
        n = np.arange(win)
        k = np.arange(win // 2 + 1)
        dft = np.abs((frame[None, :] * np.exp(-2j * np.pi * k[:, None] * n / win)).sum(axis=1))
        oracle_argmax = int(np.argmax(spectrogram.mel_filterbank(cfg) @ dft))

        assert pipeline_argmax == oracle_argmax == bin_index


def test_pooling_matches_manual_group_means():
    cfg = StftConfig(sample_rate=1000, window_ms=10, hop_ms=10,
                     n_freq_bins=4, n_time_frames=3)
    rng = np.random.default_rng(1)
    wave = rng.standard_normal(70)  # 7 raw frames -> pooled to 3
    assert spectrogram.frame_count(70, cfg) == 7

    # rebuild the unpooled log spectrogram by hand
    frames = np.stack([wave[i * 10:(i + 1) * 10] for i in range(7)])
    mag = np.abs(np.fft.rfft(frames * np.hanning(10), axis=1))
    unpooled = np.log(np.maximum(mag @ spectrogram.mel_filterbank(cfg).T, cfg.log_floor))
    edges = [0, 2, 4, 7]
    expected = np.stack([unpooled[a:b].mean(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    out = stft_log_spectrogram(wave, cfg)
    assert np.allclose(out, expected, atol=1e-12)


def test_upsampling_repeats_frames():
    cfg = StftConfig(sample_rate=1000, window_ms=10, hop_ms=10,
                     n_freq_bins=4, n_time_frames=4)
    rng = np.random.default_rng(2)
    wave = rng.standard_normal(20)  # 2 raw frames -> repeated to 4
    out = stft_log_spectrogram(wave, cfg)
    assert np.array_equal(out[0], out[1])
    assert np.array_equal(out[2], out[3])
