import numpy as np
import pytest
from scipy.io import wavfile

from src.config import FrontendConfig
from src.errors import ConfigError, DataError
from src.frontend import (FeatureMatrix, extract, frame_count, logmel, mel_centers, mel_energies,
                          one_hot_stream, stack3, unstack3)


class TestLogMel:
    def test_frame_count_8khz(self):
        fm = logmel(np.random.default_rng(0).normal(size=8000), 8000)
        assert fm.T == frame_count(8000, 200, 80) == 98
        assert fm.D == 40

    def test_zero_waveform(self):
        fm = logmel(np.zeros(16000), 16000)
        assert np.all(fm.frames == 0.0)
        raw = logmel(np.zeros(16000), 16000, normalize=False)
        assert np.allclose(raw.frames, np.log(1e-10))

    def test_mean_normalized_no_variance_normalization(self):
        rng = np.random.default_rng(1)
        fm = logmel(rng.normal(size=16000), 16000)
        assert np.allclose(fm.frames.mean(axis=0), 0.0, atol=1e-9)
        assert not np.allclose(fm.frames.std(axis=0), 1.0)

    def test_tone_at_band_center_dominates_neighbours(self):
        sr, band = 16000, 25
        centre = mel_centers(sr)[band]
        t = np.arange(sr) / sr
        energies = mel_energies(np.sin(2 * np.pi * centre * t), sr).mean(axis=0)
        assert energies[band] > energies[band - 1]
        assert energies[band] > energies[band + 1]

    def test_dc_offset_is_ignored(self):
        rng = np.random.default_rng(2)
        wave = rng.normal(size=8000)
        assert np.allclose(logmel(wave, 8000).frames, logmel(wave + 0.3, 8000).frames, atol=1e-8)

    def test_shorter_than_window(self):
        with pytest.raises(DataError, match='shorter than one window'):
            logmel(np.ones(100), 8000)

    def test_low_sample_rate(self):
        with pytest.raises(DataError):
            logmel(np.ones(8000), 4000)

    def test_empty(self):
        with pytest.raises(DataError):
            logmel(np.array([]), 8000)


class TestStack3:
    def test_six_frames(self):
        out = stack3(FeatureMatrix(np.arange(240.0).reshape(6, 40)))
        assert (out.T, out.D) == (2, 120)
        assert np.isclose(out.frame_period, 0.03)

    def test_one_frame_triplicated(self):
        frame = np.arange(4.0).reshape(1, 4)
        out = stack3(frame)
        assert out.frames.shape == (1, 12)
        assert np.array_equal(out.frames[0], np.tile(frame[0], 3))

    def test_seven_frames_pad_with_last(self):
        frames = np.arange(14.0).reshape(7, 2)
        out = stack3(frames)
        assert out.T == 3
        assert np.array_equal(out.frames[2], np.tile(frames[6], 3))

    def test_unstack(self):
        frames = np.random.default_rng(3).normal(size=(7, 5))
        assert np.array_equal(unstack3(stack3(frames), T=7), frames)

    def test_empty(self):
        with pytest.raises(DataError):
            stack3(np.zeros((0, 3)))


class TestOneHotStream:
    def test_no_upsampling(self):
        out = one_hot_stream([2, 5], 8, upsample=1).frames
        assert out.shape == (2, 8)
        assert out[0, 2] == 1.0 and out[1, 5] == 1.0
        assert out.sum() == 2.0

    def test_upsampled(self):
        out = one_hot_stream([2, 5], 8, upsample=3).frames
        assert out.shape == (6, 8)
        assert list(out.argmax(axis=1)) == [2, 2, 2, 5, 5, 5]

    def test_empty_ids(self):
        assert one_hot_stream([], 8).frames.shape == (0, 8)

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            one_hot_stream([1], 4, upsample=0)
        with pytest.raises(DataError):
            one_hot_stream([4], 4)


class TestExtract:
    def test_wav_file(self, tmp_path):
        rng = np.random.default_rng(4)
        samples = (rng.normal(0, 0.1, size=8000) * 32767).astype(np.int16)
        wavfile.write(tmp_path / 'a.wav', 8000, samples)
        fm = extract(tmp_path / 'a.wav', FrontendConfig())
        assert (fm.T, fm.D) == (33, 120)

    def test_feature_file_not_stacked(self, tmp_path):
        feats = np.random.default_rng(5).normal(size=(10, 4)) + 2.0
        np.save(tmp_path / 'f.npy', feats)
        fm = extract(tmp_path / 'f.npy', FrontendConfig(stack=False))
        assert fm.frames.shape == (10, 4)
        assert np.allclose(fm.frames.mean(axis=0), 0.0)

    def test_sample_rate_mismatch(self, tmp_path):
        wavfile.write(tmp_path / 'b.wav', 8000, np.zeros(8000, dtype=np.int16))
        with pytest.raises(DataError, match='expected 16000'):
            extract(tmp_path / 'b.wav', FrontendConfig(sample_rate=16000))

    def test_float_wav_rejected(self, tmp_path):
        wavfile.write(tmp_path / 'c.wav', 8000, np.zeros(8000, dtype=np.float32))
        with pytest.raises(DataError, match='16-bit'):
            extract(tmp_path / 'c.wav')
