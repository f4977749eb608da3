"""
Feature frontend
================

Waveform -> log-Mel filterbank frames, frame stacking, and one-hot
streams for the second-pass network.

Pipeline of ``logmel``:
    framing (25 ms window, 10 ms hop) -> per-frame DC removal -> Hann window
    -> magnitude spectrum -> mel filterbank -> log (floored)
    -> per-utterance mean subtraction (no variance normalization)
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import librosa
import numpy as np
import pandas as pd
from scipy.io import wavfile
from scipy.signal import get_window

from src.app_logging import get_logger
from src.config import FrontendConfig, FrontendDefaults
from src.errors import ConfigError, DataError
from src.inventory import EncodedSequence

logger = get_logger(__name__)


@dataclass
class FeatureMatrix:
    """T x D feature frames of one utterance."""
    frames: np.ndarray
    frame_period: float = FrontendDefaults.FRAME_PERIOD
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def check_finite(self, utt_id: Optional[str] = None):
        if not np.all(np.isfinite(self.frames)):
            where = f" in utterance '{utt_id}'" if utt_id is not None else ''
            raise DataError(f"Non-finite feature values{where}")


# ============================================================================
# LOG-MEL
# ============================================================================

def mean_normalize(frames: np.ndarray) -> np.ndarray:
    """Subtract the per-utterance mean of every dimension."""
    frames = np.asarray(frames, dtype=np.float64)
    return frames - frames.mean(axis=0, keepdims=True)


def frame_count(num_samples: int, win: int, hop: int) -> int:
    """floor((N - window) / hop) + 1, or 0 when the signal is shorter than a window."""
    if num_samples < win:
        return 0
    return (num_samples - win) // hop + 1


def _n_fft(win: int) -> int:
    return 1 << (win - 1).bit_length()


def mel_energies(waveform: np.ndarray, sample_rate: int, n_mels: int = FrontendDefaults.N_MELS,
                 frame_period: float = FrontendDefaults.FRAME_PERIOD,
                 window: float = FrontendDefaults.WINDOW) -> np.ndarray:
    """
    Linear mel filterbank energies, T x n_mels, before the log.

    Raises:
        DataError: empty waveform, sample rate below 8 kHz, or a
            waveform shorter than one window
    """
    waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if sample_rate < FrontendDefaults.MIN_SAMPLE_RATE:
        raise DataError(f"Sample rate {sample_rate} Hz is below {FrontendDefaults.MIN_SAMPLE_RATE} Hz")
    if waveform.size == 0:
        raise DataError('Empty waveform')

    win = int(round(window * sample_rate))
    hop = int(round(frame_period * sample_rate))
    T = frame_count(waveform.size, win, hop)
    if T == 0:
        raise DataError(f"Waveform of {waveform.size} samples is shorter than one window ({win} samples)")

    idx = np.arange(win)[None, :] + hop * np.arange(T)[:, None]
    frames = waveform[idx]
    frames = frames - frames.mean(axis=1, keepdims=True)
    frames = frames * get_window('hann', win, fftbins=True)

    n_fft = _n_fft(win)
    spectrum = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    fbank = librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, htk=True, norm=None)
    return spectrum @ fbank.T


def mel_centers(sample_rate: int, n_mels: int = FrontendDefaults.N_MELS) -> np.ndarray:
    """Center frequency (Hz) of every mel band."""
    edges = librosa.mel_frequencies(n_mels=n_mels + 2, fmin=0.0, fmax=sample_rate / 2.0, htk=True)
    return edges[1:-1]


def logmel(waveform: np.ndarray, sample_rate: int, n_mels: int = FrontendDefaults.N_MELS,
           frame_period: float = FrontendDefaults.FRAME_PERIOD,
           window: float = FrontendDefaults.WINDOW,
           log_floor: float = FrontendDefaults.LOG_FLOOR,
           normalize: bool = True) -> FeatureMatrix:
    """
    Log-Mel filterbank features of one utterance.

    Args:
        waveform: 1-D samples (any scale)
        sample_rate: samples per second, >= 8000
        normalize: subtract the per-utterance mean (``False`` keeps raw log energies)

    Returns:
        FeatureMatrix of floor((N - window) / hop) + 1 frames x n_mels
    """
    energies = mel_energies(waveform, sample_rate, n_mels, frame_period, window)
    frames = np.log(np.maximum(energies, log_floor))
    if normalize:
        frames = mean_normalize(frames)
    return FeatureMatrix(frames, frame_period)


# ============================================================================
# STACKING AND ONE-HOT STREAMS
# ============================================================================

def stack3(feats: Union[FeatureMatrix, np.ndarray]) -> FeatureMatrix:
    """
    Stack three consecutive frames into one vector.

    T' = ceil(T / 3), D' = 3D; the tail is padded by repeating the last frame.
    """
    fm = feats if isinstance(feats, FeatureMatrix) else FeatureMatrix(np.asarray(feats))
    frames = fm.frames
    T, D = frames.shape
    if T < 1:
        raise DataError('Cannot stack an empty feature matrix')
    pad = (-T) % 3
    if pad:
        frames = np.concatenate([frames, np.repeat(frames[-1:], pad, axis=0)], axis=0)
    stacked = frames.reshape(-1, 3 * D)
    return FeatureMatrix(stacked, fm.frame_period * 3, dict(fm.meta))


def unstack3(feats: FeatureMatrix, T: Optional[int] = None) -> np.ndarray:
    """Inverse of ``stack3``; ``T`` drops the tail padding."""
    D = feats.D // 3
    frames = feats.frames.reshape(-1, D)
    return frames if T is None else frames[:T]


def one_hot_stream(ids: Union[EncodedSequence, Sequence[int]], Q: int,
                   upsample: int = FrontendDefaults.UPSAMPLE) -> FeatureMatrix:
    """Every id becomes ``upsample`` identical one-hot rows of width Q."""
    if upsample < 1:
        raise ConfigError(f"upsample must be >= 1, got {upsample}")
    ids = list(ids.ids if isinstance(ids, EncodedSequence) else ids)
    if any(not 0 <= i < Q for i in ids):
        raise DataError(f"Unit id out of range for a {Q}-wide one-hot stream")
    if not ids:
        return FeatureMatrix(np.zeros((0, Q)))
    return FeatureMatrix(np.repeat(np.eye(Q)[ids], upsample, axis=0))


# ============================================================================
# FILE I/O
# ============================================================================

def read_wav(path):
    """Read a 16-bit PCM WAV file; returns (samples scaled to [-1, 1), sample_rate)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Audio file not found: {path}")
    try:
        sample_rate, data = wavfile.read(path)
    except ValueError as e:
        raise DataError(f"Unreadable WAV file {path}: {e}")
    if data.dtype != np.int16:
        raise DataError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    if data.ndim > 1:
        data = data.mean(axis=1)
    return data.astype(np.float64) / 32768.0, int(sample_rate)


def load_feature_file(path) -> np.ndarray:
    """Precomputed T x D features from ``.npy`` or a headerless ``.tsv``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Feature file not found: {path}")
    if path.suffix == '.npy':
        frames = np.load(path)
    elif path.suffix in ('.tsv', '.txt'):
        frames = pd.read_csv(path, sep='\t', header=None).to_numpy(dtype=np.float64)
    else:
        raise DataError(f"Unsupported feature file type '{path.suffix}': {path}")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise DataError(f"{path}: features must be a non-empty T x D matrix, got shape {frames.shape}")
    return frames


def extract(path, cfg: Optional[FrontendConfig] = None) -> FeatureMatrix:
    """
    Features for one manifest entry: WAV files go through ``logmel``,
    feature files are mean-normalized as stored. Stacked when ``cfg.stack``.
    """
    cfg = cfg or FrontendConfig()
    path = Path(path)
    if path.suffix == '.wav':
        samples, rate = read_wav(path)
        if cfg.sample_rate is not None and rate != cfg.sample_rate:
            raise DataError(f"{path}: sample rate {rate} Hz, expected {cfg.sample_rate} Hz")
        fm = logmel(samples, rate, cfg.n_mels, cfg.frame_period, cfg.window, cfg.log_floor)
    else:
        fm = FeatureMatrix(mean_normalize(load_feature_file(path)), cfg.frame_period)
    fm.check_finite(path.stem)
    return stack3(fm) if cfg.stack else fm
