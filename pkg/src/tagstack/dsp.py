"""Log-mel / MFCC feature tensors with delta and delta-delta channels.

Default geometry: 44.1 kHz, 80 ms Hann frames (3528 samples), 10 ms hop
(441), FFT size 4096, 64 HTK mel bands. A 1.5 s segment yields 150 frames,
hence a 3 x 64 x 150 log-mel tensor.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct, idct, rfft
from scipy.signal import get_window

__all__ = [
    "DspConfig",
    "FeatureMatrix",
    "FeatureTensor",
    "MelFilterbank",
    "stft_power",
    "mel_scale",
    "mel_to_hz",
    "mel_filterbank",
    "log_mel",
    "mfcc",
    "inverse_mfcc",
    "delta",
    "stack_channels",
    "static_log_mel",
    "logmel_tensor",
    "mfcc_tensor",
    "feature_tensors",
]

LOG_FLOOR = 1e-10
KINDS = ("log_mel", "mfcc", "delta", "delta_delta")


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 44100
    frame_ms: float = 80.0
    hop_ms: float = 10.0
    fft_size: int = 4096
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float = 22050.0
    n_mfcc: int = 40
    delta_window: int = 9
    segment_s: float = 1.5

    @property
    def frame_len(self) -> int:
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("feature matrix must be 2-D [bands x frames]")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FeatureTensor:
    """Channels are (static, delta, delta-delta)."""

    channels: tuple

    def __post_init__(self):
        if len(self.channels) != 3:
            raise ValueError("a feature tensor has exactly three channels")
        shapes = {c.shape for c in self.channels}
        if len(shapes) != 1:
            raise ValueError(f"channel shapes differ: {sorted(shapes)}")

    @property
    def shape(self):
        return (3,) + self.channels[0].shape

    def to_array(self) -> np.ndarray:
        return np.stack([c.values for c in self.channels])


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray
    band_edges: np.ndarray


def stft_power(samples, frame_len: int, hop: int, fft_size: int) -> np.ndarray:
    """Hann-windowed power spectrogram, shape ``[fft_size // 2 + 1, len // hop]``.

    The signal is reflect-padded by ``frame_len // 2`` on both sides and frame
    ``t`` covers ``padded[t * hop : t * hop + frame_len]``, so each frame is
    centred on sample ``t * hop`` of the input.
    """
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if fft_size < frame_len:
        raise ValueError(f"fft_size {fft_size} is shorter than frame_len {frame_len}")
    if hop <= 0:
        raise ValueError("hop must be positive")
    n_frames = x.size // hop
    if n_frames < 1:
        raise ValueError(f"segment of {x.size} samples is shorter than one hop ({hop})")
    pad = frame_len // 2
    mode = "reflect" if x.size > pad else "constant"
    padded = np.pad(x, (pad, pad), mode=mode)
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[::hop][:n_frames]
    window = get_window("hann", frame_len, fftbins=True)
    spec = rfft(frames * window, n=fft_size, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def mel_scale(f):
    """HTK mel: ``2595 * log10(1 + f / 700)``."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _cached_filterbank(n_mels, fft_size, sample_rate, f_min, f_max):
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ValueError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got {f_min}, {f_max}")
    edges = mel_to_hz(np.linspace(mel_scale(f_min), mel_scale(f_max), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    peaks = weights.max(axis=1)
    empty = np.flatnonzero(peaks <= 0)
    if empty.size:
        raise ValueError(
            f"{n_mels} mel bands do not fit {fft_size}-point FFT bins between "
            f"{f_min} and {f_max} Hz (band {empty[0]} covers no bin)")
    weights = weights / peaks[:, None]
    weights.setflags(write=False)
    edges.setflags(write=False)
    return MelFilterbank(weights, edges)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int,
                   f_min: float = 0.0, f_max: float = None) -> MelFilterbank:
    """Triangular filters on mel-spaced centres, each peak-normalised to 1.

    Built once per geometry and shared read-only.
    """
    if f_max is None:
        f_max = sample_rate / 2
    return _cached_filterbank(int(n_mels), int(fft_size), int(sample_rate),
                              float(f_min), float(f_max))


def log_mel(power: np.ndarray, fb: MelFilterbank) -> FeatureMatrix:
    power = np.asarray(power, dtype=np.float64)
    if power.shape[0] != fb.weights.shape[1]:
        raise ValueError(f"power has {power.shape[0]} bins, filterbank expects {fb.weights.shape[1]}")
    return FeatureMatrix(np.log(fb.weights @ power + LOG_FLOOR), "log_mel")


def mfcc(lm: FeatureMatrix, n_coeffs: int = 40) -> FeatureMatrix:
    """Orthonormal DCT-II over the band axis, first ``n_coeffs`` kept."""
    if lm.kind != "log_mel":
        raise ValueError(f"mfcc expects a log_mel matrix, got {lm.kind}")
    if not 1 <= n_coeffs <= lm.shape[0]:
        raise ValueError(f"n_coeffs must be in [1, {lm.shape[0]}], got {n_coeffs}")
    c = dct(lm.values, type=2, norm="ortho", axis=0)
    return FeatureMatrix(c[:n_coeffs], "mfcc")


def inverse_mfcc(coeffs: FeatureMatrix, n_mels: int) -> np.ndarray:
    padded = np.zeros((n_mels, coeffs.shape[1]))
    padded[:coeffs.shape[0]] = coeffs.values
    return idct(padded, type=2, norm="ortho", axis=0)


def delta(fm: FeatureMatrix, window: int = 9) -> FeatureMatrix:
    """Regression delta over frames with replicated edges.

    ``d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2)`` for n = 1..N,
    N = (window - 1) / 2. A delta input yields a delta-delta.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"delta window must be odd and >= 3, got {window}")
    x = fm.values
    if x.shape[1] < 1:
        raise ValueError("delta needs at least one frame")
    half = (window - 1) // 2
    padded = np.pad(x, ((0, 0), (half, half)), mode="edge")
    T = x.shape[1]
    out = np.zeros_like(x)
    for n in range(1, half + 1):
        out += n * (padded[:, half + n:half + n + T] - padded[:, half - n:half - n + T])
    out /= 2.0 * sum(n * n for n in range(1, half + 1))
    kind = "delta_delta" if fm.kind == "delta" else "delta"
    return FeatureMatrix(out, kind)


def stack_channels(static: FeatureMatrix, d: FeatureMatrix, dd: FeatureMatrix) -> FeatureTensor:
    return FeatureTensor((static, d, dd))


def _with_deltas(static: FeatureMatrix, window: int) -> FeatureTensor:
    d = delta(static, window)
    return stack_channels(static, d, delta(d, window))


def static_log_mel(samples, cfg: DspConfig) -> FeatureMatrix:
    power = stft_power(samples, cfg.frame_len, cfg.hop, cfg.fft_size)
    fb = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.sample_rate, cfg.f_min, cfg.f_max)
    return log_mel(power, fb)


def logmel_tensor(samples, cfg: DspConfig = DspConfig()) -> FeatureTensor:
    return _with_deltas(static_log_mel(samples, cfg), cfg.delta_window)


def mfcc_tensor(samples, cfg: DspConfig = DspConfig()) -> FeatureTensor:
    static = mfcc(static_log_mel(samples, cfg), cfg.n_mfcc)
    return _with_deltas(static, cfg.delta_window)


def feature_tensors(samples, cfg: DspConfig = DspConfig()):
    """Log-mel and MFCC tensors sharing a single STFT."""
    static = static_log_mel(samples, cfg)
    return (_with_deltas(static, cfg.delta_window),
            _with_deltas(mfcc(static, cfg.n_mfcc), cfg.delta_window))
