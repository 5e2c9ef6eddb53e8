"""STFT, log-Mel, NIPD, SALSA-Mel and GCC-PHAT features for 4-mic arrays."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .audio_io import MultichannelClip
from .errors import ConfigurationError, DimensionError, EmptyInputError, FormatError


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 24000
    window_len: int = 960      # 40 ms
    hop_len: int = 480         # 20 ms
    fft_size: int = 1024
    n_mels: int = 64
    f_min: float = 50.0
    f_max: float = 12000.0
    log_floor: float = 1e-8
    sound_speed: float = 343.0
    nipd_cutoff_hz: float | None = None
    channels: int = 4

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class StftMatrix:
    """Complex spectrogram, M x T x F."""

    values: np.ndarray
    window_len: int
    hop_len: int
    fft_size: int
    sample_rate: int

    @property
    def fft_bins(self) -> int:
        return self.values.shape[-1]

    @property
    def frames(self) -> int:
        return self.values.shape[-2]

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.fft_bins) * self.sample_rate / self.fft_size


@dataclass
class MelFilterbank:
    weights: np.ndarray  # n_mels x F
    sample_rate: int
    f_min: float
    f_max: float
    centers_hz: np.ndarray

    @property
    def mel_bins(self) -> int:
        return self.weights.shape[0]

    @property
    def fft_bins(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class NipdConfig:
    sound_speed: float = 343.0
    reference_channel: int = 0
    cutoff_hz: float | None = None

    def __post_init__(self):
        if self.sound_speed <= 0:
            raise ConfigurationError(f"sound speed must be positive, got {self.sound_speed}")


@dataclass
class SalsaMelFeature:
    """C x T x mel feature: log-Mel planes first, then NIPD planes."""

    values: np.ndarray
    hop_len: int
    sample_rate: int

    @property
    def log_mel(self) -> np.ndarray:
        m = (self.values.shape[0] + 1) // 2
        return self.values[:m]

    @property
    def nipd(self) -> np.ndarray:
        m = (self.values.shape[0] + 1) // 2
        return self.values[m:]


# STFT ---------------------------------------------------------------------------

def stft(clip: MultichannelClip, window_len: int = 960, hop_len: int = 480,
         fft_size: int = 1024, pad_end: bool = False) -> StftMatrix:
    """Hann-windowed STFT without centring.

    T = 1 + floor((L - window_len) / hop_len).  With ``pad_end`` the signal
    is first extended by ``window_len - hop_len`` zeros so that T = L // hop_len.
    """
    if window_len > fft_size:
        raise ConfigurationError(f"window {window_len} longer than FFT size {fft_size}")
    x = clip.samples
    if pad_end:
        x = np.pad(x, ((0, 0), (0, window_len - hop_len)))
    if x.shape[1] < window_len:
        raise EmptyInputError(f"clip of {clip.num_samples} samples shorter than one window ({window_len})")
    win = get_window("hann", window_len)
    frames = sliding_window_view(x, window_len, axis=1)[:, ::hop_len, :]
    spec = np.fft.rfft(frames * win, n=fft_size, axis=-1)
    return StftMatrix(spec, window_len, hop_len, fft_size, clip.sample_rate)


# Mel ---------------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank_build(fft_bins: int, sample_rate: int, n_mels: int = 64,
                         f_min: float = 50.0, f_max: float = 12000.0) -> MelFilterbank:
    """HTK-scale triangular filters, each row scaled to a peak of 1."""
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ConfigurationError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got {f_min}, {f_max}")
    fft_size = 2 * (fft_bins - 1)
    freqs = np.arange(fft_bins) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (ctr - lo)
    down = (hi - freqs[None, :]) / (hi - ctr)
    w = np.maximum(0.0, np.minimum(up, down))
    peak = w.max(axis=1)
    if np.any(peak <= 0):
        raise ConfigurationError(
            f"{int(np.sum(peak <= 0))} of {n_mels} mel filters contain no FFT bin; "
            "reduce n_mels or increase fft_size")
    return MelFilterbank(w / peak[:, None], sample_rate, f_min, f_max, edges[1:-1].copy())


def log_mel(spec: StftMatrix, fb: MelFilterbank, floor: float = 1e-8) -> np.ndarray:
    """20 log10(sum_f H(bin, f) |X(t, f)| + floor), shape M x T x n_mels."""
    if fb.fft_bins != spec.fft_bins:
        raise DimensionError(f"filterbank has {fb.fft_bins} bins, STFT has {spec.fft_bins}")
    mag = np.abs(spec.values)
    return 20.0 * np.log10(mag @ fb.weights.T + floor)


def nipd_linear(spec: StftMatrix, cfg: NipdConfig = NipdConfig()) -> np.ndarray:
    """Per-bin NIPD, (M-1) x T x F, in metres; the DC column is zero."""
    x = spec.values
    if x.shape[0] < 2:
        raise DimensionError(f"NIPD needs at least 2 channels, got {x.shape[0]}")
    ref = cfg.reference_channel
    others = [m for m in range(x.shape[0]) if m != ref]
    phase = np.angle(np.conj(x[ref])[None] * x[others])
    f = spec.bin_frequencies()
    scale = np.zeros_like(f)
    scale[1:] = -cfg.sound_speed / (2.0 * np.pi * f[1:])
    return phase * scale


def nipd_weights(fb: MelFilterbank, freqs: np.ndarray, cutoff_hz: float | None = None) -> np.ndarray:
    """Mel rows renormalised to unit sum, DC (and optionally bins above cutoff) excluded."""
    w = fb.weights.copy()
    w[:, freqs <= 0] = 0.0
    if cutoff_hz is not None:
        w[:, freqs > cutoff_hz] = 0.0
    s = w.sum(axis=1, keepdims=True)
    return np.divide(w, s, out=np.zeros_like(w), where=s > 0)


def nipd(spec: StftMatrix, fb: MelFilterbank, cfg: NipdConfig = NipdConfig()) -> np.ndarray:
    """Mel-weighted NIPD, (M-1) x T x n_mels."""
    if fb.fft_bins != spec.fft_bins:
        raise DimensionError(f"filterbank has {fb.fft_bins} bins, STFT has {spec.fft_bins}")
    lin = nipd_linear(spec, cfg)
    return lin @ nipd_weights(fb, spec.bin_frequencies(), cfg.cutoff_hz).T


def _check_clip(clip: MultichannelClip, cfg: FeatureConfig) -> None:
    if clip.channel_count != cfg.channels:
        raise DimensionError(f"feature extractor needs {cfg.channels} channels, got {clip.channel_count}")
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigurationError(f"expected {cfg.sample_rate} Hz audio, got {clip.sample_rate}")


_FB_CACHE: dict[tuple, MelFilterbank] = {}


def filterbank_for(cfg: FeatureConfig) -> MelFilterbank:
    key = (cfg.fft_size, cfg.sample_rate, cfg.n_mels, cfg.f_min, cfg.f_max)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank_build(cfg.fft_size // 2 + 1, cfg.sample_rate, cfg.n_mels,
                                              cfg.f_min, cfg.f_max)
    return _FB_CACHE[key]


def salsa_mel(clip: MultichannelClip, cfg: FeatureConfig = FeatureConfig()) -> SalsaMelFeature:
    """Stack M log-Mel planes and M-1 mel-weighted NIPD planes (7 x T x 64 for M=4).

    The end of the clip is zero-padded so that T = L // hop_len, i.e. exactly
    five feature frames per 100 ms label frame at the default settings.
    """
    _check_clip(clip, cfg)
    spec = stft(clip, cfg.window_len, cfg.hop_len, cfg.fft_size, pad_end=True)
    fb = filterbank_for(cfg)
    lm = log_mel(spec, fb, cfg.log_floor)
    ph = nipd(spec, fb, NipdConfig(cfg.sound_speed, 0, cfg.nipd_cutoff_hz))
    return SalsaMelFeature(np.concatenate([lm, ph], axis=0), cfg.hop_len, cfg.sample_rate)


def gcc_phat(x1: np.ndarray, x2: np.ndarray, fft_size: int, n_lags: int = 64) -> np.ndarray:
    """Phase-transform cross-correlation of two T x F spectra, T x n_lags.

    Column ``n_lags // 2 + d`` holds lag d; a positive lag means the second
    channel arrives d samples after the first.
    """
    if x1.shape != x2.shape:
        raise DimensionError(f"GCC-PHAT inputs differ in shape: {x1.shape} vs {x2.shape}")
    cross = np.conj(x1) * x2
    cross = cross / np.maximum(np.abs(cross), 1e-12)
    cc = np.fft.irfft(cross, n=fft_size, axis=-1)
    half = n_lags // 2
    return np.concatenate([cc[..., -half:], cc[..., :n_lags - half]], axis=-1)


def gcc_lag_of_column(col: int, n_lags: int = 64) -> int:
    return col - n_lags // 2


def logmel_gcc(clip: MultichannelClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Baseline comparison feature: M log-Mel planes + M(M-1)/2 GCC-PHAT planes."""
    _check_clip(clip, cfg)
    spec = stft(clip, cfg.window_len, cfg.hop_len, cfg.fft_size, pad_end=True)
    lm = log_mel(spec, filterbank_for(cfg), cfg.log_floor)
    m = spec.values.shape[0]
    pairs = [gcc_phat(spec.values[i], spec.values[j], cfg.fft_size, cfg.n_mels)
             for i in range(m) for j in range(i + 1, m)]
    return np.concatenate([lm, np.stack(pairs)], axis=0)


# feature cache --------------------------------------------------------------------

_CACHE_MAGIC = b"DKFEAT01"


def write_feature_cache(path, feature: SalsaMelFeature, cfg: FeatureConfig) -> None:
    """Binary float32 blob with a (shape, hop, rate) header and a JSON sidecar."""
    vals = np.ascontiguousarray(feature.values, dtype="<f4")
    header = _CACHE_MAGIC + struct.pack("<I", vals.ndim) + struct.pack(f"<{vals.ndim}I", *vals.shape)
    header += struct.pack("<II", feature.hop_len, feature.sample_rate)
    Path(path).write_bytes(header + vals.tobytes())
    sidecar = {"config_hash": cfg.hash(), "config": asdict(cfg), "shape": list(vals.shape)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_feature_cache(path, cfg: FeatureConfig | None = None) -> SalsaMelFeature:
    raw = Path(path).read_bytes()
    if raw[:8] != _CACHE_MAGIC:
        raise FormatError(f"{path}: not a feature cache file")
    (ndim,) = struct.unpack("<I", raw[8:12])
    shape = struct.unpack(f"<{ndim}I", raw[12:12 + 4 * ndim])
    off = 12 + 4 * ndim
    hop, rate = struct.unpack("<II", raw[off:off + 8])
    body = raw[off + 8:]
    if len(body) != 4 * int(np.prod(shape)):
        raise FormatError(f"{path}: payload size does not match header shape {shape}")
    if cfg is not None:
        side = Path(str(path) + ".json")
        if side.exists() and json.loads(side.read_text())["config_hash"] != cfg.hash():
            raise ConfigurationError(f"{path}: cached with a different feature config")
    values = np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float64)
    return SalsaMelFeature(values, hop, rate)
