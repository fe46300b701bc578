"""STFT analysis/synthesis, mel projection, compression and Griffin-Lim."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import SAMPLE_RATE, AudioBuffer
from .errors import DataError, ShapeError

LOG_EPS = 1e-5
STAGES = ("linear", "log", "normalized")


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 1024
    hop: int = 256
    window: str = "hann"
    center: bool = True

    def __post_init__(self):
        n = self.fft_size
        if n < 2 or n & (n - 1):
            raise ValueError(f"fft_size must be a power of two, got {n}")
        if not 1 <= self.hop <= n:
            raise ValueError(f"hop must be in [1, fft_size], got {self.hop}")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        if self.window == "rect":
            return np.ones(self.fft_size)
        # periodic Hann
        k = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2 * np.pi * k / self.fft_size)

    def n_frames(self, length: int) -> int:
        if self.center:
            return 1 + length // self.hop
        return 1 + (length - self.fft_size) // self.hop


@dataclass(frozen=True)
class ComplexSpectrogram:
    frames: np.ndarray  # (T, F) complex
    params: StftParams = StftParams()
    source_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.params.n_bins:
            raise ShapeError(
                f"expected (T, {self.params.n_bins}) frames, got {self.frames.shape}")


@dataclass(frozen=True)
class MagnitudeSpectrogram:
    frames: np.ndarray  # (T, F) nonnegative
    params: StftParams = StftParams()
    source_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if np.any(self.frames < 0):
            raise ValueError("magnitudes must be nonnegative")


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # (T, M)
    stage: str = "linear"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class NormStats:
    min: float
    max: float

    def __post_init__(self):
        if not (np.isfinite(self.min) and np.isfinite(self.max)) or not self.min < self.max:
            raise ValueError(f"NormStats requires finite min < max, got {self.min}, {self.max}")


def _require_stage(mel: MelSpectrogram, stage: str):
    if mel.stage != stage:
        raise ValueError(f"expected a {stage}-stage mel spectrogram, got stage {mel.stage!r}")


# -- STFT ------------------------------------------------------------------

def stft(buffer: AudioBuffer | np.ndarray, params: StftParams = StftParams()) -> ComplexSpectrogram:
    if isinstance(buffer, AudioBuffer):
        if buffer.channels != 1:
            raise ValueError("stft expects a mono buffer")
        x, rate = buffer.data, buffer.sample_rate
    else:
        x, rate = np.asarray(buffer, dtype=np.float64), SAMPLE_RATE
    if x.size == 0:
        raise DataError("cannot take the STFT of an empty buffer")
    n = params.fft_size
    if params.center:
        x = np.pad(x, n // 2, mode="reflect" if x.size > 1 else "constant")
    frames = sliding_window_view(x, n)[::params.hop] * params.window_array()
    return ComplexSpectrogram(np.fft.rfft(frames, axis=-1), params, rate)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> AudioBuffer:
    """Weighted overlap-add inverse with squared-window normalization.

    Without `length`, the output holds (T - 1) * hop samples. Samples where
    the squared-window sum is below 1e-9 are set to zero.
    """
    params = spec.params
    n, hop = params.fft_size, params.hop
    n_frames = spec.frames.shape[0]
    win = params.window_array()
    frames = np.fft.irfft(spec.frames, n=n, axis=-1) * win
    total = n + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = win ** 2
    for k in range(n_frames):
        out[k * hop:k * hop + n] += frames[k]
        norm[k * hop:k * hop + n] += wsq
    start = n // 2 if params.center else 0
    if length is None:
        length = hop * (n_frames - 1) if params.center else total
    out = out[start:start + length]
    norm = norm[start:start + length]
    if out.size < length:
        raise ValueError(f"spectrogram too short for {length} samples")
    # samples no window reaches (e.g. uncentred edges) are left at zero
    covered = norm > 1e-9
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    return AudioBuffer(out, spec.source_rate)


def magnitude(spec: ComplexSpectrogram) -> MagnitudeSpectrogram:
    return MagnitudeSpectrogram(np.abs(spec.frames), spec.params, spec.source_rate)


# -- mel -------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray = field(repr=False)  # (M, F)
    fmin: float
    fmax: float
    sample_rate: int
    centers: np.ndarray = field(repr=False)

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def build_mel_filterbank(n_mels: int = 80, fft_size: int = 1024, sample_rate: int = SAMPLE_RATE,
                         fmin: float = 0.0, fmax: float = 12000.0) -> MelFilterbank:
    """Triangular, area-normalized filters with edges uniform on the mel scale."""
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"invalid mel range fmin={fmin}, fmax={fmax} for rate {sample_rate}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    edges[0], edges[-1] = fmin, fmax  # undo round-trip drift at the ends
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    empty = np.flatnonzero(weights.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filters {empty.tolist()} cover no FFT bin; lower n_mels")
    return MelFilterbank(weights, float(fmin), float(fmax), int(sample_rate), edges[1:-1])


def to_mel(mag: MagnitudeSpectrogram | np.ndarray, fb: MelFilterbank) -> MelSpectrogram:
    frames = mag.frames if isinstance(mag, MagnitudeSpectrogram) else np.asarray(mag)
    if frames.shape[-1] != fb.weights.shape[1]:
        raise ShapeError(
            f"magnitude has {frames.shape[-1]} bins, filterbank expects {fb.weights.shape[1]}")
    return MelSpectrogram(frames @ fb.weights.T, "linear")


def log_compress(mel: MelSpectrogram, eps: float = LOG_EPS) -> MelSpectrogram:
    _require_stage(mel, "linear")
    return MelSpectrogram(np.log(np.maximum(mel.frames, eps)), "log")


def log_expand(mel: MelSpectrogram) -> MelSpectrogram:
    _require_stage(mel, "log")
    return MelSpectrogram(np.exp(mel.frames), "linear")


def minmax_normalize(mel: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    _require_stage(mel, "log")
    v = (mel.frames - stats.min) / (stats.max - stats.min)
    return MelSpectrogram(np.clip(v, 0.0, 1.0), "normalized")


def minmax_denormalize(mel: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    _require_stage(mel, "normalized")
    return MelSpectrogram(mel.frames * (stats.max - stats.min) + stats.min, "log")


def mel_to_linear(mel: MelSpectrogram, fb: MelFilterbank, iterations: int = 50) -> np.ndarray:
    """Nonnegative inverse of the mel projection.

    Starts from each band's value spread back over its bins, then applies
    multiplicative updates that minimize the generalized KL divergence
    between the target mel and the projection of the estimate. Fitting ratios
    rather than squared differences keeps quiet bands accurate in the log
    domain. Returns (T, F) magnitude frames.
    """
    _require_stage(mel, "linear")
    target = mel.frames
    w = fb.weights
    coverage = w.sum(axis=0)
    covered = coverage > 0
    norm = np.where(covered, coverage, 1.0)
    x = np.where(covered, (target @ w) / norm, 0.0)
    for _ in range(iterations):
        projected = x @ w.T
        ratio = np.divide(target, projected, out=np.zeros_like(target), where=projected > 0)
        x *= (ratio @ w) / norm
    return x


@dataclass(frozen=True)
class Frontend:
    """STFT parameters plus filterbank: waveform to (log/normalized) mel."""

    params: StftParams = StftParams()
    n_mels: int = 80
    sample_rate: int = SAMPLE_RATE
    fmin: float = 0.0
    fmax: float = 12000.0

    @cached_property
    def filterbank(self) -> MelFilterbank:
        return build_mel_filterbank(self.n_mels, self.params.fft_size, self.sample_rate,
                                    self.fmin, self.fmax)

    def magnitude(self, x) -> MagnitudeSpectrogram:
        return magnitude(stft(x, self.params))

    def log_mel(self, x) -> MelSpectrogram:
        return log_compress(to_mel(self.magnitude(x), self.filterbank))

    def normalized_mel(self, x, stats: NormStats) -> MelSpectrogram:
        return minmax_normalize(self.log_mel(x), stats)


def norm_stats_from_logmels(mels: Iterable[MelSpectrogram]) -> NormStats:
    lo, hi = np.inf, -np.inf
    seen = False
    for mel in mels:
        _require_stage(mel, "log")
        seen = True
        lo = min(lo, float(mel.frames.min()))
        hi = max(hi, float(mel.frames.max()))
    if not seen:
        raise DataError("no log-mel frames to compute normalization statistics from")
    if not lo < hi:
        raise DataError(
            f"normalization needs at least two distinct log-mel values, all equal {lo}")
    return NormStats(lo, hi)


def compute_norm_stats(manifest, frontend: Frontend = Frontend()) -> NormStats:
    """Corpus-global log-mel min/max over the train split.

    Each train entry contributes its dry voice and its loudest mixture
    (voice + full-strength reverb + every accompaniment summed).
    """
    from .mixing import entry_stems, full_mixture

    entries = manifest.split("train")
    if not entries:
        raise DataError("train split is empty; cannot compute normalization statistics")

    def gen():
        for entry in entries:
            voice, accs, srir = entry_stems(entry, frontend.sample_rate)
            yield frontend.log_mel(voice)
            yield frontend.log_mel(full_mixture(voice, accs, srir))

    return norm_stats_from_logmels(gen())


# -- phase reconstruction --------------------------------------------------

def spectral_convergence(x: AudioBuffer, mag: MagnitudeSpectrogram) -> float:
    est = np.abs(stft(x, mag.params).frames)
    t = min(est.shape[0], mag.frames.shape[0])
    ref = mag.frames
    return float(np.linalg.norm(est[:t] - ref[:t]) / max(np.linalg.norm(ref), 1e-300))


def griffin_lim(mag: MagnitudeSpectrogram, iterations: int = 32, seed: int = 0) -> AudioBuffer:
    """Plain Griffin-Lim from a seeded random initial phase."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    params = mag.params
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(mag.frames.shape))
    length = params.hop * (mag.frames.shape[0] - 1)

    def synth(a):
        return istft(ComplexSpectrogram(mag.frames * a, params, mag.source_rate), length)

    for _ in range(iterations):
        rebuilt = stft(synth(angles), params).frames
        modulus = np.abs(rebuilt)
        angles = np.where(modulus > 0, rebuilt / np.where(modulus > 0, modulus, 1.0), 1.0)
    return synth(angles)
