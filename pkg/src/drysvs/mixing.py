"""Signal model: reverb rendering, mixtures, segmentation and augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .audio import SAMPLE_RATE, AudioBuffer, load_audio
from .errors import DataError


@dataclass(frozen=True)
class Srir:
    impulse: AudioBuffer
    identifier: str = ""

    def __post_init__(self):
        if self.impulse.length == 0:
            raise ValueError("SRIR must be non-empty")

    @classmethod
    def from_buffer(cls, buffer: AudioBuffer, identifier: str = "") -> "Srir":
        """Downmix and peak-normalize to max |h| = 1."""
        h = buffer.samples.mean(axis=0)
        peak = np.max(np.abs(h))
        if peak > 0:
            h = h / peak
        return cls(AudioBuffer(h[None, :], buffer.sample_rate), identifier)


@dataclass(frozen=True)
class ReverbSpec:
    srir: Srir
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def render_reverb(x_d: AudioBuffer, spec: ReverbSpec) -> AudioBuffer:
    """alpha * (h * x_d), truncated to the length of the dry signal."""
    h = spec.srir.impulse
    if h.sample_rate != x_d.sample_rate:
        raise DataError(
            f"sample-rate mismatch: voice {x_d.sample_rate} Hz, SRIR {h.sample_rate} Hz")
    n = x_d.length
    if spec.alpha == 0.0:
        return AudioBuffer(np.zeros_like(x_d.samples), x_d.sample_rate)
    wet = fftconvolve(x_d.samples, h.samples[:1], axes=-1)[:, :n]
    return AudioBuffer(spec.alpha * wet, x_d.sample_rate)


def _check_aligned(*buffers: AudioBuffer):
    ref = buffers[0]
    for b in buffers[1:]:
        if b.length != ref.length or b.sample_rate != ref.sample_rate:
            raise DataError(
                f"buffers must share length and rate: {ref.length}@{ref.sample_rate} "
                f"vs {b.length}@{b.sample_rate}")


def mix(x_d: AudioBuffer, x_r: AudioBuffer, x_a: AudioBuffer) -> AudioBuffer:
    _check_aligned(x_d, x_r, x_a)
    return AudioBuffer(x_d.samples + x_r.samples + x_a.samples, x_d.sample_rate)


@dataclass(frozen=True)
class Segments:
    buffers: list
    offset: int
    padded: bool


def segment_random(buffers: list[AudioBuffer], rng: np.random.Generator,
                   seconds: float = 3.0) -> Segments:
    """Crop every buffer at one shared random offset.

    Inputs shorter than the segment are zero-padded and flagged.
    """
    _check_aligned(*buffers)
    rate, n = buffers[0].sample_rate, buffers[0].length
    seg = int(round(seconds * rate))
    if n < seg:
        out = [AudioBuffer(np.pad(b.samples, ((0, 0), (0, seg - n))), rate) for b in buffers]
        return Segments(out, 0, True)
    offset = int(rng.integers(0, n - seg + 1))
    out = [AudioBuffer(b.samples[:, offset:offset + seg], rate) for b in buffers]
    return Segments(out, offset, False)


def mix_audio_augment(voice: AudioBuffer, acc1: AudioBuffer, acc2: AudioBuffer,
                      srir: Srir, rng: np.random.Generator,
                      alpha: float | None = None) -> tuple[AudioBuffer, AudioBuffer, ReverbSpec]:
    """Mixture from one voice and two accompaniments of different tracks.

    Draws alpha ~ U[0, 1] from `rng` unless given. Returns (y, x_d, spec).
    """
    _check_aligned(voice, acc1, acc2)
    if alpha is None:
        alpha = float(rng.uniform(0.0, 1.0))
    spec = ReverbSpec(srir, alpha)
    x_r = render_reverb(voice, spec)
    acc = AudioBuffer(acc1.samples + acc2.samples, voice.sample_rate)
    return mix(voice, x_r, acc), voice, spec


# -- corpus helpers --------------------------------------------------------

def load_srir(path, sample_rate: int = SAMPLE_RATE) -> Srir:
    return Srir.from_buffer(load_audio(path, sample_rate), str(path))


def entry_stems(entry, sample_rate: int = SAMPLE_RATE):
    """Load (voice, accompaniments, srir or None) for a manifest entry."""
    voice = load_audio(entry.voice_path, sample_rate)
    accs = [load_audio(p, sample_rate) for p in entry.accompaniment_paths]
    for a in accs:
        if a.length != voice.length:
            raise DataError(f"{entry.voice_path}: accompaniment length differs from voice")
    srir = load_srir(entry.srir_path, sample_rate) if entry.srir_path else None
    return voice, accs, srir


def full_mixture(voice: AudioBuffer, accs: list[AudioBuffer], srir: Srir | None,
                 alpha: float = 1.0) -> AudioBuffer:
    """Voice + reverb at `alpha` + every accompaniment."""
    total = voice.samples.copy()
    if srir is not None and alpha > 0:
        total += render_reverb(voice, ReverbSpec(srir, alpha)).samples
    for a in accs:
        total += a.samples
    return AudioBuffer(total, voice.sample_rate)
