"""Synthetic stand-ins for dry vocals, accompaniment stems and SRIRs."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .audio import SAMPLE_RATE, AudioBuffer, write_manifest, write_wav
from .detection import DETECTION_THRESHOLD, frame_energy
from .dsp import StftParams, magnitude, stft
from .errors import DataError

# rough vowel formants (Hz) and bandwidths
_VOWELS = [
    ((730, 1090, 2440), (80, 90, 120)),
    ((270, 2290, 3010), (60, 90, 100)),
    ((300, 870, 2240), (60, 80, 100)),
    ((530, 1840, 2480), (70, 90, 120)),
    ((570, 840, 2410), (70, 80, 110)),
]


@dataclass(frozen=True)
class SyntheticFixtureSpec:
    n_train: int = 8
    n_valid: int = 2
    n_test: int = 4
    clip_seconds: float = 4.0
    sample_rate: int = SAMPLE_RATE
    f0_min: float = 110.0
    f0_max: float = 880.0
    note_seconds: tuple[float, float] = (0.15, 0.6)
    gap_seconds: tuple[float, float] = (0.08, 0.35)
    voice_peak: tuple[float, float] = (0.2, 0.4)
    accompaniment_rms: tuple[float, float] = (0.03, 0.08)
    rt60: tuple[float, float] = (0.2, 1.2)
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_valid, self.n_test) < 0:
            raise ValueError("clip counts must be non-negative")
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")


def _envelope(n_on: int, ramp: int) -> np.ndarray:
    env = np.ones(n_on)
    r = min(ramp, n_on // 2)
    if r:
        up = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = up
        env[n_on - r:] = up[::-1]
    return env


def synth_voice(spec: SyntheticFixtureSpec, rng: np.random.Generator):
    """Harmonic 'sung vowel' notes with vibrato, separated by exact silence.

    Returns (signal, notes) where notes is a list of (start, stop) samples.
    """
    sr = spec.sample_rate
    n = int(round(spec.clip_seconds * sr))
    out = np.zeros(n)
    notes = []
    pos = int(rng.uniform(*spec.gap_seconds) * sr)
    t_lo, t_hi = np.log(spec.f0_min), np.log(spec.f0_max)
    while pos < n:
        length = min(int(rng.uniform(*spec.note_seconds) * sr), n - pos)
        if length < int(0.05 * sr):
            break
        t = np.arange(length) / sr
        f0 = np.exp(rng.uniform(t_lo, t_hi))
        vib_rate, vib_depth = rng.uniform(4.5, 6.5), rng.uniform(0.0, 0.03)
        inst_f = f0 * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t))
        phase = 2 * np.pi * np.cumsum(inst_f) / sr
        centers, widths = _VOWELS[int(rng.integers(len(_VOWELS)))]
        note = np.zeros(length)
        for h in range(1, int((sr / 2 - 200) // f0) + 1):
            fh = h * f0
            gain = h ** -1.0 * sum(1.0 / (1.0 + ((fh - c) / w) ** 2) for c, w in zip(centers, widths))
            gain += 0.05 * h ** -1.5
            note += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
        note *= _envelope(length, int(0.015 * sr))
        note *= rng.uniform(*spec.voice_peak) / max(np.max(np.abs(note)), 1e-12)
        out[pos:pos + length] = note
        notes.append((pos, pos + length))
        pos += length + int(rng.uniform(*spec.gap_seconds) * sr)
    return out, notes


def synth_accompaniment(spec: SyntheticFixtureSpec, rng: np.random.Generator) -> np.ndarray:
    """Band-limited noise bed plus decaying percussive clicks."""
    sr = spec.sample_rate
    n = int(round(spec.clip_seconds * sr))
    lo = np.exp(rng.uniform(np.log(60), np.log(400)))
    hi = min(np.exp(rng.uniform(np.log(1500), np.log(8000))), 0.45 * sr)
    sos = butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
    bed = sosfilt(sos, rng.standard_normal(n))
    t = np.arange(n) / sr
    bed *= 1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.2, 1.0) * t + rng.uniform(0, 2 * np.pi))

    clicks = np.zeros(n)
    beat = rng.uniform(0.25, 0.6)
    decay = int(0.08 * sr)
    hit_env = np.exp(-np.arange(decay) / (0.015 * sr))
    for start in np.arange(rng.uniform(0, beat), spec.clip_seconds, beat):
        s = int(start * sr)
        e = min(n, s + decay)
        clicks[s:e] += rng.uniform(0.5, 1.0) * rng.standard_normal(e - s) * hit_env[:e - s]
    bed /= max(np.sqrt(np.mean(bed ** 2)), 1e-12)
    clicks /= max(np.sqrt(np.mean(clicks ** 2)), 1e-12)
    acc = bed + 0.5 * clicks
    return acc * rng.uniform(*spec.accompaniment_rms) / np.sqrt(np.mean(acc ** 2))


def synth_srir(spec: SyntheticFixtureSpec, rng: np.random.Generator) -> np.ndarray:
    """Direct path plus exponentially decaying white-noise tail, peak 1."""
    sr = spec.sample_rate
    rt60 = rng.uniform(*spec.rt60)
    n = int(rt60 * sr)
    t = np.arange(n) / sr
    # amplitude falls 60 dB over rt60
    tail = rng.standard_normal(n) * 10.0 ** (-3.0 * t / rt60)
    predelay = int(rng.uniform(0.005, 0.02) * sr)
    tail[:predelay] = 0.0
    tail *= 1.0 / max(np.sqrt(np.sum(tail ** 2)), 1e-12)  # unit-energy tail
    h = tail
    h[0] = 1.0
    return h / np.max(np.abs(h))


def check_voice_calibration(voice: np.ndarray, notes, params: StftParams = StftParams(),
                            threshold: float = DETECTION_THRESHOLD):
    """Frames centred well inside a note must carry >= 2x the detection threshold."""
    energy = frame_energy(magnitude(stft(AudioBuffer.mono(voice), params)))
    half = params.fft_size // 2
    for start, stop in notes:
        lo = -(-(start + half) // params.hop)
        hi = (stop - half) // params.hop
        if hi >= lo and np.min(energy[lo:hi + 1]) < 2 * threshold:
            raise DataError(f"voiced frames in note {start}:{stop} fall below 2x threshold")


def generate_fixtures(out_dir, spec: SyntheticFixtureSpec = SyntheticFixtureSpec()) -> Path:
    """Write voice / accompaniment / SRIR WAVs and a manifest; returns its path."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create fixture directory {out_dir}: {exc}") from exc
    rows = []
    counts = (("train", spec.n_train), ("valid", spec.n_valid), ("test", spec.n_test))
    clip = 0
    for split, count in counts:
        for _ in range(count):
            rng = np.random.default_rng([spec.seed, clip])
            voice, notes = synth_voice(spec, rng)
            check_voice_calibration(voice, notes)
            accs = [synth_accompaniment(spec, rng) for _ in range(2)]
            srir = synth_srir(spec, rng)
            stem = f"{split}/clip{clip:03d}"
            (out_dir / split).mkdir(exist_ok=True)
            sr = spec.sample_rate
            write_wav(out_dir / f"{stem}_voice.wav", AudioBuffer.mono(voice, sr))
            write_wav(out_dir / f"{stem}_srir.wav", AudioBuffer.mono(srir, sr))
            acc_names = []
            for k, a in enumerate(accs):
                write_wav(out_dir / f"{stem}_acc{k}.wav", AudioBuffer.mono(a, sr))
                acc_names.append(f"{stem}_acc{k}.wav")
            rows.append((f"{stem}_voice.wav", f"{stem}_srir.wav", split, acc_names))
            clip += 1
    manifest = out_dir / "manifest.tsv"
    write_manifest(manifest, rows)
    return manifest
