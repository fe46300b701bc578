"""Mel-to-waveform synthesis.

This is the slot a neural vocoder would fill: mel frames in, 24 kHz
waveform out. The implementation inverts the mel projection by least
squares and recovers phase with Griffin-Lim.
"""
from __future__ import annotations

from dataclasses import dataclass

from .audio import AudioBuffer
from .dsp import (
    Frontend,
    MagnitudeSpectrogram,
    MelSpectrogram,
    NormStats,
    griffin_lim,
    log_expand,
    mel_to_linear,
    minmax_denormalize,
)


@dataclass(frozen=True)
class VocoderRequest:
    mel: MelSpectrogram
    norm_stats: NormStats | None = None
    iterations: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.mel.stage == "normalized" and self.norm_stats is None:
            raise ValueError("a normalized mel needs norm_stats to be synthesized")
        if self.mel.stage not in ("normalized", "log"):
            raise ValueError(f"vocoder expects a log or normalized mel, got {self.mel.stage!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def synthesize(req: VocoderRequest, frontend: Frontend = Frontend()) -> AudioBuffer:
    """Output holds (T - 1) * hop samples."""
    mel = req.mel
    if mel.stage == "normalized":
        mel = minmax_denormalize(mel, req.norm_stats)
    linear = log_expand(mel)
    mag = MagnitudeSpectrogram(mel_to_linear(linear, frontend.filterbank), frontend.params,
                               frontend.sample_rate)
    return griffin_lim(mag, req.iterations, req.seed)
