"""Spectral separation metrics: SiSPNR and SPDR, plus report helpers."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer
from .dsp import StftParams, magnitude, stft
from .errors import DataError, ShapeError

DB_CAP = 150.0
_CAP_RATIO = 1e-15


def _frames(s):
    return np.asarray(s.frames if hasattr(s, "frames") else s, dtype=np.float64)


def _check(s_hat, s):
    if s_hat.shape != s.shape:
        raise ShapeError(f"shape mismatch: estimate {s_hat.shape} vs reference {s.shape}")
    ref_energy = np.vdot(s, s).real
    if ref_energy == 0:
        raise DataError("reference spectrogram is all zero")
    return ref_energy


def _ratio_db(signal_energy: float, noise_energy: float) -> float:
    if signal_energy == 0:
        return -DB_CAP
    if noise_energy / signal_energy < _CAP_RATIO:
        return DB_CAP
    return float(min(DB_CAP, 10.0 * np.log10(signal_energy / noise_energy)))


def sispnr(s_hat, s) -> float:
    """Scale-invariant spectrogram-to-noise ratio in dB.

    Projects the estimate onto the reference: s_target = <s_hat, s> s / ||s||^2.
    """
    s_hat, s = _frames(s_hat), _frames(s)
    ref_energy = _check(s_hat, s)
    s_target = (np.vdot(s_hat, s).real / ref_energy) * s
    e_noise = s_hat - s_target
    return _ratio_db(np.vdot(s_target, s_target).real, np.vdot(e_noise, e_noise).real)


def spdr(s_hat, s) -> float:
    """Spectrogram-to-distortion ratio in dB against a single reference."""
    s_hat, s = _frames(s_hat), _frames(s)
    ref_energy = _check(s_hat, s)
    err = s_hat - s
    return _ratio_db(ref_energy, np.vdot(err, err).real)


@dataclass(frozen=True)
class MetricRow:
    clip_id: str
    sispnr: float
    spdr: float


def evaluate_clip(predicted: AudioBuffer, target: AudioBuffer, clip_id: str = "",
                  params: StftParams = StftParams()) -> MetricRow:
    """Both metrics on STFT magnitudes; the shorter signal is zero-padded."""
    if predicted.sample_rate != target.sample_rate:
        raise DataError(
            f"rate mismatch: predicted {predicted.sample_rate} Hz, target {target.sample_rate} Hz")
    n = max(predicted.length, target.length)
    a = np.pad(predicted.data, (0, n - predicted.length))
    b = np.pad(target.data, (0, n - target.length))
    s_hat = magnitude(stft(AudioBuffer.mono(a, predicted.sample_rate), params))
    s = magnitude(stft(AudioBuffer.mono(b, target.sample_rate), params))
    return MetricRow(clip_id, sispnr(s_hat, s), spdr(s_hat, s))


@dataclass
class MetricReport:
    name: str = ""
    rows: list[MetricRow] = field(default_factory=list)
    footer: list[str] = field(default_factory=list)

    def add(self, row: MetricRow):
        self.rows.append(row)

    def summary(self) -> dict:
        si = np.array([r.sispnr for r in self.rows])
        sp = np.array([r.spdr for r in self.rows])
        if not self.rows:
            return {"n": 0}
        return {
            "n": len(self.rows),
            "sispnr_mean": float(si.mean()), "sispnr_std": float(si.std()),
            "spdr_mean": float(sp.mean()), "spdr_std": float(sp.std()),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["clip_id", "sispnr", "spdr"])
        for r in self.rows:
            w.writerow([r.clip_id, f"{r.sispnr:.4f}", f"{r.spdr:.4f}"])
        buf.write("\n# summary\n")
        for k, v in self.summary().items():
            buf.write(f"# {k}={v:.4f}\n" if isinstance(v, float) else f"# {k}={v}\n")
        for line in self.footer:
            buf.write(f"# {line}\n")
        return buf.getvalue()


def read_report_csv(text: str) -> list[MetricRow]:
    rows = []
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        rows.append(MetricRow(rec["clip_id"], float(rec["sispnr"]), float(rec["spdr"])))
    return rows
