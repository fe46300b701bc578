"""Audio buffers, WAV I/O, resampling and dataset manifests."""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    AudioFileNotFound,
    ClippingWarning,
    ManifestError,
    UnsupportedEncodingError,
    WavHeaderError,
    WavPayloadError,
)

SAMPLE_RATE = 24000

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioBuffer:
    """Immutable multichannel signal, samples shaped (channels, length)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError(f"samples must be (channels, length), got shape {s.shape}")
        if not np.issubdtype(s.dtype, np.floating):
            s = s.astype(np.float64)
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        s = np.array(s, copy=True)
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @classmethod
    def mono(cls, samples, sample_rate: int = SAMPLE_RATE) -> "AudioBuffer":
        return cls(np.asarray(samples)[None, :], sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    @property
    def data(self) -> np.ndarray:
        """First channel as a 1-D array (the pipeline is mono)."""
        return self.samples[0]


def _chunks(raw: bytes, path):
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavHeaderError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioBuffer:
    """Read a pcm16 or float32 RIFF/WAVE file.

    Integer samples are scaled by 1/32768, so -32768 maps to -1.0.
    """
    path = Path(path)
    if not path.is_file():
        raise AudioFileNotFound(f"{path}: no such file")
    raw = path.read_bytes()
    fmt = None
    payload = None
    for cid, start, size in _chunks(raw, path):
        if cid == b"fmt ":
            if size < 16 or start + 16 > len(raw):
                raise WavHeaderError(f"{path}: fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", raw[start:start + 16])
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE and size >= 40:
                (sub,) = struct.unpack("<H", raw[start + 24:start + 26])
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise WavHeaderError(f"{path}: data chunk precedes fmt chunk")
            avail = len(raw) - start
            if size > avail:
                raise WavPayloadError(
                    f"{path}: header claims {size} data bytes, only {avail} present")
            payload = raw[start:start + size]
            break
    if fmt is None:
        raise WavHeaderError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavHeaderError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate <= 0:
        raise WavHeaderError(f"{path}: invalid channels={channels} rate={rate}")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), None
    else:
        raise UnsupportedEncodingError(
            f"{path}: unsupported encoding (format tag {tag}, {bits} bits)")
    if block_align != channels * dtype.itemsize:
        raise WavHeaderError(f"{path}: block_align {block_align} inconsistent with format")
    if len(payload) % block_align:
        raise WavPayloadError(f"{path}: payload is not a whole number of frames")

    frames = np.frombuffer(payload, dtype=dtype).reshape(-1, channels).T
    if scale is None:
        samples = frames.astype(np.float32)
    else:
        samples = frames.astype(np.float64) * scale
    return AudioBuffer(samples, rate)


def write_wav(path, buffer: AudioBuffer, encoding: str = "float32") -> None:
    """Write `buffer` as pcm16 (saturating, warns on clipping) or float32."""
    path = Path(path)
    x = buffer.samples
    if encoding == "pcm16":
        scaled = np.round(x * 32768.0)
        if np.any(scaled > 32767) or np.any(scaled < -32768):
            warnings.warn(f"{path}: samples outside [-1, 1) clipped to pcm16 range",
                          ClippingWarning, stacklevel=2)
        data = np.clip(scaled, -32768, 32767).astype("<i2")
        tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        data = x.astype("<f4")
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}; expected 'pcm16' or 'float32'")

    payload = np.ascontiguousarray(data.T).tobytes()
    channels = buffer.channels
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, buffer.sample_rate,
                      buffer.sample_rate * block_align, block_align, bits)
    header = b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE"
    blob = header + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    blob += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        blob += b"\x00"
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


# -- resampling ------------------------------------------------------------

_TAPS = 64
_KAISER_BETA = 8.6


def _phase_filters(up: int, down: int) -> np.ndarray:
    """Windowed-sinc taps for every fractional phase, shape (up, _TAPS).

    Row p interpolates at input position k0 + p/up from samples
    k0 - _TAPS/2 + 1 ... k0 + _TAPS/2. Each row is scaled to unit DC gain.
    """
    cutoff = 0.95 * min(1.0, up / down)
    half = _TAPS // 2
    offsets = np.arange(-half + 1, half + 1)
    frac = np.arange(up)[:, None] / up
    t = frac - offsets[None, :]
    window = np.kaiser(2 * _TAPS + 1, _KAISER_BETA)
    # Evaluate the continuous Kaiser window at t via interpolation.
    w = np.interp(t, np.linspace(-half, half, 2 * _TAPS + 1), window, left=0.0, right=0.0)
    h = cutoff * np.sinc(cutoff * t) * w
    return h / h.sum(axis=1, keepdims=True)


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc.

    Output length is round(length * target_rate / sample_rate).
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    src = buffer.sample_rate
    if target_rate == src:
        return buffer
    g = math.gcd(src, target_rate)
    up, down = target_rate // g, src // g
    n_in = buffer.length
    n_out = int(round(n_in * target_rate / src))
    table = _phase_filters(up, down)
    half = _TAPS // 2

    pos = np.arange(n_out, dtype=np.int64) * down
    base = pos // up
    phase = pos % up
    padded = np.pad(buffer.samples.astype(np.float64), ((0, 0), (half, half)))
    out = np.empty((buffer.channels, n_out))
    idx_off = np.arange(_TAPS) + 1  # padded index of sample base - half + 1 + j
    step = max(1, 2 ** 20 // _TAPS)
    for lo in range(0, n_out, step):
        hi = min(n_out, lo + step)
        idx = base[lo:hi, None] + idx_off[None, :]
        taps = table[phase[lo:hi]]
        for c in range(buffer.channels):
            out[c, lo:hi] = np.einsum("ij,ij->i", padded[c][idx], taps)
    return AudioBuffer(out, target_rate)


def downmix_mono(buffer: AudioBuffer) -> AudioBuffer:
    if buffer.channels == 1:
        return buffer
    return AudioBuffer(buffer.samples.mean(axis=0, keepdims=True), buffer.sample_rate)


def load_audio(path, sample_rate: int = SAMPLE_RATE) -> AudioBuffer:
    """Read, downmix and resample a file into the pipeline's mono format."""
    return resample(downmix_mono(read_wav(path)), sample_rate)


# -- manifests -------------------------------------------------------------

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class ManifestEntry:
    voice_path: Path
    accompaniment_paths: tuple[Path, ...]
    srir_path: Path | None
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)
    root: Path = Path(".")

    def split(self, name: str) -> list[ManifestEntry]:
        if name not in SPLITS:
            raise ManifestError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def __len__(self):
        return len(self.entries)


def load_manifest(path) -> DatasetManifest:
    """Parse a tab-separated manifest.

    Columns: voice_path, srir_path ("-" when absent), split, then one or
    more accompaniment paths. Relative paths resolve against the manifest's
    directory. Blank lines and lines starting with '#' are skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise AudioFileNotFound(f"{path}: no such manifest")
    root = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) < 4:
            raise ManifestError(
                f"expected at least 4 tab-separated fields, got {len(fields)}", lineno)
        voice, srir, split, *accs = fields
        if split not in SPLITS:
            raise ManifestError(f"unknown split tag {split!r}; expected one of {SPLITS}", lineno)
        if not voice or any(not a for a in accs) or not srir:
            raise ManifestError("empty path field", lineno)
        entries.append(ManifestEntry(
            voice_path=root / voice,
            accompaniment_paths=tuple(root / a for a in accs),
            srir_path=None if srir == "-" else root / srir,
            split=split,
        ))
    return DatasetManifest(tuple(entries), root)


def write_manifest(path, rows: Iterable[tuple[str, str | None, str, list[str]]]) -> None:
    """Write (voice, srir or None, split, accompaniments) rows."""
    lines = []
    for voice, srir, split, accs in rows:
        if split not in SPLITS:
            raise ManifestError(f"unknown split tag {split!r}")
        lines.append("\t".join([voice, srir or "-", split, *accs]))
    Path(path).write_text("".join(line + "\n" for line in lines))
