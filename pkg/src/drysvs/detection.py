"""Frame-level singing-voice detection masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import MagnitudeSpectrogram, MelSpectrogram
from .errors import ShapeError

DETECTION_THRESHOLD = 4.0


@dataclass(frozen=True)
class DetectionMask:
    values: np.ndarray  # (T,)
    kind: str = "target"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"detection mask must be 1-D, got shape {v.shape}")
        if self.kind == "target":
            if not np.all((v == 0) | (v == 1)):
                raise ValueError("target detection mask values must be 0 or 1")
        elif self.kind == "predicted":
            if np.any(v < 0) or np.any(v > 1):
                raise ValueError("predicted detection mask values must lie in [0, 1]")
        else:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


def frame_energy(mag: MagnitudeSpectrogram | np.ndarray) -> np.ndarray:
    frames = mag.frames if isinstance(mag, MagnitudeSpectrogram) else np.asarray(mag)
    return np.sum(np.square(frames), axis=-1)


def target_detection_mask(mag: MagnitudeSpectrogram | np.ndarray,
                          threshold: float = DETECTION_THRESHOLD) -> DetectionMask:
    """1 where the frame's summed squared magnitude reaches `threshold`."""
    return DetectionMask((frame_energy(mag) >= threshold).astype(np.float64), "target")


def broadcast_mask(mask: DetectionMask | np.ndarray, n_mels: int = 80) -> np.ndarray:
    values = mask.values if isinstance(mask, DetectionMask) else np.asarray(mask)
    return np.repeat(values[:, None], n_mels, axis=1)


def apply_mask(mel: MelSpectrogram, mask: DetectionMask) -> MelSpectrogram:
    if mel.frames.shape[0] != len(mask):
        raise ShapeError(f"mel has {mel.frames.shape[0]} frames, mask has {len(mask)}")
    return MelSpectrogram(mel.frames * mask.values[:, None], mel.stage)
