import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from drysvs.audio import AudioBuffer
from drysvs.detection import (
    DETECTION_THRESHOLD,
    DetectionMask,
    apply_mask,
    broadcast_mask,
    target_detection_mask,
)
from drysvs.dsp import MelSpectrogram, magnitude, stft
from drysvs.errors import ShapeError
from drysvs.fixtures import SyntheticFixtureSpec, synth_srir, synth_voice
from drysvs.mixing import ReverbSpec, Srir, render_reverb


def test_threshold_value():
    assert DETECTION_THRESHOLD == 4.0


def test_frame_rules():
    mag = np.zeros((3, 513))
    mag[1, 10] = 3.0        # energy 9
    mag[2, :4] = 1.0        # energy exactly 4
    np.testing.assert_array_equal(target_detection_mask(mag).values, [0, 1, 1])
    just_below = np.zeros((1, 513))
    just_below[0, 0] = np.nextafter(2.0, 0)
    assert target_detection_mask(just_below).values[0] == 0


def test_silent_and_voiced_clip():
    silent = magnitude(stft(AudioBuffer.mono(np.zeros(24000))))
    assert not np.any(target_detection_mask(silent).values)
    voice, _ = synth_voice(SyntheticFixtureSpec(), np.random.default_rng([0, 0]))
    mask = target_detection_mask(magnitude(stft(AudioBuffer.mono(voice)))).values
    assert mask.min() == 0 and mask.max() == 1


@settings(max_examples=50)
@given(arrays(np.float64, (6, 8), elements=st.floats(0, 4)),
       st.sampled_from([0.5, 2.0, 4.0, 0.25]), st.floats(0.1, 20))
def test_scale_threshold_consistency(mag, s, theta):
    # power-of-two scales keep s**2 * energy exact in floating point
    a = target_detection_mask(s * mag, s ** 2 * theta).values
    b = target_detection_mask(mag, theta).values
    np.testing.assert_array_equal(a, b)


def test_dry_has_no_fewer_zero_frames_than_wet():
    spec = SyntheticFixtureSpec()
    r = np.random.default_rng([0, 3])
    voice, _ = synth_voice(spec, r)
    srir = Srir.from_buffer(AudioBuffer.mono(synth_srir(spec, r)))
    dry = AudioBuffer.mono(voice)
    wet = AudioBuffer.mono(voice + render_reverb(dry, ReverbSpec(srir, 1.0)).data)
    zeros_dry = np.sum(target_detection_mask(magnitude(stft(dry))).values == 0)
    zeros_wet = np.sum(target_detection_mask(magnitude(stft(wet))).values == 0)
    assert zeros_dry >= zeros_wet


def test_broadcast():
    np.testing.assert_array_equal(broadcast_mask(DetectionMask(np.array([1.0, 0.0])), 3),
                                  [[1, 1, 1], [0, 0, 0]])
    ones = broadcast_mask(np.ones(5), 80)
    assert ones.shape == (5, 80) and np.all(ones == 1)
    rnd = broadcast_mask(DetectionMask(np.array([0.2, 0.9]), "predicted"), 4)
    assert np.all(rnd.max(axis=1) - rnd.min(axis=1) == 0)


def test_apply_mask(rng):
    mel = MelSpectrogram(rng.random((2, 4)), "normalized")
    np.testing.assert_array_equal(apply_mask(mel, DetectionMask(np.ones(2))).frames, mel.frames)
    assert not np.any(apply_mask(mel, DetectionMask(np.zeros(2))).frames)
    out = apply_mask(mel, DetectionMask(np.array([1.0, 0.0]))).frames
    np.testing.assert_array_equal(out[0], mel.frames[0])
    assert not np.any(out[1])
    with pytest.raises(ShapeError):
        apply_mask(mel, DetectionMask(np.ones(3)))


@given(arrays(np.float64, (5, 3), elements=st.floats(0, 1)),
       arrays(np.float64, 5, elements=st.sampled_from([0.0, 1.0])))
def test_apply_mask_idempotent(frames, values):
    mel = MelSpectrogram(frames, "normalized")
    m = DetectionMask(values)
    once = apply_mask(mel, m)
    np.testing.assert_array_equal(apply_mask(once, m).frames, once.frames)


def test_mask_validation():
    with pytest.raises(ValueError):
        DetectionMask(np.array([0.5]))
    with pytest.raises(ValueError):
        DetectionMask(np.array([1.5]), "predicted")
