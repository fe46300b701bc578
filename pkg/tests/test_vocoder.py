import numpy as np
import pytest

from drysvs.audio import AudioBuffer
from drysvs.dsp import Frontend, MelSpectrogram, NormStats, log_compress, to_mel
from drysvs.fixtures import SyntheticFixtureSpec, synth_voice
from drysvs.vocoder import VocoderRequest, synthesize

FE = Frontend()
STATS = NormStats(float(np.log(1e-5)), 3.0)


def _tone(freq=440.0, seconds=1.0):
    """Sung-vowel-like harmonic tone."""
    t = np.arange(int(24000 * seconds)) / 24000
    return 0.3 * sum(np.sin(2 * np.pi * freq * h * t) / h ** 1.5 for h in range(1, 6))


def _roundtrip_log_mae(x):
    mel = FE.normalized_mel(AudioBuffer.mono(x), STATS)
    out = synthesize(VocoderRequest(mel, STATS, 32, seed=0), FE)
    ref = FE.log_mel(AudioBuffer.mono(x)).frames
    got = FE.log_mel(out).frames
    t = min(len(ref), len(got))
    return float(np.mean(np.abs(ref[:t] - got[:t]))), out, mel


def test_tone_peak_and_roundtrip():
    mae, out, mel = _roundtrip_log_mae(_tone())
    assert mae < 0.5
    spectrum = np.abs(np.fft.rfft(out.data))
    peak_hz = np.argmax(spectrum) * 24000 / out.length
    assert abs(peak_hz - 440.0) <= 24000 / 1024
    assert out.length == (mel.frames.shape[0] - 1) * 256


def test_voice_fixture_roundtrip():
    voice, _ = synth_voice(SyntheticFixtureSpec(clip_seconds=2.0), np.random.default_rng([0, 1]))
    mae, _, _ = _roundtrip_log_mae(voice)
    assert mae < 0.5


def test_zero_normalized_mel_is_near_silent():
    # denormalizes to the log floor: mel energy 1e-5 per band
    mel = MelSpectrogram(np.zeros((40, 80)), "normalized")
    out = synthesize(VocoderRequest(mel, STATS), FE)
    assert np.sqrt(np.mean(out.data ** 2)) < 1e-3


def test_deterministic_bytes():
    mel = FE.normalized_mel(AudioBuffer.mono(_tone(seconds=0.5)), STATS)
    a = synthesize(VocoderRequest(mel, STATS, 8, seed=4), FE)
    b = synthesize(VocoderRequest(mel, STATS, 8, seed=4), FE)
    assert a.data.tobytes() == b.data.tobytes()


def test_accepts_log_stage():
    logmel = log_compress(to_mel(FE.magnitude(AudioBuffer.mono(_tone(seconds=0.3))), FE.filterbank))
    out = synthesize(VocoderRequest(logmel, iterations=4), FE)
    assert out.length > 0


def test_request_validation():
    mel = MelSpectrogram(np.zeros((3, 80)), "normalized")
    with pytest.raises(ValueError):
        VocoderRequest(mel)
    with pytest.raises(ValueError):
        VocoderRequest(MelSpectrogram(np.zeros((3, 80)), "linear"))
    with pytest.raises(ValueError):
        VocoderRequest(mel, STATS, iterations=0)
