import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from drysvs.audio import (
    AudioBuffer,
    downmix_mono,
    load_manifest,
    read_wav,
    resample,
    write_manifest,
    write_wav,
)
from drysvs.errors import (
    AudioFileNotFound,
    ClippingWarning,
    ManifestError,
    UnsupportedEncodingError,
    WavHeaderError,
    WavPayloadError,
)


def _pcm16_file(path, samples, sr=24000, claim_extra=0):
    data = np.asarray(samples, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, sr, sr * 2, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt
    body += b"data" + struct.pack("<I", len(data) + claim_extra) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_pcm16_header_and_scale(tmp_path):
    p = tmp_path / "one.wav"
    samples = np.zeros(24000, dtype=np.int16)
    samples[0] = -32768
    _pcm16_file(p, samples)
    buf = read_wav(p)
    assert (buf.length, buf.sample_rate, buf.channels) == (24000, 24000, 1)
    assert buf.data[0] == -1.0


def test_truncated_payload(tmp_path):
    p = tmp_path / "short.wav"
    _pcm16_file(p, np.zeros(100, dtype=np.int16), claim_extra=400)
    with pytest.raises(WavPayloadError):
        read_wav(p)


def test_bad_header_and_missing_file(tmp_path):
    p = tmp_path / "junk.wav"
    p.write_bytes(b"not a wav file at all")
    with pytest.raises(WavHeaderError):
        read_wav(p)
    with pytest.raises(AudioFileNotFound):
        read_wav(tmp_path / "absent.wav")


def test_unsupported_encoding(tmp_path):
    p = tmp_path / "u8.wav"
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 4) + bytes(4)
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedEncodingError):
        read_wav(p)
    with pytest.raises(ValueError):
        write_wav(tmp_path / "x.wav", AudioBuffer.mono(np.zeros(4)), encoding="mp3")


def test_float32_round_trip_exact(tmp_path, rng):
    x = rng.uniform(-1, 1, (2, 999)).astype(np.float32)
    buf = AudioBuffer(x, 16000)
    write_wav(tmp_path / "f.wav", buf)
    back = read_wav(tmp_path / "f.wav")
    assert back.sample_rate == 16000 and back.channels == 2
    assert np.max(np.abs(back.samples - x)) == 0


def test_pcm16_round_trip_quantization(tmp_path, rng):
    x = rng.uniform(-0.99, 0.99, 5000)
    write_wav(tmp_path / "p.wav", AudioBuffer.mono(x), encoding="pcm16")
    back = read_wav(tmp_path / "p.wav")
    assert np.max(np.abs(back.data - x)) <= 1 / 32768


def test_pcm16_clipping_warns(tmp_path):
    with pytest.warns(ClippingWarning):
        write_wav(tmp_path / "c.wav", AudioBuffer.mono(np.array([1.5, -1.5, 0.0])), encoding="pcm16")
    back = read_wav(tmp_path / "c.wav")
    assert back.data[0] == 32767 / 32768
    assert back.data[1] == -1.0


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 200)),
              elements=st.floats(-4, 4, width=32)),
       st.sampled_from([8000, 22050, 24000, 48000]))
def test_float32_write_read_identity(tmp_path_factory, samples, sr):
    path = tmp_path_factory.mktemp("wav") / "h.wav"
    write_wav(path, AudioBuffer(samples, sr))
    back = read_wav(path)
    assert back.sample_rate == sr and back.channels == samples.shape[0]
    np.testing.assert_array_equal(back.samples, samples)


def test_resample_lengths_and_identity(rng):
    buf = AudioBuffer.mono(rng.standard_normal(48000), 48000)
    assert resample(buf, 24000).length == 24000
    same = AudioBuffer.mono(rng.standard_normal(100), 24000)
    out = resample(same, 24000)
    np.testing.assert_array_equal(out.samples, same.samples)


def _interior_snr(src_rate, dst_rate, freq=1000.0):
    n = src_rate
    x = np.sin(2 * np.pi * freq * np.arange(n) / src_rate)
    y = resample(AudioBuffer.mono(x, src_rate), dst_rate).data
    ref = np.sin(2 * np.pi * freq * np.arange(y.size) / dst_rate)
    inner = slice(200, y.size - 200)
    err = y[inner] - ref[inner]
    return 10 * np.log10(np.sum(ref[inner] ** 2) / np.sum(err ** 2))


def test_resample_sine_snr():
    # analytic sine oracle; measured ~97 dB for 44.1k -> 24k
    assert _interior_snr(44100, 24000) > 60
    assert _interior_snr(16000, 24000) > 60


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 32 - 1))
def test_resample_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x, z = r.standard_normal(700), r.standard_normal(700)
    f = lambda s: resample(AudioBuffer.mono(s, 44100), 24000).data  # noqa: E731
    np.testing.assert_allclose(f(a * x + b * z), a * f(x) + b * f(z), atol=1e-6)


def test_downmix_cases(rng):
    ch = rng.standard_normal(50)
    np.testing.assert_allclose(downmix_mono(AudioBuffer(np.stack([ch, ch]), 24000)).data, ch)
    assert np.all(downmix_mono(AudioBuffer(np.stack([ch, -ch]), 24000)).data == 0)
    mono = AudioBuffer.mono(ch)
    assert downmix_mono(mono) is mono or np.array_equal(downmix_mono(mono).samples, mono.samples)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 64)),
              elements=st.floats(-10, 10)))
def test_downmix_preserves_dc(samples):
    out = downmix_mono(AudioBuffer(samples, 24000))
    assert out.channels == 1
    assert np.isclose(out.data.mean(), samples.mean(axis=1).mean(), atol=1e-12)


def test_manifest_parsing(tmp_path):
    rows = [("v1.wav", "r1.wav", "train", ["a.wav", "b.wav"]),
            ("v2.wav", None, "valid", ["c.wav"]),
            ("v3.wav", "r3.wav", "test", ["d.wav"])]
    p = tmp_path / "m.tsv"
    write_manifest(p, rows)
    m = load_manifest(p)
    assert len(m) == 3
    assert m.entries[1].srir_path is None
    assert m.entries[0].accompaniment_paths == (tmp_path / "a.wav", tmp_path / "b.wav")
    assert [e.split for e in m.split("test")] == ["test"]


def test_manifest_bad_split_names_line(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("# comment\nv.wav\t-\ttrain\ta.wav\nv.wav\t-\tdev\ta.wav\n")
    with pytest.raises(ManifestError, match=r"line 3.*'dev'"):
        load_manifest(p)


def test_manifest_empty_file(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("")
    assert len(load_manifest(p)) == 0


def test_audio_buffer_validation():
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros((1, 4)), 0)
    with pytest.raises(ValueError):
        AudioBuffer(np.array([[np.nan]]), 24000)
    buf = AudioBuffer.mono(np.zeros(3))
    with pytest.raises(ValueError):
        buf.samples[0, 0] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert buf.duration == 3 / 24000
