import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drysvs.audio import AudioBuffer
from drysvs.dsp import ComplexSpectrogram, istft, stft
from drysvs.errors import DataError, ShapeError
from drysvs.metrics import (
    DB_CAP,
    MetricReport,
    MetricRow,
    evaluate_clip,
    read_report_csv,
    sispnr,
    spdr,
)


def orthogonal_noise(s, ratio, rng):
    """E with <E, S> = 0 and ||E||^2 = ratio * ||S||^2 (Gram-Schmidt)."""
    e = rng.standard_normal(s.shape)
    e -= np.vdot(e, s) / np.vdot(s, s) * s
    return e * np.sqrt(ratio * np.vdot(s, s) / np.vdot(e, e))


def test_caps(rng):
    s = rng.random((10, 20))
    assert sispnr(s, s) == DB_CAP
    assert sispnr(2 * s, s) == DB_CAP
    assert spdr(s, s) == DB_CAP
    assert spdr(np.zeros_like(s), s) == 0.0


@pytest.mark.parametrize("ratio,expected", [(1e-1, 10.0), (1e-2, 20.0), (1e-3, 30.0)])
def test_orthogonal_noise_sispnr(rng, ratio, expected):
    s = rng.random((30, 40))
    assert abs(sispnr(s + orthogonal_noise(s, ratio, rng), s) - expected) < 0.01


def test_constructed_spdr(rng):
    s = rng.random((30, 40))
    e = rng.standard_normal(s.shape)
    e *= np.sqrt(0.01 * np.sum(s ** 2) / np.sum(e ** 2))
    assert abs(spdr(s + e, s) - 20.0) < 0.01
    assert spdr(2 * s, s) == 0.0


def test_sispnr_power_of_two_scale_exact(rng):
    s, s_hat = rng.random((8, 9)), rng.random((8, 9))
    for a in (0.25, 0.5, 2.0, 8.0):
        assert sispnr(a * s_hat, s) == sispnr(s_hat, s)
        assert sispnr(s_hat, a * s) == sispnr(s_hat, s)


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.integers(0, 2 ** 32 - 1))
def test_sispnr_scale_invariance(a, b, seed):
    r = np.random.default_rng(seed)
    s, s_hat = r.random((6, 7)), r.random((6, 7))
    base = sispnr(s_hat, s)
    assert abs(sispnr(a * s_hat, s) - base) < 1e-9
    assert abs(sispnr(s_hat, b * s) - base) < 1e-9


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    s, s_hat = r.random((5, 6)), r.random((5, 6))
    perm = r.permutation(30)
    ps, ph = s.ravel()[perm].reshape(5, 6), s_hat.ravel()[perm].reshape(5, 6)
    assert abs(sispnr(ph, ps) - sispnr(s_hat, s)) < 1e-9
    assert abs(spdr(ph, ps) - spdr(s_hat, s)) < 1e-9


def test_errors(rng):
    with pytest.raises(DataError):
        sispnr(rng.random((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        spdr(rng.random((2, 3)), rng.random((2, 2)))


def test_evaluate_clip_identity_and_random_phase(rng):
    x = AudioBuffer.mono(rng.standard_normal(24000) * 0.1)
    row = evaluate_clip(x, x, "same")
    assert row.sispnr == DB_CAP and row.spdr == DB_CAP
    spec = stft(x)
    phase = np.exp(2j * np.pi * rng.random(spec.frames.shape))
    scrambled = istft(ComplexSpectrogram(np.abs(spec.frames) * phase, spec.params, 24000), x.length)
    row = evaluate_clip(scrambled, x, "phase")
    assert np.isfinite(row.sispnr) and np.isfinite(row.spdr)
    assert row.spdr < DB_CAP


def test_evaluate_clip_rate_mismatch():
    with pytest.raises(DataError):
        evaluate_clip(AudioBuffer.mono(np.ones(10), 16000), AudioBuffer.mono(np.ones(10), 24000))


def test_report_mean_and_csv():
    rep = MetricReport("demo", footer=["reference only"])
    for i, (a, b) in enumerate([(1.0, 2.0), (3.0, 5.0), (8.0, -1.0)]):
        rep.add(MetricRow(f"c{i}", a, b))
    summary = rep.summary()
    assert summary["n"] == 3
    assert summary["sispnr_mean"] == pytest.approx(4.0)
    assert summary["spdr_mean"] == pytest.approx(2.0)
    text = rep.to_csv()
    assert "# reference only" in text
    rows = read_report_csv(text)
    assert [r.clip_id for r in rows] == ["c0", "c1", "c2"]
    assert rows[2].spdr == -1.0
