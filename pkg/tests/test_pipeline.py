import json

import numpy as np
import pytest

from drysvs import pipeline
from drysvs.audio import AudioBuffer, load_manifest, read_wav, write_wav
from drysvs.config import load_config
from drysvs.dsp import NormStats
from drysvs.errors import ConfigError, DataError
from drysvs.metrics import read_report_csv
from drysvs.models import load_checkpoint


def _config(manifest, work, *extra):
    return load_config(overrides=[f"paths.manifest={manifest}", f"paths.work_dir={work}",
                                  "train.total_steps=6", "train.checkpoint_interval=3",
                                  "train.batch_size=2", "vocoder.iterations=4", *extra])


@pytest.fixture(scope="module")
def trained(small_fixtures, tmp_path_factory):
    work = tmp_path_factory.mktemp("run")
    cfg = _config(small_fixtures, work)
    return cfg, pipeline.train(cfg)


def test_batches_are_pure_functions_of_step(small_fixtures):
    cfg = _config(small_fixtures, "unused")
    corpus = pipeline.Corpus.load(load_manifest(small_fixtures), "train", 24000)
    stats = NormStats(-11.5, 2.0)
    a = pipeline.make_batch(corpus, cfg, stats, 5)
    b = pipeline.make_batch(corpus, cfg, stats, 5)
    c = pipeline.make_batch(corpus, cfg, stats, 6)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    assert a[0].tobytes() != c[0].tobytes()
    mix, voice, det = a
    frames = 1 + int(0.5 * 24000) // 256
    assert mix.shape == voice.shape == (2, frames, 80) and det.shape == (2, frames)
    assert mix.dtype == np.float32
    assert set(np.unique(det)) <= {0.0, 1.0}


def test_train_outputs(trained):
    cfg, final = trained
    log_text = (cfg.work_dir / "loss.log").read_text()
    assert "# batch_size=2" in log_text
    rows = pipeline.read_loss_log(cfg.work_dir / "loss.log")
    assert [r["step"] for r in rows] == list(range(1, 7))
    assert all(np.isfinite(r["loss"]) for r in rows)
    assert (cfg.work_dir / "checkpoint_0000003.dsvs").is_file()
    assert load_checkpoint(final).step == 6


def test_full_preset_echoes_batch_size(small_fixtures, tmp_path):
    cfg = load_config(preset="full", overrides=[
        f"paths.manifest={small_fixtures}", f"paths.work_dir={tmp_path}",
        "train.total_steps=1", "separator.encoder_blocks=2", "separator.base_channels=4",
        "train.segment_seconds=0.25"])
    pipeline.train(cfg)
    assert "# batch_size=4" in (tmp_path / "loss.log").read_text().splitlines()


def test_resume_matches_uninterrupted(small_fixtures, trained, tmp_path):
    cfg, _ = trained
    resumed = _config(small_fixtures, tmp_path)
    pipeline.train(resumed, resume=cfg.work_dir / "checkpoint_0000003.dsvs")
    full = {r["step"]: r for r in pipeline.read_loss_log(cfg.work_dir / "loss.log")}
    again = pipeline.read_loss_log(tmp_path / "loss.log")
    assert [r["step"] for r in again] == [4, 5, 6]
    for r in again:
        assert r == full[r["step"]]


def test_resume_config_mismatch(small_fixtures, trained, tmp_path):
    cfg, final = trained
    other = _config(small_fixtures, tmp_path, "separator.base_channels=4")
    with pytest.raises(ConfigError):
        pipeline.train(other, resume=final)


def test_train_needs_train_split(tmp_path, small_fixtures):
    m = tmp_path / "m.tsv"
    m.write_text("\n".join(line for line in small_fixtures.read_text().splitlines()
                           if "\ttrain\t" not in line) + "\n")
    # the empty train split is reported before any audio is read
    with pytest.raises(DataError):
        pipeline.train(_config(m, tmp_path / "w"))


def test_separate_silence_and_length(trained, tmp_path):
    cfg, final = trained
    silent = tmp_path / "silent.wav"
    write_wav(silent, AudioBuffer.mono(np.zeros(24000)))
    out = tmp_path / "out.wav"
    pipeline.separate_file(cfg, final, silent, out, mel_dump=tmp_path / "m.npy")
    y = read_wav(out)
    assert np.sqrt(np.mean(y.data ** 2)) < 1e-3
    assert abs(y.length - 24000) <= 256
    mel = np.load(tmp_path / "m.npy")
    assert mel.shape == (1 + 24000 // 256, 80)


def test_separate_resamples_other_rates(trained, tmp_path, caplog):
    cfg, final = trained
    src = tmp_path / "in16k.wav"
    t = np.arange(16000) / 16000
    write_wav(src, AudioBuffer.mono(0.1 * np.sin(2 * np.pi * 300 * t), 16000))
    with caplog.at_level("WARNING"):
        pipeline.separate_file(cfg, final, src, tmp_path / "o.wav")
    assert "resampling" in caplog.text
    assert read_wav(tmp_path / "o.wav").sample_rate == 24000


def test_evaluate_reports(trained, tmp_path):
    cfg, final = trained
    result = pipeline.evaluate(cfg, final, "test", tmp_path)
    n_test = len(load_manifest(cfg.paths.manifest).split("test"))
    for name in ("separated", "mixture", "resynth_target", "mel_separated", "mel_mixture"):
        text = (tmp_path / f"report_{name}.csv").read_text()
        assert len(read_report_csv(text)) == n_test
        assert "SPDR 10.35 dB, SiSPNR 6.43 dB" in text
        assert "not reproducible" in text
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["checkpoint_step"] == 6
    resynth, mixture = result.summary["resynth_target"], result.summary["mixture"]
    assert resynth["sispnr_mean"] > mixture["sispnr_mean"]
    assert resynth["spdr_mean"] > mixture["spdr_mean"]


def test_leakage_measure():
    mel = np.array([[1.0, 1.0], [2.0, 0.0], [3.0, 3.0]])
    assert pipeline.masked_frame_leakage(mel, np.array([1, 0, 1])) == 2.0
    assert np.isnan(pipeline.masked_frame_leakage(mel, np.ones(3)))


def test_describe_checkpoint(trained):
    _, final = trained
    info = pipeline.describe_checkpoint(final)
    assert info["step"] == 6 and info["has_optimizer_state"]
    assert info["separator"]["mode"] == "mel_mask"
