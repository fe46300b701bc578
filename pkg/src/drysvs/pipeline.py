"""Training, separation and evaluation on top of the core modules."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, DatasetManifest, load_manifest, read_wav, resample, downmix_mono, write_wav
from .autodiff import Adam, no_grad
from .config import PipelineConfig, dump_config
from .detection import target_detection_mask
from .dsp import (
    MelSpectrogram,
    NormStats,
    compute_norm_stats,
    log_expand,
    minmax_denormalize,
)
from .errors import CheckpointError, ConfigError, DataError
from .metrics import MetricReport, MetricRow, evaluate_clip, sispnr, spdr
from .mixing import entry_stems, mix_audio_augment, full_mixture, segment_random
from .models import (
    SeparationModel,
    load_checkpoint,
    load_into,
    model_from_checkpoint,
    save_checkpoint,
    separator_forward,
    train_step,
)
from .vocoder import VocoderRequest, synthesize

log = logging.getLogger(__name__)

# rng stream ids: data order and SRIR choice draw from independent streams
_DATA_STREAM, _SRIR_STREAM, _EVAL_STREAM = 0, 1, 2

# Reference scores for the mel-mask + detector system and for resynthesis
# from ground-truth mels with a trained neural vocoder; kept as context only.
REFERENCE_FOOTER = [
    "reference scores (neural vocoder, full-scale data; not reproducible here):",
    "  mel mask + detector: SPDR 10.35 dB, SiSPNR 6.43 dB",
    "  neural vocoder on target mel: SPDR 13.41 dB, SiSPNR 10.17 dB",
]


@dataclass
class Corpus:
    """Stems of one split held in memory at the pipeline rate."""

    voices: list
    accompaniments: list
    srirs: list
    names: list

    @classmethod
    def load(cls, manifest: DatasetManifest, split: str, sample_rate: int) -> "Corpus":
        entries = manifest.split(split)
        if not entries:
            raise DataError(f"{split} split is empty")
        voices, accs, srirs, names = [], [], [], []
        for e in entries:
            v, a, s = entry_stems(e, sample_rate)
            voices.append(v)
            accs.append(a)
            srirs.append(s)
            names.append(Path(e.voice_path).stem)
        return cls(voices, accs, srirs, names)

    @property
    def all_accompaniments(self):
        return [a for group in self.accompaniments for a in group]

    @property
    def available_srirs(self):
        return [s for s in self.srirs if s is not None]


@dataclass
class Features:
    mel_mix: np.ndarray      # (T, M) normalized
    mel_voice: np.ndarray    # (T, M) normalized
    detection: np.ndarray    # (T,) target mask


def example_features(y: AudioBuffer, x_d: AudioBuffer, config: PipelineConfig,
                     stats: NormStats) -> Features:
    fe = config.frontend
    mel_mix = fe.normalized_mel(y, stats).frames
    voice_mag = fe.magnitude(x_d)
    from .dsp import log_compress, minmax_normalize, to_mel
    mel_voice = minmax_normalize(log_compress(to_mel(voice_mag, fe.filterbank)), stats).frames
    det = target_detection_mask(voice_mag, config.train.detection_threshold).values
    return Features(mel_mix, mel_voice, det)


def make_batch(corpus: Corpus, config: PipelineConfig, stats: NormStats, step: int):
    """Batch for `step`, a pure function of (seed, step).

    Each example mixes a voice with accompaniments from two other draws
    and a randomly chosen SRIR at a random reverb level.
    """
    seed = config.train.seed
    rng = np.random.default_rng([seed, step, _DATA_STREAM])
    srir_rng = np.random.default_rng([seed, step, _SRIR_STREAM])
    accs = corpus.all_accompaniments
    srirs = corpus.available_srirs
    if len(accs) < 2:
        raise DataError("mix-audio augmentation needs at least two accompaniment stems")
    if not srirs:
        raise DataError("train split has no SRIRs")
    seconds = config.train.segment_seconds
    mixes, voices, dets = [], [], []
    for _ in range(config.train.batch_size):
        vi = int(rng.integers(len(corpus.voices)))
        a1, a2 = rng.choice(len(accs), size=2, replace=False)
        voice = segment_random([corpus.voices[vi]], rng, seconds).buffers[0]
        acc1 = segment_random([accs[int(a1)]], rng, seconds).buffers[0]
        acc2 = segment_random([accs[int(a2)]], rng, seconds).buffers[0]
        srir = srirs[int(srir_rng.integers(len(srirs)))]
        y, x_d, _ = mix_audio_augment(voice, acc1, acc2, srir, rng)
        f = example_features(y, x_d, config, stats)
        mixes.append(f.mel_mix)
        voices.append(f.mel_voice)
        dets.append(f.detection)
    as32 = lambda xs: np.stack(xs).astype(np.float32)  # noqa: E731
    return as32(mixes), as32(voices), as32(dets)


def build_model(config: PipelineConfig) -> SeparationModel:
    return SeparationModel(config.separator, config.svd, seed=config.train.seed)


def _log_header(config: PipelineConfig, stats: NormStats) -> str:
    t, s = config.train, config.separator
    items = {
        "batch_size": t.batch_size, "total_steps": t.total_steps, "seed": t.seed,
        "segment_seconds": t.segment_seconds, "mode": s.mode, "use_svd": s.use_svd,
        "encoder_blocks": s.encoder_blocks, "base_channels": s.base_channels,
        "base_lr": config.schedule.base_lr, "decay": config.schedule.decay,
        "interval": config.schedule.interval, "num_threads": t.num_threads,
        "norm_min": repr(stats.min), "norm_max": repr(stats.max),
    }
    lines = [f"# {k}={v}" for k, v in items.items()]
    lines.append("# step\tlr\tloss\tterm1\tterm2")
    return "\n".join(lines) + "\n"


def read_loss_log(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        step, lr, loss, t1, t2 = line.split("\t")
        rows.append({"step": int(step), "lr": float(lr), "loss": float(loss),
                     "term1": float(t1), "term2": float(t2)})
    return rows


def train(config: PipelineConfig, resume: str | Path | None = None,
          stop_at: int | None = None) -> Path:
    """Run (or resume) training; returns the final checkpoint path.

    Writes <work_dir>/loss.log (append-only), <work_dir>/checkpoint.dsvs and
    a step-numbered checkpoint every checkpoint_interval steps. `stop_at`
    ends the run early at that step count (for interrupted-run testing).
    """
    work = config.work_dir
    work.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(config.paths.manifest)
    corpus = Corpus.load(manifest, "train", config.mel.sample_rate)
    model = build_model(config)
    optimizer = Adam(model.named_parameters())
    log_path = work / "loss.log"

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.separator != config.separator or ckpt.svd != config.svd:
            raise ConfigError("checkpoint configuration does not match the run configuration")
        if ckpt.seed != config.train.seed:
            raise ConfigError(f"checkpoint seed {ckpt.seed} differs from config seed {config.train.seed}")
        load_into(model, ckpt, optimizer)
        stats, start = ckpt.norm_stats, ckpt.step
        with log_path.open("a") as fh:
            fh.write(f"# resumed from step {start}\n")
    else:
        stats = compute_norm_stats(manifest, config.frontend)
        start = 0
        log_path.write_text(_log_header(config, stats))
        (work / "config.ini").write_text(dump_config(config))

    end = config.train.total_steps if stop_at is None else min(stop_at, config.train.total_steps)
    final = work / "checkpoint.dsvs"
    interval = config.train.checkpoint_interval
    extra = {"config": dump_config(config)}
    with log_path.open("a") as fh:
        for step in range(start, end):
            batch = make_batch(corpus, config, stats, step)
            r = train_step(model, optimizer, batch, config.schedule, step)
            fh.write(f"{step + 1}\t{r.lr:.9g}\t{r.loss:.9g}\t{r.reconstruction:.9g}\t{r.masked:.9g}\n")
            if (step + 1) % interval == 0:
                fh.flush()
                save_checkpoint(work / f"checkpoint_{step + 1:07d}.dsvs", model, stats, step + 1,
                                config.train.seed, optimizer, extra)
            if (step + 1) % 100 == 0:
                log.info("step %d loss %.5f", step + 1, r.loss)
    save_checkpoint(final, model, stats, end, config.train.seed, optimizer, extra)
    return final


# -- inference -------------------------------------------------------------

@dataclass
class Separation:
    waveform: AudioBuffer
    mel: MelSpectrogram           # normalized, detector-gated when enabled
    detection: np.ndarray | None  # per-frame detector output


def separate_mel(model: SeparationModel, mel_mix: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Eval-mode forward on one normalized (T, M) mel."""
    model.eval()
    with no_grad():
        out = separator_forward(model, MelSpectrogram(mel_mix.astype(np.float32), "normalized"))
        gated = out.masked_mel.data[0].astype(np.float64)
        det = out.detection.data[0].astype(np.float64) if out.detection is not None else None
    return np.clip(gated, 0.0, 1.0), det


def separate_buffer(model: SeparationModel, stats: NormStats, mixture: AudioBuffer,
                    config: PipelineConfig) -> Separation:
    mel_mix = config.frontend.normalized_mel(mixture, stats).frames
    mel, det = separate_mel(model, mel_mix)
    req = VocoderRequest(MelSpectrogram(mel, "normalized"), stats, config.vocoder.iterations,
                         config.train.seed)
    wave = synthesize(req, config.frontend)
    return Separation(wave, MelSpectrogram(mel, "normalized"), det)


def prepare_input(path, sample_rate: int) -> AudioBuffer:
    buf = downmix_mono(read_wav(path))
    if buf.sample_rate != sample_rate:
        log.warning("%s: resampling %d Hz -> %d Hz", path, buf.sample_rate, sample_rate)
        buf = resample(buf, sample_rate)
    return buf


def separate_file(config: PipelineConfig, checkpoint, input_path, output_path,
                  mel_dump=None) -> Separation:
    ckpt = load_checkpoint(checkpoint)
    if ckpt.norm_stats is None:
        raise CheckpointError(f"{checkpoint}: no normalization statistics stored")
    model = model_from_checkpoint(ckpt)
    mixture = prepare_input(input_path, config.mel.sample_rate)
    result = separate_buffer(model, ckpt.norm_stats, mixture, config)
    write_wav(output_path, result.waveform, "float32")
    if mel_dump is not None:
        np.save(mel_dump, result.mel.frames.astype(np.float32))
    return result


# -- evaluation ------------------------------------------------------------

def test_mixture(corpus: Corpus, index: int, seed: int):
    """Deterministic evaluation mixture for clip `index`: (y, x_d, alpha)."""
    rng = np.random.default_rng([seed, index, _EVAL_STREAM])
    alpha = float(rng.uniform(0.0, 1.0))
    voice = corpus.voices[index]
    y = full_mixture(voice, corpus.accompaniments[index], corpus.srirs[index], alpha)
    return y, voice, alpha


def linear_mel(buffer: AudioBuffer, config: PipelineConfig) -> np.ndarray:
    return log_expand(config.frontend.log_mel(buffer)).frames


def masked_frame_leakage(mel_linear: np.ndarray, target_mask: np.ndarray) -> float:
    """Mean predicted mel power over frames where the dry target is silent."""
    silent = target_mask == 0
    if not np.any(silent):
        return float("nan")
    return float(np.mean(mel_linear[silent] ** 2))


@dataclass
class EvaluationResult:
    reports: dict
    summary: dict


def evaluate(config: PipelineConfig, checkpoint, split: str = "test",
             out_dir=None) -> EvaluationResult:
    """Score separated output, the raw mixture and target resynthesis.

    Waveform reports compare STFT magnitudes against the dry voice; the
    mel reports compare linear mels directly (no vocoder involved).
    """
    ckpt = load_checkpoint(checkpoint)
    model = model_from_checkpoint(ckpt)
    stats = ckpt.norm_stats
    if stats is None:
        raise CheckpointError(f"{checkpoint}: no normalization statistics stored")
    corpus = Corpus.load(load_manifest(config.paths.manifest), split, config.mel.sample_rate)
    names = ("separated", "mixture", "resynth_target", "mel_separated", "mel_mixture")
    reports = {n: MetricReport(n, footer=REFERENCE_FOOTER) for n in names}
    leakage = []
    fe = config.frontend
    for i, name in enumerate(corpus.names):
        y, x_d, alpha = test_mixture(corpus, i, config.train.seed)
        sep = separate_buffer(model, stats, y, config)
        reports["separated"].add(evaluate_clip(sep.waveform, x_d, name, config.stft))
        reports["mixture"].add(evaluate_clip(y, x_d, name, config.stft))
        target_mel = fe.normalized_mel(x_d, stats)
        resynth = synthesize(VocoderRequest(target_mel, stats, config.vocoder.iterations,
                                            config.train.seed), fe)
        reports["resynth_target"].add(evaluate_clip(resynth, x_d, name, config.stft))

        ref = linear_mel(x_d, config)
        sep_lin = log_expand(minmax_denormalize(sep.mel, stats)).frames
        mix_lin = linear_mel(y, config)
        reports["mel_separated"].add(MetricRow(name, sispnr(sep_lin, ref), spdr(sep_lin, ref)))
        reports["mel_mixture"].add(MetricRow(name, sispnr(mix_lin, ref), spdr(mix_lin, ref)))
        mask = target_detection_mask(fe.magnitude(x_d), config.train.detection_threshold).values
        leakage.append(masked_frame_leakage(sep_lin, mask))

    summary = {n: r.summary() for n, r in reports.items()}
    summary["masked_frame_leakage"] = float(np.nanmean(leakage))
    summary["checkpoint_step"] = ckpt.step
    summary["split"] = split
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for n, r in reports.items():
            (out / f"report_{n}.csv").write_text(r.to_csv())
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EvaluationResult(reports, summary)


def describe_checkpoint(path) -> dict:
    ckpt = load_checkpoint(path)
    model_tensors = ckpt.model_tensors()
    return {
        "step": ckpt.step,
        "seed": ckpt.seed,
        "separator": asdict(ckpt.separator),
        "svd": asdict(ckpt.svd),
        "norm_stats": None if ckpt.norm_stats is None else
        {"min": ckpt.norm_stats.min, "max": ckpt.norm_stats.max},
        "n_tensors": len(model_tensors),
        "n_values": int(sum(v.size for v in model_tensors.values())),
        "has_optimizer_state": any(k.startswith("adam.") for k in ckpt.tensors),
    }
