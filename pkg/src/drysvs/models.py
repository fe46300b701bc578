"""Mel-domain ResUNet separator, singing voice detector, loss and checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import ops
from .autodiff.nn import BatchNorm, Conv1d, Conv2d, Module
from .autodiff.optim import Adam, LrSchedule, lr_at
from .autodiff.tensor import Tensor, backprop
from .dsp import NormStats
from .errors import CheckpointError, ConfigError, NumericError, ShapeError

MODES = ("mel_mask", "direct_mel")


@dataclass(frozen=True)
class SeparatorConfig:
    mode: str = "mel_mask"
    encoder_blocks: int = 2
    residual_convs_per_block: int = 4
    convs_per_residual: int = 2
    base_channels: int = 8
    kernel: int = 3
    use_svd: bool = True
    n_mels: int = 80

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown separator mode {self.mode!r}; expected one of {MODES}")
        if self.encoder_blocks < 1 or self.residual_convs_per_block < 1 or self.base_channels < 1:
            raise ConfigError("encoder_blocks, residual_convs_per_block, base_channels must be >= 1")
        if self.convs_per_residual not in (2, 3):
            raise ConfigError("convs_per_residual must be 2 or 3")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.encoder_blocks)]

    @property
    def multiple(self) -> int:
        return 2 ** self.encoder_blocks

    @classmethod
    def toy(cls, **kw) -> "SeparatorConfig":
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "SeparatorConfig":
        return cls(**{"encoder_blocks": 4, "base_channels": 32, **kw})


@dataclass(frozen=True)
class SvdConfig:
    hidden: int = 32
    layers: int = 3
    kernel: int = 3
    aux_bce: bool = False

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.kernel % 2 == 0:
            raise ConfigError("detector needs layers >= 1, hidden >= 1 and an odd kernel")


def _pad_to(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple


class ResidualBlock(Module):
    """(BN -> LeakyReLU -> conv) x n plus identity or 1x1 shortcut."""

    def __init__(self, cin, cout, kernel, n_convs, rng, dtype):
        self.norms = [BatchNorm(c, dtype) for c in [cin] + [cout] * (n_convs - 1)]
        self.convs = [Conv2d(c, cout, kernel, rng, dtype) for c in [cin] + [cout] * (n_convs - 1)]
        self.shortcut = Conv2d(cin, cout, 1, rng, dtype) if cin != cout else None

    def forward(self, x):
        h = x
        for bn, conv in zip(self.norms, self.convs):
            h = conv(ops.leaky_relu(bn(h)))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return ops.add(h, skip)


class ResUNet(Module):
    def __init__(self, config: SeparatorConfig, rng, dtype=np.float32):
        self.config = config
        ch = config.channels
        k, n_res, n_conv = config.kernel, config.residual_convs_per_block, config.convs_per_residual

        def group(cin, cout):
            return [ResidualBlock(cin if i == 0 else cout, cout, k, n_conv, rng, dtype)
                    for i in range(n_res)]

        self.input_conv = Conv2d(1, ch[0], k, rng, dtype)
        self.encoder = []
        prev = ch[0]
        for c in ch:
            self.encoder.extend(group(prev, c))
            prev = c
        self.bottleneck = group(ch[-1], ch[-1])
        self.decoder = []
        below = ch[-1]
        for c in reversed(ch):
            self.decoder.extend(group(below + c, c))
            below = c
        self.output_norm = BatchNorm(ch[0], dtype)
        self.output_conv = Conv2d(ch[0], 1, k, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        """(B, T, M) in [0, 1] -> pre-sigmoid (B, T, M)."""
        cfg = self.config
        b, t, m = x.shape
        tp, mp = _pad_to(t, cfg.multiple), _pad_to(m, cfg.multiple)
        h = ops.pad(x, ((0, 0), (0, tp - t), (0, mp - m))) if (tp, mp) != (t, m) else x
        h = self.input_conv(ops.getitem(h, (..., None)))
        n_res = cfg.residual_convs_per_block
        skips = []
        for i in range(cfg.encoder_blocks):
            for block in self.encoder[i * n_res:(i + 1) * n_res]:
                h = block(h)
            skips.append(h)
            h = ops.avgpool2(h)
        for block in self.bottleneck:
            h = block(h)
        for i in range(cfg.encoder_blocks):
            h = ops.concat([ops.upsample2(h), skips[-1 - i]], axis=-1)
            for block in self.decoder[i * n_res:(i + 1) * n_res]:
                h = block(h)
        h = self.output_conv(ops.leaky_relu(self.output_norm(h)))
        return ops.getitem(h, (slice(None), slice(0, t), slice(0, m), 0))


class VoiceDetector(Module):
    """Stack of same-padded 1-D convolutions over time; mel bins are channels."""

    def __init__(self, config: SvdConfig, n_mels: int, rng, dtype=np.float32):
        widths = [n_mels] + [config.hidden] * (config.layers - 1) + [1]
        self.convs = [Conv1d(a, b, config.kernel, rng, dtype) for a, b in zip(widths, widths[1:])]

    def forward(self, mel: Tensor) -> Tensor:
        """(B, T, M) -> detection probabilities (B, T)."""
        h = mel
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = ops.leaky_relu(h)
        return ops.getitem(ops.sigmoid(h), (..., 0))


@dataclass
class SeparatorOutput:
    mel: Tensor                 # predicted voice mel X_hat, (B, T, M)
    mask: Tensor | None         # mel-domain mask in mask mode
    detection: Tensor | None    # per-frame detector output, (B, T)

    @property
    def masked_mel(self) -> Tensor:
        """Voice mel gated by the detector (the vocoder input)."""
        if self.detection is None:
            return self.mel
        return ops.mul(self.mel, ops.getitem(self.detection, (..., None)))


class SeparationModel(Module):
    def __init__(self, config: SeparatorConfig, svd: SvdConfig = SvdConfig(), seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.config = config
        self.svd_config = svd
        self.separator = ResUNet(config, rng, dtype)
        self.detector = VoiceDetector(svd, config.n_mels, rng, dtype) if config.use_svd else None

    def forward(self, mel_mix) -> SeparatorOutput:
        return separator_forward(self, mel_mix)


def _as_batch(mel_mix, dtype) -> Tensor:
    if isinstance(mel_mix, Tensor):
        x = mel_mix
    else:
        frames = getattr(mel_mix, "frames", mel_mix)
        stage = getattr(mel_mix, "stage", "normalized")
        if stage != "normalized":
            raise ValueError(f"separator input must be a normalized mel, got stage {stage!r}")
        x = Tensor(np.asarray(frames, dtype=dtype))
    if x.ndim == 2:
        x = ops.getitem(x, (None,)) if x.requires_grad else Tensor(x.data[None])
    if x.ndim != 3:
        raise ShapeError(f"separator expects (B, T, M) or (T, M) input, got {x.shape}")
    return x


def separator_forward(model: SeparationModel, mel_mix) -> SeparatorOutput:
    """Predict the voice mel from a normalized mixture mel.

    mel_mask mode multiplies a sigmoid mask into the input; direct_mel mode
    returns the sigmoid output itself.
    """
    dtype = model.separator.input_conv.weight.dtype
    x = _as_batch(mel_mix, dtype)
    if x.shape[-1] != model.config.n_mels:
        raise ShapeError(f"expected {model.config.n_mels} mel bins, got input {x.shape}")
    out = ops.sigmoid(model.separator(x))
    if model.config.mode == "mel_mask":
        mel, mask = ops.mul(out, x), out
    else:
        mel, mask = out, None
    detection = svd_forward(model, mel) if model.detector is not None else None
    return SeparatorOutput(mel, mask, detection)


def svd_forward(model: SeparationModel, mel_voice_hat) -> Tensor:
    if model.detector is None:
        raise ConfigError("model was built without a singing voice detector")
    x = mel_voice_hat if isinstance(mel_voice_hat, Tensor) else Tensor(
        np.asarray(getattr(mel_voice_hat, "frames", mel_voice_hat),
                   dtype=model.separator.input_conv.weight.dtype))
    if x.ndim == 2:
        x = Tensor(x.data[None]) if not x.requires_grad else ops.getitem(x, (None,))
    if x.shape[-1] != model.config.n_mels:
        raise ShapeError(f"detector expects {model.config.n_mels} mel bins, got {x.shape}")
    return model.detector(x)


@dataclass
class LossTerms:
    total: Tensor
    reconstruction: float
    masked: float


def separation_loss(x_hat: Tensor, x, mask_hat: Tensor | None = None, mask_target=None,
                    use_svd: bool = True, aux_bce: bool = False) -> LossTerms:
    """MAE(X_hat, X) + MAE(X_hat * m_hat, X * m_target).

    Masks are per-frame (B, T) and broadcast over mel bins. With
    use_svd=False the second term is dropped.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=x_hat.dtype))
    if x_hat.shape != x.shape:
        raise ShapeError(f"loss shape mismatch: prediction {x_hat.shape} vs target {x.shape}")
    term1 = ops.mae(x_hat, x)
    if not use_svd:
        return LossTerms(term1, term1.item(), 0.0)
    if mask_hat is None or mask_target is None:
        raise ValueError("use_svd=True needs both predicted and target detection masks")
    target = np.asarray(getattr(mask_target, "values", mask_target), dtype=x_hat.dtype)
    if target.shape != x_hat.shape[:-1] or mask_hat.shape != x_hat.shape[:-1]:
        raise ShapeError(
            f"mask shapes {mask_hat.shape} / {target.shape} do not match frames {x_hat.shape[:-1]}")
    masked_hat = ops.mul(x_hat, ops.getitem(mask_hat, (..., None)))
    masked_target = x.data * target[..., None]
    term2 = ops.mae(masked_hat, Tensor(masked_target))
    total = ops.add(term1, term2)
    if aux_bce:
        total = ops.add(total, ops.binary_cross_entropy(mask_hat, target))
    return LossTerms(total, term1.item(), term2.item())


@dataclass
class StepResult:
    loss: float
    reconstruction: float
    masked: float
    lr: float


def train_step(model: SeparationModel, optimizer: Adam, batch, schedule: LrSchedule,
               step: int, lr: float | None = None) -> StepResult:
    """One forward, backprop and Adam update on a batch.

    batch: (mel_mix, mel_voice, detection_target) arrays shaped
    (B, T, M), (B, T, M), (B, T).
    """
    mel_mix, mel_voice, det_target = batch
    model.train()
    model.zero_grad()
    out = separator_forward(model, mel_mix)
    terms = separation_loss(out.mel, mel_voice, out.detection, det_target,
                            use_svd=model.config.use_svd, aux_bce=model.svd_config.aux_bce)
    if not np.isfinite(terms.total.item()):
        raise NumericError(f"non-finite loss at step {step}")
    backprop(terms.total)
    rate = lr_at(schedule, step) if lr is None else lr
    optimizer.step(rate)
    return StepResult(terms.total.item(), terms.reconstruction, terms.masked, rate)


# -- checkpoints -----------------------------------------------------------

MAGIC = b"DSVS1"


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    separator: SeparatorConfig
    svd: SvdConfig
    norm_stats: NormStats | None
    step: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def model_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}


def _dataclass_from(cls, data: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise CheckpointError(f"unknown {cls.__name__} fields in checkpoint: {sorted(unknown)}")
    return cls(**data)


def save_checkpoint(path, model: SeparationModel, norm_stats: NormStats | None = None,
                    step: int = 0, seed: int = 0, optimizer: Adam | None = None,
                    extra: dict | None = None) -> None:
    tensors = {k: t.data for k, t in model.state().items()}
    if optimizer is not None:
        tensors.update(optimizer.state_arrays())
    write_checkpoint(path, Checkpoint(tensors, model.config, model.svd_config, norm_stats,
                                      step, seed, extra or {}))


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    directory, offset, payloads = [], 0, []
    for name, arr in ckpt.tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset,
                          "nbytes": len(blob)})
        payloads.append(blob)
        offset += len(blob)
    stats = None
    if ckpt.norm_stats is not None:
        stats = {"min": repr(float(ckpt.norm_stats.min)), "max": repr(float(ckpt.norm_stats.max))}
    header = {
        "separator": asdict(ckpt.separator),
        "svd": asdict(ckpt.svd),
        "norm_stats": stats,
        "step": int(ckpt.step),
        "seed": int(ckpt.seed),
        "extra": ckpt.extra,
        "tensors": directory,
    }
    text = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<Q", len(text)) + text + b"".join(payloads))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC.decode()!r}")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError(f"{path}: truncated archive (no header length)")
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    if len(raw) < pos + hlen:
        raise CheckpointError(f"{path}: truncated archive (header)")
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    pos += hlen
    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = pos + entry["offset"], entry["nbytes"]
        if start + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated archive at tensor {entry['name']!r}")
        arr = np.frombuffer(raw[start:start + nbytes], dtype="<f4").astype(np.float32)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    stats = header.get("norm_stats")
    return Checkpoint(
        tensors=tensors,
        separator=_dataclass_from(SeparatorConfig, header["separator"]),
        svd=_dataclass_from(SvdConfig, header["svd"]),
        norm_stats=NormStats(float(stats["min"]), float(stats["max"])) if stats else None,
        step=header["step"],
        seed=header["seed"],
        extra=header.get("extra", {}),
    )


def load_into(model: SeparationModel, ckpt: Checkpoint, optimizer: Adam | None = None) -> None:
    """Copy checkpoint tensors into `model` (and optimizer moments if given)."""
    state = model.state()
    stored = ckpt.model_tensors()
    absent = sorted(set(state) - set(stored))
    extra = sorted(set(stored) - set(state))
    if absent or extra:
        raise CheckpointError(
            f"checkpoint does not match model: absent {absent}, unexpected {extra}")
    for name, t in state.items():
        if t.shape != stored[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: model {t.shape}, checkpoint {stored[name].shape}")
        t.data = stored[name].astype(t.dtype, copy=True)
    if optimizer is not None:
        try:
            optimizer.load_state_arrays(ckpt.tensors, ckpt.step)
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks optimizer state {exc}") from None


def model_from_checkpoint(ckpt: Checkpoint) -> SeparationModel:
    model = SeparationModel(ckpt.separator, ckpt.svd, seed=ckpt.seed)
    load_into(model, ckpt)
    return model
