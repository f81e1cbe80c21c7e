"""Two-branch quality model: build, pretrain, transfer, finetune, predict.

The model is a small end-to-end ensemble of two convolutional branches
that look at the same crop with different receptive fields: branch A
stacks 3x3 convolutions (micro-structure), branch B opens with a 7x7
and follows with a dilated 3x3 (macro-structure).  Branch features are
fused either by concatenating feature maps and then global-average
pooling ("concat_then_gap") or by pooling each branch and concatenating
the vectors ("gap_then_concat"), then fed to a small fully connected
head with dropout.

The training recipe follows the transfer chain: classification
pretraining on distortion labels (cross entropy over the corpus class
set), head replacement (`transfer_to_regressor`), and regression
fine-tuning against MOS with a selectable loss.  Training samples are
random crops with flip/rotation augmentation only; the crop and augment
operations are referenced through CROP_OP / AUGMENT_OP so tests can
assert structurally that nothing else touches the pixels.

Predictions average eval-mode scores over n random crops (default 10).

Checkpoints serialize config, provenance and named float32 tensors in a
single container with a trailing sha256; `load_model(save_model(m))`
reproduces predictions bitwise.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import raster as raster_mod
from .errors import (
    ChecksumError,
    ConfigError,
    EmptySourceError,
    FormatVersionError,
    ImageTooSmallError,
    ModelStateError,
    RangeError,
    ShapeMismatchError,
)
from .net import (
    Adam,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    LOSS_KINDS,
    LrSchedule,
    ReLU,
    Softmax,
    concat_channels,
    loss_value_and_grad,
    split_channels,
)
from .raster import Raster, load_image
from .rng import RngStream, mix

CROP_OP = raster_mod.random_crop
AUGMENT_OP = raster_mod.augment

FUSE_MODES = ("concat_then_gap", "gap_then_concat")
HEAD_KINDS = ("classifier", "regressor")

DEFAULT_EPOCHS = 20
DEFAULT_BATCH_SIZE = 16
DEFAULT_BASE_LR = 1e-3
DEFAULT_N_CROPS = 10

CHECKPOINT_MAGIC = b"IQEN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ConvSpec:
    """One branch convolution (each is followed by ReLU)."""

    out_channels: int
    kernel_size: int
    stride: int = 1
    dilation: int = 1
    padding: str = "same"

    def to_dict(self):
        return {"out_channels": self.out_channels, "kernel_size": self.kernel_size,
                "stride": self.stride, "dilation": self.dilation, "padding": self.padding}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _out_size(s: int, spec: ConvSpec) -> int:
    ke = (spec.kernel_size - 1) * spec.dilation + 1
    if spec.padding == "same":
        return -(-s // spec.stride)
    if s < ke:
        raise ConfigError(f"spatial size {s} below effective kernel {ke}")
    return (s - ke) // spec.stride + 1


def _branch_geometry(input_size: int, specs) -> tuple:
    # (final spatial size, final channel count)
    s = input_size
    c = None
    for spec in specs:
        s = _out_size(s, spec)
        c = spec.out_channels
    return s, c


@dataclass(frozen=True)
class EnsembleConfig:
    """Architecture description; see the module docstring for the layout."""

    input_size: int = 32
    channels: int = 3
    branch_a: tuple = (ConvSpec(16, 3, stride=2), ConvSpec(32, 3, stride=2))
    branch_b: tuple = (ConvSpec(16, 7, stride=2), ConvSpec(32, 3, stride=2, dilation=2))
    fuse: str = "concat_then_gap"
    head_widths: tuple = (128, 32, 1)
    dropout_early: float = 0.25
    dropout_late: float = 0.5
    n_classes_pretrain: int = 125

    def validate(self, min_head_depth: int = 2) -> None:
        if self.input_size < 8:
            raise ConfigError(f"input_size must be >= 8, got {self.input_size}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.fuse not in FUSE_MODES:
            raise ConfigError(f"fuse must be one of {FUSE_MODES}, got {self.fuse!r}")
        if not self.branch_a and not self.branch_b:
            raise ConfigError("at least one branch must be non-empty")
        if len(self.head_widths) < min_head_depth:
            raise ConfigError(f"head needs >= {min_head_depth} layers, got {self.head_widths}")
        if self.head_widths[-1] != 1:
            raise ConfigError(f"head_widths must end in 1, got {self.head_widths}")
        if any(w < 1 for w in self.head_widths):
            raise ConfigError(f"head widths must be >= 1, got {self.head_widths}")
        for p in (self.dropout_early, self.dropout_late):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"dropout must be in [0, 1), got {p}")
        if self.n_classes_pretrain < 2:
            raise ConfigError(f"n_classes_pretrain must be >= 2, got {self.n_classes_pretrain}")
        if self.branch_a and self.branch_b and self.fuse == "concat_then_gap":
            sa, _ = _branch_geometry(self.input_size, self.branch_a)
            sb, _ = _branch_geometry(self.input_size, self.branch_b)
            if sa != sb:
                raise ConfigError(
                    f"concat_then_gap needs equal branch extents, got {sa} vs {sb}")

    def feature_width(self) -> int:
        width = 0
        for specs in (self.branch_a, self.branch_b):
            if specs:
                width += _branch_geometry(self.input_size, specs)[1]
        return width

    def to_dict(self):
        return {
            "input_size": self.input_size,
            "channels": self.channels,
            "branch_a": [s.to_dict() for s in self.branch_a],
            "branch_b": [s.to_dict() for s in self.branch_b],
            "fuse": self.fuse,
            "head_widths": list(self.head_widths),
            "dropout_early": self.dropout_early,
            "dropout_late": self.dropout_late,
            "n_classes_pretrain": self.n_classes_pretrain,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_size=d["input_size"],
            channels=d["channels"],
            branch_a=tuple(ConvSpec.from_dict(s) for s in d["branch_a"]),
            branch_b=tuple(ConvSpec.from_dict(s) for s in d["branch_b"]),
            fuse=d["fuse"],
            head_widths=tuple(d["head_widths"]),
            dropout_early=d["dropout_early"],
            dropout_late=d["dropout_late"],
            n_classes_pretrain=d["n_classes_pretrain"],
        )


def toy_config(n_classes_pretrain: int = 125, fuse: str = "concat_then_gap") -> EnsembleConfig:
    """The 32x32 default used by tests and the CLI."""
    return EnsembleConfig(fuse=fuse, n_classes_pretrain=n_classes_pretrain)


class EnsembleModel:
    """A built two-branch model with named parameters and provenance."""

    def __init__(self, config: EnsembleConfig, head_kind: str, init_seed: int,
                 dtype=np.float32, min_head_depth: int = 2):
        if head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}, got {head_kind!r}")
        config.validate(min_head_depth=min_head_depth)
        self.config = config
        self.head_kind = head_kind
        self.init_seed = int(init_seed)
        self.dtype = np.dtype(dtype)
        self.provenance = [f"scratch(seed={self.init_seed})"]
        self.class_labels: list | None = None
        self.last_log: list = []
        root = RngStream(mix(self.init_seed, "ensemble-init"))
        self.branch_a = self._build_branch(config.branch_a, root.child("branch_a"))
        self.branch_b = self._build_branch(config.branch_b, root.child("branch_b"))
        self.gap_a = GlobalAvgPool()
        self.gap_b = GlobalAvgPool()
        self.softmax = Softmax()
        self.head = self._build_head(root.child("head"))

    # --- construction -----------------------------------------------------

    def _build_branch(self, specs, rng) -> list:
        layers = []
        in_c = self.config.channels
        for i, spec in enumerate(specs):
            layers.append(Conv2D(in_c, spec.out_channels, spec.kernel_size,
                                 stride=spec.stride, dilation=spec.dilation,
                                 padding=spec.padding, rng=rng.child("conv", i),
                                 dtype=self.dtype))
            layers.append(ReLU())
            in_c = spec.out_channels
        return layers

    def _head_final_width(self) -> int:
        return (self.config.n_classes_pretrain if self.head_kind == "classifier" else 1)

    def _build_head(self, rng) -> list:
        widths = self.config.head_widths
        layers = []
        fan_in = self.config.feature_width()
        for i, w in enumerate(widths[:-1]):
            layers.append(Dense(fan_in, w, rng=rng.child("dense", i), dtype=self.dtype))
            layers.append(ReLU())
            p = self.config.dropout_early if i == 0 else self.config.dropout_late
            layers.append(Dropout(p))
            fan_in = w
        layers.append(self._make_output_layer(fan_in, rng.child("dense", len(widths) - 1)))
        return layers

    def _make_output_layer(self, fan_in: int, rng) -> Dense:
        # near-zero output init keeps the initial softmax uniform, so the
        # first logged cross-entropy sits at ln(n_classes)
        return Dense(fan_in, self._head_final_width(), rng=rng,
                     weight_scale=0.01 / np.sqrt(fan_in), dtype=self.dtype)

    # --- parameter access ---------------------------------------------------

    def _layer_groups(self):
        yield "branch_a", self.branch_a
        yield "branch_b", self.branch_b
        yield "head", self.head

    def parameters(self) -> dict:
        out = {}
        for group, layers in self._layer_groups():
            for i, layer in enumerate(layers):
                for name, arr in layer.params.items():
                    out[f"{group}.{i}.{name}"] = arr
        return out

    def parameter_count(self) -> int:
        return sum(int(a.size) for a in self.parameters().values())

    # --- forward / backward ---------------------------------------------------

    def _check_input(self, x: np.ndarray) -> None:
        c, s = self.config.channels, self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (c, s, s):
            raise ShapeMismatchError(
                f"model expects (N, {c}, {s}, {s}), got {x.shape}")

    def forward(self, x: np.ndarray, mode: str = "eval", rng: RngStream | None = None):
        """Head outputs (logits for a classifier, raw scores for a regressor)."""
        self._check_input(np.asarray(x))
        trace = {"a": [], "b": [], "head": []}
        feats = []
        maps = []
        for key, layers in (("a", self.branch_a), ("b", self.branch_b)):
            if not layers:
                continue
            y = x
            for layer in layers:
                y, cache = layer.forward(y, mode=mode, rng=rng)
                trace[key].append((layer, cache))
            maps.append((key, y))
        if self.config.fuse == "concat_then_gap" and len(maps) == 2:
            merged = concat_channels([m for _, m in maps])
            trace["fuse_sizes"] = [m.shape[1] for _, m in maps]
            feat, gcache = self.gap_a.forward(merged, mode=mode)
            trace["gap"] = [(self.gap_a, gcache)]
        else:
            for key, m in maps:
                gap = self.gap_a if key == "a" else self.gap_b
                f, gcache = gap.forward(m, mode=mode)
                feats.append(f)
                trace.setdefault("gap", []).append((gap, gcache))
            trace["fuse_sizes"] = [f.shape[1] for f in feats]
            feat = concat_channels(feats) if len(feats) > 1 else feats[0]
        y = feat
        for layer in self.head:
            y, cache = layer.forward(y, mode=mode, rng=rng)
            trace["head"].append((layer, cache))
        return y, trace

    def backward(self, trace, grad_out: np.ndarray) -> dict:
        grads = {}
        g = grad_out
        for layer, cache in reversed(trace["head"]):
            g, pg = layer.backward(cache, g)
            self._collect(grads, "head", layer, pg)
        branch_keys = [k for k in ("a", "b") if trace[k]]
        if self.config.fuse == "concat_then_gap" and len(branch_keys) == 2:
            (gap, gcache), = trace["gap"]
            g, _ = gap.backward(gcache, g)
            parts = split_channels(g, trace["fuse_sizes"])
        else:
            parts = (split_channels(g, trace["fuse_sizes"])
                     if len(branch_keys) > 1 else [g])
            parts = [gap.backward(gcache, part)[0]
                     for (gap, gcache), part in zip(trace["gap"], parts)]
        for key, part in zip(branch_keys, parts):
            g = part
            for layer, cache in reversed(trace[key]):
                g, pg = layer.backward(cache, g)
                self._collect(grads, "branch_" + key, layer, pg)
        return grads

    def _collect(self, grads, group, layer, pg):
        layers = dict(self._layer_groups())[group]
        idx = layers.index(layer)
        for name, arr in pg.items():
            grads[f"{group}.{idx}.{name}"] = arr

    # --- prediction -------------------------------------------------------------

    def predict_crops(self, crops: np.ndarray) -> np.ndarray:
        out, _ = self.forward(crops, mode="eval")
        return out[:, 0] if self.head_kind == "regressor" else out

    def predict_proba(self, crops: np.ndarray) -> np.ndarray:
        if self.head_kind != "classifier":
            raise ModelStateError("predict_proba needs a classification head")
        logits, _ = self.forward(crops, mode="eval")
        probs, _ = self.softmax.forward(logits)
        return probs


def build(config: EnsembleConfig, init_seed: int, head_kind: str = "classifier",
          min_head_depth: int = 2) -> EnsembleModel:
    """Deterministically initialized model; same seed gives identical parameters.

    Pass min_head_depth=1 to admit single-layer heads (ablation variants).
    """
    return EnsembleModel(config, head_kind, init_seed, min_head_depth=min_head_depth)


def average_crop_scores(scores) -> float:
    """Mean of per-crop scores (the n-crop prediction reduction)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 1:
        raise ShapeMismatchError("crop scores must be a non-empty 1-D vector")
    return float(scores.mean())


def predict_image(model: EnsembleModel, r: Raster, n_crops: int = DEFAULT_N_CROPS,
                  rng: RngStream | None = None) -> float:
    """Average eval-mode score over n random crops of one image."""
    if model.head_kind != "regressor":
        raise ModelStateError("predict_image needs a regression head")
    if n_crops < 1:
        raise ConfigError(f"n_crops must be >= 1, got {n_crops}")
    s = model.config.input_size
    if r.height < s or r.width < s:
        raise ImageTooSmallError(f"image {r.height}x{r.width} below input size {s}")
    if rng is None:
        rng = RngStream(0)
    img = r.to_rgb() if model.config.channels == 3 and r.channels == 1 else r
    # one forward per crop so each score is independent of batch shape;
    # identical crops then average to exactly the single-crop score
    scores = []
    for _ in range(n_crops):
        crop = CROP_OP(img, s, s, rng).data[None].astype(model.dtype)
        scores.append(float(model.predict_crops(crop)[0]))
    return average_crop_scores(scores)


# --- training ---------------------------------------------------------------------

def _as_model_raster(r: Raster, config: EnsembleConfig) -> Raster:
    if r.channels == config.channels:
        return r
    if config.channels == 3 and r.channels == 1:
        return r.to_rgb()
    raise ShapeMismatchError(f"{r.channels}-channel image vs {config.channels}-channel model")


def _train_batch_array(samples, indices, config, rng, dtype):
    s = config.input_size
    crops = []
    for i in indices:
        crop = CROP_OP(samples[i][0], s, s, rng)
        crops.append(AUGMENT_OP(crop, rng).data)
    return np.stack(crops).astype(dtype)


def _eval_loss(model, samples, targets_of, loss_fn, batch_size):
    # deterministic full-set loss with center crops, dropout off
    s = model.config.input_size
    total, count = 0.0, 0
    for at in range(0, len(samples), batch_size):
        chunk = samples[at:at + batch_size]
        x = np.stack([raster_mod.center_crop(r, s, s).data for r, _ in chunk])
        out, _ = model.forward(x.astype(model.dtype), mode="eval")
        val = loss_fn(model, out, targets_of(chunk))
        total += val * len(chunk)
        count += len(chunk)
    return total / count


def _train_epochs(model, samples, targets_of, loss_fn, epochs, batch_size, rng,
                  schedule, val_fn=None):
    """Shared loop: epoch-0 eval record, then per-epoch training records."""
    if not samples:
        raise EmptySourceError("no training samples")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    schedule = schedule if schedule is not None else LrSchedule(base_lr=DEFAULT_BASE_LR)
    opt = Adam(model.parameters(), schedule)
    log = []

    def record(epoch, lr, train_loss):
        entry = {"epoch": epoch, "lr": lr, "train_loss": float(train_loss),
                 "val_rmse": None}
        if val_fn is not None:
            entry["val_rmse"] = float(val_fn(model))
        log.append(entry)

    record(0, 0.0, _eval_loss(model, samples, targets_of,
                              lambda m, out, t: loss_fn(m, out, t)[0], batch_size))
    n = len(samples)
    for epoch in range(1, epochs + 1):
        ep_rng = rng.child("epoch", epoch)
        order = ep_rng.permutation(n)
        lr = schedule.at_epoch(epoch - 1)
        losses = []
        for at in range(0, n, batch_size):
            idx = order[at:at + batch_size]
            x = _train_batch_array(samples, idx, model.config, ep_rng, model.dtype)
            out, trace = model.forward(x, mode="train", rng=ep_rng)
            chunk = [samples[i] for i in idx]
            val, grad_out = loss_fn(model, out, targets_of(chunk))
            grads = model.backward(trace, grad_out)
            opt.step(grads, epoch - 1)
            losses.append(val)
        record(epoch, lr, float(np.mean(losses)))
    model.last_log = log
    return log


def _corpus_digest(entries) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(f"{e.source}|{e.distorted}|{e.spec.label}|{e.seed}\n".encode())
    return h.hexdigest()[:12]


def pretrain(model: EnsembleModel, corpus, epochs: int = DEFAULT_EPOCHS,
             batch_size: int = DEFAULT_BATCH_SIZE, rng: RngStream | None = None,
             schedule: LrSchedule | None = None) -> EnsembleModel:
    """Distortion-label classification training over a generated corpus."""
    if model.head_kind != "classifier":
        raise ModelStateError("pretrain needs a classification head")
    entries = list(corpus.entries)
    if not entries:
        raise EmptySourceError("corpus has no entries")
    labels = sorted({e.spec.label for e in entries},
                    key=lambda s: tuple(int(p) for p in s.split("_")))
    if len(labels) != model.config.n_classes_pretrain:
        raise ShapeMismatchError(
            f"corpus has {len(labels)} classes but the head is sized for "
            f"{model.config.n_classes_pretrain}")
    class_of = {lab: i for i, lab in enumerate(labels)}
    k = len(labels)
    samples = []
    for e in entries:
        r = _as_model_raster(load_image(Path(corpus.out_dir) / e.distorted), model.config)
        samples.append((r, class_of[e.spec.label]))

    def targets_of(chunk):
        t = np.zeros((len(chunk), k))
        t[np.arange(len(chunk)), [c for _, c in chunk]] = 1.0
        return t

    def loss_fn(m, logits, targets):
        probs, cache = m.softmax.forward(logits)
        val, dprobs = loss_value_and_grad("cross_entropy", probs, targets)
        dlogits, _ = m.softmax.backward(cache, dprobs)
        return val, dlogits

    rng = rng if rng is not None else RngStream(0)
    _train_epochs(model, samples, targets_of, loss_fn, epochs, batch_size,
                  rng.child("pretrain"), schedule)
    model.class_labels = labels
    model.provenance.append(f"pretrained(corpus={_corpus_digest(entries)})")
    return model


def classification_accuracy(model: EnsembleModel, corpus, batch_size: int = 64,
                            orientation_average: bool = False) -> float:
    """Center-crop accuracy over a corpus (for pretraining smoke checks).

    With orientation_average the probabilities are averaged over the
    eight flip/rotation variants the training pipeline draws from, which
    matches the augmented train distribution and steadies the estimate.
    """
    if model.class_labels is None:
        raise ModelStateError("model has no trained class labels")
    class_of = {lab: i for i, lab in enumerate(model.class_labels)}
    s = model.config.input_size
    hits, total = 0, 0
    entries = list(corpus.entries)
    for at in range(0, len(entries), batch_size):
        chunk = entries[at:at + batch_size]
        imgs = [_as_model_raster(load_image(Path(corpus.out_dir) / e.distorted), model.config)
                for e in chunk]
        x = np.stack([raster_mod.center_crop(r, s, s).data for r in imgs]).astype(model.dtype)
        if orientation_average:
            probs = np.zeros((len(chunk), len(class_of)))
            for flipped in (x, x[:, :, :, ::-1]):
                for k in range(4):
                    view = np.ascontiguousarray(np.rot90(flipped, k, axes=(2, 3)))
                    probs += model.predict_proba(view)
            probs /= 8.0
        else:
            probs = model.predict_proba(x)
        pred = probs.argmax(axis=1)
        want = np.array([class_of[e.spec.label] for e in chunk])
        hits += int((pred == want).sum())
        total += len(chunk)
    return hits / total


def transfer_to_regressor(model: EnsembleModel) -> EnsembleModel:
    """Swap the classification layer for a fresh width-1 regression layer."""
    if model.head_kind != "classifier":
        raise ModelStateError("model is already a regressor")
    fan_in = model.head[-1].in_features
    seed = mix(model.init_seed, "transfer", len(model.provenance))
    model.head_kind = "regressor"
    model.head[-1] = model._make_output_layer(fan_in, RngStream(seed))
    model.provenance.append("transfer(regression head)")
    return model


def _manifest_digest(pairs) -> str:
    h = hashlib.sha256()
    for path, score in pairs:
        h.update(f"{path}|{score!r}\n".encode())
    return h.hexdigest()[:12]


def finetune(model: EnsembleModel, pairs, loss: str = "mse",
             epochs: int = DEFAULT_EPOCHS, batch_size: int = DEFAULT_BATCH_SIZE,
             rng: RngStream | None = None, schedule: LrSchedule | None = None,
             validation_pairs=None, huber_delta: float = 1.0) -> EnsembleModel:
    """Regression training against MOS pairs (path or Raster, score in [0, 1])."""
    if model.head_kind != "regressor":
        raise ModelStateError("finetune needs a regression head (transfer first)")
    if loss not in LOSS_KINDS or loss == "cross_entropy":
        raise ConfigError(f"finetune loss must be a regression loss, got {loss!r}")
    pairs = list(pairs)
    if not pairs:
        raise EmptySourceError("manifest has no entries")
    for _, score in pairs:
        if not 0.0 <= float(score) <= 1.0:
            raise RangeError(f"MOS must be normalized to [0, 1], got {score}")

    def resolve(item):
        img, score = item
        r = img if isinstance(img, Raster) else load_image(img)
        return _as_model_raster(r, model.config), float(score)

    samples = [resolve(p) for p in pairs]

    def targets_of(chunk):
        return np.array([[score] for _, score in chunk])

    def loss_fn(m, out, targets):
        return loss_value_and_grad(loss, out, targets, huber_delta=huber_delta)

    val_fn = None
    if validation_pairs:
        vals = [resolve(p) for p in validation_pairs]
        s = model.config.input_size

        def val_fn(m):
            preds, want = [], []
            for r, score in vals:
                x = raster_mod.center_crop(r, s, s).data[None].astype(m.dtype)
                preds.append(float(m.predict_crops(x)[0]))
                want.append(score)
            diffs = np.asarray(preds) - np.asarray(want)
            denom = max(len(vals) - 1, 1)
            return float(np.sqrt(np.sum(diffs ** 2) / denom))

    rng = rng if rng is not None else RngStream(0)
    _train_epochs(model, samples, targets_of, loss_fn, epochs, batch_size,
                  rng.child("finetune"), schedule, val_fn=val_fn)
    model.provenance.append(f"finetuned(manifest={_manifest_digest(pairs)})")
    return model


# --- ablation ------------------------------------------------------------------------

ABLATION_VARIANTS = ("drop_branch_a", "drop_branch_b", "drop_head")


def ablated_config(cfg: EnsembleConfig, variant: str) -> EnsembleConfig:
    """Config for a structural variant (one branch or the deep head removed)."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"variant must be one of {ABLATION_VARIANTS}, got {variant!r}")
    if variant in ("drop_branch_a", "drop_branch_b"):
        if not (cfg.branch_a and cfg.branch_b):
            raise ModelStateError("model is already single-branch")
        return replace(cfg, branch_a=() if variant == "drop_branch_a" else cfg.branch_a,
                       branch_b=() if variant == "drop_branch_b" else cfg.branch_b)
    if len(cfg.head_widths) < 2:
        raise ModelStateError("head is already a single layer")
    return replace(cfg, head_widths=(1,))


def ablate(model: EnsembleModel, variant: str, retain_weights: bool = True) -> EnsembleModel:
    """Structural variant of a trained model (one branch or the head removed)."""
    new_cfg = ablated_config(model.config, variant)
    seed = mix(model.init_seed, "ablate", variant)
    out = EnsembleModel(new_cfg, model.head_kind, seed, dtype=model.dtype,
                        min_head_depth=1)
    if retain_weights:
        # copy surviving tensors; layers with a changed fan-in keep their
        # fresh initialization
        old = model.parameters()
        for name, arr in out.parameters().items():
            if name in old and old[name].shape == arr.shape:
                arr[...] = old[name]
    out.provenance = model.provenance + [f"ablated({variant}, retain={retain_weights})"]
    out.class_labels = model.class_labels
    return out


# --- checkpoints -----------------------------------------------------------------------

def save_model(model: EnsembleModel, path) -> Path:
    """Versioned container: JSON header, float32 tensors, trailing sha256."""
    path = Path(path)
    params = model.parameters()
    names = sorted(params)
    tensors = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape)})
        payload.extend(arr.tobytes())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "head_kind": model.head_kind,
        "init_seed": model.init_seed,
        "provenance": model.provenance,
        "class_labels": model.class_labels,
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = (CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
            + struct.pack("<Q", len(hbytes)) + hbytes + bytes(payload))
    digest = hashlib.sha256(body).digest()
    path.write_bytes(body + digest)
    return path


def load_model(path) -> EnsembleModel:
    raw = Path(path).read_bytes()
    if len(raw) < 48 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatVersionError(f"{path} is not a model checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"checkpoint {path} failed its checksum")
    version = struct.unpack("<I", body[4:8])[0]
    if version > CHECKPOINT_VERSION:
        raise FormatVersionError(
            f"checkpoint {path} has format version {version}, newest supported "
            f"is {CHECKPOINT_VERSION}")
    hlen = struct.unpack("<Q", body[8:16])[0]
    header = json.loads(body[16:16 + hlen].decode("utf-8"))
    config = EnsembleConfig.from_dict(header["config"])
    model = EnsembleModel(config, header["head_kind"], header["init_seed"],
                          min_head_depth=1)
    model.provenance = list(header["provenance"])
    model.class_labels = header["class_labels"]
    params = model.parameters()
    at = 16 + hlen
    for spec in header["tensors"]:
        name, shape = spec["name"], tuple(spec["shape"])
        if name not in params or params[name].shape != shape:
            raise FormatVersionError(f"checkpoint tensor {name} {shape} does not "
                                     f"fit the declared config")
        n = int(np.prod(shape)) * 4
        arr = np.frombuffer(body[at:at + n], dtype="<f4").reshape(shape)
        params[name][...] = arr
        at += n
    return model
