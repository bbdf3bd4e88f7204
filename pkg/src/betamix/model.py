"""Network assembly, training, and checkpointing.

Builds the 1-D convolutional ResNet out of the primitive layers, runs
forward passes that yield beta parameters per crop, wires the beta
negative log-likelihood into backprop, and serializes models to a small
self-describing binary format.

Two presets exist: "paper" is the full architecture (input 2048, seven
residual groups, channel ramp 8..20), "tiny" is a desk-scale sibling
(input 256, two groups) so gradient checks and end-to-end tests finish in
seconds. The preset is always selected explicitly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics as metrics_mod
from . import predict as predict_mod
from .betadist import BetaParams, beta_log_pdf, beta_nll_grad, clip_label
from .data import sample_changepoint_batch, sample_crop_batch, AugmentConfig
from .errors import (
    CorruptCheckpointError,
    TensorShapeError,
    UnsupportedVersionError,
    UsageError,
)
from .nn import (
    AdamState,
    BatchNorm1D,
    Conv1D,
    Dense,
    GlobalMaxPool,
    MaxPool1D,
    Param,
    ReLU,
    Softplus,
    adam_step,
    DEFAULT_DTYPE,
)

CHECKPOINT_MAGIC = b"BGC1"
CHECKPOINT_VERSION = 1

# Head outputs are floored here so the likelihood stays finite even if
# float32 softplus underflows.
HEAD_FLOOR = 1e-6

# Crop draws per training record per epoch; the batch schedule repeats
# this many windows of coverage deterministically every epoch.
CROPS_PER_RECORD = 4


@dataclass(frozen=True)
class ArchitectureSpec:
    """Static description of one network variant.

    stem is (kernel, channels, pool); groups are (blocks, channels, kernel)
    with the first block of every group striding by 2 spatially.
    """

    preset_name: str
    input_length: int
    stem: tuple[int, int, int]
    groups: tuple[tuple[int, int, int], ...]
    head_outputs: int = 2

    def stage_lengths(self) -> list[int]:
        """Spatial size after the stem, after each group, and after the
        global pool: the analytic halving chain."""
        _, _, pool = self.stem
        length = self.input_length  # stem conv: stride 1, same padding
        length = (length - pool) // pool + 1
        sizes = [length]
        for _ in self.groups:
            length = -(-length // 2)
            sizes.append(length)
        sizes.append(1)
        return sizes

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["stem"] = list(self.stem)
        d["groups"] = [list(g) for g in self.groups]
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ArchitectureSpec":
        try:
            return cls(
                preset_name=str(d["preset_name"]),
                input_length=int(d["input_length"]),
                stem=tuple(int(v) for v in d["stem"]),
                groups=tuple(tuple(int(v) for v in g) for g in d["groups"]),
                head_outputs=int(d.get("head_outputs", 2)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpointError(f"bad architecture description: {exc}") from exc


PRESETS = {
    "paper": ArchitectureSpec(
        preset_name="paper",
        input_length=2048,
        stem=(5, 8, 2),
        groups=((2, 8, 3), (2, 8, 3), (2, 12, 3), (2, 12, 3),
                (3, 16, 3), (3, 16, 3), (2, 20, 3)),
    ),
    "tiny": ArchitectureSpec(
        preset_name="tiny",
        input_length=256,
        stem=(5, 4, 2),
        groups=((1, 4, 3), (1, 6, 3)),
    ),
}


class ResidualBlock:
    """conv-BN-ReLU-conv-BN, shortcut add, ReLU.

    When the block strides or changes the channel count, the shortcut goes
    through a kernel-1 projection convolution with the same stride.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, *,
                 rng, bn_momentum: float, bn_eps: float, dtype, name: str):
        self.name = name
        self.conv1 = Conv1D(in_ch, out_ch, kernel, stride, "same",
                            rng=rng, dtype=dtype, name=f"{name}.conv1")
        self.bn1 = BatchNorm1D(out_ch, bn_momentum, bn_eps, dtype=dtype,
                               name=f"{name}.bn1")
        self.relu_inner = ReLU(name=f"{name}.relu1")
        self.conv2 = Conv1D(out_ch, out_ch, kernel, 1, "same",
                            rng=rng, dtype=dtype, name=f"{name}.conv2")
        self.bn2 = BatchNorm1D(out_ch, bn_momentum, bn_eps, dtype=dtype,
                               name=f"{name}.bn2")
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv1D(in_ch, out_ch, 1, stride, "same",
                               rng=rng, dtype=dtype, name=f"{name}.proj")
        else:
            self.proj = None
        self._out_mask = None

    def sublayers(self):
        yield self.conv1
        yield self.bn1
        yield self.conv2
        yield self.bn2
        if self.proj is not None:
            yield self.proj

    def params(self) -> list[Param]:
        out = []
        for layer in self.sublayers():
            out.extend(layer.params())
        return out

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        h = self.conv1.forward(x, train)
        h = self.bn1.forward(h, train)
        h = self.relu_inner.forward(h, train)
        h = self.conv2.forward(h, train)
        h = self.bn2.forward(h, train)
        shortcut = self.proj.forward(x, train) if self.proj is not None else x
        z = h + shortcut
        self._out_mask = z > 0
        return np.maximum(z, 0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._out_mask is None:
            raise ValueError(f"{self.name}: backward called before forward")
        gz = grad_out * self._out_mask
        gh = self.bn2.backward(gz)
        gh = self.conv2.backward(gh)
        gh = self.relu_inner.backward(gh)
        gh = self.bn1.backward(gh)
        dx = self.conv1.backward(gh)
        if self.proj is not None:
            dx = dx + self.proj.backward(gz)
        else:
            dx = dx + gz
        return dx


class Model:
    """The assembled network: stem, residual groups, beta-parameter head."""

    def __init__(self, spec: ArchitectureSpec, seed: int, *,
                 bn_momentum: float = 0.1, bn_eps: float = 1e-5,
                 dtype=DEFAULT_DTYPE):
        self.spec = spec
        self.rng_seed = int(seed)
        self.bn_momentum = float(bn_momentum)
        self.bn_eps = float(bn_eps)
        self.dtype = dtype
        rng = np.random.default_rng(self.rng_seed)

        stem_kernel, stem_ch, stem_pool = spec.stem
        self.stem_conv = Conv1D(1, stem_ch, stem_kernel, 1, "same",
                                rng=rng, dtype=dtype, name="stem.conv")
        self.stem_pool = MaxPool1D(stem_pool, stem_pool, name="stem.pool")
        self.stem_bn = BatchNorm1D(stem_ch, bn_momentum, bn_eps, dtype=dtype,
                                   name="stem.bn")
        self.stem_relu = ReLU(name="stem.relu")

        self.groups: list[list[ResidualBlock]] = []
        in_ch = stem_ch
        for gi, (blocks, channels, kernel) in enumerate(spec.groups):
            group = []
            for bi in range(blocks):
                stride = 2 if bi == 0 else 1
                group.append(ResidualBlock(
                    in_ch, channels, kernel, stride, rng=rng,
                    bn_momentum=bn_momentum, bn_eps=bn_eps, dtype=dtype,
                    name=f"g{gi}.b{bi}"))
                in_ch = channels
            self.groups.append(group)

        self.global_pool = GlobalMaxPool(name="head.gpool")
        self.head_dense = Dense(in_ch, spec.head_outputs, rng=rng, dtype=dtype,
                                name="head.dense")
        self.head_softplus = Softplus(floor=HEAD_FLOOR, name="head.softplus")

        self.adam = AdamState()
        self.last_stage_sizes: list[int] = []

    # -- structure walking -------------------------------------------------

    def _layers_with_params(self):
        yield self.stem_conv
        yield self.stem_bn
        for group in self.groups:
            for block in group:
                yield from block.sublayers()
        yield self.head_dense

    def params(self) -> list[Param]:
        out = []
        for layer in self._layers_with_params():
            out.extend(layer.params())
        return out

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def named_entries(self) -> list[tuple[str, np.ndarray]]:
        """Every trainable array plus BN running statistics, in a stable
        order. The returned arrays are live references."""
        entries = []
        for layer in self._layers_with_params():
            for p in layer.params():
                entries.append((p.name, p.value))
            if isinstance(layer, BatchNorm1D):
                entries.append((f"{layer.name}.running_mean", layer.running_mean))
                entries.append((f"{layer.name}.running_var", layer.running_var))
        return entries

    # -- compute -----------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Run a batch of crops through the network.

        Returns an array of shape (batch, 2): one strictly positive
        (alpha, beta) pair per crop. Records per-stage spatial sizes in
        last_stage_sizes.

        Outputs depend only on the inputs and parameters, so infer-mode
        forwards from concurrent callers are safe; the layer caches they
        clobber are consumed only by backward, which (like training as a
        whole) requires exclusive ownership.
        """
        x = np.ascontiguousarray(np.asarray(x, dtype=self.dtype))
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"expected input of shape (batch, 1, length), got {x.shape}")
        if x.shape[2] != self.spec.input_length:
            raise ValueError(
                f"crop length {x.shape[2]} does not match architecture input "
                f"length {self.spec.input_length}"
            )
        sizes = []
        h = self.stem_conv.forward(x, train)
        h = self.stem_pool.forward(h, train)
        h = self.stem_bn.forward(h, train)
        h = self.stem_relu.forward(h, train)
        sizes.append(h.shape[2])
        for group in self.groups:
            for block in group:
                h = block.forward(h, train)
            sizes.append(h.shape[2])
        h = self.global_pool.forward(h, train)
        sizes.append(h.shape[2])
        out = self.head_dense.forward(h, train)
        out = self.head_softplus.forward(out, train)
        self.last_stage_sizes = sizes
        return out

    def backward(self, grad_out: np.ndarray) -> None:
        g = self.head_softplus.backward(grad_out)
        g = self.head_dense.backward(g)
        g = self.global_pool.backward(g)
        for group in reversed(self.groups):
            for block in reversed(group):
                g = block.backward(g)
        g = self.stem_relu.backward(g)
        g = self.stem_bn.backward(g)
        g = self.stem_pool.backward(g)
        self.stem_conv.backward(g)

    def zero_grads(self) -> None:
        for p in self.params():
            p.zero_grad()


def build_model(preset: str, seed: int, *, bn_momentum: float = 0.1,
                bn_eps: float = 1e-5, dtype=DEFAULT_DTYPE) -> Model:
    """Construct a freshly initialized model from a named preset."""
    if preset not in PRESETS:
        raise UsageError(
            f"unknown architecture preset {preset!r}; available: "
            f"{sorted(PRESETS)}"
        )
    return Model(PRESETS[preset], seed, bn_momentum=bn_momentum, bn_eps=bn_eps,
                 dtype=dtype)


def forward(model: Model, crops: np.ndarray, train: bool = False) -> list[BetaParams]:
    """Forward a batch of crops and wrap each output row as BetaParams."""
    out = model.forward(crops, train)
    return [BetaParams(float(a), float(b)) for a, b in out]


def loss_and_grads(model: Model, crops: np.ndarray, targets, label_eps: float) -> float:
    """Mean beta negative log-likelihood over the batch, with backprop.

    Targets are clipped into [label_eps, 1-label_eps] before evaluating the
    log-density; the analytic (alpha, beta) gradient feeds the network
    backward pass. Parameter gradients accumulate into each Param.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 1 or targets.size == 0:
        raise ValueError("targets must be a non-empty 1-D sequence")
    if targets.size != crops.shape[0]:
        raise ValueError(
            f"{targets.size} targets for {crops.shape[0]} crops"
        )
    out = model.forward(crops, train=True)
    batch = out.shape[0]
    nll_sum = 0.0
    grad = np.empty((batch, 2), dtype=np.float64)
    for i in range(batch):
        p = BetaParams(float(out[i, 0]), float(out[i, 1]))
        t = clip_label(float(targets[i]), label_eps)
        nll_sum += -beta_log_pdf(t, p)
        d_alpha, d_beta = beta_nll_grad(t, p)
        grad[i, 0] = d_alpha / batch
        grad[i, 1] = d_beta / batch
    model.backward(grad.astype(model.dtype))
    return nll_sum / batch


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_macro_f1: float | None = None
    val_misclassified: int | None = None
    val_total: int | None = None


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "epochs": [asdict(e) for e in self.epochs],
        }


def _validate_train_records(records, soft_targets: bool):
    if not records:
        raise UsageError("training split is empty")
    if soft_targets:
        usable = [r for r in records
                  if r.rhythm is not None and len(r.rhythm.changepoints) > 0]
        if not usable:
            raise UsageError(
                "soft-target training needs records with changepoint annotations"
            )
        return usable
    classes = {1 if r.target >= 0.5 else 0 for r in records}
    if classes != {0, 1}:
        raise UsageError(
            "training split must contain both classes for balanced batches"
        )
    return records


def train(model: Model, dataset, config) -> TrainingLog:
    """Run the full optimization loop.

    Each epoch draws ceil(n_train / batch_size) balanced crop batches
    (or changepoint segment batches when config.soft_targets is set),
    applies one Adam step per batch, and closes with a validation pass of
    full-signal predictions. The batch schedule is a deterministic
    function of config.seed and identical in every epoch (classic
    fixed-dataset epochs), so a zero learning rate yields a constant loss
    trace and two runs with the same seed match exactly.
    """
    if config.crop_len != model.spec.input_length:
        raise UsageError(
            f"config crop_len {config.crop_len} does not match model input "
            f"length {model.spec.input_length}"
        )
    train_records = _validate_train_records(dataset.train_records(),
                                            config.soft_targets)
    val_records = dataset.val_records()

    model.adam = AdamState(
        learning_rate=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_eps,
        step_count=model.adam.step_count,
    )
    augment = (AugmentConfig(config.resample_min, config.resample_max)
               if config.augment else None)
    # Each record contributes ~CROPS_PER_RECORD windows per epoch; one
    # window per record is too sparse for stable fits on small datasets.
    steps_per_epoch = max(1, math.ceil(
        CROPS_PER_RECORD * len(train_records) / config.batch_size))

    log = TrainingLog(config=config.to_dict())
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, 1])
        loss_sum = 0.0
        for _ in range(steps_per_epoch):
            if config.soft_targets:
                batch = sample_changepoint_batch(
                    train_records, config.batch_size, config.crop_len, rng)
            else:
                batch = sample_crop_batch(
                    train_records, config.batch_size, config.crop_len,
                    augment, rng)
            loss = loss_and_grads(model, batch.crops, batch.targets,
                                  config.label_eps)
            adam_step(model.params(), model.adam)
            loss_sum += loss
        stats = EpochStats(epoch=epoch, train_loss=loss_sum / steps_per_epoch)
        if val_records:
            preds = [predict_mod.predict(model, r, config.crop_len,
                                         threshold=config.decision_threshold)
                     for r in val_records]
            rep = metrics_mod.report(metrics_mod.confusion(preds))
            stats.val_macro_f1 = rep.macro_f1
            stats.val_misclassified = rep.n_misclassified
            stats.val_total = rep.n_evaluated
        log.epochs.append(stats)
    return log


# -- checkpoint serialization ----------------------------------------------


def save_checkpoint(model: Model, path, config_echo: dict | None = None) -> None:
    """Write the model to the binary checkpoint format (little-endian)."""
    meta = {
        "spec": model.spec.to_json_dict(),
        "bn_momentum": model.bn_momentum,
        "bn_eps": model.bn_eps,
        "step_count": model.adam.step_count,
        "config": config_echo,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    entries = model.named_entries()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(entries)))
        for name, value in entries:
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", value.ndim))
            for dim in value.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptCheckpointError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path) -> Model:
    """Reconstruct a model; the round trip reproduces forward passes bitwise."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CorruptCheckpointError(
                f"not a checkpoint file (magic {magic!r})"
            )
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise UnsupportedVersionError(
                f"checkpoint format version {version} is not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            meta = json.loads(_read_exact(fh, meta_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptCheckpointError(f"unreadable checkpoint header: {exc}") from exc
        spec = ArchitectureSpec.from_json_dict(meta.get("spec", {}))
        model = Model(
            spec,
            seed=0,
            bn_momentum=float(meta.get("bn_momentum", 0.1)),
            bn_eps=float(meta.get("bn_eps", 1e-5)),
        )
        targets = dict(model.named_entries())
        (n_entries,) = struct.unpack("<I", _read_exact(fh, 4, "entry count"))
        seen = set()
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            try:
                name = _read_exact(fh, name_len, "entry name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptCheckpointError(
                    f"unreadable entry name: {exc}") from exc
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(
                f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            payload = _read_exact(
                fh, 4 * int(np.prod(dims, dtype=np.int64)), f"data for {name}")
            if name not in targets:
                raise CorruptCheckpointError(
                    f"checkpoint entry {name!r} does not exist in architecture "
                    f"{spec.preset_name!r}"
                )
            arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
            dest = targets[name]
            if dest.shape != arr.shape:
                raise TensorShapeError(
                    f"entry {name!r} has shape {arr.shape}, architecture "
                    f"expects {dest.shape}"
                )
            dest[...] = arr
            seen.add(name)
        missing = set(targets) - seen
        if missing:
            raise CorruptCheckpointError(
                f"checkpoint is missing entries: {sorted(missing)[:4]}..."
                if len(missing) > 4 else
                f"checkpoint is missing entries: {sorted(missing)}"
            )
    model.adam.step_count = int(meta.get("step_count", 0))
    return model
