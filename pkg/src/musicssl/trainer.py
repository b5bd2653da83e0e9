"""Training loop, learning-rate schedule, run config and checkpoints."""

import json
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import coder
from . import diffcore as dc
from . import diagnostics
from . import model as mdl
from .data import AugmentSpec, batch_views, noise_scale
from .errors import CheckpointError, ConfigError, NumericError, UsageError
from .loss import total_loss

CHECKPOINT_FORMAT = "musicssl-checkpoint"
CHECKPOINT_VERSION = 1
METRIC_KEYS = ("epoch", "lr", "loss_total", "loss_ent", "loss_ent_diag", "loss_ent_offdiag",
               "loss_ti", "marginal_entropy_mean", "marginal_deviation",
               "collapse_fraction", "wall_ms")
METRICS_TAIL = 10

# leading words keep the two kinds of seed sequences disjoint
_SHUFFLE_TAG = 2


@dataclass
class TrainConfig:
    """Every knob of a run. ``lam`` is written as ``lambda`` in config files."""

    batch_size: int = 256
    epochs: int = 100
    warmup_epochs: int = 10
    base_lr: float = 0.1  # plain-SGD scale; 0.6 assumes a layer-wise adaptive optimizer
    final_lr: float = 0.002
    lam: float = 1.0
    weight_decay: float = 1e-6
    momentum: float = 0.9
    optimizer: str = "sgd"
    seed: int = 0
    num_segments: int = 4
    segment_dim: int = 8
    encoder_widths: list = field(default_factory=lambda: [256, 128])
    projector_hidden: list = field(default_factory=lambda: [256])
    aug_noise_std: float = 0.3
    aug_dropout: float = 0.1
    aug_scale_lo: float = 0.8
    aug_scale_hi: float = 1.25
    precision: int = 64

    def __post_init__(self):
        self.encoder_widths = [int(w) for w in self.encoder_widths]
        self.projector_hidden = [int(w) for w in self.projector_hidden]
        self.validate()

    def validate(self):
        seg = self.segment_config  # raises on bad S / D_S
        if self.batch_size < seg.segment_dim:
            raise ConfigError(
                f"batch_size {self.batch_size} < segment_dim {seg.segment_dim}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs and warmup_epochs must be >= 0")
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ConfigError(
                f"warmup_epochs {self.warmup_epochs} must be < epochs {self.epochs}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.base_lr < 0 or self.final_lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rates and weight decay must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.optimizer != "sgd":
            raise ConfigError(f"unknown optimizer {self.optimizer!r} (only 'sgd')")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if not self.encoder_widths or min(self.encoder_widths + self.projector_hidden + [1]) < 1:
            raise ConfigError("encoder_widths must be non-empty positive widths")
        self.augment_spec  # noqa: B018  raises on a bad range

    @property
    def segment_config(self):
        return coder.SegmentConfig(self.num_segments, self.segment_dim)

    @property
    def augment_spec(self):
        return AugmentSpec(self.aug_noise_std, self.aug_dropout, self.aug_scale_lo,
                           self.aug_scale_hi)

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def encoder_spec(self, input_dim):
        return mdl.MlpSpec([input_dim] + self.encoder_widths)

    def projector_spec(self):
        return mdl.MlpSpec([self.encoder_widths[-1]] + self.projector_hidden
                           + [self.segment_config.embed_dim])

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out["lambda" if f.name == "lam" else f.name] = list(value) if isinstance(value, list) else value
        return out

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a flat key/value object")
        known = {("lambda" if f.name == "lam" else f.name): f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {known[key].name: _coerce(key, value, _default_of(known[key]))
                  for key, value in raw.items()}
        return cls(**kwargs)


def _default_of(f):
    return f.default_factory() if callable(f.default_factory) else f.default


def _coerce(key, value, default):
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(f"{key}: expected a list of integers, got {value!r}")
        return list(value)
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{key}: booleans are not accepted")
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, type(default)):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def dump_config(config):
    return json.dumps(config.to_dict(), indent=2) + "\n"


def parse_config(text):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return TrainConfig.from_dict(raw)


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


# -- schedule ----------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    peak_lr: float
    final_lr: float
    warmup_steps: int
    total_steps: int

    @classmethod
    def from_config(cls, config, steps_per_epoch):
        return cls(config.base_lr * config.batch_size / 256.0, config.final_lr,
                   config.warmup_epochs * steps_per_epoch, config.epochs * steps_per_epoch)


def lr_at(step, config, steps_per_epoch):
    """Linear warmup from 0 to ``base_lr * batch_size / 256``, then cosine to ``final_lr``."""
    sched = Schedule.from_config(config, steps_per_epoch)
    if not 0 <= step <= sched.total_steps:
        raise UsageError(f"step {step} outside [0, {sched.total_steps}]")
    if step < sched.warmup_steps:
        return sched.peak_lr * step / sched.warmup_steps
    span = sched.total_steps - sched.warmup_steps
    progress = (step - sched.warmup_steps) / span if span > 0 else 1.0
    return sched.final_lr + (sched.peak_lr - sched.final_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


# -- optimization --------------------------------------------------------------

class SGD:
    """SGD with heavy-ball momentum and decoupled weight decay on weights only."""

    def __init__(self, momentum=0.9, weight_decay=0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def update(self, params, grads, lr):
        for name, value in params.values.items():
            g = grads[name]
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            if lr == 0:
                continue
            if name.endswith(".w") and self.weight_decay:
                value -= lr * (v + self.weight_decay * value)
            else:
                value -= lr * v


def step(params, optimizer, view1, view2, config, lr):
    """One update on a pair of view batches; returns the pre-update ``LossBreakdown``."""
    if len(view1) != config.batch_size or view1.shape != view2.shape:
        raise UsageError(f"batch of {len(view1)} does not match batch_size {config.batch_size}")
    seg = config.segment_config
    tape = dc.Tape()
    leaves = params.bind(tape)
    x1 = dc.Array(view1.astype(config.dtype, copy=False))
    x2 = dc.Array(view2.astype(config.dtype, copy=False))
    p1 = coder.encode(mdl.embed(params, x1, leaves), seg)
    p2 = coder.encode(mdl.embed(params, x2, leaves), seg)
    root, breakdown = total_loss(p1, p2, seg, config.lam)
    if not math.isfinite(breakdown.total):
        raise NumericError(f"non-finite loss: {breakdown}", breakdown)
    grads = dc.backward(tape, root)
    optimizer.update(params, {name: grads[leaf] for name, leaf in leaves.items()}, lr)
    return breakdown


@dataclass
class Checkpoint:
    params: mdl.ModelParams
    config: TrainConfig
    step: int = 0
    metrics_tail: list = field(default_factory=list)


def code_stats(params, samples, config):
    """Epoch-end diagnostics on un-augmented samples."""
    emb = mdl.embed(params, dc.Array(samples.astype(config.dtype, copy=False)))
    code = coder.encode(emb, config.segment_config).data
    _, dev = diagnostics.marginal_uniformity(code)
    return {
        "marginal_entropy_mean": float(diagnostics.marginal_entropy(code).mean()),
        "marginal_deviation": dev,
        "collapse_fraction": float(diagnostics.collapse_fraction(code).max()),
    }


def _mean(values):
    return float(np.mean(values)) if values else float("nan")


def fit(dataset, config, on_epoch=None, record_wall_time=False):
    """Train on ``dataset`` and return the final ``Checkpoint``.

    ``on_epoch`` receives one metrics dict per epoch, keys ``METRIC_KEYS``.
    Batches are drawn without replacement from a seeded per-epoch
    permutation; the trailing partial batch is dropped. Augmentation noise
    is ``aug_noise_std`` times each input dimension's std over the dataset.
    """
    n = len(dataset)
    if n < config.batch_size:
        raise ConfigError(f"dataset of {n} samples is smaller than batch_size {config.batch_size}")
    seg = config.segment_config
    params = mdl.init(config.encoder_spec(dataset.dim), config.projector_spec(), config.seed,
                      embed_dim=seg.embed_dim, dtype=config.dtype)
    optimizer = SGD(config.momentum, config.weight_decay)
    spe = n // config.batch_size
    aug = config.augment_spec
    scale = noise_scale(dataset.samples)
    tail = []
    global_step = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = np.random.default_rng([_SHUFFLE_TAG, config.seed, epoch]).permutation(n)
        parts = {"total": [], "ent": [], "ent_diag": [], "ent_offdiag": [], "ti": []}
        lr = 0.0
        for b in range(spe):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            v1, v2 = batch_views(dataset.samples, idx, aug, config.seed, epoch, scale)
            lr = lr_at(global_step, config, spe)
            bd = step(params, optimizer, v1, v2, config, lr)
            for key in parts:
                parts[key].append(getattr(bd, key))
            global_step += 1
        for name, value in params.values.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"non-finite parameter {name} after epoch {epoch}", bd)
        record = {
            "epoch": epoch,
            "lr": lr,
            "loss_total": _mean(parts["total"]),
            "loss_ent": _mean(parts["ent"]),
            "loss_ent_diag": _mean(parts["ent_diag"]),
            "loss_ent_offdiag": _mean(parts["ent_offdiag"]),
            "loss_ti": _mean(parts["ti"]),
            **code_stats(params, dataset.samples, config),
            "wall_ms": round((time.perf_counter() - started) * 1e3, 3) if record_wall_time else None,
        }
        record = {key: record[key] for key in METRIC_KEYS}
        tail = (tail + [record])[-METRICS_TAIL:]
        if on_epoch is not None:
            on_epoch(record)
    return Checkpoint(params, config, global_step, tail)


def format_metrics(record):
    return json.dumps(record)


# -- checkpoints ---------------------------------------------------------------

def checkpoint_document(ckpt):
    params = ckpt.params
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "seed": params.seed,
        "dtype": str(next(iter(params.values.values())).dtype),
        "encoder_widths": list(params.encoder.widths),
        "projector_widths": list(params.projector.widths),
        "params": {name: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                   for name, v in params.values.items()},
        "metrics_tail": ckpt.metrics_tail,
    }


def save_checkpoint(ckpt, path):
    text = json.dumps(checkpoint_document(ckpt)) + "\n"
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}")
    try:
        config = TrainConfig.from_dict(doc["config"])
        dtype = np.dtype(doc["dtype"])
        values = {}
        for name, entry in doc["params"].items():
            arr = np.array(entry["data"], dtype=dtype)
            values[name] = arr.reshape(entry["shape"])
        params = mdl.ModelParams(mdl.MlpSpec(doc["encoder_widths"]),
                                 mdl.MlpSpec(doc["projector_widths"]), values, doc["seed"])
        expected = mdl.init(params.encoder, params.projector, 0, dtype=dtype)
        for name, arr in expected.values.items():
            if name not in values or values[name].shape != arr.shape:
                raise CheckpointError(f"{path}: parameter {name} missing or misshapen")
        return Checkpoint(params, config, int(doc["step"]), list(doc["metrics_tail"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
