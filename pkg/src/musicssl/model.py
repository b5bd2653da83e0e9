"""MLP encoder and projector shared by both views."""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``[in, hidden..., out]``; ReLU between layers, none after the last."""

    widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ConfigError(f"MLP needs >= 2 positive widths, got {self.widths}")
        object.__setattr__(self, "widths", widths)

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    @property
    def num_layers(self):
        return len(self.widths) - 1


class ModelParams:
    """Named weight and bias arrays for the encoder and projector.

    ``values`` maps names like ``"enc.0.w"`` to numpy arrays. ``bind``
    registers them as leaves on a tape for one forward/backward pass; the
    optimizer updates ``values`` in place between passes.
    """

    def __init__(self, encoder, projector, values, seed=None):
        self.encoder = encoder
        self.projector = projector
        self.values = values
        self.seed = seed

    def names(self):
        return list(self.values)

    def bind(self, tape):
        return {name: tape.leaf(value, name=name, dtype=value.dtype)
                for name, value in self.values.items()}

    def constants(self):
        return {name: dc.Array(value) for name, value in self.values.items()}

    def copy(self):
        return ModelParams(self.encoder, self.projector,
                           {k: v.copy() for k, v in self.values.items()}, self.seed)

    def num_parameters(self):
        return int(np.sum([v.size for v in self.values.values()]))

    def __repr__(self):
        return (f"ModelParams(encoder={list(self.encoder.widths)}, "
                f"projector={list(self.projector.widths)}, seed={self.seed})")


def init(encoder_spec, projector_spec, seed, embed_dim=None, dtype=None):
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    if encoder_spec.out_dim != projector_spec.in_dim:
        raise ConfigError(
            f"encoder output {encoder_spec.out_dim} != projector input {projector_spec.in_dim}")
    if embed_dim is not None and projector_spec.out_dim != embed_dim:
        raise ConfigError(
            f"projector output {projector_spec.out_dim} != embedding dim S*D_S = {embed_dim}")
    dtype = dtype or dc.default_dtype()
    rng = np.random.default_rng(seed)
    values = {}
    for prefix, spec in (("enc", encoder_spec), ("proj", projector_spec)):
        for k in range(spec.num_layers):
            fan_in, fan_out = spec.widths[k], spec.widths[k + 1]
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            values[f"{prefix}.{k}.w"] = w.astype(dtype)
            values[f"{prefix}.{k}.b"] = np.zeros(fan_out, dtype=dtype)
    return ModelParams(encoder_spec, projector_spec, values, seed)


def _mlp(x, leaves, prefix, spec):
    x = dc._as_array(x)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ConfigError(f"{prefix}: input shape {x.shape}, expected (N, {spec.in_dim})")
    h = x
    for k in range(spec.num_layers):
        h = dc.add(dc.matmul(h, leaves[f"{prefix}.{k}.w"]), leaves[f"{prefix}.{k}.b"])
        if k < spec.num_layers - 1:
            h = dc.relu(h)
    return h


def encode(params, batch, leaves=None):
    """Representation (encoder output). ``leaves`` comes from ``params.bind``;
    without it the pass runs on constants and records nothing."""
    leaves = leaves if leaves is not None else params.constants()
    return _mlp(batch, leaves, "enc", params.encoder)


def project(params, representation, leaves=None):
    leaves = leaves if leaves is not None else params.constants()
    return _mlp(representation, leaves, "proj", params.projector)


def embed(params, batch, leaves=None):
    leaves = leaves if leaves is not None else params.constants()
    return project(params, encode(params, batch, leaves), leaves)
