"""Segment-wise softmax codes.

An embedding of width ``D = S * D_S`` is cut into ``S`` contiguous segments
of ``D_S`` units; each segment becomes a probability distribution. The
resulting ``N x S x D_S`` tensor is the code used by the loss and the
diagnostics.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError


@dataclass(frozen=True)
class SegmentConfig:
    num_segments: int
    segment_dim: int

    def __post_init__(self):
        for name in ("num_segments", "segment_dim"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.num_segments < 1:
            raise ConfigError(f"num_segments must be >= 1, got {self.num_segments}")
        if self.segment_dim < 2:
            # a one-unit segment always has probability 1
            raise ConfigError(f"segment_dim must be >= 2, got {self.segment_dim}")

    @property
    def embed_dim(self):
        return self.num_segments * self.segment_dim


def partition(embedding, config):
    """View an ``N x D`` embedding as ``N x S x D_S`` segments."""
    embedding = dc._as_array(embedding)
    if embedding.ndim != 2 or embedding.shape[1] != config.embed_dim:
        raise ConfigError(
            f"embedding shape {embedding.shape} does not match "
            f"S*D_S = {config.num_segments}*{config.segment_dim}")
    n = embedding.shape[0]
    return dc.reshape(embedding, (n, config.num_segments, config.segment_dim))


def flatten(segments):
    """Inverse of ``partition``: ``N x S x D_S`` back to ``N x D``."""
    segments = dc._as_array(segments)
    n, s, ds = segments.shape
    return dc.reshape(segments, (n, s * ds))


def segment_softmax(segments):
    """Softmax over the unit axis of every (sample, segment) pair."""
    segments = dc._as_array(segments)
    if segments.ndim != 3:
        raise ConfigError(f"expected N x S x D_S segments, got shape {segments.shape}")
    return dc.softmax(segments)


def encode(embedding, config):
    return segment_softmax(partition(embedding, config))


def check_code(code, tol=1e-9):
    """Raise ``ConfigError`` unless ``code`` is a valid probability code."""
    values = np.asarray(code.data if isinstance(code, dc.Array) else code)
    if values.ndim != 3:
        raise ConfigError(f"code must be N x S x D_S, got shape {values.shape}")
    if values.min(initial=0.0) < -tol or values.max(initial=0.0) > 1 + tol:
        raise ConfigError("code entries outside [0, 1]")
    sums = values.sum(axis=2)
    if np.abs(sums - 1).max(initial=0.0) > tol:
        raise ConfigError("code segments do not sum to 1")
