"""Masked joint-entropy loss and transform-invariance term.

Given two views' codes ``p1, p2`` (``N x S x D_S``) the empirical joint

    P[(s', d'), (s'', d'')] = 1/N * sum_i p1_i(s', d') * p2_i(s'', d'')

is a ``D x D`` block matrix. The entropy term sums ``P log P`` over the
diagonal entries and over every off-diagonal block, divided by ``S**2``.
The invariance term is ``-mean_{i,s} log <p1_i(s, :), p2_i(s, :)>``.
Both logs clamp their argument at ``EPS``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .coder import SegmentConfig
from .errors import ConfigError, UsageError

EPS = dc.EPS


@dataclass
class LossBreakdown:
    """Scalar loss values of one evaluation.

    ``ent`` is the training entropy term (``1/S**2`` over selected
    entries). ``ent_diag`` and ``ent_offdiag`` use per-part normalizations
    ``1/S`` and ``1/(S(S-1))`` and are reported for analysis only;
    ``ent_total`` is their sum.
    """

    ent: float
    ent_diag: float
    ent_offdiag: float
    ent_total: float
    ti: float
    total: float
    lam: float

    def as_dict(self):
        return asdict(self)


def _check_pair(p1, p2):
    p1, p2 = dc._as_array(p1), dc._as_array(p2)
    if p1.ndim != 3 or p1.shape != p2.shape:
        raise UsageError(f"code shapes differ or are not N x S x D_S: {p1.shape} vs {p2.shape}")
    return p1, p2


def config_of(code):
    return SegmentConfig(code.shape[1], code.shape[2])


def joint_distribution(p1, p2):
    """``D x D`` empirical joint of the two views over the batch."""
    p1, p2 = _check_pair(p1, p2)
    n, s, ds = p1.shape
    f1 = dc.reshape(p1, (n, s * ds))
    f2 = dc.reshape(p2, (n, s * ds))
    return dc.scale(dc.matmul(dc.transpose(f1), f2), 1.0 / n)


def selection_mask(config):
    """Boolean ``D x D`` mask: the main diagonal plus all off-diagonal blocks."""
    seg = np.repeat(np.arange(config.num_segments), config.segment_dim)
    return (seg[:, None] != seg[None, :]) | np.eye(config.embed_dim, dtype=bool)


def mask_count(config):
    s, ds = config.num_segments, config.segment_dim
    return s * ds + s * (s - 1) * ds * ds


def entropy_parts(joint, config, eps=EPS):
    """Per-part values (diagonal with ``1/S``, off-diagonal blocks with ``1/(S(S-1))``)."""
    p = np.asarray(joint.data if isinstance(joint, dc.Array) else joint, dtype=np.float64)
    plogp = p * np.log(np.maximum(p, eps))
    s = config.num_segments
    seg = np.repeat(np.arange(s), config.segment_dim)
    off = seg[:, None] != seg[None, :]
    diag = float(np.trace(plogp)) / s
    offdiag = float(plogp[off].sum()) / (s * (s - 1)) if s > 1 else 0.0
    return diag, offdiag


def entropy_loss(joint, mask, config, fused=True):
    """Training entropy term, ``1/S**2 * sum_selected P log P``.

    ``fused=False`` composes the same value from generic primitives
    (log, mul, sum); it exists as a cross-check for the fused kernel.
    """
    joint = dc._as_array(joint)
    mask = np.asarray(mask, dtype=bool)
    d = config.embed_dim
    if joint.shape != (d, d) or mask.shape != (d, d):
        raise ConfigError(f"joint {joint.shape} / mask {mask.shape} do not match D={d}")
    norm = 1.0 / config.num_segments ** 2
    if fused:
        return dc.scale(dc.masked_xlogx_sum(joint, mask), norm)
    plogp = dc.mul(joint, dc.log(joint))
    return dc.scale(dc.sum(dc.mul(plogp, mask.astype(joint.data.dtype))), norm)


def ti_loss(p1, p2):
    """``-mean log <p1, p2>`` over samples and segments; always >= 0."""
    p1, p2 = _check_pair(p1, p2)
    inner = dc.sum(dc.mul(p1, p2), axis=2)
    return dc.scale(dc.mean(dc.log(inner)), -1.0)


def total_loss(p1, p2, config=None, lam=1.0, fused=True):
    """Return ``(root, breakdown)``; ``root`` is the scalar to differentiate."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    p1, p2 = _check_pair(p1, p2)
    if config is None:
        config = config_of(p1)
    elif (config.num_segments, config.segment_dim) != p1.shape[1:]:
        raise UsageError(f"codes of shape {p1.shape} do not match {config}")
    joint = joint_distribution(p1, p2)
    ent = entropy_loss(joint, selection_mask(config), config, fused=fused)
    ti = ti_loss(p1, p2)
    root = dc.add(ent, dc.scale(ti, lam)) if lam else ent
    diag, offdiag = entropy_parts(joint, config)
    breakdown = LossBreakdown(
        ent=float(ent.data),
        ent_diag=diag,
        ent_offdiag=offdiag,
        ent_total=diag + offdiag,
        ti=float(ti.data),
        total=float(root.data),
        lam=float(lam),
    )
    return root, breakdown


def entropy_lower_bound(config):
    """Smallest value the training entropy term can take.

    Off-diagonal blocks are full distributions over ``D_S**2`` cells. The
    diagonal of a diagonal block holds mass at most 1, so its ``q log q``
    sum is bounded by ``-D_S/e`` when ``D_S/e <= 1`` (each cell at ``1/e``)
    and by ``-ln D_S`` otherwise.
    """
    s, ds = config.num_segments, config.segment_dim
    diag = -ds / np.e if ds <= np.e else -np.log(ds)
    return (s * diag - s * (s - 1) * 2 * np.log(ds)) / s ** 2
