"""Statistics of a batch of codes, plus linear probing of representations.

All functions take plain numpy arrays (or tape-free ``Array``s) of shape
``N x S x D_S`` and run without recording anything.
"""

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .coder import SegmentConfig
from .errors import UsageError
from .loss import EPS, entropy_lower_bound, joint_distribution, selection_mask, entropy_loss

COLLAPSE_FLAG_THRESHOLD = 0.9


def _np(code):
    values = getattr(code, "data", code)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise UsageError(f"expected an N x S x D_S code, got shape {values.shape}")
    return values


def _entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return float(-np.sum(p * np.log(np.maximum(p, EPS))))


def marginals(code):
    """Batch mean of the code, shape ``S x D_S``."""
    return _np(code).mean(axis=0)


def marginal_uniformity(code):
    """Per-unit means and their largest deviation from ``1/D_S``."""
    m = marginals(code)
    return m, float(np.abs(m - 1.0 / m.shape[1]).max())


def marginal_entropy(code):
    return np.array([_entropy(row) for row in marginals(code)])


def collapse_fraction(code):
    """Per segment ``max_d mean_i p_i(s, d)``: 1 is collapsed, ``1/D_S`` balanced."""
    return marginals(code).max(axis=1)


def segment_mutual_information(code, other=None):
    """``S x S`` plug-in mutual information between segments.

    With one code both factors of each pairwise joint come from the same
    view and the diagonal is the segment entropy ``H(s)`` (self-information).
    Passing ``other`` gives the cross-view variant: rows use ``code``,
    columns use ``other``, and the diagonal is estimated like every other
    entry.
    """
    p1 = _np(code)
    p2 = p1 if other is None else _np(other)
    if p1.shape != p2.shape:
        raise UsageError(f"code shapes differ: {p1.shape} vs {p2.shape}")
    n, s, _ = p1.shape
    if n < 2:
        raise UsageError("mutual information needs at least 2 samples")
    h1 = [_entropy(p1[:, a].mean(axis=0)) for a in range(s)]
    h2 = [_entropy(p2[:, b].mean(axis=0)) for b in range(s)]
    mi = np.empty((s, s))
    for a in range(s):
        for b in range(s):
            if other is None and a == b:
                mi[a, b] = h1[a]
                continue
            joint = p1[:, a].T @ p2[:, b] / n
            mi[a, b] = h1[a] + h2[b] - _entropy(joint)
    return mi


def code_covariance(code):
    """Population (``1/N``) covariance of the flattened ``N x D`` codes."""
    values = _np(code)
    n = values.shape[0]
    if n < 2:
        raise UsageError("covariance needs at least 2 samples")
    x = values.reshape(n, -1)
    xc = x - x.mean(axis=0)
    return xc.T @ xc / n


def encoding_capacity(config):
    """Number of distinct one-hot codes, ``D_S ** S`` as an exact int."""
    return int(config.segment_dim) ** int(config.num_segments)


def ideal_codes(config, repeats=1):
    """Balanced one-hot codes with independent segments.

    Every combination of units across segments appears ``repeats`` times,
    so ``N = repeats * D_S ** S``.
    """
    s, ds = config.num_segments, config.segment_dim
    combos = np.array(list(itertools.product(range(ds), repeat=s)), dtype=np.int64)
    combos = np.tile(combos, (repeats, 1))
    code = np.zeros((len(combos), s, ds))
    rows = np.arange(len(combos))[:, None]
    code[rows, np.arange(s)[None, :], combos] = 1.0
    return code


def soft_witness_codes(config):
    """Soft codes whose training entropy term sits below the one-hot ideal.

    Only exists for ``D_S = 2``: each segment holds ``(a, 1-a)`` or
    ``(1-a, a)`` with ``a**2 + (1-a)**2 = 2/e``, so every diagonal entry of
    the joint equals ``1/e``. Segments stay independent and balanced.
    Returns None for other segment widths.
    """
    if config.segment_dim != 2:
        return None
    a = 0.5 * (1.0 + np.sqrt(4.0 / np.e - 1.0))
    onehot = ideal_codes(config)
    return onehot * a + (1.0 - onehot) * (1.0 - a)


def entropy_reference(config):
    """Reference values of the training entropy term for ``config``."""
    mask = selection_mask(config)

    def ent(code):
        return float(entropy_loss(joint_distribution(code, code), mask, config).data)

    onehot = ideal_codes(config) if config.segment_dim ** config.num_segments <= 1 << 16 else None
    uniform = np.full((2, config.num_segments, config.segment_dim), 1.0 / config.segment_dim)
    witness = soft_witness_codes(config)
    record = {
        "onehot_ideal": ent(onehot) if onehot is not None else None,
        "onehot_ideal_analytic": -(2 * config.num_segments - 1) / config.num_segments
        * float(np.log(config.segment_dim)),
        "uniform": ent(uniform),
        "lower_bound": float(entropy_lower_bound(config)),
        "soft_witness": ent(witness) if witness is not None else None,
    }
    record["onehot_is_minimizer"] = bool(
        record["lower_bound"] >= record["onehot_ideal_analytic"] - 1e-12)
    return record


@dataclass
class TheoryReport:
    mi_variant: str
    marginals: list
    marginal_entropy: list
    marginal_deviation: float
    mi_matrix: list
    covariance: list
    collapse_fraction: list
    collapse_flag: bool
    num_samples: int

    def as_dict(self):
        return asdict(self)


def theory_report(code, other=None):
    """All code statistics in one record; ``other`` selects cross-view MI."""
    m, dev = marginal_uniformity(code)
    cf = collapse_fraction(code)
    return TheoryReport(
        mi_variant="single_view" if other is None else "cross_view",
        marginals=m.tolist(),
        marginal_entropy=marginal_entropy(code).tolist(),
        marginal_deviation=dev,
        mi_matrix=segment_mutual_information(code, other).tolist(),
        covariance=code_covariance(code).tolist(),
        collapse_fraction=cf.tolist(),
        collapse_flag=bool(cf.max() >= COLLAPSE_FLAG_THRESHOLD),
        num_samples=int(_np(code).shape[0]),
    )


def linear_probe(features, labels, split_seed=0, epochs=500, lr=0.5, test_fraction=0.2):
    """Multinomial logistic regression on frozen features.

    Seeded 80/20 split, features standardized with training statistics,
    full-batch gradient descent from zero weights. Returns train and test
    accuracy.
    """
    x = np.asarray(getattr(features, "data", features), dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise UsageError(f"features {x.shape} and labels {y.shape} disagree")
    classes = np.unique(y)
    if len(classes) < 2:
        raise UsageError("linear probe needs at least 2 classes")
    y = np.searchsorted(classes, y)
    k = len(classes)

    order = np.random.default_rng(split_seed).permutation(len(y))
    n_test = int(round(test_fraction * len(y)))
    test, train = order[:n_test], order[n_test:]

    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0)
    sd[sd == 0] = 1.0
    xs = (x - mu) / sd
    xtr, ytr = xs[train], y[train]
    onehot = np.eye(k)[ytr]

    w = np.zeros((x.shape[1], k))
    b = np.zeros(k)
    for _ in range(epochs):
        logits = xtr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        prob = np.exp(logits)
        prob /= prob.sum(axis=1, keepdims=True)
        g = (prob - onehot) / len(ytr)
        w -= lr * (xtr.T @ g)
        b -= lr * g.sum(axis=0)

    def accuracy(idx):
        if len(idx) == 0:
            return float("nan")
        return float(np.mean(np.argmax(xs[idx] @ w + b, axis=1) == y[idx]))

    return {"train_acc": accuracy(train), "test_acc": accuracy(test),
            "n_train": int(len(train)), "n_test": int(len(test)), "classes": int(k)}


def segment_config_of(code):
    values = _np(code)
    return SegmentConfig(values.shape[1], values.shape[2])
