"""Synthetic Gaussian-cluster datasets and two-view vector augmentation.

Dataset text format (one header line, then one sample per line)::

    # musicssl-dataset v1 n=4096 dim=64 classes=8 dim_signal=16 ...
    <label> <x_0> <x_1> ... <x_{dim-1}>

Values are written with ``repr`` so a reload is bit-exact.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# the nuisance dims are louder than the class signal, so random features probe poorly
DEFAULT_SEPARATION = 1.5
DEFAULT_NUISANCE_STD = 6.0

FORMAT_TAG = "musicssl-dataset"
FORMAT_VERSION = 1

_INT_META = ("seed", "classes", "dim_signal", "dim_nuisance", "per_class")
_FLOAT_META = ("separation", "noise_std", "nuisance_std")


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or len(self.labels) != len(self.samples):
            raise ConfigError(
                f"samples {self.samples.shape} and labels {self.labels.shape} disagree")

    def __len__(self):
        return len(self.samples)

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def num_classes(self):
        return int(self.meta.get("classes", self.labels.max() + 1))


def gen_clusters(classes=8, dim_signal=16, dim_nuisance=48, per_class=512,
                 separation=DEFAULT_SEPARATION, noise_std=1.0, seed=0,
                 nuisance_std=DEFAULT_NUISANCE_STD):
    """Gaussian clusters in the signal dims, pure noise in the nuisance dims.

    Class means are ``separation * N(0, I)`` in ``dim_signal`` dimensions;
    each sample adds ``noise_std * N(0, I)``. The ``dim_nuisance`` extra
    coordinates are ``nuisance_std * N(0, I)`` regardless of class.
    Samples are stored class by class.
    """
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if dim_signal < 1 or dim_nuisance < 0 or per_class < 1:
        raise ConfigError("dim_signal and per_class must be >= 1, dim_nuisance >= 0")
    if separation < 0 or noise_std < 0 or nuisance_std < 0:
        raise ConfigError("separation and noise scales must be >= 0")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, dim_signal)) * separation
    labels = np.repeat(np.arange(classes), per_class)
    signal = means[labels] + rng.standard_normal((len(labels), dim_signal)) * noise_std
    nuisance = rng.standard_normal((len(labels), dim_nuisance)) * nuisance_std
    meta = dict(seed=int(seed), classes=int(classes), dim_signal=int(dim_signal),
                dim_nuisance=int(dim_nuisance), per_class=int(per_class),
                separation=float(separation), noise_std=float(noise_std),
                nuisance_std=float(nuisance_std))
    return Dataset(np.hstack([signal, nuisance]), labels, meta)


def save_dataset(dataset, path):
    header = [f"# {FORMAT_TAG} v{FORMAT_VERSION}", f"n={len(dataset)}", f"dim={dataset.dim}"]
    for key in _INT_META + _FLOAT_META:
        if key in dataset.meta:
            header.append(f"{key}={dataset.meta[key]!r}")
    lines = [" ".join(header)]
    for label, row in zip(dataset.labels, dataset.samples):
        lines.append(" ".join([str(int(label))] + [repr(float(v)) for v in row]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path):
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {FORMAT_TAG} "):
        raise ConfigError(f"{path}: not a {FORMAT_TAG} file")
    fields = lines[0].split()[2:]
    if fields[0] != f"v{FORMAT_VERSION}":
        raise ConfigError(f"{path}: unsupported dataset version {fields[0]}")
    header = {}
    for item in fields[1:]:
        key, _, value = item.partition("=")
        header[key] = value
    try:
        n, dim = int(header["n"]), int(header["dim"])
        rows = [line.split() for line in lines[1:] if line.strip()]
        if len(rows) != n or any(len(r) != dim + 1 for r in rows):
            raise ConfigError(f"{path}: expected {n} rows of {dim + 1} fields")
        labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
        samples = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
        meta = {k: int(header[k]) for k in _INT_META if k in header}
        meta.update({k: float(header[k]) for k in _FLOAT_META if k in header})
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed dataset ({exc})") from exc
    return Dataset(samples.reshape(n, dim), labels, meta)


@dataclass(frozen=True)
class AugmentSpec:
    """Per-view transforms. ``gaussian_noise_std`` multiplies the per-dimension
    ``noise_scale`` handed to ``augment`` (absolute when no scale is given)."""

    gaussian_noise_std: float = 0.3
    dropout_prob: float = 0.1
    scale_lo: float = 0.8
    scale_hi: float = 1.25

    def __post_init__(self):
        if self.gaussian_noise_std < 0:
            raise ConfigError("gaussian_noise_std must be >= 0")
        if not 0 <= self.dropout_prob < 1:
            raise ConfigError("dropout_prob must be in [0, 1)")
        if not self.scale_hi >= self.scale_lo > 0:
            raise ConfigError("scale range needs hi >= lo > 0")


# leading word keeps view streams disjoint from the trainer's shuffle streams
_VIEW_TAG = 1


def view_stream(seed, epoch, index, view):
    """Generator for one (sample, view) pair, derived from the index tuple."""
    return np.random.default_rng([_VIEW_TAG, int(seed), int(epoch), int(index), int(view)])


def noise_scale(samples):
    """Per-dimension standard deviation of ``samples``; the unit of augmentation noise."""
    return np.asarray(samples, dtype=np.float64).std(axis=0)


def augment(sample, spec, rng, scale=None):
    """Noise, then coordinate dropout, then one global rescale."""
    sample = np.asarray(sample, dtype=np.float64)
    noise = rng.standard_normal(sample.shape) * spec.gaussian_noise_std
    if scale is not None:
        noise *= scale
    keep = rng.random(sample.shape) >= spec.dropout_prob
    factor = rng.uniform(spec.scale_lo, spec.scale_hi)
    return (sample + noise) * keep * factor


def two_views(sample, spec, key, scale=None):
    """Two independent views of ``sample``; ``key = (seed, epoch, index)``."""
    seed, epoch, index = key
    return (augment(sample, spec, view_stream(seed, epoch, index, 0), scale),
            augment(sample, spec, view_stream(seed, epoch, index, 1), scale))


def batch_views(samples, indices, spec, seed, epoch, scale=None):
    """Views for the rows ``indices`` of ``samples``; each row uses its own stream."""
    v1 = np.empty((len(indices), samples.shape[1]))
    v2 = np.empty_like(v1)
    for k, idx in enumerate(indices):
        v1[k], v2[k] = two_views(samples[idx], spec, (seed, epoch, idx), scale)
    return v1, v2
