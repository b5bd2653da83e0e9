"""Dense arrays with tape-based reverse-mode differentiation.

Only the operations the encoder, projector and loss need are provided.
An ``Array`` without a tape is a constant; ops on constants compute
eagerly and record nothing, which is also how finite differences are
evaluated.

    >>> tape = Tape()
    >>> x = tape.leaf([1.0, 2.0])
    >>> g = backward(tape, sum(mul(x, x)))
    >>> g[x].tolist()
    [2.0, 4.0]
"""

import contextlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError, UsageError

EPS = 1e-12

_DTYPES = {"64": np.float64, "32": np.float32}


def default_dtype():
    """Float dtype from ``MUSIC_PRECISION`` (64 or 32; default 64)."""
    key = os.environ.get("MUSIC_PRECISION", "64")
    if key not in _DTYPES:
        raise ConfigError(f"MUSIC_PRECISION must be 64 or 32, got {key!r}")
    return _DTYPES[key]


class Array:
    __slots__ = ("data", "tape", "name")

    def __init__(self, data, tape=None, name=None, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None and data.dtype.kind == "f":
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def __repr__(self):
        kind = "leaf" if self.tape is not None and self.name is not None else "array"
        return f"Array({kind}, shape={self.shape}, name={self.name!r})"


@dataclass
class _Node:
    op: str
    out: Array
    inputs: tuple
    backward: object


class Tape:
    """Ordered record of primitive ops.

    Single-writer: build and differentiate one tape from one thread.
    ``check_finite`` raises ``NumericError`` the moment an op produces a
    non-finite value.
    """

    def __init__(self, check_finite=False):
        self.nodes = []
        self.leaves = []
        self.check_finite = check_finite

    def leaf(self, data, name=None, dtype=None):
        arr = Array(np.array(data, dtype=dtype or default_dtype()), self, name)
        if arr.name is None:
            arr.name = f"leaf{len(self.leaves)}"
        self.leaves.append(arr)
        return arr

    def __len__(self):
        return len(self.nodes)


_faults = set()
OPS = ("matmul", "transpose", "add", "mul", "scale", "relu", "softmax", "log", "sum", "mean",
       "reshape", "masked_xlogx_sum")


@contextlib.contextmanager
def inject_fault(op):
    """Scale ``op``'s derivative by 1.01 inside the block (checker self-test)."""
    if op not in OPS:
        raise UsageError(f"unknown op {op!r}; choose from {', '.join(OPS)}")
    _faults.add(op)
    try:
        yield
    finally:
        _faults.discard(op)


def _as_array(x):
    return x if isinstance(x, Array) else Array(x)


def _tape_of(arrays):
    tape = None
    for a in arrays:
        if a.tape is not None:
            if tape is not None and a.tape is not tape:
                raise UsageError("operands live on different tapes")
            tape = a.tape
    return tape


def _emit(op, inputs, out_data, backward_fn):
    tape = _tape_of(inputs)
    if tape is None:
        return Array(out_data)
    if tape.check_finite and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite output from {op}")
    if op in _faults:
        inner = backward_fn
        backward_fn = lambda g: tuple(None if x is None else 1.01 * x for x in inner(g))  # noqa: E731
    out = Array(out_data, tape)
    tape.nodes.append(_Node(op, out, tuple(inputs), backward_fn))
    return out


def _shape_error(op, *arrays):
    shapes = ", ".join(str(a.shape) for a in arrays)
    return ConfigError(f"{op}: incompatible shapes {shapes}")


# -- primitives -------------------------------------------------------------

def matmul(a, b):
    a, b = _as_array(a), _as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    out = a.data @ b.data
    return _emit("matmul", (a, b), out,
                 lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a):
    a = _as_array(a)
    if a.ndim != 2:
        raise _shape_error("transpose", a)
    return _emit("transpose", (a,), np.ascontiguousarray(a.data.T), lambda g: (g.T,))


def add(a, b):
    """Elementwise sum; ``b`` may also be a bias row added to every row of ``a``."""
    a, b = _as_array(a), _as_array(b)
    if a.shape == b.shape:
        return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return _emit("add", (a, b), a.data + b.data, lambda g: (g, g.sum(axis=0)))
    raise _shape_error("add", a, b)


def mul(a, b):
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise _shape_error("mul", a, b)
    return _emit("mul", (a, b), a.data * b.data,
                 lambda g: (g * b.data, g * a.data))


def scale(a, c):
    """Multiply by the constant scalar ``c``."""
    a = _as_array(a)
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a):
    a = _as_array(a)
    on = a.data > 0
    return _emit("relu", (a,), np.where(on, a.data, 0.0).astype(a.data.dtype),
                 lambda g: (g * on,))


def softmax(a):
    """Softmax over the last axis, max-shifted."""
    a = _as_array(a)
    if a.ndim == 0:
        raise _shape_error("softmax", a)
    y = kernels.softmax_lastaxis(a.data)
    return _emit("softmax", (a,), y, lambda g: (kernels.softmax_lastaxis_grad(y, g),))


def log(a, eps=EPS):
    """Natural log of ``max(a, eps)``."""
    a = _as_array(a)
    return _emit("log", (a,), kernels.clamped_log(a.data, eps),
                 lambda g: (kernels.clamped_log_grad(a.data, eps, g),))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ConfigError(f"axis {ax} out of range for {ndim}-d array")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(a, axis=None):  # noqa: A001
    a = _as_array(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    out = np.sum(a.data, axis=axes)
    return _emit("sum", (a,), np.asarray(out),
                 lambda g: (np.broadcast_to(np.reshape(g, kept), shape).copy(),))


def mean(a, axis=None):
    a = _as_array(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    out = np.sum(a.data, axis=axes) / count
    return _emit("mean", (a,), np.asarray(out, dtype=a.data.dtype),
                 lambda g: (np.broadcast_to(np.reshape(g, kept) / count, shape).copy(),))


def reshape(a, shape):
    a = _as_array(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ConfigError(f"reshape: cannot view {a.shape} as {shape}")
    src = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape), lambda g: (np.reshape(g, src),))


def masked_xlogx_sum(p, mask, eps=EPS):
    """Scalar ``sum(mask * p * log(max(p, eps)))``; ``mask`` is a constant boolean array."""
    p = _as_array(p)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != p.shape:
        raise ConfigError(f"masked_xlogx_sum: mask {mask.shape} does not match {p.shape}")
    total = kernels.masked_xlogx_sum(p.data, mask, eps)
    return _emit("masked_xlogx_sum", (p,), np.asarray(total, dtype=p.data.dtype),
                 lambda g: (kernels.masked_xlogx_grad(p.data, mask, eps, g),))


# -- differentiation --------------------------------------------------------

def backward(tape, root):
    """Gradient of scalar ``root`` with respect to every leaf of ``tape``.

    Returns a dict keyed by leaf ``Array``. Leaves that do not influence
    ``root`` get zeros; a constant root yields an empty dict.
    """
    root = _as_array(root)
    if root.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    if root.tape is None:
        return {}
    if root.tape is not tape:
        raise UsageError("root was not produced on this tape")

    grads = {id(root): np.ones(root.shape, dtype=root.data.dtype)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if inp.tape is None or gi is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    result = {}
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        result[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g).reshape(leaf.shape)
    return result


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    worst_leaf: str = None
    worst_index: tuple = None
    per_leaf: dict = field(default_factory=dict)
    nonfinite: list = field(default_factory=list)
    evaluations: int = 0

    @property
    def passed(self):
        return not self.nonfinite and self.max_rel_error < self.tolerance


def rel_error(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def grad_check(fn, leaves, step=1e-6, tolerance=1e-5):
    """Compare tape gradients of ``fn`` with central finite differences.

    ``fn`` maps one ``Array`` per leaf to a scalar ``Array``; ``leaves`` is a
    dict of name -> initial values (or a sequence, named by position).
    Non-finite values anywhere are recorded in ``report.nonfinite`` and
    fail the check.
    """
    if step <= 0:
        raise UsageError("step must be positive")
    if not isinstance(leaves, dict):
        leaves = {f"leaf{i}": v for i, v in enumerate(leaves)}
    values = {k: np.array(v, dtype=np.float64) for k, v in leaves.items()}

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    tape = Tape(check_finite=True)
    arrays = [tape.leaf(v, name=k, dtype=np.float64) for k, v in values.items()]
    try:
        root = fn(*arrays)
    except NumericError as exc:
        report.nonfinite.append(f"forward: {exc}")
        report.max_rel_error = float("inf")
        return report
    analytic = backward(tape, root)

    def evaluate(vals):
        out = fn(*[Array(v, dtype=np.float64) for v in vals])
        report.evaluations += 1
        return float(_as_array(out).data)

    base = [values[k] for k in values]
    for li, (name, leaf) in enumerate(zip(values, arrays)):
        grad_a = analytic[leaf]
        grad_n = np.zeros_like(values[name])
        for idx in np.ndindex(*values[name].shape):
            vals = [v.copy() if j == li else v for j, v in enumerate(base)]
            vals[li][idx] = values[name][idx] + step
            f_plus = evaluate(vals)
            vals[li][idx] = values[name][idx] - step
            f_minus = evaluate(vals)
            grad_n[idx] = (f_plus - f_minus) / (2.0 * step)
        if not (np.all(np.isfinite(grad_n)) and np.all(np.isfinite(grad_a))):
            report.nonfinite.append(name)
            report.per_leaf[name] = float("inf")
            report.max_rel_error = float("inf")
            continue
        err = rel_error(grad_a, grad_n)
        worst = float(err.max()) if err.size else 0.0
        report.per_leaf[name] = worst
        if worst > report.max_rel_error or report.worst_leaf is None:
            report.max_rel_error = max(report.max_rel_error, worst)
            if err.size:
                report.worst_leaf = name
                report.worst_index = tuple(int(i) for i in np.unravel_index(err.argmax(), err.shape))
    return report
