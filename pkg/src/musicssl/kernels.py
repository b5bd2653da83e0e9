"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``MUSIC_KERNELS=python`` forces the fallback, ``MUSIC_KERNELS=cython``
makes a missing extension an import error instead of a silent fallback.
"""

import os

import numpy as np

from . import _kernels_py

_choice = os.environ.get("MUSIC_KERNELS", "auto").lower()
if _choice not in ("auto", "python", "cython"):
    raise ImportError(f"MUSIC_KERNELS must be auto, python or cython, got {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _choice == "cython":
            raise

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = _impl.BACKEND


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.append("cython")
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _rows(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax_lastaxis(x, impl=None):
    impl = impl or _impl
    return impl.softmax_rows(_rows(x)).reshape(x.shape)


def softmax_lastaxis_grad(y, gy, impl=None):
    impl = impl or _impl
    return impl.softmax_rows_grad(_rows(y), _rows(gy.astype(y.dtype, copy=False))).reshape(y.shape)


def _mask_rows(mask, shape):
    m = np.broadcast_to(mask, shape).reshape(-1, shape[-1])
    return np.ascontiguousarray(m, dtype=np.uint8)


def masked_xlogx_sum(p, mask, eps, impl=None):
    """Sum of ``p * log(max(p, eps))`` over the entries where ``mask`` is set."""
    impl = impl or _impl
    return impl.masked_xlogx_sum(_rows(p), _mask_rows(mask, p.shape), eps)


def masked_xlogx_grad(p, mask, eps, g, impl=None):
    impl = impl or _impl
    return impl.masked_xlogx_grad(_rows(p), _mask_rows(mask, p.shape), eps,
                                  float(g)).reshape(p.shape)


def clamped_log(x, eps, impl=None):
    impl = impl or _impl
    if x.ndim == 0:
        return np.log(np.maximum(x, eps))
    return impl.clamped_log(_rows(x), eps).reshape(x.shape)


def clamped_log_grad(x, eps, g, impl=None):
    impl = impl or _impl
    if x.ndim == 0:
        return np.where(x > eps, g / np.maximum(x, eps), 0.0).astype(x.dtype)
    return impl.clamped_log_grad(_rows(x), eps, _rows(g.astype(x.dtype, copy=False))).reshape(x.shape)
