"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled ``_kernels`` extension; used when the
extension is unavailable or ``MUSIC_KERNELS=python`` is set.
"""

import numpy as np

BACKEND = "python"


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def masked_xlogx_sum(p, mask, eps):
    sel = p[mask.view(bool)]
    return float(np.sum(sel * np.log(np.maximum(sel, eps))))


def masked_xlogx_grad(p, mask, eps, g):
    # d/dp [p log max(p, eps)] = log p + 1 above the clamp, log eps below it
    dp = np.log(np.maximum(p, eps)) + (p > eps)
    return np.where(mask.view(bool), dp * g, 0.0).astype(p.dtype, copy=False)


def clamped_log(x, eps):
    return np.log(np.maximum(x, eps))


def clamped_log_grad(x, eps, g):
    return np.where(x > eps, g / np.maximum(x, eps), 0.0).astype(x.dtype, copy=False)
