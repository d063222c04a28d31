from __future__ import annotations

import numpy as np


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def one_hot(labels, m: int, dtype=np.float64):
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (m,), dtype=dtype)
    np.put_along_axis(out, labels[..., None], 1, axis=-1)
    return out


def softmax_cross_entropy(logits, p_true, mask=None):
    """Mean cross-entropy ``H(p, softmax(logits))`` over all positions.

    ``p_true`` is either a one-of-m array shaped like ``logits`` or an
    integer label array.  ``mask`` (shaped like the labels) excludes padded
    positions from the mean.  Returns ``(loss, dlogits)``; the per-position
    gradient is ``p_hat - p`` scaled by the averaging weight.
    """
    logits = np.asarray(logits)
    m = logits.shape[-1]
    if m < 2:
        raise ValueError("cross-entropy needs at least two classes")
    p = np.asarray(p_true)
    if p.shape != logits.shape:
        p = one_hot(p, m, logits.dtype)
    p = p.astype(logits.dtype, copy=False)
    logp = log_softmax(logits)
    per_pos = -(p * logp).sum(axis=-1)
    if mask is None:
        w = np.full(per_pos.shape, 1.0 / per_pos.size, dtype=logits.dtype)
    else:
        mask = np.asarray(mask, dtype=logits.dtype)
        w = mask / mask.sum()
    loss = float((per_pos * w).sum())
    grad = (np.exp(logp) - p) * w[..., None]
    return loss, grad
