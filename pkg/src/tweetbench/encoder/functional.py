"""Numpy building blocks with hand-written backward passes."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

LN_EPS = 1e-12
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class AttentionMaskError(ValueError):
    pass


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def attention_weights(q, k, mask):
    """softmax(q k^T / sqrt(d)) with masked keys excluded.

    ``mask`` has shape (..., Tk) and broadcasts over queries; keys with mask 0
    get probability exactly 0.
    """
    mask = np.asarray(mask).astype(bool)
    if not np.all(mask.any(axis=-1)):
        raise AttentionMaskError("every key position is masked for some row")
    scores = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(q.shape[-1])
    scores = np.where(mask[..., None, :], scores, -np.inf)
    return softmax(scores)


def self_attention(q, k, v, mask, return_weights=False):
    """Scaled dot-product attention over arrays shaped (..., T, d)."""
    w = attention_weights(q, k, mask)
    out = w @ v
    return (out, w) if return_weights else out


def attention_backward(dout, q, k, v, w, keep=None):
    """Gradients of ``(w * keep) @ v`` wrt q, k, v where w = attention_weights(q, k, mask).

    ``keep`` is the (already rescaled) dropout multiplier applied to w, or None.
    """
    wd = w if keep is None else w * keep
    dv = np.swapaxes(wd, -1, -2) @ dout
    dw = dout @ np.swapaxes(v, -1, -2)
    if keep is not None:
        dw = dw * keep
    ds = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
    ds /= np.sqrt(q.shape[-1])
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    return dq, dk, dv


def layer_norm(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def layer_norm_backward(dy, gamma, cache):
    xhat, inv = cache
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def cross_entropy(logits, targets):
    """Mean cross-entropy and its gradient wrt ``logits`` (rows are examples)."""
    n = logits.shape[0]
    lp = log_softmax(logits)
    loss = -lp[np.arange(n), targets].mean()
    grad = np.exp(lp)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def dropout_mask(rng, shape, rate, dtype):
    if rate <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= rate).astype(dtype) / (1.0 - rate)
