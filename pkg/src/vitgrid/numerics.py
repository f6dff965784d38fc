"""Dense linear-algebra and small neural primitives shared by all modules.

Matrices are 2-D numpy arrays in row-major layout. Verification-grade
operations (SVD, pseudo-inverse, PSD square root) always run in double
precision; the lightweight neural primitives preserve the dtype they are
given so the encoder can also run in single precision. Every function is a
pure, deterministic map of its inputs; there is no global state.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import erf

from .errors import NumericalError, ValidationError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class SvdFactors(NamedTuple):
    """Thin SVD of a matrix: u @ diag(singular_values) @ vt reconstructs it."""

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


def _as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return a


def svd(m) -> SvdFactors:
    """Thin SVD with singular values sorted in descending order."""
    a = _as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"SVD did not converge for {a.shape[0]}x{a.shape[1]} matrix"
        ) from exc
    return SvdFactors(u, s, vt)


def pseudo_inverse(m, rcond: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``rcond * max(singular value)`` are treated as
    exactly zero, so the result is stable for rank-deficient inputs.
    """
    if not 0.0 < rcond < 1.0:
        raise ValidationError(f"rcond must lie in (0, 1), got {rcond}")
    u, s, vt = svd(m)
    cutoff = rcond * float(s[0])
    inv = np.where(s > cutoff, np.divide(1.0, s, out=np.zeros_like(s), where=s > 0.0), 0.0)
    return (vt.T * inv) @ u.T


def psd_sqrt(m, ridge: float = 0.0) -> np.ndarray:
    """Symmetric square root S of a PSD matrix, with S @ S == m + ridge*I.

    The input must be symmetric to 1e-9. ``ridge`` is added to the diagonal
    before factorization; eigenvalues below -1e-9 after the ridge mean the
    input was not PSD and raise NumericalError.
    """
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"psd_sqrt needs a square matrix, got {a.shape}")
    if ridge < 0.0:
        raise ValidationError(f"ridge must be >= 0, got {ridge}")
    asym = float(np.max(np.abs(a - a.T)))
    if asym > 1e-9:
        raise ValidationError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    sym = 0.5 * (a + a.T) + ridge * np.eye(a.shape[0])
    w, v = np.linalg.eigh(sym)
    if float(w.min()) < -1e-9:
        raise NumericalError(
            f"matrix is not PSD after ridge (min eigenvalue {float(w.min()):.3e})"
        )
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def stable_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    """Softmax along ``axis``, stabilized by max subtraction."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def channelwise_softmax(logits) -> np.ndarray:
    """Softmax across a stack of k vectors, taken independently per channel.

    Input has shape (k, D); for every channel c the outputs over the k rows
    are non-negative and sum to one.
    """
    a = np.asarray(logits)
    if a.ndim != 2:
        raise ValidationError(f"logits must have shape (k, D), got {a.shape}")
    if a.shape[0] < 1:
        raise ValidationError("need at least one logit vector")
    if not np.all(np.isfinite(a)):
        raise ValidationError("logits contain non-finite entries")
    return stable_softmax(a, axis=0)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of the exact GELU."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def scaled_dot_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    heads: int,
    return_weights: bool = False,
    chunk: int = 4096,
):
    """Multi-head scaled dot-product attention over full token stacks.

    q, k, v have shape (n, D) with D divisible by ``heads``; attention is
    global (every query attends to every key, no masking). Queries are
    processed in chunks of ``chunk`` rows to bound peak memory; the chunking
    does not change the result. With ``return_weights`` the per-head
    attention matrices (heads, n, n) are returned alongside the output.
    """
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    if q.ndim != 2 or k.shape != q.shape or v.shape != q.shape:
        raise ValidationError(
            f"q, k, v must share shape (n, D); got {q.shape}, {k.shape}, {v.shape}"
        )
    n, dim = q.shape
    if heads < 1 or dim % heads != 0:
        raise ValidationError(f"dim {dim} is not divisible by heads {heads}")
    dh = dim // heads
    scale = 1.0 / math.sqrt(dh)
    out = np.empty_like(q)
    weights = np.empty((heads, n, n), dtype=q.dtype) if return_weights else None
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            scores = qh[start:stop] @ kh.T
            scores *= scale
            scores -= scores.max(axis=1, keepdims=True)
            np.exp(scores, out=scores)
            scores /= scores.sum(axis=1, keepdims=True)
            out[start:stop, sl] = scores @ vh
            if weights is not None:
                weights[h, start:stop] = scores
    if return_weights:
        return out, weights
    return out


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    """Per-token layer normalization followed by a per-channel affine map."""
    if eps <= 0.0:
        raise ValidationError(f"eps must be > 0, got {eps}")
    x = np.asarray(x)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta
