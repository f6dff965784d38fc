"""Windowed 2x2 token compression.

Three interchangeable compressors merge every non-overlapping 2x2 window of a
token grid into a single token, halving both grid dimensions:

  * average pooling, parameter-free;
  * content-adaptive pooling, where a small MLP scores each window token
    against the window average and a per-channel softmax over the four
    positions produces the aggregation weights (with a zero-initialized
    output layer this is exactly average pooling);
  * pixel-unshuffle, which concatenates the four tokens channel-wise and
    applies a learned linear projection back to D.

Window-internal order is fixed: top-left, top-right, bottom-left,
bottom-right. Analytic gradients are provided for the content-adaptive
compressor so it can be verified against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .numerics import gelu, gelu_grad, stable_softmax
from .tokens import TokenGrid


@dataclass(frozen=True)
class CAPoolParams:
    """MLP parameters for content-adaptive pooling: R^{2D} -> R^{H} -> R^{D}."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        two_d, hidden = self.w1.shape
        if two_d % 2:
            raise ValidationError(f"w1 input size must be 2*D, got {two_d}")
        if self.b1.shape != (hidden,):
            raise ValidationError(f"b1 must have shape ({hidden},), got {self.b1.shape}")
        if self.w2.shape != (hidden, two_d // 2):
            raise ValidationError(
                f"w2 must have shape ({hidden}, {two_d // 2}), got {self.w2.shape}"
            )
        if self.b2.shape != (two_d // 2,):
            raise ValidationError(
                f"b2 must have shape ({two_d // 2},), got {self.b2.shape}"
            )
        for name in ("w1", "b1", "w2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} contains non-finite values")

    @property
    def dim(self) -> int:
        return self.w1.shape[0] // 2

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]


class CAPoolGrads(NamedTuple):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class PixelUnshuffleParams:
    """Projection for the pixel-unshuffle compressor: R^{4D} -> R^{D}."""

    proj: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        four_d, dim = self.proj.shape
        if four_d != 4 * dim:
            raise ValidationError(
                f"proj must have shape (4*D, D), got {self.proj.shape}"
            )
        if self.bias.shape != (dim,):
            raise ValidationError(f"bias must have shape ({dim},), got {self.bias.shape}")
        if not (np.all(np.isfinite(self.proj)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("pixel-unshuffle params contain non-finite values")

    @property
    def dim(self) -> int:
        return self.proj.shape[1]


def _require_even(grid: TokenGrid) -> None:
    if grid.h % 2:
        raise ValidationError(f"grid height {grid.h} is odd; 2x2 windows need even dims")
    if grid.w % 2:
        raise ValidationError(f"grid width {grid.w} is odd; 2x2 windows need even dims")


def window_partition(grid: TokenGrid) -> np.ndarray:
    """Group tokens into (h/2 * w/2, 4, D) windows in raster order.

    Position order inside each window: top-left, top-right, bottom-left,
    bottom-right.
    """
    _require_even(grid)
    d = grid.dim
    wins = (
        grid.tokens.reshape(grid.h // 2, 2, grid.w // 2, 2, d)
        .transpose(0, 2, 1, 3, 4)
        .reshape(-1, 4, d)
    )
    return wins


def avg_pool_compress(grid: TokenGrid) -> TokenGrid:
    """Replace every 2x2 window by the mean of its four tokens."""
    wins = window_partition(grid)
    return TokenGrid(h=grid.h // 2, w=grid.w // 2, tokens=wins.mean(axis=1))


def zero_init_ca_params(dim: int, hidden: int, seed: int) -> CAPoolParams:
    """Seeded init that makes content-adaptive pooling start as average pooling.

    The hidden layer is drawn from N(0, 0.02^2); the output layer is exactly
    zero, so every logit is zero and the softmax weights are uniform.
    """
    if dim < 1 or hidden < 1:
        raise ValidationError(f"dim and hidden must be >= 1, got {dim}, {hidden}")
    rng = np.random.default_rng(seed)
    return CAPoolParams(
        w1=rng.normal(0.0, 0.02, size=(2 * dim, hidden)),
        b1=rng.normal(0.0, 0.02, size=hidden),
        w2=np.zeros((hidden, dim)),
        b2=np.zeros(dim),
    )


def _ca_forward_parts(wins: np.ndarray, params: CAPoolParams):
    """Shared forward pieces: (xhat, pre-activation z, hidden h, weights)."""
    xavg = wins.mean(axis=1)
    xhat = np.concatenate(
        [wins, np.broadcast_to(xavg[:, None, :], wins.shape)], axis=2
    )
    z = xhat @ params.w1 + params.b1
    hid = gelu(z)
    logits = hid @ params.w2 + params.b2
    weights = stable_softmax(logits, axis=1)
    return xhat, z, hid, weights


def ca_pool_compress(grid: TokenGrid, params: CAPoolParams) -> TokenGrid:
    """Content-adaptive pooling over 2x2 windows.

    Each window token is concatenated with the window average and scored by
    the MLP; a per-channel softmax across the four positions yields convex
    combination weights, so every output channel stays inside its window's
    channel range.
    """
    wins = window_partition(grid)
    if params.dim != grid.dim:
        raise ValidationError(
            f"params are for dim {params.dim}, grid has dim {grid.dim}"
        )
    _, _, _, weights = _ca_forward_parts(wins, params)
    out = np.sum(weights * wins, axis=1)
    return TokenGrid(h=grid.h // 2, w=grid.w // 2, tokens=out)


def ca_pool_gradients(grid: TokenGrid, params: CAPoolParams, upstream: np.ndarray):
    """Analytic gradients of L = sum(upstream * output) for CA pooling.

    ``upstream`` must match the compressed output shape (h/2 * w/2, D).
    Returns (input gradients shaped like grid.tokens, CAPoolGrads).
    """
    wins = window_partition(grid)
    if params.dim != grid.dim:
        raise ValidationError(
            f"params are for dim {params.dim}, grid has dim {grid.dim}"
        )
    g = np.asarray(upstream, dtype=np.float64)
    n_out = (grid.h // 2) * (grid.w // 2)
    if g.shape != (n_out, grid.dim):
        raise ValidationError(
            f"upstream must have shape ({n_out}, {grid.dim}), got {g.shape}"
        )
    xhat, z, hid, weights = _ca_forward_parts(wins, params)

    # output = sum_i weights_i * x_i, per channel
    d_weights = g[:, None, :] * wins
    dx = g[:, None, :] * weights
    # softmax backward per channel across the 4 positions
    d_logits = weights * (d_weights - np.sum(weights * d_weights, axis=1, keepdims=True))
    # MLP backward
    dw2 = np.einsum("nih,nid->hd", hid, d_logits)
    db2 = d_logits.sum(axis=(0, 1))
    dhid = d_logits @ params.w2.T
    dz = dhid * gelu_grad(z)
    dw1 = np.einsum("nik,nih->kh", xhat, dz)
    db1 = dz.sum(axis=(0, 1))
    dxhat = dz @ params.w1.T
    dim = grid.dim
    dx = dx + dxhat[:, :, :dim]
    # the concatenated window average spreads back to all four tokens
    dx = dx + dxhat[:, :, dim:].sum(axis=1, keepdims=True) / 4.0

    hw, ww = grid.h // 2, grid.w // 2
    dgrid = (
        dx.reshape(hw, ww, 2, 2, dim)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.h * grid.w, dim)
    )
    return dgrid, CAPoolGrads(w1=dw1, b1=db1, w2=dw2, b2=db2)


def avg_init_pixel_unshuffle(dim: int) -> PixelUnshuffleParams:
    """Projection initialized to exact averaging: four stacked (1/4) * I blocks."""
    eye = np.eye(dim)
    return PixelUnshuffleParams(
        proj=np.concatenate([0.25 * eye] * 4, axis=0), bias=np.zeros(dim)
    )


def pixel_unshuffle_compress(grid: TokenGrid, params: PixelUnshuffleParams) -> TokenGrid:
    """Concatenate each window's four tokens to R^{4D} and project back to R^D."""
    wins = window_partition(grid)
    if params.dim != grid.dim:
        raise ValidationError(
            f"params are for dim {params.dim}, grid has dim {grid.dim}"
        )
    stacked = wins.reshape(wins.shape[0], 4 * grid.dim)
    out = stacked @ params.proj + params.bias
    return TokenGrid(h=grid.h // 2, w=grid.w // 2, tokens=out)
