"""Native-resolution vision-transformer assembly.

Pipeline: resize the input so its sides divide exactly into patches across
all compression stages, embed the patches, add a 2-D sinusoidal positional
code once, then run a pre-norm transformer stack with 2x2 window compressors
inserted after the configured block indices. Attention is global within every
stage. An insertion index of 0 compresses right after embedding; index j >= 1
compresses after block j (1-based), so index == depth compresses the final
output.

Verification paths run in double precision; ``forward`` also accepts
``dtype=np.float32`` for faster large-grid shape checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ValidationError
from .numerics import gelu, layer_norm, scaled_dot_attention
from .patch_embed import PatchEmbedWeights, embed, patchify
from .pooling import (
    CAPoolParams,
    PixelUnshuffleParams,
    avg_init_pixel_unshuffle,
    avg_pool_compress,
    ca_pool_compress,
    pixel_unshuffle_compress,
    zero_init_ca_params,
)
from .tokens import TokenGrid

COMPRESSOR_KINDS = ("avg", "ca", "pixel_unshuffle")


@dataclass(frozen=True)
class CompressionPlan:
    """Compression plan: (insertion index, compressor kind) pairs."""

    entries: tuple = ()

    def __post_init__(self):
        entries = tuple((int(i), str(k)) for i, k in self.entries)
        object.__setattr__(self, "entries", entries)
        last = -1
        for idx, kind in entries:
            if idx <= last:
                raise ValidationError(
                    f"plan indices must be strictly increasing, got {[e[0] for e in entries]}"
                )
            if idx < 0:
                raise ValidationError(f"plan index {idx} is negative")
            if kind not in COMPRESSOR_KINDS:
                raise ValidationError(
                    f"unknown compressor kind {kind!r}; expected one of {COMPRESSOR_KINDS}"
                )
            last = idx

    @property
    def count(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> tuple:
        return tuple(i for i, _ in self.entries)


@dataclass(frozen=True)
class EncoderConfig:
    depth: int
    dim: int
    heads: int
    mlp_ratio: float
    patch: int
    plan: CompressionPlan = field(default_factory=CompressionPlan)
    pos_encoding: str = "sinusoidal_2d"
    channels: int = 3

    def __post_init__(self):
        if self.depth < 1:
            raise ValidationError(f"depth must be >= 1, got {self.depth}")
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ValidationError(
                f"dim {self.dim} must be positive and divisible by heads {self.heads}"
            )
        if self.patch < 1:
            raise ValidationError(f"patch must be >= 1, got {self.patch}")
        if self.mlp_ratio <= 0:
            raise ValidationError(f"mlp_ratio must be > 0, got {self.mlp_ratio}")
        if self.channels < 1:
            raise ValidationError(f"channels must be >= 1, got {self.channels}")
        if self.pos_encoding not in ("sinusoidal_2d", "none"):
            raise ValidationError(
                f"pos_encoding must be 'sinusoidal_2d' or 'none', got {self.pos_encoding!r}"
            )
        if self.pos_encoding == "sinusoidal_2d" and self.dim % 4:
            raise ValidationError(
                f"sinusoidal_2d positional codes need dim divisible by 4, got {self.dim}"
            )
        for idx, _ in self.plan.entries:
            if idx > self.depth:
                raise ValidationError(
                    f"plan index {idx} exceeds encoder depth {self.depth}"
                )

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.mlp_ratio * self.dim))


def desk_config(patch: int = 16, plan: CompressionPlan = CompressionPlan(), **overrides) -> EncoderConfig:
    """Small default geometry used throughout the tests."""
    args = dict(depth=6, dim=64, heads=4, mlp_ratio=4.0, patch=patch, plan=plan)
    args.update(overrides)
    return EncoderConfig(**args)


@dataclass(frozen=True)
class BlockParams:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray


CompressorParams = Union[None, CAPoolParams, PixelUnshuffleParams]


@dataclass(frozen=True)
class EncoderState:
    """All learned arrays for one encoder; immutable and safe to share."""

    patch_weights: PatchEmbedWeights
    blocks: tuple
    compressors: tuple  # aligned with config.plan.entries; None for avg


@dataclass(frozen=True)
class Preprocessed:
    image: np.ndarray
    original_size: tuple
    size: tuple

    @property
    def resized(self) -> bool:
        return self.original_size != self.size


def stage_divisor(config: EncoderConfig) -> int:
    return config.patch * (2 ** config.plan.count)


def preprocess(image, config: EncoderConfig) -> Preprocessed:
    """Bilinearly resize the image to the nearest sides divisible by patch * 2^J.

    Rounding is half-up to the nearest multiple, never below one multiple, so
    the aspect ratio moves by less than one block in each dimension.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValidationError(f"degenerate image shape {img.shape}")
    h, w = img.shape[:2]
    m = stage_divisor(config)
    new_h = max(1, int(np.floor(h / m + 0.5))) * m
    new_w = max(1, int(np.floor(w / m + 0.5))) * m
    if (new_h, new_w) == (h, w):
        return Preprocessed(image=img, original_size=(h, w), size=(h, w))
    resized = resize_image(img, new_h, new_w)
    return Preprocessed(image=resized, original_size=(h, w), size=(new_h, new_w))


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize with the same pixel-center convention as the
    patch resize map; supports both directions."""
    from .patch_embed import bilinear_weights

    img = np.asarray(image, dtype=np.float64)
    rh = bilinear_weights(img.shape[0], out_h)
    rw = bilinear_weights(img.shape[1], out_w)
    return np.einsum("ij,jkc,lk->ilc", rh, img, rw, optimize=True)


def token_count(config: EncoderConfig, height: int, width: int) -> list:
    """Per-stage token counts [N, N/4, ..., N/4^J] for preprocessed dims."""
    m = stage_divisor(config)
    if height % m or width % m:
        raise ValidationError(
            f"dims {height}x{width} must be divisible by patch*2^J = {m}"
        )
    n = (height // config.patch) * (width // config.patch)
    counts = [n]
    for _ in range(config.plan.count):
        n //= 4
        counts.append(n)
    return counts


def sinusoidal_pos_2d(h: int, w: int, dim: int) -> np.ndarray:
    """Deterministic 2-D sinusoidal positional codes of shape (h*w, dim).

    The first half of the channels encodes the row index, the second half the
    column index; each half is split into sin and cos banks over 10000-base
    frequencies. Position (0, 0) therefore has all sin channels 0 and all cos
    channels 1.
    """
    if dim % 4:
        raise ValidationError(f"dim must be divisible by 4, got {dim}")
    quarter = dim // 4
    freqs = 1.0 / (10000.0 ** (np.arange(quarter) / max(quarter, 1)))

    def axis_codes(n):
        ang = np.arange(n)[:, None] * freqs[None, :]
        return np.sin(ang), np.cos(ang)

    sin_r, cos_r = axis_codes(h)
    sin_c, cos_c = axis_codes(w)
    rows = np.concatenate([sin_r, cos_r], axis=1)  # (h, dim/2)
    cols = np.concatenate([sin_c, cos_c], axis=1)  # (w, dim/2)
    out = np.empty((h, w, dim), dtype=np.float64)
    out[:, :, : dim // 2] = rows[:, None, :]
    out[:, :, dim // 2 :] = cols[None, :, :]
    return out.reshape(h * w, dim)


def init_state(config: EncoderConfig, seed: int) -> EncoderState:
    """Deterministic seeded initialization.

    Weights are N(0, 0.02^2); norms start at identity. Content-adaptive
    compressors use the zero init and pixel-unshuffle the exact averaging
    projection, so a fresh encoder produces the same output for any choice of
    compressor kind.
    """
    rng = np.random.default_rng(seed)
    d, hid = config.dim, config.mlp_hidden
    pdim = config.channels * config.patch * config.patch

    def w(*shape):
        return rng.normal(0.0, 0.02, size=shape)

    patch_weights = PatchEmbedWeights(
        weight=w(d, pdim), bias=np.zeros(d), patch=config.patch, channels=config.channels
    )
    blocks = []
    for _ in range(config.depth):
        blocks.append(
            BlockParams(
                ln1_g=np.ones(d), ln1_b=np.zeros(d),
                wq=w(d, d), bq=np.zeros(d),
                wk=w(d, d), bk=np.zeros(d),
                wv=w(d, d), bv=np.zeros(d),
                wo=w(d, d), bo=np.zeros(d),
                ln2_g=np.ones(d), ln2_b=np.zeros(d),
                mlp_w1=w(d, hid), mlp_b1=np.zeros(hid),
                mlp_w2=w(hid, d), mlp_b2=np.zeros(d),
            )
        )
    compressors = []
    for _, kind in config.plan.entries:
        if kind == "ca":
            compressors.append(zero_init_ca_params(d, d, seed=int(rng.integers(2**31))))
        elif kind == "pixel_unshuffle":
            compressors.append(avg_init_pixel_unshuffle(d))
        else:
            compressors.append(None)
    return EncoderState(
        patch_weights=patch_weights, blocks=tuple(blocks), compressors=tuple(compressors)
    )


def _check_state(state: EncoderState, config: EncoderConfig) -> None:
    if len(state.blocks) != config.depth:
        raise ValidationError(
            f"state has {len(state.blocks)} blocks, config depth is {config.depth}"
        )
    if len(state.compressors) != config.plan.count:
        raise ValidationError(
            f"state has {len(state.compressors)} compressors, plan has {config.plan.count}"
        )
    if state.patch_weights.dim != config.dim or state.patch_weights.patch != config.patch:
        raise ValidationError("patch weights do not match the config geometry")


def _cast_block(p: BlockParams, dtype) -> BlockParams:
    return BlockParams(**{k: getattr(p, k).astype(dtype) for k in p.__dataclass_fields__})


def _block_forward(x: np.ndarray, p: BlockParams, heads: int) -> np.ndarray:
    h = layer_norm(x, p.ln1_g, p.ln1_b)
    q = h @ p.wq + p.bq
    k = h @ p.wk + p.bk
    v = h @ p.wv + p.bv
    att = scaled_dot_attention(q, k, v, heads)
    x = x + att @ p.wo + p.bo
    h2 = layer_norm(x, p.ln2_g, p.ln2_b)
    return x + gelu(h2 @ p.mlp_w1 + p.mlp_b1) @ p.mlp_w2 + p.mlp_b2


def _apply_compressor(grid: TokenGrid, kind: str, params: CompressorParams) -> TokenGrid:
    if kind == "avg":
        return avg_pool_compress(grid)
    if kind == "ca":
        return ca_pool_compress(grid, params)
    return pixel_unshuffle_compress(grid, params)


def forward(image, state: EncoderState, config: EncoderConfig, dtype=np.float64) -> TokenGrid:
    """Full encoder forward pass over a single image.

    Returns the final token grid with dims (H'/patch)/2^J x (W'/patch)/2^J
    where H', W' are the preprocessed sides.
    """
    _check_state(state, config)
    pre = preprocess(image, config)
    grid = embed(patchify(pre.image, config.patch), state.patch_weights)
    tokens = grid.tokens
    if config.pos_encoding == "sinusoidal_2d":
        tokens = tokens + sinusoidal_pos_2d(grid.h, grid.w, config.dim)
    if dtype is not np.float64:
        tokens = tokens.astype(dtype)
    cur = TokenGrid(h=grid.h, w=grid.w, tokens=tokens)

    stages = {idx: (kind, comp) for (idx, kind), comp in
              zip(config.plan.entries, state.compressors)}

    def compress_at(j: int, g: TokenGrid) -> TokenGrid:
        if j in stages:
            kind, params = stages[j]
            if dtype is not np.float64 and params is not None:
                fields = {k: getattr(params, k).astype(dtype)
                          for k in params.__dataclass_fields__}
                params = type(params)(**fields)
            return _apply_compressor(g, kind, params)
        return g

    cur = compress_at(0, cur)
    for j, block in enumerate(state.blocks, start=1):
        p = _cast_block(block, dtype) if dtype is not np.float64 else block
        cur = TokenGrid(h=cur.h, w=cur.w, tokens=_block_forward(cur.tokens, p, config.heads))
        cur = compress_at(j, cur)
    return cur
