"""Patch embedding at a reduced patch size via a least-squares weight transform.

A pretrained embedding matrix W tokenizes P x P pixel patches. To tokenize at
a smaller patch size Q instead, we build the linear map B that bilinearly
resizes a P x P patch down to Q x Q and solve, filter by filter, for the new
weights that minimize the embedding discrepancy:

    minimize ||w - B w_new||^2        =>   w_new = pinv(B) @ w

so that any patch consistent with the resize map embeds identically under the
old and new weights. An optional covariance weighting solves the same problem
in the Mahalanobis norm induced by the (uncentered) second moment of the
patch distribution:

    minimize (w - B w_new)^T Sigma (w - B w_new)
        =>   w_new = pinv(sqrt(Sigma) @ B) @ sqrt(Sigma) @ w

Patch vectors are laid out channel-major, then row-major over pixels:
index = channel * P * P + y * P + x. This layout is fixed so weight files
stay portable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .numerics import pseudo_inverse, psd_sqrt
from .tokens import TokenGrid


@dataclass(frozen=True)
class ResizeMap:
    """Linear map B with t_fine = t_coarse @ matrix, block-diagonal over channels."""

    coarse_patch: int
    fine_patch: int
    channels: int
    matrix: np.ndarray

    def __post_init__(self):
        c, p, q = self.channels, self.coarse_patch, self.fine_patch
        expect = (c * p * p, c * q * q)
        if self.matrix.shape != expect:
            raise ValidationError(
                f"resize matrix must have shape {expect}, got {self.matrix.shape}"
            )


@dataclass(frozen=True)
class PatchEmbedWeights:
    """Embedding matrix of shape (D, C*P*P) plus a bias in R^D."""

    weight: np.ndarray
    bias: np.ndarray
    patch: int
    channels: int

    def __post_init__(self):
        d = self.weight.shape[0]
        cols = self.channels * self.patch * self.patch
        if self.weight.ndim != 2 or self.weight.shape[1] != cols:
            raise ValidationError(
                f"weight must have shape (D, {cols}), got {self.weight.shape}"
            )
        if self.bias.shape != (d,):
            raise ValidationError(f"bias must have shape ({d},), got {self.bias.shape}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("embedding weights contain non-finite values")

    @property
    def dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class CovarianceEstimate:
    """Uncentered second-moment matrix of patch vectors, ridge-stabilized."""

    sigma: np.ndarray
    sample_count: int
    ridge: float


@dataclass(frozen=True)
class PatchGrid:
    """Raster-ordered patch vectors of an image: rows*cols vectors of C*P*P pixels."""

    rows: int
    cols: int
    patch: int
    channels: int
    vectors: np.ndarray

    def __post_init__(self):
        n = self.rows * self.cols
        d = self.channels * self.patch * self.patch
        if self.vectors.shape != (n, d):
            raise ValidationError(
                f"patch vectors must have shape ({n}, {d}), got {self.vectors.shape}"
            )


def bilinear_weights(src: int, dst: int) -> np.ndarray:
    """1-D bilinear resampling matrix R of shape (dst, src), pixel-center convention.

    Output sample o reads the source at (o + 0.5) * src/dst - 0.5 with a
    two-tap kernel; taps are clamped to the valid range (align-corners-false).
    Every row sums to one, so constants are preserved.
    """
    if src < 1 or dst < 1:
        raise ValidationError(f"sizes must be >= 1, got src={src}, dst={dst}")
    r = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for o in range(dst):
        pos = (o + 0.5) * scale - 0.5
        pos = min(max(pos, 0.0), float(src - 1))
        i0 = int(np.floor(pos))
        i1 = min(i0 + 1, src - 1)
        frac = pos - i0
        r[o, i0] += 1.0 - frac
        r[o, i1] += frac
    return r


def build_resize_map(channels: int, coarse: int, fine: int) -> ResizeMap:
    """Per-channel bilinear resize from coarse x coarse pixels to fine x fine.

    Only the shrinking direction (fine <= coarse) is supported.
    """
    if not 1 <= fine <= coarse:
        raise ValidationError(
            f"need 1 <= fine <= coarse for the resize map, got fine={fine}, coarse={coarse}"
        )
    if channels < 1:
        raise ValidationError(f"channels must be >= 1, got {channels}")
    r = bilinear_weights(coarse, fine)
    # Row-major vec: resizing X to R @ X @ R.T means t_fine = t_coarse @ kron(R, R).T
    block = np.kron(r, r).T
    cpp, cqq = coarse * coarse, fine * fine
    matrix = np.zeros((channels * cpp, channels * cqq), dtype=np.float64)
    for c in range(channels):
        matrix[c * cpp : (c + 1) * cpp, c * cqq : (c + 1) * cqq] = block
    return ResizeMap(coarse_patch=coarse, fine_patch=fine, channels=channels, matrix=matrix)


def resize_patch(vec: np.ndarray, rmap: ResizeMap) -> np.ndarray:
    """Apply the resize map to one or more vectorized patches."""
    return np.asarray(vec, dtype=np.float64) @ rmap.matrix


def pi_resize_weights(w: PatchEmbedWeights, b: ResizeMap) -> PatchEmbedWeights:
    """Transform embedding weights to the resize map's finer patch size.

    Filter by filter this returns the least-squares solution of
    B @ w_new ~= w, i.e. w_new = pinv(B) @ w; the bias is copied unchanged.
    With an identity map (equal patch sizes) the weights pass through
    bit-for-value.
    """
    if b.coarse_patch != w.patch:
        raise ValidationError(
            f"resize map expects patch {b.coarse_patch}, weights have patch {w.patch}"
        )
    if b.channels != w.channels:
        raise ValidationError(
            f"resize map has {b.channels} channels, weights have {w.channels}"
        )
    if b.fine_patch == b.coarse_patch:
        return PatchEmbedWeights(
            weight=w.weight.copy(), bias=w.bias.copy(), patch=w.patch, channels=w.channels
        )
    new_wt = pseudo_inverse(b.matrix) @ w.weight.T
    return PatchEmbedWeights(
        weight=np.ascontiguousarray(new_wt.T),
        bias=w.bias.copy(),
        patch=b.fine_patch,
        channels=w.channels,
    )


def estimate_patch_covariance(patches, ridge: float = 1e-6) -> CovarianceEstimate:
    """Uncentered covariance (1/n) sum x x^T of sample patch vectors, plus ridge*I."""
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError(f"need a non-empty (n, d) sample array, got shape {x.shape}")
    if ridge < 0.0:
        raise ValidationError(f"ridge must be >= 0, got {ridge}")
    sigma = (x.T @ x) / x.shape[0] + ridge * np.eye(x.shape[1])
    sigma = 0.5 * (sigma + sigma.T)
    return CovarianceEstimate(sigma=sigma, sample_count=x.shape[0], ridge=ridge)


def pi_resize_weights_sigma(
    w: PatchEmbedWeights, b: ResizeMap, cov: CovarianceEstimate
) -> PatchEmbedWeights:
    """Covariance-weighted variant of pi_resize_weights.

    Minimizes the Sigma-weighted discrepancy (w - B w_new)^T Sigma (w - B w_new)
    per filter. With Sigma proportional to the identity this reduces to the
    unweighted solution.
    """
    d = w.channels * w.patch * w.patch
    if cov.sigma.shape != (d, d):
        raise ValidationError(
            f"covariance must have shape ({d}, {d}), got {cov.sigma.shape}"
        )
    if b.coarse_patch != w.patch or b.channels != w.channels:
        raise ValidationError("resize map does not match the weights")
    root = psd_sqrt(cov.sigma)
    new_wt = pseudo_inverse(root @ b.matrix) @ (root @ w.weight.T)
    return PatchEmbedWeights(
        weight=np.ascontiguousarray(new_wt.T),
        bias=w.bias.copy(),
        patch=b.fine_patch,
        channels=w.channels,
    )


def patchify(image, patch: int) -> PatchGrid:
    """Split an (H, W, C) image into non-overlapping patch vectors.

    H and W must be exact multiples of the patch size; preprocessing in the
    encoder guarantees this. Vectors are emitted in raster order with the
    channel-major, row-major pixel layout documented in the module docstring.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValidationError(f"image must be (H, W, C), got shape {img.shape}")
    h_px, w_px, channels = img.shape
    if patch < 1:
        raise ValidationError(f"patch size must be >= 1, got {patch}")
    if h_px % patch or w_px % patch:
        raise ValidationError(
            f"image size {h_px}x{w_px} is not divisible by patch {patch}; "
            f"both sides must be multiples of {patch}"
        )
    rows, cols = h_px // patch, w_px // patch
    vecs = (
        img.reshape(rows, patch, cols, patch, channels)
        .transpose(0, 2, 4, 1, 3)
        .reshape(rows * cols, channels * patch * patch)
    )
    return PatchGrid(rows=rows, cols=cols, patch=patch, channels=channels,
                     vectors=np.ascontiguousarray(vecs))


def embed(grid: PatchGrid, w: PatchEmbedWeights) -> TokenGrid:
    """Embed patch vectors: token_i = t_i @ W^T + bias."""
    if grid.patch != w.patch or grid.channels != w.channels:
        raise ValidationError(
            f"patch grid ({grid.channels} ch, patch {grid.patch}) does not match "
            f"weights ({w.channels} ch, patch {w.patch})"
        )
    tokens = grid.vectors @ w.weight.T + w.bias
    return TokenGrid(h=grid.rows, w=grid.cols, tokens=tokens)
