"""The token-grid value that flows through the encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class TokenGrid:
    """An h x w grid of D-dimensional tokens stored raster-order as (h*w, D)."""

    h: int
    w: int
    tokens: np.ndarray

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValidationError(f"grid dims must be >= 1, got {self.h}x{self.w}")
        t = self.tokens
        if t.ndim != 2 or t.shape[0] != self.h * self.w:
            raise ValidationError(
                f"tokens must have shape ({self.h * self.w}, D), got {t.shape}"
            )
        if not np.all(np.isfinite(t)):
            raise ValidationError("token grid contains non-finite values")

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def as_map(self) -> np.ndarray:
        """View the tokens as an (h, w, D) feature map."""
        return self.tokens.reshape(self.h, self.w, self.dim)
