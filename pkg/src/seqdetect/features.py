"""Per-symbol feature extraction for the neural detectors.

Each symbol's ``a`` counts are averaged into ``B`` equal bins ``b``, scaled
to ``b_hat = b / gamma``, and summarized as: first differences of the bins,
the first and last scaled bins, the mean and (population) variance of the
scaled bins, and the symbol duration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .channel import MOLECULAR, OPTICAL


@dataclass(frozen=True)
class FeatureConfig:
    B: int = 10
    gamma: float = 1.0
    include_slope: bool = True
    include_endpoints: bool = True
    include_mean_var: bool = True
    include_tau: bool = True
    slope_on_normalized: bool = True

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 2:
            raise ValueError(f"bin count B must be an integer >= 2, got {self.B}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")

    @classmethod
    def for_channel(cls, kind: str) -> FeatureConfig:
        if kind == OPTICAL:
            return cls(B=10, gamma=1.0)
        if kind == MOLECULAR:
            return cls(B=10, gamma=1000.0)
        raise ValueError(f"unknown channel kind {kind!r}")

    @property
    def size(self) -> int:
        return ((self.B - 1) * self.include_slope + 2 * self.include_endpoints
                + 2 * self.include_mean_var + self.include_tau)

    def layout(self) -> list[tuple[str, slice]]:
        """Named slices of the feature vector, in order."""
        out, i = [], 0
        for name, width, on in (
            ("slope", self.B - 1, self.include_slope),
            ("first", 1, self.include_endpoints),
            ("last", 1, self.include_endpoints),
            ("mean", 1, self.include_mean_var),
            ("var", 1, self.include_mean_var),
            ("tau", 1, self.include_tau),
        ):
            if on:
                out.append((name, slice(i, i + width)))
                i += width
        return out

    def check(self, a: int):
        if a % self.B:
            raise ValueError(f"{a} samples per symbol cannot be split into {self.B} equal bins")

    def to_dict(self) -> dict:
        return asdict(self)


def bin_signal(y, B: int) -> np.ndarray:
    """Means of ``B`` contiguous equal blocks along the last axis."""
    y = np.asarray(y, dtype=np.float64)
    a = y.shape[-1]
    if a % B:
        raise ValueError(f"{a} samples per symbol cannot be split into {B} equal bins")
    return y.reshape(*y.shape[:-1], B, a // B).mean(axis=-1)


def slope_vector(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape[-1] < 2:
        raise ValueError("slope vector needs at least two bins")
    return np.diff(b, axis=-1)


def build_features(y, tau: float, config: FeatureConfig) -> np.ndarray:
    """Feature vectors for one symbol (``y`` of length ``a``) or for a
    ``K x a`` count matrix, giving ``K x config.size``."""
    b = bin_signal(y, config.B)
    bh = b / config.gamma
    parts = []
    if config.include_slope:
        parts.append(slope_vector(bh if config.slope_on_normalized else b))
    if config.include_endpoints:
        parts += [bh[..., :1], bh[..., -1:]]
    if config.include_mean_var:
        parts += [bh.mean(axis=-1, keepdims=True), bh.var(axis=-1, keepdims=True)]
    if config.include_tau:
        parts.append(np.full(bh.shape[:-1] + (1,), float(tau)))
    return np.concatenate(parts, axis=-1)
