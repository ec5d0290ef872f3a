"""Minimal dense kernels shared by the whole package.

Plain float64 numpy arrays stand in for matrices (row-major, 2-D). The only
bespoke structures are the multi-scale feature-map containers consumed by
the decoder. All math here is 64-bit; 32-bit precision appears only at file
boundaries (see `sgrec.scene`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FeatureMap:
    """One refined feature-map level, channel-major (channels, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.size == 0:
            raise ValueError("feature map must be a nonempty (channels, height, width) grid")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature map contains non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeatureMapSet:
    """Multi-scale stack of feature maps with a shared channel count."""

    levels: tuple[FeatureMap, ...]

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise ValueError("feature map set must contain at least one level")
        channels = {lvl.channels for lvl in levels}
        if len(channels) != 1:
            raise ValueError(f"feature map levels disagree on channel count: {sorted(channels)}")
        object.__setattr__(self, "levels", levels)

    @property
    def channels(self) -> int:
        return self.levels[0].channels

    def __len__(self) -> int:
        return len(self.levels)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction, over the last axis.

    Raises ValueError on non-finite input or empty rows. Entries of -inf are
    permitted when at least one entry per row is finite; they map to exactly
    zero weight (used for attention masking).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape == () or m.shape[-1] == 0:
        raise ValueError("softmax requires at least one column")
    if np.any(np.isnan(m)) or np.any(m == np.inf):
        raise ValueError("softmax input must not contain NaN or +inf")
    top = np.max(m, axis=-1, keepdims=True)
    if np.any(top == -np.inf):
        raise ValueError("softmax row has no finite entry")
    e = np.exp(m - top)
    return e / np.sum(e, axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    """Inverse logistic; caller is responsible for keeping p inside (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sample_points(fmap: FeatureMap, points: np.ndarray) -> np.ndarray:
    """Bilinear samples of a feature map at normalized (x, y) points.

    Pixel centers follow the align-corners-false convention: normalized
    coordinate p lands on continuous grid index p*size - 0.5. Out-of-range
    points clamp to the border. Returns (n_points, channels).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    if not np.all(np.isfinite(pts)):
        raise ValueError("sample points must be finite")
    data = fmap.data
    h, w = fmap.height, fmap.width

    gx = np.clip(pts[:, 0] * w - 0.5, 0.0, w - 1.0)
    gy = np.clip(pts[:, 1] * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(gx).astype(np.intp)
    y0 = np.floor(gy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0

    v00 = data[:, y0, x0]
    v01 = data[:, y0, x1]
    v10 = data[:, y1, x0]
    v11 = data[:, y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return (top * (1.0 - fy) + bot * fy).T


def bilinear_sample(fmap: FeatureMap, point) -> np.ndarray:
    """Channel vector sampled at one normalized (x, y) point."""
    return sample_points(fmap, np.asarray(point, dtype=np.float64).reshape(1, 2))[0]
