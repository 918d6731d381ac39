"""Gaussian keypoint heatmaps.

Each keypoint of a frame becomes one channel holding an unnormalized
Gaussian bump centered on its (x, y) coordinate: value at pixel (i, j) is
exp(-[(i-x)^2 + (j-y)^2] / (2 sigma^2)), with i indexing horizontally and
j vertically. Invalid keypoints render an all-zero channel. Frames stack
along the leading temporal axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class KeypointFrame:
    """Per-frame keypoint coordinates (pixel units) with validity flags."""

    coords: np.ndarray  # (K, 2) of (x, y)
    valid: np.ndarray  # (K,) bool

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ShapeError(f"coords must be (K, 2), got {self.coords.shape}")
        if self.valid is None:
            self.valid = np.ones(len(self.coords), dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != (len(self.coords),):
            raise ShapeError("validity flags must match keypoint count")

    @property
    def num_keypoints(self) -> int:
        return len(self.coords)


@dataclass
class HeatmapSequence:
    """T x H x W x K stack of rendered heatmaps."""

    data: np.ndarray
    sigma: float


def rasterize_frame(
    frame: KeypointFrame,
    height: int,
    width: int,
    sigma: float,
    cutoff_radius: float | None = None,
    dtype=np.float32,
) -> np.ndarray:
    """Render one frame into an (H, W, K) heatmap tensor.

    ``cutoff_radius`` optionally zeroes the Gaussian beyond that many pixels
    from the center; by default the Gaussian covers the whole frame.
    """
    if sigma <= 0.0:
        raise ConfigError(f"sigma {sigma} must be positive")
    k = frame.num_keypoints
    out = np.zeros((height, width, k), dtype=dtype)
    if not frame.valid.any():
        return out
    # pixel (i, j): i horizontal (x), j vertical (y); array axes are (j, i)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    idx = np.flatnonzero(frame.valid)
    cx = frame.coords[idx, 0]
    cy = frame.coords[idx, 1]
    d2 = (ys[:, None, None] - cy) ** 2 + (xs[None, :, None] - cx) ** 2
    g = np.exp(-d2 / (2.0 * sigma * sigma))
    if cutoff_radius is not None:
        g = np.where(d2 <= cutoff_radius**2, g, 0.0)
    out[:, :, idx] = g.astype(dtype)
    return out


def stack_sequence(
    frames: list[KeypointFrame],
    height: int,
    width: int,
    sigma: float,
    cutoff_radius: float | None = None,
    dtype=np.float32,
) -> HeatmapSequence:
    """Rasterize frames and stack them along the temporal axis."""
    if not frames:
        raise ShapeError("cannot stack an empty frame sequence")
    k = frames[0].num_keypoints
    for t, frame in enumerate(frames):
        if frame.num_keypoints != k:
            raise ShapeError(
                f"frame {t} has {frame.num_keypoints} keypoints, expected {k}"
            )
    data = np.stack(
        [
            rasterize_frame(f, height, width, sigma, cutoff_radius, dtype)
            for f in frames
        ],
        axis=0,
    )
    return HeatmapSequence(data, sigma)


def rasterize_coords(
    coords: np.ndarray,
    valid: np.ndarray,
    height: int,
    width: int,
    sigma: float,
    dtype=np.float32,
) -> np.ndarray:
    """Vectorized rendering of a (T, K, 2) coordinate array to (T, H, W, K).

    Fast path used by the data pipeline; equivalent to rasterizing each
    frame with :func:`rasterize_frame`.
    """
    if sigma <= 0.0:
        raise ConfigError(f"sigma {sigma} must be positive")
    coords = np.asarray(coords, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    t, k = coords.shape[0], coords.shape[1]
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    dx2 = (xs[None, :, None] - coords[:, None, :, 0]) ** 2  # (T, W, K)
    dy2 = (ys[None, :, None] - coords[:, None, :, 1]) ** 2  # (T, H, K)
    d2 = dy2[:, :, None, :] + dx2[:, None, :, :]  # (T, H, W, K)
    g = np.exp(-d2 / (2.0 * sigma * sigma))
    g *= valid[:, None, None, :]
    return g.astype(dtype)
