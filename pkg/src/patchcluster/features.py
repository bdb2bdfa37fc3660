"""Patch feature construction: layer alignment, fusion, and local pooling.

Feature grids are numpy arrays indexed ``[row, col, channel]`` with the grid
height first. Grid coordinates elsewhere in the package are reported as
1-based ``(w, h)`` pairs, ``w`` being the column; flattening a grid row-major
therefore enumerates ``(1,1), (2,1), ...`` with ``w`` varying fastest.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorfile


@dataclass
class LayerFeatureMap:
    """One backbone stage's output for one image, shape (H, W, C)."""

    stage_id: int
    values: np.ndarray


@dataclass
class PatchFeatureMap:
    """Fused multi-scale patch features for one image, shape (H, W, D)."""

    image_id: str
    values: np.ndarray

    @property
    def grid(self) -> tuple[int, int]:
        """(width, height) of the patch grid."""
        return (self.values.shape[1], self.values.shape[0])

    @property
    def dim(self) -> int:
        return self.values.shape[2]


def bilinear_resize(values: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resample of an (H, W[, C]) grid.

    Output sample i maps to source coordinate ``i * (n_in - 1) / (n_out - 1)``
    per axis; a size-1 output axis samples the axis midpoint. Every output is
    a convex combination of inputs, so values stay inside the input range,
    and resizing to the input grid is the identity.
    """
    h_in, w_in = values.shape[:2]
    h_out, w_out = int(out_hw[0]), int(out_hw[1])
    if h_in < 1 or w_in < 1:
        raise ValueError("input grid must be at least 1x1")
    if h_out < 1 or w_out < 1:
        raise ValueError("output grid must be at least 1x1")

    def axis_coords(n_in, n_out):
        if n_out == 1:
            return np.full(1, (n_in - 1) / 2.0)
        return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))

    src = values.astype(np.float64, copy=False)
    extra = (1,) * (values.ndim - 2)

    y = axis_coords(h_in, h_out)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h_in - 1)
    y1 = np.minimum(y0 + 1, h_in - 1)
    wy = (y - y0).reshape(h_out, 1, *extra)
    rows = src[y0] + wy * (src[y1] - src[y0])

    x = axis_coords(w_in, w_out)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w_in - 1)
    x1 = np.minimum(x0 + 1, w_in - 1)
    wx = (x - x0).reshape(1, w_out, *extra)
    out = rows[:, x0] + wx * (rows[:, x1] - rows[:, x0])

    if values.dtype == np.float32:
        return out.astype(np.float32)
    return out


def align_and_concat(layers: list[LayerFeatureMap]) -> np.ndarray:
    """Resize every layer to the first (finest) grid and stack channels.

    Layers must be ordered from finest to coarsest grid; the first layer's
    channels occupy the leading slots of the fused vector.
    """
    if not layers:
        raise ValueError("empty layer list")
    grids = [(l.values.shape[0], l.values.shape[1]) for l in layers]
    for (ha, wa), (hb, wb) in zip(grids, grids[1:]):
        if hb > ha or wb > wa:
            raise ValueError(f"layers not sorted by decreasing grid size: {grids}")
    target = grids[0]
    parts = [
        l.values if (l.values.shape[0], l.values.shape[1]) == target
        else bilinear_resize(l.values, target)
        for l in layers
    ]
    return np.concatenate(parts, axis=-1)


def local_average_pool(values: np.ndarray, patch_size: int) -> np.ndarray:
    """Mean-pool each location over an odd square window, stride 1.

    Border windows average only the in-bounds entries, so a constant map is
    preserved exactly and no zero padding darkens the edges.
    """
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError(f"patch_size must be odd and >= 1, got {patch_size}")
    if patch_size == 1:
        return values.copy()
    h, w = values.shape[:2]
    r = patch_size // 2

    integral = np.zeros((h + 1, w + 1) + values.shape[2:], dtype=np.float64)
    integral[1:, 1:] = values.astype(np.float64).cumsum(axis=0).cumsum(axis=1)

    y0 = np.clip(np.arange(h) - r, 0, None)
    y1 = np.clip(np.arange(h) + r + 1, None, h)
    x0 = np.clip(np.arange(w) - r, 0, None)
    x1 = np.clip(np.arange(w) + r + 1, None, w)

    sums = (
        integral[y1[:, None], x1[None, :]]
        - integral[y0[:, None], x1[None, :]]
        - integral[y1[:, None], x0[None, :]]
        + integral[y0[:, None], x0[None, :]]
    )
    counts = ((y1 - y0)[:, None] * (x1 - x0)[None, :]).astype(np.float64)
    out = sums / counts.reshape(h, w, *(1,) * (values.ndim - 2))
    if values.dtype == np.float32:
        return out.astype(np.float32)
    return out


def build_patch_feature_map(
    layers: list[LayerFeatureMap], image_id: str, patch_size: int = 3
) -> PatchFeatureMap:
    """Full per-image pipeline: align, concatenate, locally pool."""
    fused = align_and_concat(layers)
    if not np.all(np.isfinite(fused)):
        raise ValueError(f"non-finite feature values for image {image_id}")
    pooled = local_average_pool(fused, patch_size)
    return PatchFeatureMap(image_id=image_id, values=pooled)


def load_patch_feature_map(record, patch_size: int = 3) -> PatchFeatureMap:
    """Read a record's per-stage feature tensors and fuse them."""
    if not record.feature_paths:
        raise ValueError(f"record {record.id} lists no feature files")
    layers = []
    for stage, path in enumerate(record.feature_paths):
        arr = tensorfile.read_tensor(path)
        if arr.ndim != 3:
            raise ValueError(f"feature tensor {path} is not 3-D")
        layers.append(LayerFeatureMap(stage_id=stage, values=arr.astype(np.float32)))
    return build_patch_feature_map(layers, record.id, patch_size=patch_size)
