"""Sine-cosine row position encoding added to features before attention.

The table encodes each row's position within its column; columns are told
apart by their per-column queries, not by this table, so every column
receives the same offsets. Interleaved sin/cos with base 10000:

    table[i, 2k]     = sin(i / 10000^(2k / C))
    table[i, 2k + 1] = cos(i / 10000^(2k / C))

with i counting rows from the image bottom (row 0 = bottom row).
"""

from dataclasses import dataclass

import numpy as np

from .featuremap import FeatureMap
from .tensor import ShapeMismatch, add_row_table, reshape

__all__ = ["PositionalEncoding", "build_encoding", "add_encoding"]


@dataclass(frozen=True)
class PositionalEncoding:
    """Deterministic (H, C) table of row-position offsets, values in [-1, 1]."""

    height: int
    channels: int
    table: np.ndarray


def build_encoding(height, channels):
    """Construct the encoding table for `height` rows and `channels` lanes."""
    if channels % 2 != 0:
        raise ValueError(f"channel count must be even, got {channels}")
    if height < 1:
        raise ValueError(f"height must be at least 1, got {height}")
    rows = np.arange(height, dtype=np.float64)[:, None]
    pair = np.arange(channels // 2, dtype=np.float64)[None, :]
    angle = rows / np.power(10000.0, 2.0 * pair / channels)
    table = np.empty((height, channels))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return PositionalEncoding(height=height, channels=channels, table=table)


def add_encoding(fmap, pe):
    """Add the row table to every column of the map: out[i,j,:] = in[i,j,:] + table[i,:]."""
    h, w, c = fmap.shape
    if pe.height != h or pe.channels != c:
        raise ShapeMismatch(
            f"encoding ({pe.height}, {pe.channels}) does not fit map {fmap.shape}"
        )
    batched = reshape(fmap.data, (1, h, w, c))
    out = add_row_table(batched, pe.table)
    return FeatureMap(reshape(out, (h, w, c)), bottom_origin=fmap.bottom_origin)
