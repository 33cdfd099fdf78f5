"""Bottom-up cumulative scan over rows with count normalization and fusion.

The scan gives every pixel the running sum of everything below it in its
column (row 0 = image bottom), so ground context propagates upward. Row i
of the scan (1-indexed along the scan direction) is divided by i to keep
magnitudes flat, the result goes through a pointwise channel projection,
and a residual add puts it back on the input features. With a zero
projection the whole block is exactly the identity.

Scans run strictly sequentially per column — the fixed reduction order
makes outputs bitwise reproducible and means zeroing rows above i can
never change rows at or below i.

The top-down variant (`ScanDirection.UP_BOTTOM`) is the ablation mode; it
is implemented literally as reverse -> bottom-up scan -> reverse.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .column_attention import (
    ColumnQueries,
    KeyEncoder,
    attention_reweight_op,
    build_column_queries,
    build_key_encoder,
    encode_keys_op,
    plane_logits_op,
    scale_by_plane_op,
    softmax_plane_op,
)
from .featuremap import FeatureMap
from .posenc import PositionalEncoding, build_encoding
from .tensor import (
    Tensor,
    _record,
    _tracking,
    add,
    flip_axis,
    linear,
    reshape,
)

__all__ = [
    "ScanDirection",
    "Projection",
    "BlockParams",
    "build_projection",
    "build_block_params",
    "vertical_cumsum",
    "normalize_rows",
    "fuse",
    "bottom_up_block",
    "block_op",
]


class ScanDirection(enum.Enum):
    BOTTOM_UP = "bottom_up"
    UP_BOTTOM = "up_bottom"


@dataclass
class Projection:
    """Pointwise channel projection applied to the normalized scan."""

    w: Tensor
    b: Tensor

    def parameters(self):
        return {"projection.w": self.w, "projection.b": self.b}


def build_projection(channels, rng, gain=1.0):
    """Fan-in-scaled uniform init, times `gain`.

    Softmax attention weights sum to one per column (or per plane), so the
    normalized scan arrives attenuated by ~1/H (or ~1/(H*W)); passing that
    attenuation as `gain` keeps the residual branch at the same magnitude
    as the features it is added to.
    """
    limit = gain / np.sqrt(channels)
    return Projection(
        w=Tensor(rng.uniform(-limit, limit, (channels, channels)), requires_grad=True),
        b=Tensor(np.zeros(channels), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# batched differentiable ops on raw tensors (B, H, W, C)


def _scan_up_op(f):
    """Prefix sum over the row axis, bottom row first."""
    out = kernels.cumsum_rows(f.data)
    if not _tracking(f):
        return Tensor(out)

    def vjp(g):
        return (kernels.cumsum_rows_backward(np.ascontiguousarray(g)),)

    return _record(out, (f,), vjp)


def divide_rows_op(f, *, divisors):
    """Divide every row i by the constant divisors[i]; true division so
    exact cumulative sums normalize back exactly."""
    d = np.ascontiguousarray(divisors, dtype=np.float64)
    out = kernels.divide_rows(f.data, d)
    if not _tracking(f):
        return Tensor(out)

    def vjp(g):
        return (kernels.divide_rows(np.ascontiguousarray(g), d),)

    return _record(out, (f,), vjp)


def cumsum_rows_op(f, direction=ScanDirection.BOTTOM_UP):
    if direction is ScanDirection.BOTTOM_UP:
        return _scan_up_op(f)
    return flip_axis(_scan_up_op(flip_axis(f, 1)), 1)


def _scan_mean_op(f):
    """Fused cumsum + row-count normalization (bottom-up only)."""
    out = kernels.scan_mean(f.data)
    if not _tracking(f):
        return Tensor(out)

    def vjp(g):
        return (kernels.scan_mean_backward(np.ascontiguousarray(g)),)

    return _record(out, (f,), vjp)


def scan_mean_op(f, direction=ScanDirection.BOTTOM_UP):
    """Running mean along the scan; bitwise equal to cumsum then divide."""
    if direction is ScanDirection.BOTTOM_UP:
        return _scan_mean_op(f)
    return flip_axis(_scan_mean_op(flip_axis(f, 1)), 1)


def row_positions(height, direction=ScanDirection.BOTTOM_UP):
    """1-indexed position of each storage row along the scan direction."""
    positions = np.arange(1, height + 1, dtype=np.float64)
    if direction is ScanDirection.UP_BOTTOM:
        positions = positions[::-1].copy()
    return positions


def normalize_rows_op(f, direction=ScanDirection.BOTTOM_UP):
    return divide_rows_op(f, divisors=row_positions(f.shape[1], direction))


def project_channels_op(x, phi):
    b, h, w, c = x.shape
    flat = reshape(x, (b * h * w, c))
    out = linear(flat, phi.w, phi.b)
    return reshape(out, (b, h, w, out.shape[-1]))


# ---------------------------------------------------------------------------
# single-map API


def _batched(fmap):
    h, w, c = fmap.shape
    return reshape(fmap.data, (1, h, w, c))


def _unbatched(t, fmap):
    _, h, w, c = t.shape
    return FeatureMap(reshape(t, (h, w, c)), bottom_origin=fmap.bottom_origin)


def vertical_cumsum(fmap, direction=ScanDirection.BOTTOM_UP):
    """Running sum over rows; row i holds the sum of scan rows 1..i."""
    return _unbatched(cumsum_rows_op(_batched(fmap), direction), fmap)


def normalize_rows(fmap, direction=ScanDirection.BOTTOM_UP):
    """Divide scan row i (1-indexed along the scan) by i, turning sums into means."""
    return _unbatched(normalize_rows_op(_batched(fmap), direction), fmap)


def fuse(fmap, scanned, phi):
    """Residual fusion: original features plus the projected scan."""
    if fmap.shape != scanned.shape:
        raise ValueError(f"cannot fuse {fmap.shape} with {scanned.shape}")
    out = add(_batched(fmap), project_channels_op(_batched(scanned), phi))
    return _unbatched(out, fmap)


# ---------------------------------------------------------------------------
# the full block


@dataclass
class BlockParams:
    """Everything the combined attention + scan block needs."""

    encoding: PositionalEncoding
    encoder: KeyEncoder
    queries: ColumnQueries
    phi: Projection
    direction: ScanDirection = ScanDirection.BOTTOM_UP
    attention_scope: str = "column"  # "column" | "plane"
    plane_query: Tensor | None = None

    def parameters(self):
        named = {}
        named.update(self.encoder.parameters())
        if self.attention_scope == "column":
            named.update(self.queries.parameters())
        else:
            named["plane_query"] = self.plane_query
        named.update(self.phi.parameters())
        return named


def build_block_params(height, width, channels, rng,
                       direction=ScanDirection.BOTTOM_UP,
                       attention_scope="column"):
    plane_query = None
    if attention_scope == "plane":
        plane_query = Tensor(rng.normal(0.0, 0.02, size=channels), requires_grad=True)
        phi_gain = float(height * width)
    elif attention_scope == "column":
        phi_gain = float(height)
    else:
        raise ValueError(f"unknown attention scope: {attention_scope!r}")
    return BlockParams(
        encoding=build_encoding(height, channels),
        encoder=build_key_encoder(channels, rng),
        queries=build_column_queries(width, channels, rng),
        phi=build_projection(channels, rng, gain=phi_gain),
        direction=direction,
        attention_scope=attention_scope,
        plane_query=plane_query,
    )


def block_op(x, params):
    """Batched forward of the whole block; differentiable end to end.

    Runs on the fused kernels; outputs are bitwise identical to composing
    the public single-step ops because every fused kernel preserves the
    unfused arithmetic order.
    """
    fk = encode_keys_op(x, params.encoding.table, params.encoder)
    if params.attention_scope == "column":
        weighted = attention_reweight_op(x, fk, params.queries.q)
    else:
        w = softmax_plane_op(plane_logits_op(fk, params.plane_query))
        weighted = scale_by_plane_op(x, w)
    normalized = scan_mean_op(weighted, params.direction)
    return add(x, project_channels_op(normalized, params.phi))


def bottom_up_block(fmap, params):
    """Attention-weighted scan fused back onto the input features."""
    return _unbatched(block_op(_batched(fmap), params), fmap)
