"""Per-column cross attention with one learnable query per image column.

Each column j of the key map is scored against its own query vector; a
softmax over the rows of that column yields one scalar weight per pixel,
normalized within the column. Weights re-scale the input features across
all channels. Logits are plain dot products — no 1/sqrt(C) temperature —
and each column's softmax is computed independently, which makes the
column-locality property structural rather than numerical.

A single-query variant (`global_attention`) scores every pixel against one
shared query and normalizes over the whole plane instead; it exists as the
ablation counterpart, not the production path.

The batched `*_op` functions are the differentiable building blocks used
by the training harness; the FeatureMap-level functions wrap a batch of
one for single-image use.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .featuremap import FeatureMap
from .posenc import PositionalEncoding
from .tensor import (
    ShapeMismatch,
    Tensor,
    _record,
    _tracking,
    add_row_table,
    linear,
    linear_relu,
    reshape,
)

__all__ = [
    "ColumnQueries",
    "KeyEncoder",
    "AttentionWeights",
    "build_column_queries",
    "build_key_encoder",
    "encode_keys",
    "column_attention",
    "apply_weights",
    "global_attention",
    "attention_mac_count",
]


@dataclass
class ColumnQueries:
    """Learnable (W, C) matrix: row j is the query for image column j."""

    q: Tensor

    def __post_init__(self):
        if not isinstance(self.q, Tensor):
            self.q = Tensor(self.q, requires_grad=True)
        if self.q.data.ndim != 2:
            raise ValueError(f"queries must be (W, C), got {self.q.shape}")

    def parameters(self):
        return {"queries.q": self.q}


@dataclass
class KeyEncoder:
    """Two pointwise channel projections with a ReLU between them."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def parameters(self):
        return {
            "key_encoder.w1": self.w1,
            "key_encoder.b1": self.b1,
            "key_encoder.w2": self.w2,
            "key_encoder.b2": self.b2,
        }


@dataclass
class AttentionWeights:
    """Per-pixel scalar weights; `scope` says what the softmax ran over."""

    w: Tensor
    scope: str = "column"  # "column": each column sums to 1; "plane": whole map

    def array(self):
        return self.w.data


def build_column_queries(width, channels, rng, std=0.02):
    """Small-scale normal init keeps early softmax near uniform."""
    q = rng.normal(0.0, std, size=(width, channels))
    return ColumnQueries(Tensor(q, requires_grad=True))


def build_key_encoder(channels, rng):
    """Fan-in-scaled uniform weights, zero biases."""
    limit = 1.0 / np.sqrt(channels)
    shape = (channels, channels)
    return KeyEncoder(
        w1=Tensor(rng.uniform(-limit, limit, shape), requires_grad=True),
        b1=Tensor(np.zeros(channels), requires_grad=True),
        w2=Tensor(rng.uniform(-limit, limit, shape), requires_grad=True),
        b2=Tensor(np.zeros(channels), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# batched differentiable ops on raw tensors (B, H, W, C)


def attention_logits_op(fk, q):
    """logits[b, i, j] = <fk[b, i, j, :], q[j, :]>."""
    if fk.shape[3] != q.shape[1] or fk.shape[2] != q.shape[0]:
        raise ShapeMismatch(f"keys {fk.shape} incompatible with queries {q.shape}")
    out = kernels.column_logits(fk.data, q.data)
    if not _tracking(fk, q):
        return Tensor(out)
    nf, nq = fk.requires_grad, q.requires_grad
    fkd, qd = fk.data, q.data

    def vjp(g):
        dfk, dq = kernels.column_logits_backward(np.ascontiguousarray(g), fkd, qd)
        return (dfk if nf else None, dq if nq else None)

    return _record(out, (fk, q), vjp)


def softmax_columns_op(logits):
    """Softmax over the row axis, independently per (batch, column)."""
    out = kernels.softmax_columns(logits.data)
    if not _tracking(logits):
        return Tensor(out)

    def vjp(g):
        return (kernels.softmax_columns_backward(np.ascontiguousarray(g), out),)

    return _record(out, (logits,), vjp)


def scale_by_plane_op(f, w):
    """out[b, i, j, c] = f[b, i, j, c] * w[b, i, j]."""
    if f.shape[:3] != w.shape:
        raise ShapeMismatch(f"features {f.shape} incompatible with weights {w.shape}")
    out = kernels.scale_by_plane(f.data, w.data)
    if not _tracking(f, w):
        return Tensor(out)
    nf, nw = f.requires_grad, w.requires_grad
    fd, wd = f.data, w.data

    def vjp(g):
        df, dw = kernels.scale_by_plane_backward(np.ascontiguousarray(g), fd, wd)
        return (df if nf else None, dw if nw else None)

    return _record(out, (f, w), vjp)


def plane_logits_op(fk, q):
    """logits[b, i, j] = <fk[b, i, j, :], q[:]> for one shared query."""
    if fk.shape[3] != q.shape[0]:
        raise ShapeMismatch(f"keys {fk.shape} incompatible with query {q.shape}")
    out = kernels.plane_logits(fk.data, q.data)
    if not _tracking(fk, q):
        return Tensor(out)
    nf, nq = fk.requires_grad, q.requires_grad
    fkd, qd = fk.data, q.data

    def vjp(g):
        dfk, dq = kernels.plane_logits_backward(np.ascontiguousarray(g), fkd, qd)
        return (dfk if nf else None, dq if nq else None)

    return _record(out, (fk, q), vjp)


def softmax_plane_op(logits):
    """One softmax over all H*W pixels per batch element."""
    out = kernels.softmax_plane(logits.data)
    if not _tracking(logits):
        return Tensor(out)

    def vjp(g):
        return (kernels.softmax_plane_backward(np.ascontiguousarray(g), out),)

    return _record(out, (logits,), vjp)


def attention_reweight_op(fb, fk, q):
    """Fused logits -> softmax -> re-weight; the training-path hot op."""
    if fk.shape[3] != q.shape[1] or fk.shape[2] != q.shape[0]:
        raise ShapeMismatch(f"keys {fk.shape} incompatible with queries {q.shape}")
    out, wts = kernels.attention_reweight(fb.data, fk.data, q.data)
    if not _tracking(fb, fk, q):
        return Tensor(out)
    nb, nf, nq = fb.requires_grad, fk.requires_grad, q.requires_grad
    fbd, fkd, qd = fb.data, fk.data, q.data

    def vjp(g):
        dfb, dfk, dq = kernels.attention_reweight_backward(
            np.ascontiguousarray(g), fbd, fkd, qd, wts)
        return (dfb if nb else None, dfk if nf else None, dq if nq else None)

    return _record(out, (fb, fk, q), vjp)


def encode_keys_op(x, table, enc):
    """Pointwise key MLP over row-encoded features: proj2(relu(proj1(x + P)))."""
    b, h, w, c = x.shape
    keyed = add_row_table(x, table)
    flat = reshape(keyed, (b * h * w, c))
    hidden = linear_relu(flat, enc.w1, enc.b1)
    out = linear(hidden, enc.w2, enc.b2)
    return reshape(out, (b, h, w, c))


# ---------------------------------------------------------------------------
# single-map API


def _batched(fmap):
    h, w, c = fmap.shape
    return reshape(fmap.data, (1, h, w, c))


def _unbatched(t):
    _, h, w, c = t.shape
    return reshape(t, (h, w, c))


def encode_keys(fmap, pe, enc):
    """Keys for attention: the encoded sum of features and row encoding."""
    h, w, c = fmap.shape
    if pe.height != h or pe.channels != c:
        raise ShapeMismatch(
            f"encoding ({pe.height}, {pe.channels}) does not fit map {fmap.shape}"
        )
    out = encode_keys_op(_batched(fmap), pe.table, enc)
    return FeatureMap(_unbatched(out), bottom_origin=fmap.bottom_origin)


def column_attention(fk, queries):
    """Per-pixel weights, one softmax per column over its rows."""
    logits = attention_logits_op(_batched(fk), queries.q)
    w = softmax_columns_op(logits)
    return AttentionWeights(reshape(w, fk.shape[:2]), scope="column")


def apply_weights(fmap, att):
    """Re-weight features by the per-pixel scalars, broadcast over channels."""
    h, w, _ = fmap.shape
    if att.w.shape != (h, w):
        raise ShapeMismatch(
            f"weights {att.w.shape} do not cover map plane ({h}, {w})"
        )
    out = scale_by_plane_op(_batched(fmap), reshape(att.w, (1, h, w)))
    return FeatureMap(_unbatched(out), bottom_origin=fmap.bottom_origin)


def global_attention(fk, query):
    """Single shared query; weights sum to 1 over the whole plane."""
    q = query if isinstance(query, Tensor) else Tensor(query)
    logits = plane_logits_op(_batched(fk), q)
    w = softmax_plane_op(logits)
    return AttentionWeights(reshape(w, fk.shape[:2]), scope="plane")


def attention_mac_count(height, width, channels):
    """Exact multiply-accumulate count of column attention plus re-weighting.

    Logit dot products contribute H*W*C multiplies and the channel
    broadcast another H*W*C; softmax adds exps and divisions but no MACs.
    Linear in each dimension separately.
    """
    if height < 1 or width < 1 or channels < 1:
        raise ValueError(f"dimensions must be positive: {(height, width, channels)}")
    return 2 * height * width * channels
