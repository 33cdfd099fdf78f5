"""Finite-difference verification suite over every differentiable op.

Each check builds a scalar loss through one op (or the composed block),
computes the analytic gradient by the reverse sweep, and compares against
central differences on the same inputs. Probe tensors that turn outputs
into scalars are drawn once per trial, outside the differentiated
closure, so both sides of the stencil see the same function. Inputs are
drawn in [-2, 2]; checks through kinked ops (relu, abs) nudge samples off
the kink so the two-sided stencil stays on one linear piece. The reported
number per op is the worst relative error across all trials.
"""

from dataclasses import replace

import numpy as np

from .column_attention import (
    ColumnQueries,
    KeyEncoder,
    attention_logits_op,
    build_column_queries,
    build_key_encoder,
    column_attention,
    encode_keys,
    global_attention,
    scale_by_plane_op,
    softmax_columns_op,
)
from .featuremap import FeatureMap
from .posenc import add_encoding, build_encoding
from .reverse_scan import (
    Projection,
    ScanDirection,
    bottom_up_block,
    build_block_params,
    build_projection,
    fuse,
    normalize_rows,
    vertical_cumsum,
)
from .tensor import (
    Tensor,
    absval,
    add_bias,
    finite_diff_check,
    matmul,
    relu,
    sigmoid,
    softmax,
    softplus,
    sum_all,
    take_rows,
)

__all__ = ["run_suite", "SUITE"]


def _off_kink(rng, shape, margin=5e-2):
    x = rng.uniform(-2, 2, shape)
    x[np.abs(x) < margin] += 2 * margin
    return x


def _probe(rng, shape):
    return Tensor(rng.uniform(-1, 1, shape))


def _check_matmul(rng, size, h):
    m, k, n = 4, 3, 5
    b = Tensor(rng.uniform(-2, 2, (k, n)))
    probe = _probe(rng, (m, n))
    x = Tensor(rng.uniform(-2, 2, (m, k)), requires_grad=True)
    return finite_diff_check(lambda t: sum_all(matmul(t, b) * probe), x, h)


def _check_softmax(rng, size, h):
    probe = _probe(rng, 7)
    x = Tensor(rng.uniform(-2, 2, 7), requires_grad=True)
    return finite_diff_check(lambda t: sum_all(softmax(t) * probe), x, h)


def _pointwise_check(op):
    def check(rng, size, h):
        probe = _probe(rng, (3, 4))
        draw = _off_kink(rng, (3, 4)) if op in (relu, absval) \
            else rng.uniform(-2, 2, (3, 4))
        x = Tensor(draw, requires_grad=True)
        return finite_diff_check(lambda t: sum_all(op(t) * probe), x, h)
    return check


def _check_add_bias(rng, size, h):
    base = Tensor(rng.uniform(-2, 2, (5, 4)))
    probe = _probe(rng, (5, 4))
    x = Tensor(rng.uniform(-2, 2, 4), requires_grad=True)
    return finite_diff_check(lambda t: sum_all(add_bias(base, t) * probe), x, h)


def _check_take_rows(rng, size, h):
    idx = [0, 2, 2, 1]
    probe = _probe(rng, (4, 3))
    x = Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
    return finite_diff_check(
        lambda t: sum_all(take_rows(t, idx) * probe), x, h)


def _check_posenc_add(rng, size, h):
    hh, ww, cc = size
    pe = build_encoding(hh, cc)
    probe = _probe(rng, size)
    x = Tensor(rng.uniform(-2, 2, size), requires_grad=True)
    return finite_diff_check(
        lambda t: sum_all(add_encoding(FeatureMap(t), pe).data * probe), x, h)


def _check_encode_keys(rng, size, h):
    hh, ww, cc = size
    pe = build_encoding(hh, cc)
    enc = build_key_encoder(cc, rng)
    probe = _probe(rng, size)
    x = Tensor(_off_kink(rng, size), requires_grad=True)
    return finite_diff_check(
        lambda t: sum_all(encode_keys(FeatureMap(t), pe, enc).data * probe),
        x, h)


def _check_column_attention(rng, size, h):
    hh, ww, cc = size
    queries = build_column_queries(ww, cc, rng)
    probe = _probe(rng, (hh, ww))
    x = Tensor(rng.uniform(-2, 2, size), requires_grad=True)
    err_keys = finite_diff_check(
        lambda t: sum_all(column_attention(FeatureMap(t), queries).w * probe),
        x, h)

    keys = Tensor(rng.uniform(-2, 2, (1, hh, ww, cc)))
    probe_q = _probe(rng, (1, hh, ww))
    q = Tensor(rng.uniform(-0.5, 0.5, (ww, cc)), requires_grad=True)
    err_q = finite_diff_check(
        lambda t: sum_all(softmax_columns_op(attention_logits_op(keys, t))
                          * probe_q),
        q, h)
    return max(err_keys, err_q)


def _check_linear_fused(rng, size, h):
    from .tensor import linear, linear_relu

    w = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, 3), requires_grad=True)
    probe = _probe(rng, (5, 3))
    x = Tensor(rng.uniform(-2, 2, (5, 4)), requires_grad=True)
    worst = 0.0
    for op in (linear, linear_relu):
        worst = max(worst, finite_diff_check(
            lambda t: sum_all(op(t, w, b) * probe), x, h))
        x2 = Tensor(rng.uniform(-2, 2, (5, 4)))
        wt = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
        worst = max(worst, finite_diff_check(
            lambda t: sum_all(op(x2, t, b) * probe), wt, h))
        bt = Tensor(rng.uniform(-1, 1, 3), requires_grad=True)
        worst = max(worst, finite_diff_check(
            lambda t: sum_all(op(x2, w, t) * probe), bt, h))
    return worst


def _check_attention_reweight(rng, size, h):
    from .column_attention import attention_reweight_op

    hh, ww, cc = size
    probe = _probe(rng, (1, hh, ww, cc))
    fb = Tensor(rng.uniform(-2, 2, (1, hh, ww, cc)), requires_grad=True)
    fk = Tensor(rng.uniform(-2, 2, (1, hh, ww, cc)))
    q = Tensor(rng.uniform(-0.5, 0.5, (ww, cc)))
    worst = finite_diff_check(
        lambda t: sum_all(attention_reweight_op(t, fk, q) * probe), fb, h)
    fk2 = Tensor(rng.uniform(-2, 2, (1, hh, ww, cc)), requires_grad=True)
    worst = max(worst, finite_diff_check(
        lambda t: sum_all(attention_reweight_op(fb, t, q) * probe), fk2, h))
    q2 = Tensor(rng.uniform(-0.5, 0.5, (ww, cc)), requires_grad=True)
    worst = max(worst, finite_diff_check(
        lambda t: sum_all(attention_reweight_op(fb, fk, t) * probe), q2, h))
    return worst


def _check_scan_mean(rng, size, h):
    from .reverse_scan import scan_mean_op

    hh, ww, cc = size
    probe = _probe(rng, (1, hh, ww, cc))
    x = Tensor(rng.uniform(-2, 2, (1, hh, ww, cc)), requires_grad=True)
    worst = finite_diff_check(
        lambda t: sum_all(scan_mean_op(t) * probe), x, h)
    y = Tensor(rng.uniform(-2, 2, (1, hh, ww, cc)), requires_grad=True)
    worst = max(worst, finite_diff_check(
        lambda t: sum_all(scan_mean_op(t, ScanDirection.UP_BOTTOM) * probe),
        y, h))
    return worst


def _check_apply_weights(rng, size, h):
    hh, ww, cc = size
    probe = _probe(rng, (1, hh, ww, cc))
    x = Tensor(rng.uniform(-2, 2, (1, hh, ww, cc)), requires_grad=True)
    wts = Tensor(rng.uniform(0.1, 1.0, (1, hh, ww)), requires_grad=True)
    err_f = finite_diff_check(
        lambda t: sum_all(scale_by_plane_op(t, wts) * probe), x, h)
    err_w = finite_diff_check(
        lambda t: sum_all(scale_by_plane_op(x, t) * probe), wts, h)
    return max(err_f, err_w)


def _check_global_attention(rng, size, h):
    hh, ww, cc = size
    q = rng.uniform(-0.5, 0.5, cc)
    probe = _probe(rng, (hh, ww))
    x = Tensor(rng.uniform(-2, 2, size), requires_grad=True)
    return finite_diff_check(
        lambda t: sum_all(global_attention(FeatureMap(t), q).w * probe), x, h)


def _check_cumsum(rng, size, h):
    probe = _probe(rng, size)
    x = Tensor(rng.uniform(-2, 2, size), requires_grad=True)
    return finite_diff_check(
        lambda t: sum_all(vertical_cumsum(FeatureMap(t)).data * probe), x, h)


def _check_normalize(rng, size, h):
    probe = _probe(rng, size)
    x = Tensor(rng.uniform(-2, 2, size), requires_grad=True)
    return finite_diff_check(
        lambda t: sum_all(normalize_rows(FeatureMap(t)).data * probe), x, h)


def _check_fuse(rng, size, h):
    hh, ww, cc = size
    phi = build_projection(cc, rng)
    scan = FeatureMap(Tensor(rng.uniform(-2, 2, size)))
    probe = _probe(rng, size)
    x = Tensor(rng.uniform(-2, 2, size), requires_grad=True)
    err_base = finite_diff_check(
        lambda t: sum_all(fuse(FeatureMap(t), scan, phi).data * probe), x, h)
    base = FeatureMap(Tensor(rng.uniform(-2, 2, size)))
    y = Tensor(rng.uniform(-2, 2, size), requires_grad=True)
    err_scan = finite_diff_check(
        lambda t: sum_all(fuse(base, FeatureMap(t), phi).data * probe), y, h)
    return max(err_base, err_scan)


def _block_err(rng, size, h, **kwargs):
    hh, ww, cc = size
    params = build_block_params(hh, ww, cc, rng, **kwargs)
    probe = _probe(rng, size)
    x = Tensor(_off_kink(rng, size), requires_grad=True)
    return finite_diff_check(
        lambda t: sum_all(bottom_up_block(FeatureMap(t), params).data * probe),
        x, h)


def _check_block(rng, size, h):
    return _block_err(rng, size, h)


def _check_block_up(rng, size, h):
    return _block_err(rng, size, h, direction=ScanDirection.UP_BOTTOM)


def _check_block_plane(rng, size, h):
    return _block_err(rng, size, h, attention_scope="plane")


def _check_block_params(rng, size, h):
    """Gradient w.r.t. the learnable pieces, not just the input."""
    hh, ww, cc = size
    params = build_block_params(hh, ww, cc, rng)
    x = Tensor(_off_kink(rng, size))
    probe = _probe(rng, size)
    enc = params.encoder
    rebuilds = {
        "queries": (params.queries.q,
                    lambda t: replace(params, queries=ColumnQueries(t))),
        "encoder_w1": (enc.w1, lambda t: replace(
            params, encoder=KeyEncoder(t, enc.b1, enc.w2, enc.b2))),
        "encoder_b2": (enc.b2, lambda t: replace(
            params, encoder=KeyEncoder(enc.w1, enc.b1, enc.w2, t))),
        "phi_w": (params.phi.w,
                  lambda t: replace(params, phi=Projection(t, params.phi.b))),
    }
    worst = 0.0
    for original, rebuild in rebuilds.values():
        leaf = Tensor(original.data.copy(), requires_grad=True)
        worst = max(worst, finite_diff_check(
            lambda t: sum_all(bottom_up_block(FeatureMap(x), rebuild(t)).data
                              * probe),
            leaf, h))
    return worst


SUITE = {
    "matmul": _check_matmul,
    "softmax": _check_softmax,
    "sigmoid": _pointwise_check(sigmoid),
    "softplus": _pointwise_check(softplus),
    "relu": _pointwise_check(relu),
    "abs": _pointwise_check(absval),
    "add_bias": _check_add_bias,
    "linear_fused": _check_linear_fused,
    "take_rows": _check_take_rows,
    "attention_reweight": _check_attention_reweight,
    "scan_mean": _check_scan_mean,
    "position_encoding_add": _check_posenc_add,
    "encode_keys": _check_encode_keys,
    "column_attention": _check_column_attention,
    "apply_weights": _check_apply_weights,
    "global_attention": _check_global_attention,
    "vertical_cumsum": _check_cumsum,
    "normalize_rows": _check_normalize,
    "fuse": _check_fuse,
    "block_bottom_up": _check_block,
    "block_up_bottom": _check_block_up,
    "block_plane_attention": _check_block_plane,
    "block_parameters": _check_block_params,
}


def run_suite(sizes=((6, 5, 4),), seed=0, trials=20, step=1e-5):
    """Worst relative error per op over `trials` random draws per size."""
    import zlib

    results = {}
    for name, check in SUITE.items():
        worst = 0.0
        for size in sizes:
            # crc32, not hash(): per-op streams must survive hash salting
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            for _ in range(trials):
                worst = max(worst, check(rng, tuple(size), step))
        results[name] = worst
    return results
