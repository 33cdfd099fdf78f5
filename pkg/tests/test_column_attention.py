import numpy as np
import pytest

from bottomup.column_attention import (
    AttentionWeights,
    ColumnQueries,
    KeyEncoder,
    apply_weights,
    attention_mac_count,
    build_column_queries,
    build_key_encoder,
    column_attention,
    encode_keys,
    global_attention,
)
from bottomup.featuremap import FeatureMap
from bottomup.kernels import reference
from bottomup.posenc import PositionalEncoding, build_encoding
from bottomup.serialization import load_parameters, save_parameters
from bottomup.tensor import ShapeMismatch, Tensor, finite_diff_check, sum_all


def _zero_pe(h, c):
    return PositionalEncoding(height=h, channels=c, table=np.zeros((h, c)))


def _encoder(w1, b1, w2, b2):
    return KeyEncoder(
        w1=Tensor(w1, requires_grad=True), b1=Tensor(b1, requires_grad=True),
        w2=Tensor(w2, requires_grad=True), b2=Tensor(b2, requires_grad=True),
    )


def _fmap(arr, grad=False):
    return FeatureMap(Tensor(arr, requires_grad=grad))


def test_encode_keys_zero_weights_give_zero_keys():
    rng = np.random.default_rng(0)
    c = 4
    enc = _encoder(np.zeros((c, c)), np.zeros(c), np.zeros((c, c)), np.zeros(c))
    out = encode_keys(_fmap(rng.uniform(-2, 2, (5, 3, c))), _zero_pe(5, c), enc)
    np.testing.assert_array_equal(out.array(), 0.0)


def test_encode_keys_identity_on_nonnegative_input():
    rng = np.random.default_rng(1)
    c = 4
    enc = _encoder(np.eye(c), np.zeros(c), np.eye(c), np.zeros(c))
    x = rng.uniform(0, 2, (5, 3, c))  # relu passes nonnegative input through
    out = encode_keys(_fmap(x), _zero_pe(5, c), enc)
    np.testing.assert_array_equal(out.array(), x)


def test_encode_keys_is_pointwise():
    rng = np.random.default_rng(2)
    c = 4
    enc = build_key_encoder(c, rng)
    pe = build_encoding(6, c)
    x = rng.uniform(-2, 2, (6, 5, c))
    base = encode_keys(_fmap(x), pe, enc).array()
    bumped = x.copy()
    bumped[2, 3] += 1.0
    out = encode_keys(_fmap(bumped), pe, enc).array()
    changed = np.any(out != base, axis=2)
    assert changed[2, 3]
    changed[2, 3] = False
    assert not changed.any()


def test_zero_queries_give_uniform_weights():
    rng = np.random.default_rng(3)
    h, w, c = 6, 4, 3
    fk = _fmap(rng.uniform(-2, 2, (h, w, c)))
    att = column_attention(fk, ColumnQueries(Tensor(np.zeros((w, c)))))
    np.testing.assert_allclose(att.array(), 1.0 / h, atol=1e-15)
    assert att.scope == "column"


def test_engineered_logits_closed_form():
    # one column, one channel, keys [0, ln 3], unit query -> weights [1/4, 3/4]
    fk = _fmap(np.array([0.0, np.log(3.0)]).reshape(2, 1, 1))
    att = column_attention(fk, ColumnQueries(Tensor(np.ones((1, 1)))))
    np.testing.assert_allclose(att.array()[:, 0], [0.25, 0.75], atol=1e-15)


def test_distinct_queries_distinguish_identical_columns():
    rng = np.random.default_rng(4)
    h, c = 5, 3
    col = rng.uniform(-1, 1, (h, c))
    fk = _fmap(np.stack([col, col], axis=1))  # two identical key columns
    q = np.stack([rng.uniform(-1, 1, c), rng.uniform(-1, 1, c)])
    att = column_attention(fk, ColumnQueries(Tensor(q))).array()
    assert np.abs(att[:, 0] - att[:, 1]).max() > 1e-3


def test_per_column_normalization_over_random_maps():
    rng = np.random.default_rng(5)
    for _ in range(100):
        h, w, c = rng.integers(1, 9, size=3)
        fk = _fmap(rng.uniform(-3, 3, (h, w, c)))
        queries = ColumnQueries(Tensor(rng.uniform(-1, 1, (w, c))))
        sums = column_attention(fk, queries).array().sum(axis=0)
        assert np.abs(sums - 1.0).max() < 1e-9


def test_column_locality_is_bitwise():
    rng = np.random.default_rng(6)
    h, w, c = 6, 5, 4
    base = rng.uniform(-2, 2, (h, w, c))
    queries = ColumnQueries(Tensor(rng.uniform(-1, 1, (w, c))))
    w0 = column_attention(_fmap(base), queries).array()
    bumped = base.copy()
    bumped[:, 2, :] += rng.uniform(0.5, 1.0, (h, c))
    w1 = column_attention(_fmap(bumped), queries).array()
    others = [j for j in range(w) if j != 2]
    np.testing.assert_array_equal(w1[:, others], w0[:, others])
    assert np.any(w1[:, 2] != w0[:, 2])


def test_uniform_logit_shift_leaves_column_weights_unchanged():
    # keys carry a constant channel, so a query step along it shifts every
    # logit in the column by the same amount
    rng = np.random.default_rng(7)
    h, c = 7, 4
    keys = rng.uniform(-1, 1, (h, 1, c))
    keys[:, 0, 0] = 1.0
    q0 = rng.uniform(-1, 1, (1, c))
    q1 = q0.copy()
    q1[0, 0] += 3.7
    w0 = column_attention(_fmap(keys), ColumnQueries(Tensor(q0))).array()
    w1 = column_attention(_fmap(keys), ColumnQueries(Tensor(q1))).array()
    assert np.abs(w0 - w1).max() < 1e-12


def test_apply_weights_uniform_divides_by_height():
    rng = np.random.default_rng(8)
    h, w, c = 4, 3, 2
    x = rng.uniform(-2, 2, (h, w, c))
    att = AttentionWeights(Tensor(np.full((h, w), 1.0 / h)))
    np.testing.assert_allclose(apply_weights(_fmap(x), att).array(), x / h,
                               rtol=1e-15)


def test_apply_weights_one_hot_keeps_single_row():
    rng = np.random.default_rng(9)
    h, w, c = 5, 3, 2
    x = rng.uniform(1, 2, (h, w, c))
    hot = np.zeros((h, w))
    rows = [1, 4, 0]
    for j, i in enumerate(rows):
        hot[i, j] = 1.0
    out = apply_weights(_fmap(x), AttentionWeights(Tensor(hot))).array()
    for j, i in enumerate(rows):
        np.testing.assert_array_equal(out[i, j], x[i, j])
        zeroed = np.delete(out[:, j], i, axis=0)
        np.testing.assert_array_equal(zeroed, 0.0)


def test_apply_weights_matches_loop_oracle():
    rng = np.random.default_rng(10)
    x = rng.uniform(-2, 2, (4, 3, 2))
    wts = rng.uniform(0, 1, (4, 3))
    got = apply_weights(_fmap(x), AttentionWeights(Tensor(wts))).array()
    expected = reference.scale_by_plane(x[None], wts[None])[0]
    np.testing.assert_array_equal(got, expected)


def test_apply_weights_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        apply_weights(_fmap(np.zeros((4, 3, 2))),
                      AttentionWeights(Tensor(np.zeros((3, 3)))))


def test_global_attention_zero_query_uniform():
    rng = np.random.default_rng(11)
    h, w, c = 4, 6, 3
    att = global_attention(_fmap(rng.uniform(-1, 1, (h, w, c))), np.zeros(c))
    np.testing.assert_allclose(att.array(), 1.0 / (h * w), atol=1e-15)
    assert att.scope == "plane"


def test_global_attention_saturates_on_dominant_pixel():
    h, w = 5, 4
    keys = np.zeros((h, w, 1))
    keys[3, 2, 0] = 20.0
    att = global_attention(_fmap(keys), np.ones(1)).array()
    assert att[3, 2] > 0.999
    assert abs(att.sum() - 1.0) < 1e-9


def test_column_vs_global_normalization_structure():
    rng = np.random.default_rng(12)
    h, w, c = 6, 5, 3
    keys = rng.uniform(-1, 1, (h, w, c))
    col = column_attention(_fmap(keys), ColumnQueries(Tensor(rng.uniform(-1, 1, (w, c)))))
    glob = global_attention(_fmap(keys), rng.uniform(-1, 1, c))
    np.testing.assert_allclose(col.array().sum(axis=0), 1.0, atol=1e-9)
    assert abs(glob.array().sum() - 1.0) < 1e-9
    assert np.abs(glob.array().sum(axis=0) - 1.0).max() > 0.1


def test_gradients_through_attention_and_reweighting():
    rng = np.random.default_rng(13)
    h, w, c = 5, 4, 4
    queries = build_column_queries(w, c, rng)
    enc = build_key_encoder(c, rng)
    pe = build_encoding(h, c)

    def loss(t):
        fm = FeatureMap(t)
        fk = encode_keys(fm, pe, enc)
        att = column_attention(fk, queries)
        return sum_all((apply_weights(fm, att).data * Tensor(np.arange(h * w * c, dtype=float).reshape(h, w, c))))

    x = Tensor(rng.uniform(-2, 2, (h, w, c)), requires_grad=True)
    assert finite_diff_check(loss, x) < 1e-6
    err_q = finite_diff_check(
        lambda qt: loss_with_queries(qt, x.data, pe, enc, h, w, c), queries.q)
    assert err_q < 1e-6


def loss_with_queries(qt, x, pe, enc, h, w, c):
    fm = FeatureMap(Tensor(x))
    fk = encode_keys(fm, pe, enc)
    att = column_attention(fk, ColumnQueries(qt))
    weighted = apply_weights(fm, att)
    return sum_all(weighted.data * Tensor(np.arange(h * w * c, dtype=float).reshape(h, w, c)))


def test_mac_count_linear_scaling():
    base = attention_mac_count(8, 6, 4)
    assert attention_mac_count(16, 6, 4) == 2 * base
    assert attention_mac_count(16, 12, 4) == 4 * base  # not 16x: linear, not quadratic
    assert attention_mac_count(8, 6, 8) == 2 * base
    with pytest.raises(ValueError):
        attention_mac_count(0, 6, 4)


def test_mac_count_matches_instrumented_kernels():
    rng = np.random.default_rng(14)
    for h, w, c in [(3, 2, 2), (5, 4, 3), (2, 7, 1)]:
        fb = rng.uniform(-1, 1, (1, h, w, c))
        fk = rng.uniform(-1, 1, (1, h, w, c))
        q = rng.uniform(-1, 1, (w, c))
        counter = reference.MacCounter()
        reference.counted_column_attention(fb, fk, q, counter)
        assert counter.count == attention_mac_count(h, w, c)


def test_parameter_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    queries = build_column_queries(4, 3, rng)
    enc = build_key_encoder(3, rng)
    named = {}
    named.update(queries.parameters())
    named.update(enc.parameters())
    save_parameters(tmp_path / "attn", named)
    loaded = load_parameters(tmp_path / "attn")
    assert list(loaded) == list(named)
    for name, tensor in named.items():
        np.testing.assert_array_equal(loaded[name], tensor.data)
