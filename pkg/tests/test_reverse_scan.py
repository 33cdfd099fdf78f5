import numpy as np
import pytest

from bottomup.column_attention import build_column_queries, build_key_encoder
from bottomup.featuremap import FeatureMap
from bottomup.kernels import reference
from bottomup.posenc import build_encoding
from bottomup.reverse_scan import (
    BlockParams,
    Projection,
    ScanDirection,
    bottom_up_block,
    build_block_params,
    build_projection,
    fuse,
    normalize_rows,
    vertical_cumsum,
)
from bottomup.serialization import load_parameters, save_parameters
from bottomup.tensor import Tensor, finite_diff_check, sum_all


def _fmap(arr, grad=False):
    return FeatureMap(Tensor(arr, requires_grad=grad))


def test_cumsum_simple_column():
    col = np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1)
    out = vertical_cumsum(_fmap(col)).array()
    np.testing.assert_array_equal(out[:, 0, 0], [1.0, 3.0, 6.0])


def test_cumsum_zeros():
    out = vertical_cumsum(_fmap(np.zeros((4, 3, 2)))).array()
    np.testing.assert_array_equal(out, 0.0)


def test_cumsum_matches_loop_oracle_bitwise():
    rng = np.random.default_rng(0)
    for _ in range(100):
        h, w, c = rng.integers(1, 8, size=3)
        x = rng.uniform(-3, 3, (h, w, c))
        got = vertical_cumsum(_fmap(x)).array()
        np.testing.assert_array_equal(got, reference.cumsum_rows(x[None])[0])


def test_cumsum_linearity():
    rng = np.random.default_rng(1)
    for _ in range(25):
        x = rng.uniform(-2, 2, (6, 4, 3))
        y = rng.uniform(-2, 2, (6, 4, 3))
        a, b = rng.uniform(-2, 2, 2)
        lhs = vertical_cumsum(_fmap(a * x + b * y)).array()
        rhs = a * vertical_cumsum(_fmap(x)).array() + b * vertical_cumsum(_fmap(y)).array()
        assert np.abs(lhs - rhs).max() < 1e-12


def test_normalize_running_means():
    col = np.array([1.0, 3.0, 6.0]).reshape(3, 1, 1)  # cumsum of [1, 2, 3]
    out = normalize_rows(_fmap(col)).array()
    np.testing.assert_array_equal(out[:, 0, 0], [1.0, 1.5, 2.0])


def test_scan_normalize_identity_on_constant_maps_exact():
    # integer and dyadic constants accumulate without rounding, so the
    # running mean recovers the constant bitwise
    for const in (1.0, 2.0, -3.0, 0.5, 0.25, -0.75):
        x = np.full((9, 4, 2), const)
        out = normalize_rows(vertical_cumsum(_fmap(x))).array()
        np.testing.assert_array_equal(out, x)


def test_scan_normalize_identity_on_arbitrary_constants():
    rng = np.random.default_rng(2)
    for const in rng.uniform(-5, 5, 20):
        x = np.full((96, 3, 2), const)
        out = normalize_rows(vertical_cumsum(_fmap(x))).array()
        assert np.abs(out - x).max() < 1e-13


def test_normalized_scan_bounded_by_input_max():
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, (50, 4, 3))
    out = normalize_rows(vertical_cumsum(_fmap(x))).array()
    assert np.abs(out).max() <= np.abs(x).max() + 1e-12


def test_up_bottom_equals_reversed_bottom_up():
    rng = np.random.default_rng(4)
    x = rng.uniform(-2, 2, (7, 5, 3))
    up = vertical_cumsum(_fmap(x), ScanDirection.UP_BOTTOM).array()
    manual = reference.cumsum_rows(x[::-1].copy()[None])[0][::-1]
    np.testing.assert_array_equal(up, manual)
    norm = normalize_rows(_fmap(up), ScanDirection.UP_BOTTOM).array()
    counts = np.arange(7, 0, -1, dtype=float)  # top row is scan position 1
    np.testing.assert_array_equal(norm, up / counts[:, None, None])


def test_bottom_up_causality_bitwise():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.uniform(-2, 2, (8, 3, 2))
        wts = rng.uniform(0.1, 1.0, (8, 3))
        weighted = x * wts[:, :, None]  # attention held fixed
        base = normalize_rows(vertical_cumsum(_fmap(weighted))).array()
        for i in range(8):
            cut = weighted.copy()
            cut[i + 1:] = 0.0
            out = normalize_rows(vertical_cumsum(_fmap(cut))).array()
            np.testing.assert_array_equal(out[: i + 1], base[: i + 1])


def test_fuse_zero_projection_is_identity():
    rng = np.random.default_rng(6)
    c = 3
    phi = Projection(w=Tensor(np.zeros((c, c))), b=Tensor(np.zeros(c)))
    x = rng.uniform(-2, 2, (5, 4, c))
    scan = rng.uniform(-2, 2, (5, 4, c))
    out = fuse(_fmap(x), _fmap(scan), phi)
    np.testing.assert_array_equal(out.array(), x)


def test_fuse_identity_projection_of_zero_scan():
    rng = np.random.default_rng(7)
    c = 3
    phi = Projection(w=Tensor(np.eye(c)), b=Tensor(np.zeros(c)))
    x = rng.uniform(-2, 2, (5, 4, c))
    out = fuse(_fmap(x), _fmap(np.zeros((5, 4, c))), phi)
    np.testing.assert_array_equal(out.array(), x)


def test_fuse_residual_is_projection_of_scan():
    rng = np.random.default_rng(8)
    c = 3
    phi = build_projection(c, rng)
    x = rng.uniform(-2, 2, (4, 6, c))
    scan = rng.uniform(-2, 2, (4, 6, c))
    out = fuse(_fmap(x), _fmap(scan), phi).array()
    projected = scan.reshape(-1, c) @ phi.w.data + phi.b.data
    np.testing.assert_array_equal(out, x + projected.reshape(4, 6, c))


def test_block_zero_projection_short_circuits():
    rng = np.random.default_rng(9)
    params = build_block_params(6, 5, 4, rng)
    params.phi.w = Tensor(np.zeros((4, 4)))
    params.phi.b = Tensor(np.zeros(4))
    x = rng.uniform(-2, 2, (6, 5, 4))
    out = bottom_up_block(_fmap(x), params)
    np.testing.assert_array_equal(out.array(), x)


def test_block_perturbation_flows_only_through_attention():
    rng = np.random.default_rng(10)
    h, w, c = 6, 5, 4
    params = build_block_params(h, w, c, rng)
    x = rng.uniform(-2, 2, (h, w, c))
    bumped = x.copy()
    bumped[h - 1, 2] += 1.0  # top row, column 2

    out_base = bottom_up_block(_fmap(x), params).array()
    out_bump = bottom_up_block(_fmap(bumped), params).array()
    # columns other than 2 cannot see the perturbation at all
    others = [j for j in range(w) if j != 2]
    np.testing.assert_array_equal(out_bump[:, others], out_base[:, others])
    # rows below the top do change in column 2, but only because the
    # column's softmax re-balanced; with the weights frozen the scan keeps
    # every lower row bitwise intact
    from bottomup.column_attention import AttentionWeights, column_attention, apply_weights, encode_keys

    frozen = column_attention(
        encode_keys(_fmap(x), params.encoding, params.encoder), params.queries)
    frozen_const = AttentionWeights(Tensor(frozen.array().copy()))

    def frozen_block(arr):
        weighted = apply_weights(_fmap(arr), frozen_const)
        scanned = normalize_rows(vertical_cumsum(weighted))
        return fuse(_fmap(arr), scanned, params.phi).array()

    base_frozen = frozen_block(x)
    bump_frozen = frozen_block(bumped)
    np.testing.assert_array_equal(bump_frozen[: h - 1, 2], base_frozen[: h - 1, 2])


def test_block_gradient_check():
    rng = np.random.default_rng(11)
    h, w, c = 6, 5, 4
    params = build_block_params(h, w, c, rng)
    probe = Tensor(rng.uniform(-1, 1, (h, w, c)))

    def loss(t):
        return sum_all(bottom_up_block(FeatureMap(t), params).data * probe)

    x = Tensor(rng.uniform(-2, 2, (h, w, c)), requires_grad=True)
    assert finite_diff_check(loss, x) < 1e-6


def test_block_gradient_check_up_bottom_and_plane():
    rng = np.random.default_rng(12)
    h, w, c = 5, 4, 4
    for kwargs in ({"direction": ScanDirection.UP_BOTTOM},
                   {"attention_scope": "plane"}):
        params = build_block_params(h, w, c, rng, **kwargs)
        probe = Tensor(rng.uniform(-1, 1, (h, w, c)))

        def loss(t):
            return sum_all(bottom_up_block(FeatureMap(t), params).data * probe)

        x = Tensor(rng.uniform(-2, 2, (h, w, c)), requires_grad=True)
        assert finite_diff_check(loss, x) < 1e-6


def test_block_parameter_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    params = build_block_params(4, 3, 4, rng)
    named = params.parameters()
    save_parameters(tmp_path / "block", named)
    loaded = load_parameters(tmp_path / "block")
    assert list(loaded) == list(named)
    for name in named:
        np.testing.assert_array_equal(loaded[name], named[name].data)
