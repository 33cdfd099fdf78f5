"""Toy detector heads and the seven feature-pipeline variants.

Every variant shares the same head stack; they differ only in how the
input features are prepared:

    baseline          raw features
    coordconv         u-v coordinate channels appended, then a pointwise
                      projection back to C
    yolobu            column attention + bottom-up scan block
    cca_only          attention re-weighting alone, no scan or residual
    rrcs_only         unweighted bottom-up scan with projection + residual
    global_attention  one shared query, plane-wide softmax, then the scan
    up_bottom         full block scanning top-down instead

The class branch is a dense pointwise MLP over every pixel (heatmap); the
box branches are their own pointwise MLPs evaluated only at gathered
pixels, since their losses and readouts are center-anchored. Keeping the
branches separate stops the dense classification gradients from crowding
out the few-sample regression signal.
"""

from dataclasses import dataclass

import numpy as np

from ..column_attention import (
    ColumnQueries,
    KeyEncoder,
    attention_reweight_op,
    build_column_queries,
    build_key_encoder,
    encode_keys_op,
)
from ..posenc import PositionalEncoding, build_encoding
from ..reverse_scan import (
    BlockParams,
    Projection,
    ScanDirection,
    block_op,
    build_block_params,
    build_projection,
    project_channels_op,
    scan_mean_op,
)
from ..tensor import (
    Tensor,
    add,
    append_channels,
    linear,
    linear_relu,
    reshape,
    take_rows,
)
from .scenes import N_CLASSES

__all__ = ["VARIANTS", "ToyModel", "build_model"]

VARIANTS = ("baseline", "coordconv", "yolobu", "cca_only", "rrcs_only",
            "global_attention", "up_bottom")

_VARIANT_IDS = {name: i for i, name in enumerate(VARIANTS)}

_N_BOX2D = 4
_N_BOX3D = 5  # depth, h, w, l, yaw


@dataclass
class ToyModel:
    variant: str
    height: int
    width: int
    channels: int
    hidden: int
    n_classes: int
    # variant-specific feature machinery (unused fields stay None)
    block: BlockParams | None
    encoding: PositionalEncoding | None
    encoder: KeyEncoder | None
    queries: ColumnQueries | None
    scan_phi: Projection | None
    coord_w: Tensor | None
    coord_b: Tensor | None
    # heads: dense classification MLP + gathered box MLP
    cls_hidden_w: Tensor
    cls_hidden_b: Tensor
    cls_w: Tensor
    cls_b: Tensor
    box_hidden_w: Tensor
    box_hidden_b: Tensor
    box2d_w: Tensor
    box2d_b: Tensor
    box3d_w: Tensor
    box3d_b: Tensor

    def parameters(self):
        named = {}
        if self.block is not None:
            named.update(self.block.parameters())
        if self.encoder is not None:
            named.update(self.encoder.parameters())
        if self.queries is not None:
            named.update(self.queries.parameters())
        if self.scan_phi is not None:
            named.update(self.scan_phi.parameters())
        if self.coord_w is not None:
            named["coord.w"] = self.coord_w
            named["coord.b"] = self.coord_b
        named.update({
            "cls_hidden.w": self.cls_hidden_w, "cls_hidden.b": self.cls_hidden_b,
            "cls.w": self.cls_w, "cls.b": self.cls_b,
            "box_hidden.w": self.box_hidden_w, "box_hidden.b": self.box_hidden_b,
            "box2d.w": self.box2d_w, "box2d.b": self.box2d_b,
            "box3d.w": self.box3d_w, "box3d.b": self.box3d_b,
        })
        return named

    def features(self, x):
        """Variant-specific feature preparation; x is a (B, H, W, C) tensor."""
        if self.variant == "baseline":
            return x
        if self.variant == "coordconv":
            b, h, w, c = x.shape
            coords = _coordinate_channels(b, h, w)
            stacked = append_channels(x, coords)
            flat = reshape(stacked, (b * h * w, c + 2))
            out = linear(flat, self.coord_w, self.coord_b)
            return reshape(out, (b, h, w, c))
        if self.variant in ("yolobu", "global_attention", "up_bottom"):
            return block_op(x, self.block)
        if self.variant == "cca_only":
            fk = encode_keys_op(x, self.encoding.table, self.encoder)
            return attention_reweight_op(x, fk, self.queries.q)
        if self.variant == "rrcs_only":
            scanned = scan_mean_op(x)
            return add(x, project_channels_op(scanned, self.scan_phi))
        raise ValueError(f"unknown variant: {self.variant!r}")

    def forward(self, feats):
        """Prepared features and dense class logits.

        Returns (flat features (B*H*W, C) tensor, cls logits (B, H, W, K));
        the box branches read the flat features at gathered pixels.
        """
        x = feats if isinstance(feats, Tensor) else Tensor(feats)
        b, h, w, c = x.shape
        fp = self.features(x)
        flat = reshape(fp, (b * h * w, c))
        hidden = linear_relu(flat, self.cls_hidden_w, self.cls_hidden_b)
        cls = linear(hidden, self.cls_w, self.cls_b)
        return flat, reshape(cls, (b, h, w, self.n_classes))

    def boxes_at(self, flat_features, flat_indices):
        """Box branch outputs at the given flattened pixel indices."""
        picked = take_rows(flat_features, flat_indices)
        hidden = linear_relu(picked, self.box_hidden_w, self.box_hidden_b)
        box2d = linear(hidden, self.box2d_w, self.box2d_b)
        box3d = linear(hidden, self.box3d_w, self.box3d_b)
        return box2d, box3d


_COORD_CACHE = {}


def _coordinate_channels(b, h, w):
    key = (b, h, w)
    if key not in _COORD_CACHE:
        vs = (np.arange(h) / h)[None, :, None]
        us = (np.arange(w) / w)[None, None, :]
        coords = np.empty((b, h, w, 2))
        coords[..., 0] = us
        coords[..., 1] = vs
        _COORD_CACHE[key] = coords
    return _COORD_CACHE[key]


def _linear(rng, n_in, n_out, bias=0.0):
    limit = 1.0 / np.sqrt(n_in)
    w = Tensor(rng.uniform(-limit, limit, (n_in, n_out)), requires_grad=True)
    values = np.full(n_out, bias) if np.isscalar(bias) else np.asarray(bias, float)
    b = Tensor(values, requires_grad=True)
    return w, b


# box-branch bias starts at the dataset-scale priors (mean disparity and
# dims) so plain SGD spends its steps on structure, not the offset
_BOX3D_BIAS = (0.2, 1.55, 1.45, 3.7, 0.0)


def build_model(variant, height, width, channels, seed, hidden=16):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    rng = np.random.default_rng([int(seed), _VARIANT_IDS[variant]])

    block = encoding = encoder = queries = scan_phi = None
    coord_w = coord_b = None
    if variant in ("yolobu", "up_bottom"):
        block = build_block_params(
            height, width, channels, rng,
            direction=(ScanDirection.UP_BOTTOM if variant == "up_bottom"
                       else ScanDirection.BOTTOM_UP))
    elif variant == "global_attention":
        block = build_block_params(height, width, channels, rng,
                                   attention_scope="plane")
    elif variant == "cca_only":
        encoding = build_encoding(height, channels)
        encoder = build_key_encoder(channels, rng)
        queries = build_column_queries(width, channels, rng)
    elif variant == "rrcs_only":
        scan_phi = build_projection(channels, rng)
    elif variant == "coordconv":
        coord_w, coord_b = _linear(rng, channels + 2, channels)

    cls_hidden_w, cls_hidden_b = _linear(rng, channels, hidden)
    cls_w, cls_b = _linear(rng, hidden, N_CLASSES, bias=-2.19)
    box_hidden = 2 * hidden
    box_hidden_w, box_hidden_b = _linear(rng, channels, box_hidden)
    box2d_w, box2d_b = _linear(rng, box_hidden, _N_BOX2D)
    box3d_w, box3d_b = _linear(rng, box_hidden, _N_BOX3D, bias=_BOX3D_BIAS)

    return ToyModel(
        variant=variant, height=height, width=width, channels=channels,
        hidden=hidden, n_classes=N_CLASSES,
        block=block, encoding=encoding, encoder=encoder, queries=queries,
        scan_phi=scan_phi, coord_w=coord_w, coord_b=coord_b,
        cls_hidden_w=cls_hidden_w, cls_hidden_b=cls_hidden_b,
        cls_w=cls_w, cls_b=cls_b,
        box_hidden_w=box_hidden_w, box_hidden_b=box_hidden_b,
        box2d_w=box2d_w, box2d_b=box2d_b, box3d_w=box3d_w, box3d_b=box3d_b,
    )
