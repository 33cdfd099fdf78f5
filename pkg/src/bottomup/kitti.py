"""KITTI label-file parsing, formatting, and difficulty stratification.

One object per line, 15 whitespace-separated fields (16 with a trailing
score on detection files), mapped positionally:

    type truncated occluded alpha
    bbox_left bbox_top bbox_right bbox_bottom
    h w l x y z rotation_y [score]

The 2D bbox is in the usual top-origin image pixels of the label format —
unrelated to the bottom-origin row convention the feature kernels use.
Floats are formatted with repr so format -> parse is the identity.

Difficulty cutoffs live in `DEFAULT_DIFFICULTY` and are plain data so a
config file can override them; nothing in the code depends on the
specific numbers.
"""

from dataclasses import dataclass

from .metrics import Box3D

__all__ = [
    "KittiLabel",
    "LabelParseError",
    "parse_kitti_label",
    "format_kitti_label",
    "load_label_file",
    "DEFAULT_DIFFICULTY",
    "difficulty_filter",
    "to_box3d",
]


DEFAULT_DIFFICULTY = {
    "easy": {"min_box_height": 40.0, "max_occlusion": 0, "max_truncation": 0.15},
    "moderate": {"min_box_height": 25.0, "max_occlusion": 1, "max_truncation": 0.30},
    "hard": {"min_box_height": 25.0, "max_occlusion": 2, "max_truncation": 0.50},
}


class LabelParseError(ValueError):
    """Parse failure; carries the zero-based field index when known."""

    def __init__(self, message, field_index=None):
        super().__init__(message)
        self.field_index = field_index


@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple      # (left, top, right, bottom) pixels, top-origin
    dims: tuple      # (h, w, l) meters
    location: tuple  # (x, y, z) meters, camera frame
    rotation_y: float
    score: float | None = None

    @property
    def box_height(self):
        return self.bbox[3] - self.bbox[1]


def _parse_float(fields, index):
    try:
        return float(fields[index])
    except ValueError:
        raise LabelParseError(
            f"field {index} is not numeric: {fields[index]!r}", field_index=index
        ) from None


def parse_kitti_label(line):
    fields = line.split()
    if len(fields) not in (15, 16):
        raise LabelParseError(
            f"expected 15 or 16 fields, got {len(fields)}", field_index=len(fields)
        )
    values = [_parse_float(fields, i) for i in range(1, len(fields))]
    occluded = values[1]
    if occluded != int(occluded) or not -1 <= int(occluded) <= 3:
        # -1 appears on DontCare rows of real files
        raise LabelParseError(
            f"occluded must be an integer in -1..3, got {fields[2]!r}", field_index=2
        )
    bbox = tuple(values[3:7])
    if bbox[2] <= bbox[0] or bbox[3] <= bbox[1]:
        raise LabelParseError(
            f"bbox must satisfy right > left and bottom > top, got {bbox}",
            field_index=4,
        )
    return KittiLabel(
        type=fields[0],
        truncated=values[0],
        occluded=int(occluded),
        alpha=values[2],
        bbox=bbox,
        dims=tuple(values[7:10]),
        location=tuple(values[10:13]),
        rotation_y=values[13],
        score=values[14] if len(fields) == 16 else None,
    )


def format_kitti_label(label):
    parts = [label.type, repr(label.truncated), str(label.occluded),
             repr(label.alpha)]
    parts += [repr(v) for v in label.bbox]
    parts += [repr(v) for v in label.dims]
    parts += [repr(v) for v in label.location]
    parts.append(repr(label.rotation_y))
    if label.score is not None:
        parts.append(repr(label.score))
    return " ".join(parts)


def load_label_file(path):
    """Parse every non-blank line; errors carry the 1-based line number."""
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                labels.append(parse_kitti_label(line))
            except LabelParseError as exc:
                raise LabelParseError(
                    f"{path}:{lineno}: {exc}", field_index=exc.field_index
                ) from None
    return labels


def difficulty_filter(label, level, config=None):
    """True when the label belongs to `level` under the given cutoffs."""
    cfg = (config or DEFAULT_DIFFICULTY)[level]
    return (label.box_height >= cfg["min_box_height"]
            and label.occluded <= cfg["max_occlusion"]
            and 0 <= label.occluded
            and label.truncated <= cfg["max_truncation"])


def to_box3d(label):
    """Camera-frame Box3D; KITTI locations are bottom-face centers, y down."""
    x, y, z = label.location
    h = label.dims[0]
    return Box3D(center=(x, y - h / 2.0, z), dims=label.dims, yaw=label.rotation_y)
