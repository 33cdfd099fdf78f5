"""Rotated-box detection metrics: BEV/3D IoU and 40-point average precision.

Boxes live in a right-handed world frame with the vertical axis second:
`center` is (x, y, z), `dims` is (h, w, l), `yaw` rotates the l-by-w
footprint in the (x, z) ground plane. Bird's-eye IoU clips one footprint
against the other (Sutherland-Hodgman, both rectangles convex) and takes
the shoelace area; 3D IoU multiplies the footprint intersection by the
vertical overlap. Matching for AP is the greedy confidence-ordered
convention: highest-confidence detection first, each ground truth matched
at most once, best IoU above the threshold wins.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Box3D",
    "Detection",
    "EvalRecord",
    "EmptyGroundTruth",
    "footprint_corners",
    "polygon_area",
    "clip_convex",
    "bev_iou",
    "iou_3d",
    "ap_r40",
    "match_records",
]

# vertices closer than this are fused after clipping; floating-point
# intersections of nearly-collinear edges otherwise leave slivers
_DEDUP_EPS = 1e-12

_RECALL_LEVELS = np.arange(1, 41) / 40.0


class EmptyGroundTruth(ValueError):
    """AP is undefined without ground truth; distinct from an AP of zero."""


@dataclass(frozen=True)
class Box3D:
    center: tuple  # (x, y, z) meters
    dims: tuple    # (h, w, l) meters
    yaw: float     # radians about the vertical axis

    @property
    def volume(self):
        h, w, l = self.dims
        return h * w * l


@dataclass(frozen=True)
class Detection:
    box: Box3D
    class_id: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass
class EvalRecord:
    """One frame's paired ground truths and detections."""

    gts: list
    detections: list


def footprint_corners(box):
    """Counterclockwise (x, z) corners of the yaw-rotated ground rectangle."""
    x, _, z = box.center
    h, w, l = box.dims
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hx, hz = c * l / 2.0, s * l / 2.0      # half-length along heading
    wx, wz = -s * w / 2.0, c * w / 2.0     # half-width across heading
    return [
        (x + hx + wx, z + hz + wz),
        (x - hx + wx, z - hz + wz),
        (x - hx - wx, z - hz - wz),
        (x + hx - wx, z + hz - wz),
    ]


def polygon_area(points):
    """Shoelace area; zero for fewer than three vertices."""
    if len(points) < 3:
        return 0.0
    acc = 0.0
    for (x0, z0), (x1, z1) in zip(points, points[1:] + points[:1]):
        acc += x0 * z1 - x1 * z0
    return abs(acc) / 2.0


def _dedup(points):
    out = []
    for p in points:
        if not out or abs(p[0] - out[-1][0]) > _DEDUP_EPS \
                or abs(p[1] - out[-1][1]) > _DEDUP_EPS:
            out.append(p)
    if len(out) > 1 and abs(out[0][0] - out[-1][0]) <= _DEDUP_EPS \
            and abs(out[0][1] - out[-1][1]) <= _DEDUP_EPS:
        out.pop()
    return out


def clip_convex(subject, clip):
    """Sutherland-Hodgman clip of `subject` against convex CCW `clip`."""
    output = list(subject)
    cp1 = clip[-1]
    for cp2 in clip:
        if not output:
            return []
        ex, ez = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def inside(p):
            return ex * (p[1] - cp1[1]) - ez * (p[0] - cp1[0]) >= 0.0

        todo, output = output, []
        s = todo[-1]
        s_in = inside(s)
        for e in todo:
            e_in = inside(e)
            if e_in != s_in:
                # edge crosses the clip line; standard line-line intersection
                dcx, dcz = cp1[0] - cp2[0], cp1[1] - cp2[1]
                dpx, dpz = s[0] - e[0], s[1] - e[1]
                n1 = cp1[0] * cp2[1] - cp1[1] * cp2[0]
                n2 = s[0] * e[1] - s[1] * e[0]
                denom = dcx * dpz - dcz * dpx
                output.append(((n1 * dpx - n2 * dcx) / denom,
                               (n1 * dpz - n2 * dcz) / denom))
            if e_in:
                output.append(e)
            s, s_in = e, e_in
        cp1 = cp2
    return _dedup(output)


def _canonical_pair(a, b):
    # fix the clip order by a total order on the box fields so that
    # iou(a, b) and iou(b, a) run the identical arithmetic
    ka = (a.center, a.dims, a.yaw)
    kb = (b.center, b.dims, b.yaw)
    return (a, b) if ka <= kb else (b, a)


def _bev_intersection(a, b):
    a, b = _canonical_pair(a, b)
    return polygon_area(clip_convex(footprint_corners(a), footprint_corners(b)))


def bev_iou(a, b):
    """Intersection over union of the two ground-plane footprints."""
    area_a = a.dims[1] * a.dims[2]
    area_b = b.dims[1] * b.dims[2]
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    inter = _bev_intersection(a, b)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a, b):
    """Volume IoU: footprint intersection times vertical overlap."""
    if a.volume <= 0.0 or b.volume <= 0.0:
        return 0.0
    a_lo, a_hi = a.center[1] - a.dims[0] / 2.0, a.center[1] + a.dims[0] / 2.0
    b_lo, b_hi = b.center[1] - b.dims[0] / 2.0, b.center[1] + b.dims[0] / 2.0
    overlap = min(a_hi, b_hi) - max(a_lo, b_lo)
    if overlap <= 0.0:
        return 0.0
    inter = _bev_intersection(a, b) * overlap
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def match_records(records, iou_fn, threshold):
    """Greedy confidence-ordered matching across frames.

    Returns (flags, n_gt) where flags is one (confidence, is_tp) per
    detection, sorted by descending confidence (ties broken by input
    order, so results are deterministic).
    """
    n_gt = sum(len(r.gts) for r in records)
    ranked = []
    seq = 0
    for frame, record in enumerate(records):
        for det in record.detections:
            ranked.append((-det.confidence, seq, frame, det))
            seq += 1
    ranked.sort(key=lambda item: item[:2])
    taken = [set() for _ in records]
    flags = []
    for neg_conf, _, frame, det in ranked:
        best_iou, best_idx = None, None
        for idx, gt in enumerate(records[frame].gts):
            if idx in taken[frame]:
                continue
            iou = iou_fn(det.box, gt)
            if iou < threshold:
                continue
            if best_iou is None or iou > best_iou:
                best_iou, best_idx = iou, idx
        if best_idx is not None:
            taken[frame].add(best_idx)
            flags.append((-neg_conf, True))
        else:
            flags.append((-neg_conf, False))
    return flags, n_gt


def ap_r40(records, iou_fn=bev_iou, threshold=0.5):
    """Average precision interpolated at the 40 recall levels 1/40 .. 1.

    At each level the contribution is the maximum precision achieved at
    any recall greater or equal to it (zero if that recall is never
    reached). Raises EmptyGroundTruth when no ground truth exists.
    """
    flags, n_gt = match_records(records, iou_fn, threshold)
    if n_gt == 0:
        raise EmptyGroundTruth("no ground-truth boxes; AP is undefined")
    if not flags:
        return 0.0
    tp = 0
    recalls, precisions = [], []
    for rank, (_, is_tp) in enumerate(flags, start=1):
        tp += 1 if is_tp else 0
        recalls.append(tp / n_gt)
        precisions.append(tp / rank)
    recalls = np.asarray(recalls)
    precisions = np.asarray(precisions)
    total = 0.0
    for level in _RECALL_LEVELS:
        reachable = precisions[recalls >= level]
        if reachable.size:
            total += reachable.max()
    return total / 40.0
