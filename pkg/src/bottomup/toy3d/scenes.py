"""Synthetic pinhole scenes for the depth-from-position experiment.

World model: a camera looks along +z from `camera_height` meters above a
flat ground plane. With the image origin at the BOTTOM-left, an object at
depth z touches the ground at row

    v_contact = v0 - focal * camera_height / z

so nearer objects sit lower in the image and ground depth grows
monotonically with the row index. The default principal row v0 equals the
image height: the horizon is the top edge and every background pixel is
ground.

Feature grids are procedural, not rendered RGB: channels encode what a
detection backbone could plausibly produce, and, crucially, the class
appearance carries NO information about physical size. Two objects with
the same class, depth, and appearance but different dimensions differ
only in how many pixels their boxes cover — the scale ambiguity a
size-only detector cannot resolve, while the ground contact row resolves
it exactly.

Channel layout (C = 16):
     0  drivable-ground indicator (clutter and objects clear it)
     1  ground disparity ramp (v0 - v) / v0; clutter dims it
     2  ground depth ramp z(v) / z_far, clipped; complements channel 1
  3-10  class appearance vector, identical for every size mode
    11  clutter indicator
    12  offset to box bottom edge / H   (object pixels)
    13  offset to box top edge / H
    14  offset to box left edge / W
    15  offset to box right edge / W

The offset channels make the 2D extent locally readable (channels 12+13
sum to the projected height), which is exactly the misleading cue the
ambiguity experiment needs the baseline to lean on.

Frames are regenerated from (seed, objects, camera) on load; the JSONL
dataset files carry no pixel data.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "CameraModel",
    "SceneObject",
    "SceneConfig",
    "FrameSpec",
    "RenderedFrame",
    "contact_row",
    "generate_frame_spec",
    "render_frame",
    "generate_scene",
    "make_dataset",
    "ambiguous_pairs",
    "save_dataset",
    "load_dataset",
]

N_CLASSES = 3
# base (h, w, l) per class; size modes scale all three
_BASE_DIMS = ((1.5, 1.7, 4.0), (1.9, 2.0, 5.2), (1.2, 0.7, 1.9))
_SIZE_MODES = (0.8, 1.25)

_APPEARANCE_CHANNELS = slice(3, 11)
_N_APPEARANCE = 8


@dataclass(frozen=True)
class CameraModel:
    focal: float = 96.0          # pixels
    u0: float = 48.0             # principal column
    v0: float = 96.0             # principal row, bottom-origin
    height: float = 1.5          # meters above the ground plane

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")
        if self.height <= 0:
            raise ValueError(f"camera height must be positive, got {self.height}")


@dataclass(frozen=True)
class SceneObject:
    depth_z: float
    lateral_x: float
    dims: tuple          # (h, w, l) meters
    yaw: float
    class_id: int

    def __post_init__(self):
        if self.depth_z <= 0:
            raise ValueError(f"depth must be positive, got {self.depth_z}")
        if min(self.dims) <= 0:
            raise ValueError(f"dims must be positive, got {self.dims}")


@dataclass(frozen=True)
class SceneConfig:
    image_h: int = 96
    image_w: int = 96
    channels: int = 16
    n_objects: tuple = (1, 3)          # inclusive range of plain objects
    depth_range: tuple = (2.5, 20.0)
    ambiguous_prob: float = 0.6        # chance the frame holds a same-depth pair
    clutter_range: tuple = (2, 5)
    camera: CameraModel = field(default_factory=CameraModel)

    def __post_init__(self):
        if self.n_objects[0] > self.n_objects[1] or self.n_objects[0] < 0:
            raise ValueError(f"bad object count range {self.n_objects}")
        if self.depth_range[0] >= self.depth_range[1] or self.depth_range[0] <= 0:
            raise ValueError(f"bad depth range {self.depth_range}")
        if self.channels != 16:
            raise ValueError("feature layout is defined for 16 channels")


@dataclass(frozen=True)
class FrameSpec:
    seed: int
    camera: CameraModel
    objects: tuple


@dataclass
class RenderedFrame:
    feature_grid: np.ndarray   # (H, W, C)
    gt_objects: list
    gt_boxes2d: np.ndarray     # (N, 4): u_left, v_bottom, width, height
    truncated: list
    spec: FrameSpec


def contact_row(camera, depth_z):
    """Bottom-origin image row where an object at `depth_z` meets the ground."""
    return camera.v0 - camera.focal * camera.height / depth_z


def class_appearance(class_id):
    """Size-independent appearance vector; a pure function of the class."""
    rng = np.random.default_rng(10_000 + class_id)
    return rng.uniform(0.3, 1.0, _N_APPEARANCE)


def _box2d(obj, camera):
    v_bottom = contact_row(camera, obj.depth_z)
    h2d = camera.focal * obj.dims[0] / obj.depth_z
    u_center = camera.u0 + camera.focal * obj.lateral_x / obj.depth_z
    half_lat = (obj.dims[2] * abs(np.sin(obj.yaw))
                + obj.dims[1] * abs(np.cos(obj.yaw))) / 2.0
    w2d = 2.0 * camera.focal * half_lat / obj.depth_z
    return np.array([u_center - w2d / 2.0, v_bottom, w2d, h2d])


def _sample_object(rng, config, class_id=None, depth=None, mode=None, jitter=None):
    camera = config.camera
    if class_id is None:
        class_id = int(rng.integers(N_CLASSES))
    if depth is None:
        depth = float(rng.uniform(*config.depth_range))
    if mode is None:
        mode = _SIZE_MODES[int(rng.integers(2))]
    if jitter is None:
        jitter = float(rng.uniform(0.95, 1.05))
    dims = tuple(d * mode * jitter for d in _BASE_DIMS[class_id])
    u_center = float(rng.uniform(10.0, config.image_w - 10.0))
    lateral = (u_center - camera.u0) * depth / camera.focal
    yaw = float(rng.uniform(-0.6, 0.6))
    return SceneObject(depth_z=depth, lateral_x=lateral, dims=dims,
                       yaw=yaw, class_id=class_id)


def _u_interval(obj, camera):
    box = _box2d(obj, camera)
    return box[0], box[0] + box[2]


def _overlaps(obj, others, camera, max_frac=0.08):
    # near-disjoint columns: an object's ground context below its contact
    # row should not be erased by another box in the same columns
    lo, hi = _u_interval(obj, camera)
    for other in others:
        olo, ohi = _u_interval(other, camera)
        inter = min(hi, ohi) - max(lo, olo)
        if inter > max_frac * min(hi - lo, ohi - olo):
            return True
    return False


def generate_frame_spec(seed, config=SceneConfig()):
    """Deterministic object layout for one frame."""
    rng = np.random.default_rng(seed)
    objects = []
    if rng.uniform() < config.ambiguous_prob:
        # same class, depth, appearance; only the size mode differs, so the
        # projected heights differ by exactly the mode ratio
        class_id = int(rng.integers(N_CLASSES))
        depth = float(rng.uniform(*config.depth_range))
        jitter = float(rng.uniform(0.95, 1.05))
        for attempt in range(16):
            pair = [
                _sample_object(rng, config, class_id, depth, _SIZE_MODES[0], jitter),
                _sample_object(rng, config, class_id, depth, _SIZE_MODES[1], jitter),
            ]
            if not _overlaps(pair[1], [pair[0]], config.camera):
                objects.extend(pair)
                break
    n_plain = int(rng.integers(config.n_objects[0], config.n_objects[1] + 1))
    for _ in range(n_plain):
        for attempt in range(8):
            candidate = _sample_object(rng, config)
            if not _overlaps(candidate, objects, config.camera):
                objects.append(candidate)
                break
    objects.sort(key=lambda o: (-o.depth_z, o.lateral_x))  # paint far to near
    return FrameSpec(seed=int(seed), camera=config.camera, objects=tuple(objects))


def render_frame(spec, config=SceneConfig()):
    """Materialize the feature grid; a pure function of the frame spec."""
    h, w, c = config.image_h, config.image_w, config.channels
    camera = spec.camera
    grid = np.zeros((h, w, c))
    rows = np.arange(h, dtype=np.float64)
    disparity = (camera.v0 - rows) / camera.v0
    grid[:, :, 0] = 1.0
    grid[:, :, 1] = disparity[:, None]
    z_far = config.depth_range[1]
    ground_depth = camera.focal * camera.height / np.maximum(
        camera.v0 - rows, 1e-9) / z_far
    grid[:, :, 2] = np.minimum(ground_depth, 1.25)[:, None]

    rng = np.random.default_rng([int(spec.seed), 77])
    n_clutter = int(rng.integers(config.clutter_range[0],
                                 config.clutter_range[1] + 1))
    for _ in range(n_clutter):
        # road clutter: dims the disparity ramp instead of encoding depth
        # faithfully; an unweighted scan averages this bias in, while the
        # clutter marker (channel 11) lets attention learn to skip it
        cw = int(rng.integers(6, 17))
        ch_ = int(rng.integers(4, 11))
        r0 = int(rng.integers(0, max(1, h - ch_)))
        c0 = int(rng.integers(0, max(1, w - cw)))
        patch = grid[r0:r0 + ch_, c0:c0 + cw]
        patch[:, :, 0] = 0.0
        patch[:, :, 1] *= rng.uniform(0.2, 0.8)
        patch[:, :, 2] *= rng.uniform(0.2, 0.8)
        patch[:, :, _APPEARANCE_CHANNELS] = 0.6 * rng.uniform(0.0, 1.0, _N_APPEARANCE)
        patch[:, :, 11] = 1.0

    boxes = []
    truncated = []
    for obj in spec.objects:
        box = _box2d(obj, camera)
        boxes.append(box)
        u_left, v_bottom, w2d, h2d = box
        v_top = v_bottom + h2d
        u_right = u_left + w2d
        truncated.append(not (u_left >= 0 and u_right <= w and v_top <= h))
        r0 = max(0, int(np.ceil(v_bottom - 1e-9)))
        r1 = min(h - 1, int(np.floor(v_top + 1e-9)))
        c0 = max(0, int(np.ceil(u_left - 1e-9)))
        c1 = min(w - 1, int(np.floor(u_right + 1e-9)))
        if r0 > r1 or c0 > c1:
            continue
        cell = grid[r0:r1 + 1, c0:c1 + 1]
        cell[:, :, 0] = 0.0
        cell[:, :, 1] = 0.0
        cell[:, :, 2] = 0.0
        cell[:, :, _APPEARANCE_CHANNELS] = class_appearance(obj.class_id)
        cell[:, :, 11] = 0.0
        rr = rows[r0:r1 + 1][:, None]
        cc = np.arange(c0, c1 + 1, dtype=np.float64)[None, :]
        cell[:, :, 12] = (rr - v_bottom) / h
        cell[:, :, 13] = (v_top - rr) / h
        cell[:, :, 14] = (cc - u_left) / w
        cell[:, :, 15] = (u_right - cc) / w

    return RenderedFrame(
        feature_grid=grid,
        gt_objects=list(spec.objects),
        gt_boxes2d=np.array(boxes) if boxes else np.zeros((0, 4)),
        truncated=truncated,
        spec=spec,
    )


def generate_scene(seed, config=SceneConfig()):
    """Layout plus rendered features in one call; deterministic per seed."""
    return render_frame(generate_frame_spec(seed, config), config)


def ambiguous_pairs(objects):
    """Index pairs sharing class and exact depth — the generator only ever
    assigns identical depths to intentional ambiguous pairs."""
    out = []
    for i in range(len(objects)):
        for j in range(i + 1, len(objects)):
            a, b = objects[i], objects[j]
            if a.class_id == b.class_id and a.depth_z == b.depth_z:
                out.append((i, j))
    return out


def _worker_count():
    env = os.environ.get("BOTTOMUP_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def make_dataset(base_seed, count, config=SceneConfig(), ambiguous_only=False):
    """Frame specs for `count` frames; generation is parallel but ordered."""
    if ambiguous_only:
        config = replace(config, ambiguous_prob=1.0, n_objects=(0, 0))
    seeds = [int(s) for s in
             np.random.SeedSequence(base_seed).generate_state(count, np.uint64)]
    workers = _worker_count()
    if workers == 1:
        return [generate_frame_spec(s, config) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: generate_frame_spec(s, config), seeds))


def save_dataset(path, specs):
    """One JSON line per frame: {seed, objects, camera}; floats via repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for spec in specs:
            record = {
                "seed": spec.seed,
                "objects": [
                    {"x": o.lateral_x, "z": o.depth_z,
                     "h": o.dims[0], "w": o.dims[1], "l": o.dims[2],
                     "yaw": o.yaw, "class": o.class_id}
                    for o in spec.objects
                ],
                "camera": {"f": spec.camera.focal, "u0": spec.camera.u0,
                           "v0": spec.camera.v0, "height": spec.camera.height},
            }
            fh.write(json.dumps(record) + "\n")


def load_dataset(path):
    specs = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            cam = CameraModel(focal=rec["camera"]["f"], u0=rec["camera"]["u0"],
                              v0=rec["camera"]["v0"],
                              height=rec["camera"]["height"])
            objs = tuple(
                SceneObject(depth_z=o["z"], lateral_x=o["x"],
                            dims=(o["h"], o["w"], o["l"]), yaw=o["yaw"],
                            class_id=o["class"])
                for o in rec["objects"]
            )
            specs.append(FrameSpec(seed=rec["seed"], camera=cam, objects=objs))
    return specs
