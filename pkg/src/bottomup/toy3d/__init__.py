"""Synthetic monocular depth-ambiguity benchmark: scenes, model, training."""

from .model import VARIANTS, ToyModel, build_model
from .scenes import (
    CameraModel,
    FrameSpec,
    RenderedFrame,
    SceneConfig,
    SceneObject,
    ambiguous_pairs,
    contact_row,
    generate_frame_spec,
    generate_scene,
    load_dataset,
    make_dataset,
    render_frame,
    save_dataset,
)
from .train import (
    EvalReport,
    TrainConfig,
    TrainingDiverged,
    decode_detections,
    eval_toy,
    mae_report,
    train_toy,
)

__all__ = [
    "VARIANTS",
    "ToyModel",
    "build_model",
    "CameraModel",
    "FrameSpec",
    "RenderedFrame",
    "SceneConfig",
    "SceneObject",
    "ambiguous_pairs",
    "contact_row",
    "generate_frame_spec",
    "generate_scene",
    "load_dataset",
    "make_dataset",
    "render_frame",
    "save_dataset",
    "EvalReport",
    "TrainConfig",
    "TrainingDiverged",
    "decode_detections",
    "eval_toy",
    "mae_report",
    "train_toy",
]
