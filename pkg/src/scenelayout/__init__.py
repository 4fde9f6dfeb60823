"""Differentiable 3D scene layout: relation losses, PGD, and a replayable VLM pipeline."""

from .core import (
    AssetSpec,
    Placement,
    Pose,
    Relation,
    RelationKind,
    Room,
    SceneProgram,
    SceneState,
    Wall,
    load_inventory,
    load_layout,
    load_room,
    normalize_theta,
    validate_scene,
)
from .decoder import DecoderConfig, dedupe_orientational, filter_self_consistent
from .dsl import Diagnostic, ProgramText, extract_code_block, parse_program, serialize_program
from .geometry import Obb2, Obb3, corners, diou, iou, point_segment_distance, polygon_intersection_area
from .metrics import SceneScore, collision_free, in_boundary, judge_semantics, score_suite
from .objectives import (
    LossTerm,
    ObjectiveConfig,
    check_gradient,
    loss_against_wall,
    loss_align_with,
    loss_distance,
    loss_on_top_of,
    loss_physics_pair,
    loss_point_towards,
    total_loss,
)
from .optimizer import OptimizationTrace, OptimizerConfig, optimize, place_group, project_into_room
from .render import RenderOptions, render_asset_panel, render_topdown
from .vlm import ChatRequest, ReplayMode, complete, group_assets, propose_layout

__version__ = "0.1.0"

__all__ = [
    "AssetSpec", "Placement", "Pose", "Relation", "RelationKind", "Room",
    "SceneProgram", "SceneState", "Wall",
    "load_inventory", "load_layout", "load_room", "normalize_theta", "validate_scene",
    "DecoderConfig", "dedupe_orientational", "filter_self_consistent",
    "Diagnostic", "ProgramText", "extract_code_block", "parse_program", "serialize_program",
    "Obb2", "Obb3", "corners", "diou", "iou", "point_segment_distance",
    "polygon_intersection_area",
    "SceneScore", "collision_free", "in_boundary", "judge_semantics", "score_suite",
    "LossTerm", "ObjectiveConfig", "check_gradient", "loss_against_wall", "loss_align_with",
    "loss_distance", "loss_on_top_of", "loss_physics_pair", "loss_point_towards", "total_loss",
    "OptimizationTrace", "OptimizerConfig", "optimize", "place_group", "project_into_room",
    "RenderOptions", "render_asset_panel", "render_topdown",
    "ChatRequest", "ReplayMode", "complete", "group_assets", "propose_layout",
    "__version__",
]
