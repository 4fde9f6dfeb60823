"""Projected gradient descent over free pose variables.

Plain gradient descent with per-variable-class step sizes; every fixed number
of iterations (and before every checkpoint) the free footprints are projected
back into the room, and stacked assets get their z reassigned from their
supports. The returned poses are the best recorded checkpoint, which makes
"final loss <= initial loss" exact rather than approximate.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    AssetSpec,
    DuplicateAssetError,
    Pose,
    Relation,
    RelationKind,
    Room,
    SceneError,
    SceneProgram,
    SceneState,
    normalize_theta,
)
from .objectives import ObjectiveConfig, TotalLossEvaluator

_COINCIDENT_EPS = 1e-9
_NUDGE = 1e-3  # meters; breaks the zero-gradient symmetry of exactly stacked centers


class InfeasibleProjectionError(SceneError):
    """The rotated footprint cannot fit inside the room at its current yaw."""


@dataclass(frozen=True)
class OptimizerConfig:
    iterations: int = 1000
    step_size_xy: float = 0.01
    step_size_theta: float = 0.05
    project_every: int = 50
    record_every: int = 100

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_size_xy <= 0 or self.step_size_theta <= 0:
            raise ValueError("step sizes must be positive")
        if self.project_every < 1 or self.record_every < 1:
            raise ValueError("project_every and record_every must be >= 1")


@dataclass(frozen=True)
class Checkpoint:
    iteration: int
    total: float
    semantic: float
    physics: float


@dataclass
class OptimizationTrace:
    checkpoints: list[Checkpoint] = field(default_factory=list)
    final_poses: dict[str, Pose] = field(default_factory=dict)
    duration_s: float = 0.0
    aborted: str | None = None

    @property
    def initial_total(self) -> float:
        return self.checkpoints[0].total

    @property
    def final_total(self) -> float:
        return min(c.total for c in self.checkpoints)

    def to_json(self) -> dict:
        return {
            "checkpoints": [
                {"iteration": c.iteration, "total": c.total,
                 "semantic": c.semantic, "physics": c.physics}
                for c in self.checkpoints
            ],
            "final_poses": {
                aid: {"x": p.x, "y": p.y, "z": p.z, "rotation_deg": math.degrees(p.theta)}
                for aid, p in self.final_poses.items()
            },
            "duration_s": self.duration_s,
            "aborted": self.aborted,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def rotated_half_span(half_x: float, half_y: float, theta: float) -> tuple[float, float]:
    """Half extents of the axis-aligned hull of a rotated footprint."""
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    return (half_x * c + half_y * s, half_x * s + half_y * c)


def project_into_room(pose: Pose, dims: Sequence[float], room: Room,
                      asset_id: str | None = None) -> Pose:
    """Minimal translation that puts the rotated footprint hull inside the room.

    Rotation and z are untouched; a pose already inside comes back unchanged.
    """
    ex, ey = rotated_half_span(dims[0] / 2.0, dims[1] / 2.0, pose.theta)
    if 2.0 * ex > room.width + 1e-12 or 2.0 * ey > room.depth + 1e-12:
        who = asset_id or "asset"
        raise InfeasibleProjectionError(
            f"{who}: footprint hull {2*ex:.3f} x {2*ey:.3f} m does not fit "
            f"room {room.width} x {room.depth} m at rotation {pose.theta:.3f}"
        )
    x = min(max(pose.x, ex), room.width - ex)
    y = min(max(pose.y, ey), room.depth - ey)
    if x == pose.x and y == pose.y:
        return pose
    return pose.moved(x=x, y=y)


class _Run:
    """Working arrays for one optimization over a scene."""

    def __init__(self, state: SceneState, relations: Sequence[Relation],
                 obj_cfg: ObjectiveConfig, opt_cfg: OptimizerConfig):
        self.state = state
        self.opt_cfg = opt_cfg
        self.evaluator = TotalLossEvaluator(state, relations, obj_cfg)
        self.order = self.evaluator.order
        self.free = self.evaluator.free
        self.half = self.evaluator.half
        self.heights = self.evaluator.heights
        poses = [state.get(a).pose for a in self.order]
        self.xyt = np.array([[p.x, p.y, p.theta] for p in poses], dtype=float)
        self.z = np.array([p.z for p in poses], dtype=float)
        # Stacking order follows relation declaration order each refresh.
        self.stacks = [
            (self.evaluator.index[r.subject], self.evaluator.index[r.target])
            for r in relations
            if r.kind is RelationKind.ON_TOP_OF
        ]

    def refresh_stacked_z(self) -> None:
        for i, j in self.stacks:
            self.z[i] = self.z[j] + self.heights[j] / 2.0 + self.heights[i] / 2.0

    def project_free(self) -> None:
        room = self.state.room
        for k in np.flatnonzero(self.free):
            hx, hy = self.half[k]
            ex, ey = rotated_half_span(hx, hy, self.xyt[k, 2])
            if 2.0 * ex > room.width + 1e-12 or 2.0 * ey > room.depth + 1e-12:
                raise InfeasibleProjectionError(
                    f"{self.order[k]}: footprint hull {2*ex:.3f} x {2*ey:.3f} m does not fit "
                    f"room {room.width} x {room.depth} m"
                )
            self.xyt[k, 0] = min(max(self.xyt[k, 0], ex), room.width - ex)
            self.xyt[k, 1] = min(max(self.xyt[k, 1], ey), room.depth - ey)

    def separate_coincident(self) -> None:
        """Nudge exactly stacked centers apart; DIoU's gradient vanishes there.

        Deterministic: coincident pairs are found in index order and the
        later, free asset of each pair moves by a fixed small offset whose
        direction rotates with the pair count.
        """
        xy = self.xyt[:, :2]
        diff = xy[:, None, :] - xy[None, :, :]
        d2 = (diff**2).sum(axis=-1)
        i_idx, j_idx = np.triu_indices(len(self.order), k=1)
        hits = np.flatnonzero(d2[i_idx, j_idx] <= _COINCIDENT_EPS**2)
        bumped = 0
        for h in hits:
            i, j = int(i_idx[h]), int(j_idx[h])
            if self.free[j]:
                mover = j
            elif self.free[i]:
                mover = i
            else:
                continue
            angle = 2.399963229728653 * bumped  # golden angle spreads repeats
            self.xyt[mover, 0] += _NUDGE * math.cos(angle)
            self.xyt[mover, 1] += _NUDGE * math.sin(angle)
            bumped += 1

    def poses(self) -> dict[str, Pose]:
        return {
            aid: Pose(self.xyt[k, 0], self.xyt[k, 1], self.z[k], self.xyt[k, 2])
            for k, aid in enumerate(self.order)
        }

    def write_back(self) -> None:
        for k, aid in enumerate(self.order):
            if self.free[k]:
                self.state.set_pose(
                    aid, Pose(self.xyt[k, 0], self.xyt[k, 1], self.z[k], self.xyt[k, 2])
                )


def optimize(state: SceneState, relations: Sequence[Relation],
             obj_cfg: ObjectiveConfig | None = None,
             opt_cfg: OptimizerConfig | None = None) -> tuple[SceneState, OptimizationTrace]:
    """Run projected gradient descent on the non-frozen assets of a scene.

    Relations are assumed to be already decoded. Checkpoints (including the
    initialization) are taken at projected iterates; the pose set with the
    lowest recorded total loss is written back into the state and returned.
    On a non-finite loss or gradient the run aborts with a diagnostic and
    the best checkpoint so far still wins.
    """
    obj_cfg = obj_cfg or ObjectiveConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    started = time.perf_counter()
    run = _Run(state, relations, obj_cfg, opt_cfg)
    trace = OptimizationTrace()

    run.refresh_stacked_z()
    run.separate_coincident()
    run.project_free()

    best_total = math.inf
    best_snapshot: tuple[np.ndarray, np.ndarray] | None = None

    def record(iteration: int) -> None:
        nonlocal best_total, best_snapshot
        result = run.evaluator.evaluate(run.xyt, run.z)
        trace.checkpoints.append(
            Checkpoint(iteration, result.total, result.semantic, result.physics)
        )
        if result.total < best_total or best_snapshot is None:
            best_total = result.total if math.isfinite(result.total) else best_total
            best_snapshot = (run.xyt.copy(), run.z.copy())

    record(0)

    lr = np.array([opt_cfg.step_size_xy, opt_cfg.step_size_xy, opt_cfg.step_size_theta])
    for t in range(1, opt_cfg.iterations + 1):
        result = run.evaluator.evaluate(run.xyt, run.z)
        if not (math.isfinite(result.total) and np.isfinite(result.gradient).all()):
            trace.aborted = f"non-finite loss or gradient at iteration {t}"
            break
        run.xyt[run.free] -= lr * result.gradient[run.free]
        for k in np.flatnonzero(run.free):
            run.xyt[k, 2] = normalize_theta(run.xyt[k, 2])
        run.refresh_stacked_z()
        run.separate_coincident()
        at_end = t == opt_cfg.iterations
        if t % opt_cfg.project_every == 0 or t % opt_cfg.record_every == 0 or at_end:
            run.project_free()
        if t % opt_cfg.record_every == 0 or at_end:
            record(t)
            if at_end:
                break

    if best_snapshot is not None:
        run.xyt, run.z = best_snapshot
    run.write_back()
    trace.final_poses = state.poses()
    trace.duration_s = time.perf_counter() - started
    return state, trace


def place_group(state: SceneState, program: SceneProgram,
                inventory: Mapping[str, AssetSpec],
                obj_cfg: ObjectiveConfig | None = None,
                opt_cfg: OptimizerConfig | None = None) -> tuple[SceneState, OptimizationTrace]:
    """Add one decoded group at its initial poses, optimize it, freeze it.

    Previously placed assets stay frozen and act as colliders; relations may
    reference them, in which case only the new assets move. After the run the
    group is frozen for subsequent groups.
    """
    for aid in program.poses:
        if aid in state:
            raise DuplicateAssetError(f"asset {aid!r} is already placed")
        if aid not in inventory:
            raise SceneError(f"asset {aid!r} is not in the inventory")
    for aid, pose in program.poses.items():
        state.add(inventory[aid], pose, frozen=False)
    state, trace = optimize(state, program.relations, obj_cfg, opt_cfg)
    state.freeze(program.poses.keys())
    return state, trace
