"""Self-consistent decoding: keep only relations satisfied at the initial poses.

A proposed relation survives iff its loss, evaluated at the initial pose
estimates, is at or below the per-kind threshold. on_top_of relations are
exempt and always retained. A second pass enforces that each asset holds at
most one orientational constraint (align_with / point_towards).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

from .core import (
    AssetSpec,
    Pose,
    Relation,
    RelationKind,
    SceneProgram,
    SceneState,
    ORIENTATIONAL_KINDS,
    WALL_IDS,
)
from .objectives import evaluate_relation

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = {
    RelationKind.DISTANCE: 0.05,
    RelationKind.ALIGN_WITH: 0.10,
    RelationKind.POINT_TOWARDS: 0.10,
    RelationKind.AGAINST_WALL: 0.50,
}


@dataclass(frozen=True)
class DecoderConfig:
    """Per-kind loss thresholds for the satisfaction indicator."""

    epsilon: dict[RelationKind, float] = field(default_factory=lambda: dict(DEFAULT_EPSILON))

    def __post_init__(self) -> None:
        for kind, eps in self.epsilon.items():
            if eps < 0:
                raise ValueError(f"epsilon for {kind.value} must be >= 0, got {eps}")

    def threshold(self, kind: RelationKind) -> float:
        return self.epsilon.get(kind, 0.0)


@dataclass(frozen=True)
class RelationDecision:
    relation: Relation
    initial_loss: float | None
    retained: bool
    reason: str

    def to_json(self) -> dict:
        data = self.relation.to_json()
        data["initial_loss"] = self.initial_loss
        data["retained"] = self.retained
        data["reason"] = self.reason
        return data


@dataclass
class DecodeReport:
    decisions: list[RelationDecision] = field(default_factory=list)

    @property
    def retained(self) -> list[RelationDecision]:
        return [d for d in self.decisions if d.retained]

    @property
    def dropped(self) -> list[RelationDecision]:
        return [d for d in self.decisions if not d.retained]

    def to_json(self) -> dict:
        return {
            "retained": [d.to_json() for d in self.retained],
            "dropped": [d.to_json() for d in self.dropped],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _resolution_context(
    program: SceneProgram, state: SceneState, inventory: Mapping[str, AssetSpec]
) -> tuple[dict[str, Pose], dict[str, AssetSpec]]:
    """Initial poses and specs visible to the decoder.

    Program poses shadow already-placed poses; placed assets remain available
    as relation targets.
    """
    poses = state.poses()
    poses.update(program.poses)
    specs = state.specs()
    for aid in program.poses:
        if aid not in specs and aid in inventory:
            specs[aid] = inventory[aid]
    return poses, specs


def _relation_known(rel: Relation, poses: Mapping[str, Pose],
                    specs: Mapping[str, AssetSpec]) -> str | None:
    if rel.subject not in poses or rel.subject not in specs:
        return f"unknown asset {rel.subject!r}"
    if rel.kind is RelationKind.AGAINST_WALL:
        return None if rel.target in WALL_IDS else f"unknown wall {rel.target!r}"
    if rel.target not in poses or rel.target not in specs:
        return f"unknown asset {rel.target!r}"
    return None


def _initial_loss(rel: Relation, poses: Mapping[str, Pose],
                  specs: Mapping[str, AssetSpec], state: SceneState) -> float:
    return evaluate_relation(rel, poses, specs, state.room).value


def filter_self_consistent(
    program: SceneProgram,
    state: SceneState,
    cfg: DecoderConfig | None = None,
    inventory: Mapping[str, AssetSpec] | None = None,
) -> tuple[SceneProgram, DecodeReport]:
    """Drop relations whose loss at the initial poses exceeds the threshold.

    on_top_of relations are always retained. Relations naming unknown assets
    are dropped with a diagnostic rather than failing the decode. Poses pass
    through unchanged, so filtering is idempotent.
    """
    cfg = cfg or DecoderConfig()
    inventory = inventory or {}
    poses, specs = _resolution_context(program, state, inventory)
    report = DecodeReport()
    kept: list[Relation] = []
    for rel in program.relations:
        problem = _relation_known(rel, poses, specs)
        if problem is not None:
            report.decisions.append(RelationDecision(rel, None, False, problem))
            logger.warning("dropping %s(%s, %s): %s", rel.kind.value, rel.subject, rel.target, problem)
            continue
        if rel.kind is RelationKind.ON_TOP_OF:
            loss = _initial_loss(rel, poses, specs, state)
            kept.append(rel)
            report.decisions.append(RelationDecision(rel, loss, True, "on_top_of is exempt"))
            continue
        try:
            loss = _initial_loss(rel, poses, specs, state)
        except ValueError as exc:
            report.decisions.append(RelationDecision(rel, None, False, str(exc)))
            continue
        eps = cfg.threshold(rel.kind)
        if loss <= eps:
            kept.append(rel)
            report.decisions.append(
                RelationDecision(rel, loss, True, f"loss {loss:.4g} <= epsilon {eps:.4g}")
            )
        else:
            report.decisions.append(
                RelationDecision(rel, loss, False, f"loss {loss:.4g} > epsilon {eps:.4g}")
            )
    return program.with_relations(kept), report


def dedupe_orientational(
    program: SceneProgram,
    state: SceneState,
    inventory: Mapping[str, AssetSpec] | None = None,
) -> tuple[SceneProgram, DecodeReport]:
    """Keep at most one orientational relation per subject asset.

    Among a subject's surviving align_with / point_towards relations the one
    with the lowest loss at the initial poses wins; ties go to the earliest
    declared.
    """
    inventory = inventory or {}
    poses, specs = _resolution_context(program, state, inventory)
    report = DecodeReport()

    best: dict[str, tuple[float, int]] = {}
    losses: dict[int, float] = {}
    for idx, rel in enumerate(program.relations):
        if rel.kind not in ORIENTATIONAL_KINDS:
            continue
        try:
            loss = _initial_loss(rel, poses, specs, state)
        except (ValueError, KeyError):
            loss = math.inf
        losses[idx] = loss
        if rel.subject not in best or loss < best[rel.subject][0]:
            best[rel.subject] = (loss, idx)

    kept: list[Relation] = []
    for idx, rel in enumerate(program.relations):
        if rel.kind not in ORIENTATIONAL_KINDS:
            kept.append(rel)
            continue
        if best[rel.subject][1] == idx:
            kept.append(rel)
            report.decisions.append(
                RelationDecision(rel, losses[idx], True, "lowest-loss orientational constraint")
            )
        else:
            report.decisions.append(
                RelationDecision(
                    rel, losses[idx], False,
                    f"subject {rel.subject} already holds a lower-loss orientational constraint",
                )
            )
    return program.with_relations(kept), report
