"""Physical-plausibility metrics and optional VLM-judged semantic scores.

Collision-Free and In-Boundary are deterministic geometry checks; the judged
scores go through the same chat client as generation, so they replay offline.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import vlm as vlm_client
from .core import Relation, RelationKind, SceneState
from .geometry import box3_of, footprint, footprint_hull_protrusion, iou
from .render import RenderOptions, render_topdown
from .vlm import ChatRequest, ImagePart, Message, ReplayMode

logger = logging.getLogger(__name__)

DEFAULT_IOU_TOLERANCE = 0.01
DEFAULT_BOUNDARY_SLACK = 0.01


@dataclass(frozen=True)
class Violation:
    kind: str  # collision | out_of_bounds
    ids: tuple[str, ...]
    measure: float

    def to_json(self) -> dict:
        return {"kind": self.kind, "ids": list(self.ids), "measure": self.measure}


@dataclass
class JudgedScores:
    position: int | None = None
    rotation: int | None = None
    psa: int | None = None
    diagnostics: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "position": self.position,
            "rotation": self.rotation,
            "psa": self.psa,
            "diagnostics": list(self.diagnostics),
        }


@dataclass
class SceneScore:
    collision_free: bool
    in_boundary: bool
    violations: list[Violation]
    judged: JudgedScores | None = None

    def to_json(self) -> dict:
        data = {
            "collision_free": self.collision_free,
            "in_boundary": self.in_boundary,
            "violations": [v.to_json() for v in self.violations],
        }
        if self.judged is not None:
            data["judged"] = self.judged.to_json()
        return data


def on_top_pairs(relations: Sequence[Relation]) -> frozenset[frozenset[str]]:
    """Unordered asset-id pairs linked by an on_top_of relation."""
    return frozenset(
        frozenset((r.subject, r.target))
        for r in relations
        if r.kind is RelationKind.ON_TOP_OF
    )


def collision_free(state: SceneState, tolerance_iou: float = DEFAULT_IOU_TOLERANCE,
                   relations: Sequence[Relation] = ()) -> tuple[bool, list[Violation]]:
    """True iff every unordered pair not linked by on_top_of has 3D IoU <= tolerance."""
    exempt = on_top_pairs(relations)
    ids = state.ids()
    boxes = {aid: box3_of(state.get(aid).spec, state.get(aid).pose) for aid in ids}
    violations: list[Violation] = []
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            pair = frozenset((ids[a], ids[b]))
            if pair in exempt:
                continue
            value = iou(boxes[ids[a]], boxes[ids[b]], mode="xyz")
            if value > tolerance_iou:
                violations.append(Violation("collision", (ids[a], ids[b]), value))
    return not violations, violations


def in_boundary(state: SceneState, slack: float = DEFAULT_BOUNDARY_SLACK
                ) -> tuple[bool, list[Violation]]:
    """True iff every footprint hull fits the room rectangle expanded by slack."""
    room = state.room
    violations: list[Violation] = []
    for placed in state:
        protrusion = footprint_hull_protrusion(
            footprint(placed.pose, placed.spec.dims), room.width, room.depth
        )
        if protrusion > slack:
            violations.append(Violation("out_of_bounds", (placed.spec.id,), protrusion))
    return not violations, violations


def score_scene(state: SceneState, relations: Sequence[Relation] = (),
                tolerance_iou: float = DEFAULT_IOU_TOLERANCE,
                slack: float = DEFAULT_BOUNDARY_SLACK) -> SceneScore:
    cf, cf_violations = collision_free(state, tolerance_iou, relations)
    ib, ib_violations = in_boundary(state, slack)
    return SceneScore(cf, ib, cf_violations + ib_violations)


@dataclass
class SuiteReport:
    rows: list[dict]
    cf_percent: float
    ib_percent: float

    def to_json(self) -> dict:
        return {"cf_percent": self.cf_percent, "ib_percent": self.ib_percent, "scenes": self.rows}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def to_csv(self) -> str:
        lines = ["index,collision_free,in_boundary,violations"]
        for row in self.rows:
            lines.append(
                f"{row['index']},{row['collision_free']},{row['in_boundary']},{row['violations']}"
            )
        return "\n".join(lines) + "\n"


def score_suite(scenes: Sequence[SceneState],
                relations_per_scene: Sequence[Sequence[Relation]] | None = None,
                tolerance_iou: float = DEFAULT_IOU_TOLERANCE,
                slack: float = DEFAULT_BOUNDARY_SLACK) -> SuiteReport:
    """Aggregate CF/IB percentages (1 decimal) over a nonempty scene list."""
    if not scenes:
        raise ValueError("score_suite needs at least one scene")
    if relations_per_scene is not None and len(relations_per_scene) != len(scenes):
        raise ValueError("relations_per_scene must match scenes in length")
    rows = []
    cf_count = ib_count = 0
    for idx, state in enumerate(scenes):
        rels = relations_per_scene[idx] if relations_per_scene is not None else ()
        score = score_scene(state, rels, tolerance_iou, slack)
        cf_count += score.collision_free
        ib_count += score.in_boundary
        rows.append({
            "index": idx,
            "collision_free": score.collision_free,
            "in_boundary": score.in_boundary,
            "violations": len(score.violations),
        })
    n = len(scenes)
    return SuiteReport(rows, round(100.0 * cf_count / n, 1), round(100.0 * ib_count / n, 1))


_SCORE_RE = re.compile(r"SCORE\s*:?\s*(\d{1,3})", re.IGNORECASE)
_INT_RE = re.compile(r"\b(\d{1,3})\b")


def parse_judge_score(text: str) -> int | None:
    """Extract a 0-100 integer from a judge reply; None when there isn't one."""
    match = _SCORE_RE.search(text) or _INT_RE.search(text)
    if not match:
        return None
    value = int(match.group(1))
    return value if 0 <= value <= 100 else None


def judge_semantics(state: SceneState, instruction: str, mode: ReplayMode,
                    relations: Sequence[Relation] = (),
                    tolerance_iou: float = DEFAULT_IOU_TOLERANCE,
                    slack: float = DEFAULT_BOUNDARY_SLACK,
                    *, model: str | None = None,
                    _complete: Callable | None = None) -> JudgedScores:
    """VLM-judged positional, rotational, and overall-alignment scores.

    The PSA score is forced to 0 whenever the scene fails the deterministic
    collision-free or in-boundary check, whatever the judge would have said.
    """
    scores = JudgedScores()
    cf, _ = collision_free(state, tolerance_iou, relations)
    ib, _ = in_boundary(state, slack)
    image = render_topdown(state, RenderOptions(format="png"))
    complete = _complete or vlm_client.complete

    def ask(prompt_name: str) -> int | None:
        prompt = vlm_client.load_prompt(prompt_name).format(instruction=instruction)
        req = ChatRequest(
            model=model or vlm_client._resolve_model(None),
            messages=(Message("user", (prompt, ImagePart("image/png", image))),),
            temperature=0.0,
        )
        text = complete(req, mode)
        value = parse_judge_score(text)
        if value is None:
            scores.diagnostics.append(f"{prompt_name}: no 0-100 score in judge reply")
        return value

    scores.position = ask("judge_position")
    scores.rotation = ask("judge_rotation")
    if not (cf and ib):
        scores.psa = 0
        scores.diagnostics.append("psa forced to 0: scene is not physically feasible")
    else:
        scores.psa = ask("judge_psa")
    return scores
