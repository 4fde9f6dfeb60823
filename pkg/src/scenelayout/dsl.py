"""The scene-program text format: grammar, parser, and serializer.

One statement per line, two statement forms:

    <id>.set_pose(x=<num>, y=<num>, z=<num>, rotation=<deg>)
    constraints.<kind>(<id>, <id-or-wall>[, named args])

Comments start with ``#``; blank lines are ignored. Angles are degrees in
the surface syntax and radians internally. The parser is total: malformed or
unknown-id statements produce a diagnostic and are skipped, every byte
sequence yields a (possibly empty) program, and removing a bad line never
changes how other lines parse.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Collection

from .core import Pose, Relation, RelationKind, SceneProgram, WALL_IDS

FILE_EXTENSION = ".scene"

_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"

_POSE_RE = re.compile(rf"^(?P<id>{_IDENT})\s*\.\s*set_pose\s*\((?P<args>.*)\)\s*$")
_REL_RE = re.compile(rf"^constraints\s*\.\s*(?P<kind>{_IDENT})\s*\((?P<args>.*)\)\s*$")
_KWARG_RE = re.compile(rf"^(?P<name>{_IDENT})\s*=\s*(?P<value>{_NUM})$")
_ID_ARG_RE = re.compile(rf"^{_IDENT}$")
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)(?:```|\Z)", re.DOTALL)

_RELATION_KINDS = {k.value: k for k in RelationKind}


@dataclass(frozen=True)
class ProgramText:
    source: str
    origin: str = "inline"  # vlm_response | file | inline


@dataclass(frozen=True)
class Diagnostic:
    line: int  # 1-based
    column: int  # 1-based
    severity: str  # error | warning
    message: str

    def render(self) -> str:
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


def extract_code_block(response: str) -> ProgramText:
    """Contents of the first triple-backtick fence, or the whole response.

    A language tag on the fence line is stripped along with the fence.
    """
    match = _FENCE_RE.search(response)
    if match:
        return ProgramText(match.group(1), origin="vlm_response")
    return ProgramText(response, origin="vlm_response")


def _split_args(raw: str) -> list[str]:
    parts = [p.strip() for p in raw.split(",")]
    return [p for p in parts if p] if any(p for p in parts) else []


def _parse_kwargs(parts: list[str], line_no: int, col: int,
                  diags: list[Diagnostic]) -> dict[str, float] | None:
    kwargs: dict[str, float] = {}
    for part in parts:
        m = _KWARG_RE.match(part)
        if not m:
            diags.append(Diagnostic(line_no, col, "error", f"expected name=<number>, got {part!r}"))
            return None
        name = m.group("name")
        if name in kwargs:
            diags.append(Diagnostic(line_no, col, "error", f"duplicate argument {name!r}"))
            return None
        kwargs[name] = float(m.group("value"))
    return kwargs


def parse_program(text: ProgramText | str, known_assets: Collection[str],
                  known_walls: Collection[str] = WALL_IDS,
                  group_label: str | None = None) -> tuple[SceneProgram, list[Diagnostic]]:
    """Parse a scene program, recovering from any malformed line.

    Only statements whose asset ids appear in ``known_assets`` (and wall ids
    in ``known_walls``) are accepted; everything else is skipped with an
    error diagnostic. Never raises on bad input.
    """
    source = text.source if isinstance(text, ProgramText) else text
    known_assets = set(known_assets)
    known_walls = set(known_walls)
    poses: dict[str, Pose] = {}
    relations: list[Relation] = []
    diags: list[Diagnostic] = []

    for line_no, raw_line in enumerate(source.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        pose_match = _POSE_RE.match(line)
        if pose_match:
            _parse_pose(pose_match, line_no, known_assets, poses, diags)
            continue
        rel_match = _REL_RE.match(line)
        if rel_match:
            _parse_relation(rel_match, line_no, known_assets, known_walls, relations, diags)
            continue
        diags.append(Diagnostic(line_no, 1, "error", f"unrecognized statement: {line!r}"))

    return SceneProgram(poses=poses, relations=tuple(relations), group_label=group_label), diags


def _parse_pose(match: re.Match, line_no: int, known_assets: set[str],
                poses: dict[str, Pose], diags: list[Diagnostic]) -> None:
    asset_id = match.group("id")
    col = match.start("args") + 1
    if asset_id not in known_assets:
        diags.append(Diagnostic(line_no, 1, "error", f"unknown asset id {asset_id!r}"))
        return
    parts = _split_args(match.group("args"))
    kwargs = _parse_kwargs(parts, line_no, col, diags)
    if kwargs is None:
        return
    missing = {"x", "y", "z", "rotation"} - kwargs.keys()
    if missing:
        diags.append(Diagnostic(
            line_no, col, "error", f"set_pose missing argument(s): {', '.join(sorted(missing))}"
        ))
        return
    extra = kwargs.keys() - {"x", "y", "z", "rotation"}
    if extra:
        diags.append(Diagnostic(
            line_no, col, "warning", f"ignoring unknown argument(s): {', '.join(sorted(extra))}"
        ))
    if asset_id in poses:
        diags.append(Diagnostic(line_no, 1, "warning", f"pose for {asset_id!r} redefined"))
    try:
        poses[asset_id] = Pose(
            kwargs["x"], kwargs["y"], kwargs["z"], math.radians(kwargs["rotation"])
        )
    except ValueError as exc:
        diags.append(Diagnostic(line_no, col, "error", str(exc)))


_REL_ARITY = {
    RelationKind.DISTANCE: ({"min", "max"}, set()),
    RelationKind.ON_TOP_OF: (set(), set()),
    RelationKind.ALIGN_WITH: ({"angle"}, set()),
    RelationKind.POINT_TOWARDS: ({"angle"}, set()),
    RelationKind.AGAINST_WALL: (set(), set()),
}


def _parse_relation(match: re.Match, line_no: int, known_assets: set[str],
                    known_walls: set[str], relations: list[Relation],
                    diags: list[Diagnostic]) -> None:
    kind_name = match.group("kind")
    col = match.start("kind") + 1
    kind = _RELATION_KINDS.get(kind_name)
    if kind is None:
        diags.append(Diagnostic(line_no, col, "error", f"unknown relation kind {kind_name!r}"))
        return
    parts = _split_args(match.group("args"))
    id_parts = [p for p in parts if _ID_ARG_RE.match(p)]
    kw_parts = [p for p in parts if not _ID_ARG_RE.match(p)]
    if len(id_parts) != 2:
        diags.append(Diagnostic(
            line_no, col, "error",
            f"{kind_name} needs a subject and a target, got {len(id_parts)} id(s)"
        ))
        return
    subject, target = id_parts
    if subject not in known_assets:
        diags.append(Diagnostic(line_no, col, "error", f"unknown asset id {subject!r}"))
        return
    if kind is RelationKind.AGAINST_WALL:
        if target not in known_walls:
            diags.append(Diagnostic(line_no, col, "error", f"unknown wall id {target!r}"))
            return
    elif target not in known_assets:
        diags.append(Diagnostic(line_no, col, "error", f"unknown asset id {target!r}"))
        return
    kwargs = _parse_kwargs(kw_parts, line_no, col, diags)
    if kwargs is None:
        return
    allowed, _ = _REL_ARITY[kind]
    unknown = kwargs.keys() - allowed
    if unknown:
        diags.append(Diagnostic(
            line_no, col, "error",
            f"{kind_name} does not take argument(s): {', '.join(sorted(unknown))}"
        ))
        return
    try:
        if kind is RelationKind.DISTANCE:
            relation = Relation(kind, subject, target,
                                d_min=kwargs.get("min", 0.0), d_max=kwargs.get("max"))
        elif kind in (RelationKind.ALIGN_WITH, RelationKind.POINT_TOWARDS):
            relation = Relation(kind, subject, target,
                                phi=math.radians(kwargs.get("angle", 0.0)))
        else:
            relation = Relation(kind, subject, target)
    except ValueError as exc:
        diags.append(Diagnostic(line_no, col, "error", str(exc)))
        return
    relations.append(relation)


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def serialize_program(program: SceneProgram) -> ProgramText:
    """Canonical text: poses sorted by id, then relations in declaration order.

    Numbers are printed with 4 decimal places and angles in degrees, so
    ``parse(serialize(p))`` reproduces ``p`` up to that quantization.
    """
    lines: list[str] = []
    for aid in sorted(program.poses):
        p = program.poses[aid]
        lines.append(
            f"{aid}.set_pose(x={_fmt(p.x)}, y={_fmt(p.y)}, z={_fmt(p.z)}, "
            f"rotation={_fmt(math.degrees(p.theta))})"
        )
    for rel in program.relations:
        if rel.kind is RelationKind.DISTANCE:
            args = f"{rel.subject}, {rel.target}, min={_fmt(rel.d_min)}"
            if rel.d_max is not None and math.isfinite(rel.d_max):
                args += f", max={_fmt(rel.d_max)}"
        elif rel.kind in (RelationKind.ALIGN_WITH, RelationKind.POINT_TOWARDS):
            args = f"{rel.subject}, {rel.target}, angle={_fmt(math.degrees(rel.phi or 0.0))}"
        else:
            args = f"{rel.subject}, {rel.target}"
        lines.append(f"constraints.{rel.kind.value}({args})")
    body = "\n".join(lines)
    return ProgramText(body + "\n" if body else "", origin="inline")


def render_diagnostics(diags: list[Diagnostic]) -> str:
    return "\n".join(d.render() for d in diags)
