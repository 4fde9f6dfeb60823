"""Command-line entry point; every pipeline stage is its own subcommand.

`generate` runs the full VLM pipeline (grouping, per-group proposal, decode,
optimize); `optimize` runs decode + optimization on a hand-written program
with no VLM involved; `eval` and `render` work from layout files. Exit codes:
0 success, 1 bad inputs, 2 partial placement (some groups failed; the failed
assets are reported, never silently placed).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .core import (
    AssetSpec,
    InventoryError,
    Room,
    SceneError,
    SceneProgram,
    SceneState,
    WALL_IDS,
    layout_to_json,
    load_inventory,
    load_layout,
    load_room,
)
from .decoder import DecoderConfig, dedupe_orientational, filter_self_consistent
from .dsl import ProgramText, parse_program, render_diagnostics, serialize_program
from .metrics import judge_semantics, score_scene
from .objectives import ObjectiveConfig
from .optimizer import OptimizerConfig, place_group
from .render import RenderOptions, render_topdown
from .vlm import CacheMissError, ReplayMode, VlmError, group_assets, list_cache, propose_layout

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


@dataclass
class RunManifest:
    room_file: Path
    inventory_file: Path
    instruction: str
    mode: ReplayMode
    out_dir: Path
    config_file: Path | None = None
    seed: int = 0

    def check(self) -> None:
        for path in (self.room_file, self.inventory_file):
            if not Path(path).is_file():
                raise InventoryError(f"input file not found: {path}")
        if self.config_file is not None and not Path(self.config_file).is_file():
            raise InventoryError(f"config file not found: {self.config_file}")


@dataclass
class Configs:
    objective: ObjectiveConfig
    optimizer: OptimizerConfig
    decoder: DecoderConfig
    render: RenderOptions


def load_configs(path: Path | None) -> Configs:
    configs = Configs(ObjectiveConfig(), OptimizerConfig(), DecoderConfig(), RenderOptions())
    if path is None:
        return configs
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "objective" in data:
        configs.objective = dataclasses.replace(configs.objective, **data["objective"])
    if "optimizer" in data:
        configs.optimizer = dataclasses.replace(configs.optimizer, **data["optimizer"])
    if "decoder" in data:
        eps = dict(configs.decoder.epsilon)
        for kind_name, value in data["decoder"].get("epsilon", {}).items():
            from .core import RelationKind

            eps[RelationKind(kind_name)] = float(value)
        configs.decoder = DecoderConfig(epsilon=eps)
    if "render" in data:
        configs.render = dataclasses.replace(configs.render, **data["render"])
    return configs


def _write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data, encoding="utf-8")


def _decode_group(program: SceneProgram, state: SceneState,
                  inventory: dict[str, AssetSpec], cfg: DecoderConfig):
    filtered, filter_report = filter_self_consistent(program, state, cfg, inventory)
    deduped, dedupe_report = dedupe_orientational(filtered, state, inventory)
    report = {
        "self_consistency": filter_report.to_json(),
        "orientational_dedupe": dedupe_report.to_json(),
    }
    return deduped, report


def cmd_generate(manifest: RunManifest) -> int:
    try:
        manifest.check()
        room = load_room(manifest.room_file)
        assets = load_inventory(manifest.inventory_file)
    except InventoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        configs = load_configs(manifest.config_file)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(f"error: bad config file: {exc}", file=sys.stderr)
        return EXIT_ERROR

    inventory = {a.id: a for a in assets}
    state = SceneState(room)
    out = Path(manifest.out_dir)
    failures: list[dict] = []
    group_records: list[dict] = []
    all_relations = []

    try:
        groups = group_assets(assets, manifest.instruction, manifest.mode)
    except (VlmError, ValueError) as exc:
        print(f"error: asset grouping failed: {exc}", file=sys.stderr)
        return EXIT_ERROR

    for k, group in enumerate(groups):
        record = {"index": k, "assets": group, "placed": [], "failed": [], "diagnostics": []}
        group_records.append(record)
        try:
            text = propose_layout(
                state, group, manifest.instruction, manifest.mode,
                inventory=inventory, render_opts=RenderOptions(format="png"),
            )
        except (VlmError, CacheMissError, ValueError) as exc:
            record["failed"] = list(group)
            record["diagnostics"].append(f"proposal failed: {exc}")
            failures.append({"group": k, "assets": group, "reason": str(exc)})
            logger.warning("group %d proposal failed: %s", k, exc)
            continue

        known = set(group) | set(state.ids())
        program, diags = parse_program(text, known, WALL_IDS, group_label=f"group_{k}")
        record["diagnostics"].extend(d.render() for d in diags)
        # Only this group's assets may receive poses; drop strays.
        poses = {aid: p for aid, p in program.poses.items() if aid in group}
        for aid in program.poses.keys() - poses.keys():
            record["diagnostics"].append(f"pose for already-placed asset {aid!r} ignored")
        program = SceneProgram(poses, program.relations, program.group_label)

        missing = [aid for aid in group if aid not in poses]
        if missing:
            record["failed"] = missing
            failures.append({"group": k, "assets": missing, "reason": "no pose proposed"})

        if not poses:
            record["diagnostics"].append("no usable poses in proposal")
            continue

        program, decode_report = _decode_group(program, state, inventory, configs.decoder)
        _write(out / "groups" / f"group_{k}_decode.json",
               json.dumps(decode_report, indent=2) + "\n")
        try:
            state, trace = place_group(state, program, inventory,
                                       configs.objective, configs.optimizer)
        except SceneError as exc:
            record["failed"] = list(poses)
            record["diagnostics"].append(f"optimization failed: {exc}")
            failures.append({"group": k, "assets": list(poses), "reason": str(exc)})
            continue
        _write(out / "groups" / f"group_{k}_trace.json", trace.dumps() + "\n")
        record["placed"] = list(poses)
        all_relations.extend(program.relations)

    final_program = SceneProgram(state.poses(), tuple(all_relations))
    _write(out / "scene.scene", serialize_program(final_program).source)
    _write(out / "layout.json", json.dumps(layout_to_json(state), indent=2) + "\n")
    _write(out / "scene.svg", render_topdown(state, configs.render))
    score = score_scene(state, all_relations)
    run_report = {
        "instruction": manifest.instruction,
        "mode": manifest.mode.mode,
        "seed": manifest.seed,
        "groups": group_records,
        "failures": failures,
        "score": score.to_json(),
    }
    _write(out / "run.json", json.dumps(run_report, indent=2) + "\n")
    if failures:
        print(f"partial placement: {sum(len(f['assets']) for f in failures)} asset(s) failed; "
              f"see {out / 'run.json'}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_optimize(program_file: Path, room_file: Path, inventory_file: Path,
                 out_dir: Path, config_file: Path | None = None,
                 write_trace: bool = False) -> int:
    try:
        for path in (program_file, room_file, inventory_file):
            if not Path(path).is_file():
                raise InventoryError(f"input file not found: {path}")
        room = load_room(room_file)
        assets = load_inventory(inventory_file)
        configs = load_configs(config_file)
    except (InventoryError, OSError, ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    inventory = {a.id: a for a in assets}
    text = ProgramText(Path(program_file).read_text(encoding="utf-8"), origin="file")
    program, diags = parse_program(text, set(inventory), WALL_IDS)
    if diags:
        print(render_diagnostics(diags), file=sys.stderr)

    state = SceneState(room)
    out = Path(out_dir)
    if program.poses:
        program, decode_report = _decode_group(program, state, inventory, configs.decoder)
        _write(out / "decode.json", json.dumps(decode_report, indent=2) + "\n")
        try:
            state, trace = place_group(state, program, inventory,
                                       configs.objective, configs.optimizer)
        except SceneError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        if write_trace:
            _write(out / "trace.json", trace.dumps() + "\n")
    _write(out / "layout.json", json.dumps(layout_to_json(state), indent=2) + "\n")
    _write(out / "scene.svg", render_topdown(state, configs.render))
    return EXIT_OK


def _state_from_layout(layout_file: Path, room: Room,
                       inventory: dict[str, AssetSpec]) -> SceneState:
    poses = load_layout(layout_file)
    state = SceneState(room)
    for aid, pose in poses.items():
        if aid not in inventory:
            raise InventoryError(f"layout references unknown asset {aid!r}")
        state.add(inventory[aid], pose)
    return state


def cmd_eval(layout_file: Path, room_file: Path, inventory_file: Path,
             out_file: Path | None = None, program_file: Path | None = None,
             judge: bool = False, mode: ReplayMode | None = None,
             instruction: str = "") -> int:
    try:
        room = load_room(room_file)
        inventory = {a.id: a for a in load_inventory(inventory_file)}
        state = _state_from_layout(layout_file, room, inventory)
    except (InventoryError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    relations = ()
    if program_file is not None:
        text = ProgramText(Path(program_file).read_text(encoding="utf-8"), origin="file")
        program, _ = parse_program(text, set(inventory), WALL_IDS)
        relations = program.relations

    score = score_scene(state, relations)
    if judge:
        try:
            score.judged = judge_semantics(
                state, instruction, mode or ReplayMode("replay", None), relations
            )
        except (VlmError, ValueError) as exc:
            print(f"warning: judge unavailable, deterministic metrics only: {exc}",
                  file=sys.stderr)
    payload = json.dumps(score.to_json(), indent=2) + "\n"
    if out_file is not None:
        _write(Path(out_file), payload)
    else:
        print(payload, end="")
    return EXIT_OK


def cmd_render(room_file: Path, inventory_file: Path, out_file: Path,
               layout_file: Path | None = None, program_file: Path | None = None,
               fmt: str = "svg") -> int:
    try:
        room = load_room(room_file)
        inventory = {a.id: a for a in load_inventory(inventory_file)}
        if layout_file is not None:
            state = _state_from_layout(layout_file, room, inventory)
        elif program_file is not None:
            text = ProgramText(Path(program_file).read_text(encoding="utf-8"), origin="file")
            program, diags = parse_program(text, set(inventory), WALL_IDS)
            if diags:
                print(render_diagnostics(diags), file=sys.stderr)
            state = SceneState(room)
            for aid, pose in program.poses.items():
                state.add(inventory[aid], pose)
        else:
            state = SceneState(room)
    except (InventoryError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _write(Path(out_file), render_topdown(state, RenderOptions(format=fmt)))
    return EXIT_OK


def _make_mode(mode_name: str, cache: str | None) -> ReplayMode:
    cache_dir = Path(cache) if cache else None
    return ReplayMode(mode_name, cache_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenelayout",
                                     description="Differentiable scene-layout pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="full pipeline: group, propose, decode, optimize")
    gen.add_argument("--room", required=True)
    gen.add_argument("--inventory", required=True)
    gen.add_argument("--instruction", required=True)
    gen.add_argument("--mode", choices=["live", "record", "replay"], default="replay")
    gen.add_argument("--cache", help="replay cache directory")
    gen.add_argument("--out", required=True)
    gen.add_argument("--config", help="JSON config overrides")
    gen.add_argument("--seed", type=int, default=0)

    opt = sub.add_parser("optimize", help="decode + optimize a scene program file")
    opt.add_argument("program")
    opt.add_argument("--room", required=True)
    opt.add_argument("--inventory", required=True)
    opt.add_argument("--out", required=True)
    opt.add_argument("--config")
    opt.add_argument("--trace", action="store_true", help="also write trace.json")

    ev = sub.add_parser("eval", help="score a layout file")
    ev.add_argument("layout")
    ev.add_argument("--room", required=True)
    ev.add_argument("--inventory", required=True)
    ev.add_argument("--program", help="scene program supplying relations (stack exemptions)")
    ev.add_argument("--judge", action="store_true")
    ev.add_argument("--mode", choices=["live", "record", "replay"], default="replay")
    ev.add_argument("--cache")
    ev.add_argument("--instruction", default="")
    ev.add_argument("--out")

    ren = sub.add_parser("render", help="render a layout or program to SVG/PNG")
    ren.add_argument("--room", required=True)
    ren.add_argument("--inventory", required=True)
    ren.add_argument("--layout")
    ren.add_argument("--program")
    ren.add_argument("--out", required=True)
    ren.add_argument("--format", choices=["svg", "png"], default="svg")

    cache = sub.add_parser("replay-cache", help="inspect the replay cache")
    cache_sub = cache.add_subparsers(dest="cache_command", required=True)
    ls = cache_sub.add_parser("ls", help="list cache entries")
    ls.add_argument("--cache", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            manifest = RunManifest(
                room_file=Path(args.room),
                inventory_file=Path(args.inventory),
                instruction=args.instruction,
                mode=_make_mode(args.mode, args.cache),
                out_dir=Path(args.out),
                config_file=Path(args.config) if args.config else None,
                seed=args.seed,
            )
            return cmd_generate(manifest)
        if args.command == "optimize":
            return cmd_optimize(
                Path(args.program), Path(args.room), Path(args.inventory),
                Path(args.out), Path(args.config) if args.config else None, args.trace,
            )
        if args.command == "eval":
            mode = _make_mode(args.mode, args.cache) if args.cache else None
            return cmd_eval(
                Path(args.layout), Path(args.room), Path(args.inventory),
                Path(args.out) if args.out else None,
                Path(args.program) if args.program else None,
                args.judge, mode, args.instruction,
            )
        if args.command == "render":
            return cmd_render(
                Path(args.room), Path(args.inventory), Path(args.out),
                Path(args.layout) if args.layout else None,
                Path(args.program) if args.program else None,
                args.format,
            )
        if args.command == "replay-cache" and args.cache_command == "ls":
            for entry in list_cache(args.cache):
                print(f"{entry['digest']}  {entry['timestamp']}  model={entry['model']}  "
                      f"response={entry['response_chars']}B")
            return EXIT_OK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
