"""Chat-completions client with multimodal messages and a record/replay cache.

Requests are canonicalized (model, temperature, message texts, image bytes)
and keyed by a SHA-256 digest, so replay mode turns the whole generation
pipeline into a deterministic function of its inputs and the cache. Cache
entries are single JSON files written atomically, one per digest.

Environment: LAYOUTVLM_API_BASE (endpoint URL), LAYOUTVLM_API_KEY,
LAYOUTVLM_MODEL. The wire format is JSON chat completions with images as
base64 data URLs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

from .core import AssetSpec, SceneState
from .dsl import ProgramText, extract_code_block
from .render import RenderOptions, render_asset_panel, render_topdown

logger = logging.getLogger(__name__)

ENV_API_BASE = "LAYOUTVLM_API_BASE"
ENV_API_KEY = "LAYOUTVLM_API_KEY"
ENV_MODEL = "LAYOUTVLM_MODEL"
DEFAULT_MODEL = "gpt-4o"

_MAX_RETRIES = 3
_BACKOFF_S = (1.0, 2.0, 4.0)


class VlmError(Exception):
    """Base class for client failures."""


class CacheMissError(VlmError):
    """Replay lookup found no recorded response for the request digest."""

    def __init__(self, digest: str):
        super().__init__(f"no cached response for request digest {digest}")
        self.digest = digest


class VlmHttpError(VlmError):
    def __init__(self, status: int, detail: str):
        super().__init__(f"endpoint returned {status}: {detail}")
        self.status = status


@dataclass(frozen=True)
class ImagePart:
    media_type: str
    data: bytes


MessagePart = str | ImagePart


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[MessagePart, ...]


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for msg in self.messages:
            for part in msg.parts:
                if isinstance(part, ImagePart) and not part.data:
                    raise ValueError("image parts must be nonempty")


@dataclass(frozen=True)
class ReplayMode:
    mode: str = "replay"  # live | record | replay
    cache_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode in ("record", "replay") and self.cache_dir is None:
            raise ValueError(f"{self.mode} mode requires a cache_dir")
        if self.mode == "replay" and not Path(self.cache_dir).is_dir():
            raise ValueError(f"replay cache directory {self.cache_dir} does not exist")


def canonical_request(req: ChatRequest) -> dict:
    """Stable, platform-independent form of a request; image bytes are hashed."""
    messages = []
    for msg in req.messages:
        parts = []
        for part in msg.parts:
            if isinstance(part, ImagePart):
                parts.append({
                    "image_sha256": hashlib.sha256(part.data).hexdigest(),
                    "media_type": part.media_type,
                    "bytes": len(part.data),
                })
            else:
                parts.append({"text": part})
        messages.append({"role": msg.role, "parts": parts})
    return {"model": req.model, "temperature": req.temperature, "messages": messages}


def request_digest(req: ChatRequest) -> str:
    canon = json.dumps(canonical_request(req), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _wire_payload(req: ChatRequest) -> dict:
    messages = []
    for msg in req.messages:
        content = []
        for part in msg.parts:
            if isinstance(part, ImagePart):
                b64 = base64.b64encode(part.data).decode("ascii")
                content.append({
                    "type": "image_url",
                    "image_url": {"url": f"data:{part.media_type};base64,{b64}"},
                })
            else:
                content.append({"type": "text", "text": part})
        messages.append({"role": msg.role, "content": content})
    return {"model": req.model, "temperature": req.temperature, "messages": messages}


def _cache_path(cache_dir: Path | str, digest: str) -> Path:
    return Path(cache_dir) / f"{digest}.json"


def _write_cache_entry(cache_dir: Path, digest: str, req: ChatRequest, response: str) -> None:
    cache_dir.mkdir(parents=True, exist_ok=True)
    entry = {
        "request": canonical_request(req),
        "response": response,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    target = _cache_path(cache_dir, digest)
    tmp = target.with_suffix(f".tmp-{os.getpid()}")
    tmp.write_text(json.dumps(entry, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, target)


def _live_call(req: ChatRequest, sleep: Callable[[float], None],
               post: Callable | None) -> str:
    base = os.environ.get(ENV_API_BASE)
    if post is None and not base:
        raise VlmError(f"live mode requires {ENV_API_BASE} to be set")
    payload = _wire_payload(req)
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(ENV_API_KEY)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    url = f"{(base or '').rstrip('/')}/chat/completions"
    poster = post or (lambda u, j, h: requests.post(u, json=j, headers=h, timeout=120))

    last_error: Exception | None = None
    for attempt in range(_MAX_RETRIES + 1):
        if attempt > 0:
            sleep(_BACKOFF_S[attempt - 1])
        try:
            resp = poster(url, payload, headers)
        except requests.RequestException as exc:
            last_error = exc
            logger.warning("transient transport failure (attempt %d): %s", attempt + 1, exc)
            continue
        status = getattr(resp, "status_code", 200)
        if status == 429 or status >= 500:
            last_error = VlmHttpError(status, "transient")
            logger.warning("transient HTTP %d (attempt %d)", status, attempt + 1)
            continue
        if status >= 400:
            raise VlmHttpError(status, getattr(resp, "text", "")[:500])
        body = resp.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise VlmError(f"malformed completion response: {exc}") from exc
    raise VlmError(f"request failed after {_MAX_RETRIES} retries: {last_error}")


def complete(req: ChatRequest, mode: ReplayMode,
             *, _sleep: Callable[[float], None] = time.sleep,
             _post: Callable | None = None) -> str:
    """Resolve a chat request in live, record, or replay mode.

    Live calls retry transient failures up to 3 times with exponential
    backoff; auth and other 4xx responses fail immediately. Record performs
    the live call and persists the digest-keyed response; replay looks the
    digest up with no network involved and raises CacheMissError on a miss.
    """
    digest = request_digest(req)
    if mode.mode == "replay":
        path = _cache_path(mode.cache_dir, digest)
        if not path.is_file():
            raise CacheMissError(digest)
        return json.loads(path.read_text(encoding="utf-8"))["response"]
    response = _live_call(req, _sleep, _post)
    if mode.mode == "record":
        _write_cache_entry(Path(mode.cache_dir), digest, req, response)
    return response


def list_cache(cache_dir: Path | str) -> list[dict]:
    """Summaries of all cache entries, sorted by digest."""
    entries = []
    for path in sorted(Path(cache_dir).glob("*.json")):
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        entries.append({
            "digest": path.stem,
            "model": data.get("request", {}).get("model"),
            "timestamp": data.get("timestamp"),
            "response_chars": len(data.get("response", "")),
        })
    return entries


def load_prompt(name: str) -> str:
    """Load a prompt template shipped as package data."""
    return resources.files("scenelayout.prompts").joinpath(f"{name}.txt").read_text("utf-8")


def _resolve_model(model: str | None) -> str:
    return model or os.environ.get(ENV_MODEL) or DEFAULT_MODEL


def _asset_lines(assets: Sequence[AssetSpec]) -> str:
    return "\n".join(
        f"- {a.id}: {a.description} ({a.dims[0]:.2f} x {a.dims[1]:.2f} x {a.dims[2]:.2f} m)"
        for a in assets
    )


_JSON_LIST_RE = re.compile(r"\[.*\]", re.DOTALL)


def group_assets(inventory: Sequence[AssetSpec], instruction: str, mode: ReplayMode,
                 *, model: str | None = None,
                 _sleep: Callable[[float], None] = time.sleep,
                 _post: Callable | None = None) -> list[list[str]]:
    """Cluster related assets into placement groups via the language model.

    The response is parsed as a JSON list of id lists and repaired rather
    than rejected: unknown ids are dropped, duplicates keep their first
    occurrence, and ids the model forgot are appended as singleton groups.
    An unparseable response falls back to one group with every asset.
    """
    if not inventory:
        raise ValueError("group_assets needs a nonempty inventory")
    prompt = load_prompt("grouping").format(
        instruction=instruction, assets=_asset_lines(inventory)
    )
    req = ChatRequest(
        model=_resolve_model(model),
        messages=(Message("user", (prompt,)),),
        temperature=0.0,
    )
    response = complete(req, mode, _sleep=_sleep, _post=_post)
    known = [a.id for a in inventory]
    return repair_groups(response, known)


def repair_groups(response: str, known_ids: Sequence[str]) -> list[list[str]]:
    """Turn a grouping response into an exact partition of the known ids."""
    parsed = None
    match = _JSON_LIST_RE.search(extract_code_block(response).source)
    if match:
        try:
            parsed = json.loads(match.group(0))
        except json.JSONDecodeError:
            parsed = None
    if not isinstance(parsed, list) or not all(isinstance(g, list) for g in parsed):
        logger.warning("unparseable grouping response; falling back to a single group")
        return [list(known_ids)]
    known = set(known_ids)
    seen: set[str] = set()
    groups: list[list[str]] = []
    for raw_group in parsed:
        group = []
        for aid in raw_group:
            if not isinstance(aid, str) or aid not in known:
                logger.warning("grouping mentioned unknown asset %r; ignored", aid)
                continue
            if aid in seen:
                logger.warning("grouping repeated asset %r; keeping first occurrence", aid)
                continue
            seen.add(aid)
            group.append(aid)
        if group:
            groups.append(group)
    for aid in known_ids:
        if aid not in seen:
            logger.warning("grouping omitted asset %r; appending as its own group", aid)
            groups.append([aid])
    return groups


def propose_layout(state: SceneState, group: Sequence[str], instruction: str,
                   mode: ReplayMode, *, inventory: Mapping[str, AssetSpec],
                   model: str | None = None,
                   render_opts: RenderOptions | None = None,
                   _sleep: Callable[[float], None] = time.sleep,
                   _post: Callable | None = None) -> ProgramText:
    """Ask the model for a scene program placing one group of assets.

    The request carries exactly: the layout system prompt, the instruction
    text, a top-down render of the current scene, and an asset panel of the
    group. Returns the extracted code block of the response.
    """
    if not group:
        raise ValueError("propose_layout needs a nonempty group")
    for aid in group:
        if aid in state:
            raise ValueError(f"asset {aid!r} is already placed")
        if aid not in inventory:
            raise ValueError(f"asset {aid!r} is not in the inventory")
    png_opts = RenderOptions(format="png") if render_opts is None else render_opts
    scene_png = render_topdown(state, png_opts)
    panel_png = render_asset_panel([inventory[aid] for aid in group], png_opts)
    system = load_prompt("layout").format(
        width=state.room.width, depth=state.room.depth, height=state.room.height,
        assets=_asset_lines([inventory[aid] for aid in group]),
    )
    req = ChatRequest(
        model=_resolve_model(model),
        messages=(
            Message("system", (system,)),
            Message("user", (
                instruction,
                ImagePart("image/png", scene_png),
                ImagePart("image/png", panel_png),
            )),
        ),
        temperature=0.0,
    )
    response = complete(req, mode, _sleep=_sleep, _post=_post)
    return extract_code_block(response)
