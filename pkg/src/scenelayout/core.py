"""Core domain types: assets, poses, rooms, relations, and scene state.

All lengths are meters and all internal angles radians. External file
formats (inventory/room/layout JSON) use degrees for angles; conversion
happens in the loaders and serializers in this module.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

ASSET_ID_RE = re.compile(r"^[a-z][a-z0-9_]*$")

WALL_NORTH = "wall_north"
WALL_SOUTH = "wall_south"
WALL_EAST = "wall_east"
WALL_WEST = "wall_west"
WALL_IDS = (WALL_NORTH, WALL_SOUTH, WALL_EAST, WALL_WEST)


class SceneError(Exception):
    """Base class for scene-construction and scene-IO errors."""


class InventoryError(SceneError):
    """Raised when an inventory or room file cannot be loaded."""


class DuplicateAssetError(SceneError):
    """Raised when an asset id is registered twice."""


def normalize_theta(theta: float) -> float:
    """Wrap an angle to the canonical interval [-pi, pi).

    The result is congruent to ``theta`` modulo 2*pi. The upper boundary
    maps down, so ``pi`` (and odd multiples of it) normalize to ``-pi``.
    """
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = (theta + math.pi) % (2.0 * math.pi) - math.pi
    # Float rounding in the modulo can land exactly on +pi.
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Placement:
    """Typical placement locations for an asset."""

    on_floor: bool = False
    on_wall: bool = False
    on_ceiling: bool = False
    on_object: bool = False

    def to_json(self) -> dict:
        return {
            "onFloor": self.on_floor,
            "onWall": self.on_wall,
            "onCeiling": self.on_ceiling,
            "onObject": self.on_object,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Placement":
        return cls(
            on_floor=bool(data.get("onFloor", False)),
            on_wall=bool(data.get("onWall", False)),
            on_ceiling=bool(data.get("onCeiling", False)),
            on_object=bool(data.get("onObject", False)),
        )


@dataclass(frozen=True)
class AssetSpec:
    """An annotated asset: description plus canonical bounding-box dimensions.

    ``dims`` is (depth_x, width_y, height_z) of the axis-aligned bounding box
    with the asset facing +x at zero rotation.
    """

    id: str
    description: str
    dims: tuple[float, float, float]
    placement: Placement = Placement()

    def __post_init__(self) -> None:
        if not self.id or not ASSET_ID_RE.match(self.id):
            raise ValueError(f"asset id {self.id!r} does not match [a-z][a-z0-9_]*")
        if len(self.dims) != 3:
            raise ValueError(f"asset {self.id}: dims must have 3 components")
        if any(not math.isfinite(d) or d <= 0 for d in self.dims):
            raise ValueError(f"asset {self.id}: dims must be strictly positive, got {self.dims}")
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))

    @property
    def half_extents(self) -> tuple[float, float]:
        """Footprint half extents (x, y) at zero rotation."""
        return (self.dims[0] / 2.0, self.dims[1] / 2.0)

    @property
    def height(self) -> float:
        return self.dims[2]


@dataclass(frozen=True)
class Pose:
    """Centroid position of the oriented bounding box plus yaw about z.

    ``theta`` is stored normalized to [-pi, pi); theta = 0 faces +x.
    """

    x: float
    y: float
    z: float
    theta: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "theta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"pose component {name} must be finite")
        object.__setattr__(self, "theta", normalize_theta(self.theta))

    @property
    def orientation(self) -> tuple[float, float]:
        """Unit facing vector (cos theta, sin theta)."""
        return (math.cos(self.theta), math.sin(self.theta))

    def moved(self, x: float | None = None, y: float | None = None,
              z: float | None = None, theta: float | None = None) -> "Pose":
        return Pose(
            self.x if x is None else x,
            self.y if y is None else y,
            self.z if z is None else z,
            self.theta if theta is None else theta,
        )


@dataclass(frozen=True)
class Wall:
    """One of the four cardinal walls: a 2D segment with an inward normal."""

    id: str
    segment: tuple[tuple[float, float], tuple[float, float]]
    normal: tuple[float, float]


@dataclass(frozen=True)
class Room:
    """Rectangular floor plan with interior [0, width] x [0, depth]."""

    width: float
    depth: float
    height: float

    def __post_init__(self) -> None:
        for name in ("width", "depth", "height"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"room {name} must be positive, got {v}")

    @property
    def walls(self) -> tuple[Wall, Wall, Wall, Wall]:
        w, d = self.width, self.depth
        return (
            Wall(WALL_SOUTH, ((0.0, 0.0), (w, 0.0)), (0.0, 1.0)),
            Wall(WALL_EAST, ((w, 0.0), (w, d)), (-1.0, 0.0)),
            Wall(WALL_NORTH, ((w, d), (0.0, d)), (0.0, -1.0)),
            Wall(WALL_WEST, ((0.0, d), (0.0, 0.0)), (1.0, 0.0)),
        )

    def wall(self, wall_id: str) -> Wall:
        for w in self.walls:
            if w.id == wall_id:
                return w
        raise KeyError(f"unknown wall id {wall_id!r}")


class RelationKind(str, Enum):
    DISTANCE = "distance"
    ON_TOP_OF = "on_top_of"
    ALIGN_WITH = "align_with"
    POINT_TOWARDS = "point_towards"
    AGAINST_WALL = "against_wall"


ORIENTATIONAL_KINDS = frozenset({RelationKind.ALIGN_WITH, RelationKind.POINT_TOWARDS})


@dataclass(frozen=True)
class Relation:
    """A spatial relation between a subject asset and a target asset or wall.

    Parameters are kind dependent: ``d_min``/``d_max`` (meters) for distance,
    ``phi`` (radians) for align_with and point_towards. on_top_of and
    against_wall carry no parameters.
    """

    kind: RelationKind
    subject: str
    target: str
    d_min: float | None = None
    d_max: float | None = None
    phi: float | None = None

    def __post_init__(self) -> None:
        if self.subject == self.target:
            raise ValueError(f"{self.kind.value}: subject and target must differ ({self.subject})")
        if self.kind is RelationKind.DISTANCE:
            d_min = 0.0 if self.d_min is None else float(self.d_min)
            d_max = math.inf if self.d_max is None else float(self.d_max)
            if d_min < 0 or d_max < 0:
                raise ValueError("distance bounds must be nonnegative")
            if d_min > d_max:
                raise ValueError(f"distance: d_min {d_min} > d_max {d_max}")
            object.__setattr__(self, "d_min", d_min)
            object.__setattr__(self, "d_max", d_max)
            if self.phi is not None:
                raise ValueError("distance relation takes no angle")
        elif self.kind in ORIENTATIONAL_KINDS:
            phi = 0.0 if self.phi is None else float(self.phi)
            if not math.isfinite(phi):
                raise ValueError(f"{self.kind.value}: angle must be finite")
            object.__setattr__(self, "phi", phi)
            if self.d_min is not None or self.d_max is not None:
                raise ValueError(f"{self.kind.value} relation takes no distance bounds")
        else:  # on_top_of, against_wall
            if self.d_min is not None or self.d_max is not None or self.phi is not None:
                raise ValueError(f"{self.kind.value} relation takes no parameters")
        if self.kind is RelationKind.AGAINST_WALL and self.target not in WALL_IDS:
            raise ValueError(f"against_wall target must be a wall id, got {self.target!r}")
        if self.kind is not RelationKind.AGAINST_WALL and self.target in WALL_IDS:
            raise ValueError(f"{self.kind.value} target must be an asset id, got {self.target!r}")

    def to_json(self) -> dict:
        data: dict = {"kind": self.kind.value, "subject": self.subject, "target": self.target}
        if self.kind is RelationKind.DISTANCE:
            data["min"] = self.d_min
            if self.d_max is not None and math.isfinite(self.d_max):
                data["max"] = self.d_max
        elif self.kind in ORIENTATIONAL_KINDS:
            data["angle_deg"] = math.degrees(self.phi or 0.0)
        return data


@dataclass(frozen=True)
class SceneProgram:
    """Parsed scene representation: initial pose estimates plus relations."""

    poses: dict[str, Pose] = field(default_factory=dict)
    relations: tuple[Relation, ...] = ()
    group_label: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "relations", tuple(self.relations))

    def asset_ids(self) -> list[str]:
        return list(self.poses)

    def with_relations(self, relations: Iterable[Relation]) -> "SceneProgram":
        return replace(self, relations=tuple(relations))


@dataclass
class PlacedAsset:
    """An asset placed in a scene; frozen assets are never moved again."""

    spec: AssetSpec
    pose: Pose
    frozen: bool = False


class SceneState:
    """A room plus the ordered set of placed assets.

    Mutated only by a single pipeline run at a time; everything it contains
    is an immutable value, so reads are safe to share.
    """

    def __init__(self, room: Room):
        self.room = room
        self._placed: dict[str, PlacedAsset] = {}

    def add(self, spec: AssetSpec, pose: Pose, frozen: bool = False) -> None:
        if spec.id in self._placed:
            raise DuplicateAssetError(f"asset {spec.id!r} is already placed")
        self._placed[spec.id] = PlacedAsset(spec, pose, frozen)

    def __contains__(self, asset_id: str) -> bool:
        return asset_id in self._placed

    def __len__(self) -> int:
        return len(self._placed)

    def __iter__(self) -> Iterator[PlacedAsset]:
        return iter(self._placed.values())

    def ids(self) -> list[str]:
        return list(self._placed)

    def get(self, asset_id: str) -> PlacedAsset:
        return self._placed[asset_id]

    def set_pose(self, asset_id: str, pose: Pose) -> None:
        placed = self._placed[asset_id]
        if placed.frozen:
            raise SceneError(f"asset {asset_id!r} is frozen and cannot be moved")
        placed.pose = pose

    def freeze(self, asset_ids: Iterable[str]) -> None:
        for asset_id in asset_ids:
            self._placed[asset_id].frozen = True

    def poses(self) -> dict[str, Pose]:
        return {aid: p.pose for aid, p in self._placed.items()}

    def specs(self) -> dict[str, AssetSpec]:
        return {aid: p.spec for aid, p in self._placed.items()}


def validate_scene(state: SceneState) -> list[str]:
    """Check scene invariants; returns diagnostics, never raises.

    An empty list means every invariant holds.
    """
    issues: list[str] = []
    seen: set[str] = set()
    for placed in state:
        aid = placed.spec.id
        if aid in seen:
            issues.append(f"{aid}: duplicate asset id")
        seen.add(aid)
        pose = placed.pose
        for name, value in (("x", pose.x), ("y", pose.y), ("z", pose.z), ("theta", pose.theta)):
            if not math.isfinite(value):
                issues.append(f"{aid}: pose component {name} is not finite")
        if any(d <= 0 or not math.isfinite(d) for d in placed.spec.dims):
            issues.append(f"{aid}: nonpositive dims {placed.spec.dims}")
    for aid in state.ids():
        if state.get(aid).spec.id != aid:
            issues.append(f"{aid}: registered under a different id than its spec")
    return issues


# --- file formats -----------------------------------------------------------
#
# Inventory: JSON array of {id, description, dims:[dx,dy,dz], placement:{...}}.
# Room: JSON {width, depth, height}. Layout: {assets:[{id, pose:{x,y,z,rotation_deg}}]}.


def _read_json(path: Path | str, what: str):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InventoryError(f"cannot read {what} file {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InventoryError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno} (offset {exc.pos}): {exc.msg}"
        ) from exc


def load_inventory(path: Path | str) -> list[AssetSpec]:
    """Load and validate an asset inventory file."""
    data = _read_json(path, "inventory")
    if not isinstance(data, list):
        raise InventoryError(f"{path}: inventory must be a JSON array")
    assets: list[AssetSpec] = []
    seen: set[str] = set()
    for i, entry in enumerate(data):
        if not isinstance(entry, dict):
            raise InventoryError(f"{path}: entry {i} is not an object")
        try:
            asset = AssetSpec(
                id=entry["id"],
                description=str(entry.get("description", "")),
                dims=tuple(entry["dims"]),
                placement=Placement.from_json(entry.get("placement", {})),
            )
        except KeyError as exc:
            raise InventoryError(f"{path}: entry {i} is missing field {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise InventoryError(f"{path}: entry {i}: {exc}") from exc
        if asset.id in seen:
            raise InventoryError(f"{path}: duplicate asset id {asset.id!r}")
        seen.add(asset.id)
        assets.append(asset)
    return assets


def save_inventory(assets: Iterable[AssetSpec], path: Path | str) -> None:
    data = [
        {
            "id": a.id,
            "description": a.description,
            "dims": list(a.dims),
            "placement": a.placement.to_json(),
        }
        for a in assets
    ]
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def load_room(path: Path | str) -> Room:
    data = _read_json(path, "room")
    if not isinstance(data, dict):
        raise InventoryError(f"{path}: room must be a JSON object")
    try:
        return Room(float(data["width"]), float(data["depth"]), float(data["height"]))
    except KeyError as exc:
        raise InventoryError(f"{path}: room file is missing field {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise InventoryError(f"{path}: {exc}") from exc


def layout_to_json(state: SceneState) -> dict:
    """Layout JSON payload: asset ids with poses, rotation in degrees."""
    return {
        "assets": [
            {
                "id": placed.spec.id,
                "pose": {
                    "x": round(placed.pose.x, 6),
                    "y": round(placed.pose.y, 6),
                    "z": round(placed.pose.z, 6),
                    "rotation_deg": round(math.degrees(placed.pose.theta), 6),
                },
            }
            for placed in state
        ]
    }


def save_layout(state: SceneState, path: Path | str) -> None:
    Path(path).write_text(json.dumps(layout_to_json(state), indent=2) + "\n", encoding="utf-8")


def load_layout(path: Path | str) -> dict[str, Pose]:
    """Read a layout file back into poses keyed by asset id."""
    data = _read_json(path, "layout")
    if not isinstance(data, dict) or not isinstance(data.get("assets"), list):
        raise InventoryError(f"{path}: layout must be an object with an 'assets' array")
    poses: dict[str, Pose] = {}
    for i, entry in enumerate(data["assets"]):
        try:
            pose = entry["pose"]
            poses[entry["id"]] = Pose(
                float(pose["x"]),
                float(pose["y"]),
                float(pose["z"]),
                math.radians(float(pose["rotation_deg"])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InventoryError(f"{path}: asset entry {i}: {exc}") from exc
    return poses
