"""Differentiable spatial-relation losses and total-loss assembly.

Free variables are (x, y, theta) per non-frozen asset; z never receives a
gradient (stacking assigns it directly). Values and gradients come from one
shared set of float64 autograd kernels, so the standalone per-relation
functions, the decoder's consistency checks, and the optimizer's batched
total loss all agree exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
import torch

from . import diffgeom
from .core import (
    AssetSpec,
    Pose,
    Relation,
    RelationKind,
    Room,
    SceneError,
    SceneState,
    Wall,
)
from .diffgeom import DTYPE

_BIG = 1.0e9  # stands in for an unbounded d_max

GradientTriple = tuple[float, float, float]


@dataclass(frozen=True)
class LossTerm:
    """One evaluated objective term: value plus d/d(x, y, theta) per asset."""

    label: str
    value: float
    gradient: dict[str, GradientTriple]


@dataclass(frozen=True)
class ObjectiveConfig:
    physics_weight: float = 1.0
    semantic_weight: float = 1.0
    collision_gate: bool = True

    def __post_init__(self) -> None:
        for name in ("physics_weight", "semantic_weight"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


# --- torch kernels (batched over leading dim) --------------------------------


def _distance_kernel(xy_i, xy_j, d_min, d_max):
    d = diffgeom.safe_norm(xy_i - xy_j)
    violation = torch.maximum(d_min - d, d - d_max)
    return violation.clamp(0.0, 1.0)


def _align_kernel(theta_i, theta_j, phi):
    return 1.0 - torch.cos(theta_i - theta_j - phi)


def _point_towards_kernel(xy_i, theta_i, xy_j, phi):
    d = xy_j - xy_i
    dn = d / diffgeom.safe_norm(d)[..., None]
    c, s = torch.cos(phi), torch.sin(phi)
    rx = c * dn[..., 0] - s * dn[..., 1]
    ry = s * dn[..., 0] + c * dn[..., 1]
    dot = torch.cos(theta_i) * rx + torch.sin(theta_i) * ry
    return torch.where(dot > 0, torch.zeros_like(dot), 1.0 - dot)


def _against_wall_kernel(xy, theta, half, seg_a, seg_b, normal):
    quad = diffgeom.obb_corners(xy, theta, half)  # (B, 4, 2)
    dist = diffgeom.point_segment_distance_t(quad, seg_a[:, None, :], seg_b[:, None, :])
    corner_term = dist.clamp(max=1.0).sum(dim=-1)
    facing = 1.0 - (torch.cos(theta) * normal[..., 0] + torch.sin(theta) * normal[..., 1])
    return corner_term + facing


def _on_top_kernel(xy_i, theta_i, half_i, xy_j, theta_j, half_j):
    return -diffgeom.diou_xy(xy_i, theta_i, half_i, xy_j, theta_j, half_j)


def _physics_kernel(xy_i, theta_i, half_i, z_i, h_i, xy_j, theta_j, half_j, z_j, h_j, gate):
    iou, diou = diffgeom.iou_diou_xyz(
        xy_i, theta_i, half_i, z_i, h_i, xy_j, theta_j, half_j, z_j, h_j
    )
    if gate:
        active = (iou > 0).detach()
        return torch.where(active, diou, torch.zeros_like(diou))
    return diou


# --- standalone relation losses ----------------------------------------------


def _pose_leaf(pose: Pose) -> torch.Tensor:
    return torch.tensor([pose.x, pose.y, pose.theta], dtype=DTYPE, requires_grad=True)


def _grads(value: torch.Tensor, leaves: Sequence[torch.Tensor]) -> list[GradientTriple]:
    grads = torch.autograd.grad(value, leaves, allow_unused=True)
    out = []
    for g in grads:
        if g is None:
            out.append((0.0, 0.0, 0.0))
        else:
            out.append((float(g[0]), float(g[1]), float(g[2])))
    return out


def _term(label: str, value: torch.Tensor, ids: Sequence[str],
          leaves: Sequence[torch.Tensor]) -> LossTerm:
    gradients = _grads(value, leaves) if value.requires_grad else [(0.0, 0.0, 0.0)] * len(leaves)
    return LossTerm(label, float(value), dict(zip(ids, gradients)))


def loss_distance(pose_i: Pose, pose_j: Pose, d_min: float, d_max: float,
                  *, ids: Sequence[str] = ("i", "j")) -> LossTerm:
    """Hinge on the xy centroid distance: zero inside [d_min, d_max], capped at 1."""
    if d_min < 0 or d_max < 0:
        raise ValueError("distance bounds must be nonnegative")
    if d_min > d_max:
        raise ValueError(f"d_min {d_min} > d_max {d_max}")
    ti, tj = _pose_leaf(pose_i), _pose_leaf(pose_j)
    value = _distance_kernel(
        ti[None, :2], tj[None, :2],
        torch.tensor([d_min], dtype=DTYPE),
        torch.tensor([min(d_max, _BIG)], dtype=DTYPE),
    )[0]
    return _term(f"distance({ids[0]}, {ids[1]})", value, ids, (ti, tj))


def loss_align_with(pose_i: Pose, pose_j: Pose, phi: float = 0.0,
                    *, ids: Sequence[str] = ("i", "j")) -> LossTerm:
    """1 - cos(theta_i - (theta_j + phi)); zero iff aligned at the offset."""
    ti, tj = _pose_leaf(pose_i), _pose_leaf(pose_j)
    value = _align_kernel(ti[2], tj[2], torch.tensor(phi, dtype=DTYPE))
    return _term(f"align_with({ids[0]}, {ids[1]})", value, ids, (ti, tj))


def loss_point_towards(pose_i: Pose, pose_j: Pose, phi: float = 0.0,
                       *, ids: Sequence[str] = ("i", "j")) -> LossTerm:
    """Zero once the subject faces the (phi-rotated) direction to the target.

    Outside the facing half-space the loss is 1 minus the cosine between the
    orientation vector and that direction; the zero branch is a strict
    "dot > 0", so the function jumps at the boundary by construction.
    """
    d = math.hypot(pose_j.x - pose_i.x, pose_j.y - pose_i.y)
    if d <= 1e-6:
        raise ValueError("point_towards is undefined for coincident positions")
    ti, tj = _pose_leaf(pose_i), _pose_leaf(pose_j)
    value = _point_towards_kernel(
        ti[None, :2], ti[2][None], tj[None, :2], torch.tensor([phi], dtype=DTYPE)
    )[0]
    return _term(f"point_towards({ids[0]}, {ids[1]})", value, ids, (ti, tj))


def loss_against_wall(pose_i: Pose, dims_i: Sequence[float], wall: Wall,
                      *, ids: Sequence[str] = ("i",)) -> LossTerm:
    """Corner-to-wall distances (each capped at 1 m) plus a facing term.

    The facing term 1 - v . n is zero when the asset points along the wall's
    inward normal, i.e. away from the wall into the room.
    """
    ti = _pose_leaf(pose_i)
    half = torch.tensor([[dims_i[0] / 2.0, dims_i[1] / 2.0]], dtype=DTYPE)
    seg_a = torch.tensor([wall.segment[0]], dtype=DTYPE)
    seg_b = torch.tensor([wall.segment[1]], dtype=DTYPE)
    normal = torch.tensor([wall.normal], dtype=DTYPE)
    value = _against_wall_kernel(ti[None, :2], ti[2][None], half, seg_a, seg_b, normal)[0]
    return _term(f"against_wall({ids[0]}, {wall.id})", value, ids, (ti,))


def loss_on_top_of(pose_i: Pose, pose_j: Pose, dims_i: Sequence[float],
                   dims_j: Sequence[float],
                   *, ids: Sequence[str] = ("i", "j")) -> tuple[LossTerm, float]:
    """Negated footprint DIoU pulling i over j, plus the z to assign to i.

    The z coordinate is not optimized: the returned ``assigned_z`` places the
    bottom of i on top of j and is applied outside the gradient loop.
    """
    ti, tj = _pose_leaf(pose_i), _pose_leaf(pose_j)
    half_i = torch.tensor([[dims_i[0] / 2.0, dims_i[1] / 2.0]], dtype=DTYPE)
    half_j = torch.tensor([[dims_j[0] / 2.0, dims_j[1] / 2.0]], dtype=DTYPE)
    value = _on_top_kernel(ti[None, :2], ti[2][None], half_i, tj[None, :2], tj[2][None], half_j)[0]
    assigned_z = pose_j.z + dims_j[2] / 2.0 + dims_i[2] / 2.0
    return _term(f"on_top_of({ids[0]}, {ids[1]})", value, ids, (ti, tj)), assigned_z


def loss_physics_pair(pose_i: Pose, pose_j: Pose, dims_i: Sequence[float],
                      dims_j: Sequence[float], cfg: ObjectiveConfig | None = None,
                      *, on_top_linked: bool = False,
                      ids: Sequence[str] = ("i", "j")) -> LossTerm:
    """Collision penalty: the 3D DIoU of the pair, gated to overlapping pairs.

    With the gate enabled (default) a pair contributes only while its 3D IoU
    is positive; pairs linked by an on_top_of relation contribute nothing.
    """
    cfg = cfg or ObjectiveConfig()
    label = f"physics({ids[0]}, {ids[1]})"
    if on_top_linked:
        return LossTerm(label, 0.0, {ids[0]: (0.0, 0.0, 0.0), ids[1]: (0.0, 0.0, 0.0)})
    ti, tj = _pose_leaf(pose_i), _pose_leaf(pose_j)
    half_i = torch.tensor([[dims_i[0] / 2.0, dims_i[1] / 2.0]], dtype=DTYPE)
    half_j = torch.tensor([[dims_j[0] / 2.0, dims_j[1] / 2.0]], dtype=DTYPE)
    value = _physics_kernel(
        ti[None, :2], ti[2][None], half_i,
        torch.tensor([pose_i.z], dtype=DTYPE), torch.tensor([dims_i[2]], dtype=DTYPE),
        tj[None, :2], tj[2][None], half_j,
        torch.tensor([pose_j.z], dtype=DTYPE), torch.tensor([dims_j[2]], dtype=DTYPE),
        cfg.collision_gate,
    )[0]
    return _term(label, value, ids, (ti, tj))


def evaluate_relation(relation: Relation, poses: Mapping[str, Pose],
                      specs: Mapping[str, AssetSpec], room: Room) -> LossTerm:
    """Evaluate one relation's loss at the given poses (used by the decoder)."""
    pose_i = poses[relation.subject]
    if relation.kind is RelationKind.AGAINST_WALL:
        return loss_against_wall(
            pose_i, specs[relation.subject].dims, room.wall(relation.target),
            ids=(relation.subject,),
        )
    pose_j = poses[relation.target]
    ids = (relation.subject, relation.target)
    if relation.kind is RelationKind.DISTANCE:
        return loss_distance(pose_i, pose_j, relation.d_min, relation.d_max, ids=ids)
    if relation.kind is RelationKind.ALIGN_WITH:
        return loss_align_with(pose_i, pose_j, relation.phi or 0.0, ids=ids)
    if relation.kind is RelationKind.POINT_TOWARDS:
        return loss_point_towards(pose_i, pose_j, relation.phi or 0.0, ids=ids)
    if relation.kind is RelationKind.ON_TOP_OF:
        term, _ = loss_on_top_of(
            pose_i, pose_j, specs[relation.subject].dims, specs[relation.target].dims, ids=ids
        )
        return term
    raise ValueError(f"unknown relation kind {relation.kind}")


# --- batched total loss -------------------------------------------------------


class EvalResult(NamedTuple):
    total: float
    semantic: float
    physics: float
    gradient: np.ndarray  # (N, 3), zero rows for frozen assets


def _np_corners(xyt: np.ndarray, half: np.ndarray) -> np.ndarray:
    c, s = np.cos(xyt[:, 2]), np.sin(xyt[:, 2])
    sx = np.array([1.0, -1.0, -1.0, 1.0])
    sy = np.array([1.0, 1.0, -1.0, -1.0])
    lx = half[:, 0:1] * sx
    ly = half[:, 1:2] * sy
    x = xyt[:, 0:1] + lx * c[:, None] - ly * s[:, None]
    y = xyt[:, 1:2] + lx * s[:, None] + ly * c[:, None]
    return np.stack([x, y], axis=-1)


class TotalLossEvaluator:
    """Preprocessed objective over a scene, reusable across optimizer steps.

    Relations are grouped by kind into index arrays once; each call then runs
    a fixed set of batched tensor ops and one backward pass. Pair terms are
    prefiltered with an axis-aligned bounding-box test before entering the
    autograd graph (the exact gate inside the kernel keeps this conservative
    filter sound).
    """

    def __init__(self, state: SceneState, relations: Sequence[Relation],
                 cfg: ObjectiveConfig | None = None):
        self.cfg = cfg or ObjectiveConfig()
        self.order = state.ids()
        self.index = {aid: k for k, aid in enumerate(self.order)}
        self.free = np.array([not state.get(a).frozen for a in self.order], dtype=bool)
        dims = np.array([state.get(a).spec.dims for a in self.order], dtype=float)
        self.half = dims[:, :2] / 2.0
        self.heights = dims[:, 2].copy()
        self._half_t = torch.tensor(self.half, dtype=DTYPE)
        self._heights_t = torch.tensor(self.heights, dtype=DTYPE)
        self.room = state.room

        for rel in relations:
            if rel.subject not in self.index:
                raise SceneError(f"relation {rel.kind.value}: unknown asset {rel.subject!r}")
            if rel.kind is not RelationKind.AGAINST_WALL and rel.target not in self.index:
                raise SceneError(f"relation {rel.kind.value}: unknown asset {rel.target!r}")

        def idx_pairs(kind: RelationKind):
            sel = [r for r in relations if r.kind is kind]
            i = torch.tensor([self.index[r.subject] for r in sel], dtype=torch.long)
            j = torch.tensor([self.index[r.target] for r in sel], dtype=torch.long)
            return sel, i, j

        dist, self._dist_i, self._dist_j = idx_pairs(RelationKind.DISTANCE)
        self._dist_min = torch.tensor([r.d_min for r in dist], dtype=DTYPE)
        self._dist_max = torch.tensor([min(r.d_max, _BIG) for r in dist], dtype=DTYPE)

        align, self._align_i, self._align_j = idx_pairs(RelationKind.ALIGN_WITH)
        self._align_phi = torch.tensor([r.phi or 0.0 for r in align], dtype=DTYPE)

        point, self._point_i, self._point_j = idx_pairs(RelationKind.POINT_TOWARDS)
        self._point_phi = torch.tensor([r.phi or 0.0 for r in point], dtype=DTYPE)

        ontop, self._ontop_i, self._ontop_j = idx_pairs(RelationKind.ON_TOP_OF)
        self.on_top_relations = ontop

        walls = [r for r in relations if r.kind is RelationKind.AGAINST_WALL]
        self._wall_i = torch.tensor([self.index[r.subject] for r in walls], dtype=torch.long)
        wall_objs = [self.room.wall(r.target) for r in walls]
        self._wall_a = torch.tensor([w.segment[0] for w in wall_objs], dtype=DTYPE).reshape(-1, 2)
        self._wall_b = torch.tensor([w.segment[1] for w in wall_objs], dtype=DTYPE).reshape(-1, 2)
        self._wall_n = torch.tensor([w.normal for w in wall_objs], dtype=DTYPE).reshape(-1, 2)

        exempt = {
            tuple(sorted((self.index[r.subject], self.index[r.target])))
            for r in relations
            if r.kind is RelationKind.ON_TOP_OF
        }
        n = len(self.order)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in exempt]
        self._pair_i = np.array([p[0] for p in pairs], dtype=np.int64)
        self._pair_j = np.array([p[1] for p in pairs], dtype=np.int64)

    def _active_pairs(self, xyt: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if len(self._pair_i) == 0:
            return self._pair_i, self._pair_j
        if not self.cfg.collision_gate:
            return self._pair_i, self._pair_j
        pts = _np_corners(xyt, self.half)
        lo, hi = pts.min(axis=1), pts.max(axis=1)
        zlo, zhi = z - self.heights / 2.0, z + self.heights / 2.0
        i, j = self._pair_i, self._pair_j
        overlap_xy = (lo[i] <= hi[j]).all(axis=1) & (lo[j] <= hi[i]).all(axis=1)
        overlap_z = np.minimum(zhi[i], zhi[j]) > np.maximum(zlo[i], zlo[j])
        keep = overlap_xy & overlap_z
        return i[keep], j[keep]

    def evaluate(self, xyt: np.ndarray, z: np.ndarray) -> EvalResult:
        """Loss and gradient at poses given as (N, 3) xy-theta plus (N,) z."""
        P = torch.tensor(xyt, dtype=DTYPE, requires_grad=True)
        centers, thetas = P[:, :2], P[:, 2]
        z_t = torch.tensor(z, dtype=DTYPE)

        semantic = torch.zeros((), dtype=DTYPE)
        if len(self._dist_i):
            semantic = semantic + _distance_kernel(
                centers[self._dist_i], centers[self._dist_j], self._dist_min, self._dist_max
            ).sum()
        if len(self._align_i):
            semantic = semantic + _align_kernel(
                thetas[self._align_i], thetas[self._align_j], self._align_phi
            ).sum()
        if len(self._point_i):
            semantic = semantic + _point_towards_kernel(
                centers[self._point_i], thetas[self._point_i],
                centers[self._point_j], self._point_phi,
            ).sum()
        if len(self._wall_i):
            semantic = semantic + _against_wall_kernel(
                centers[self._wall_i], thetas[self._wall_i], self._half_t[self._wall_i],
                self._wall_a, self._wall_b, self._wall_n,
            ).sum()
        if len(self._ontop_i):
            semantic = semantic + _on_top_kernel(
                centers[self._ontop_i], thetas[self._ontop_i], self._half_t[self._ontop_i],
                centers[self._ontop_j], thetas[self._ontop_j], self._half_t[self._ontop_j],
            ).sum()

        physics = torch.zeros((), dtype=DTYPE)
        pi, pj = self._active_pairs(xyt, z)
        if len(pi):
            ti = torch.from_numpy(pi)
            tj = torch.from_numpy(pj)
            physics = physics + _physics_kernel(
                centers[ti], thetas[ti], self._half_t[ti], z_t[ti], self._heights_t[ti],
                centers[tj], thetas[tj], self._half_t[tj], z_t[tj], self._heights_t[tj],
                self.cfg.collision_gate,
            ).sum()

        total = self.cfg.semantic_weight * semantic + self.cfg.physics_weight * physics
        if total.requires_grad:
            grad_t = torch.autograd.grad(total, P)[0]
            grad = grad_t.numpy()
        else:
            grad = np.zeros_like(xyt)
        grad = grad.copy()
        grad[~self.free] = 0.0
        return EvalResult(float(total), float(semantic), float(physics), grad)


def total_loss(state: SceneState, relations: Sequence[Relation],
               cfg: ObjectiveConfig | None = None) -> tuple[float, dict[str, GradientTriple]]:
    """Weighted semantic + physics loss over a scene with its gradient map.

    The gradient map covers exactly the non-frozen assets. Deterministic for
    identical inputs: terms are summed in declaration order.
    """
    evaluator = TotalLossEvaluator(state, relations, cfg)
    xyt = np.array([[state.get(a).pose.x, state.get(a).pose.y, state.get(a).pose.theta]
                    for a in evaluator.order])
    z = np.array([state.get(a).pose.z for a in evaluator.order])
    result = evaluator.evaluate(xyt, z)
    gradient = {
        aid: (float(g[0]), float(g[1]), float(g[2]))
        for aid, g, is_free in zip(evaluator.order, result.gradient, evaluator.free)
        if is_free
    }
    return result.total, gradient


def check_gradient(evaluator: Callable[[Mapping[str, Pose]], LossTerm],
                   poses: Mapping[str, Pose], h: float = 1e-5,
                   floor: float = 1e-3) -> float:
    """Worst relative mismatch between analytic and central-difference gradients.

    The error for each component is |analytic - fd| / max(|fd|, floor), so
    with the default floor a mismatch of 1e-6 on a near-zero component scores
    1e-3. The evaluation point must be at least 10*h away from any clamp
    kink, branch boundary, or polygon-contact degeneracy for the comparison
    to be meaningful.
    """
    term = evaluator(poses)
    worst = 0.0
    for aid, analytic in term.gradient.items():
        base = poses[aid]
        for k, name in enumerate(("x", "y", "theta")):
            plus = dict(poses)
            minus = dict(poses)
            plus[aid] = base.moved(**{name: getattr(base, name) + h})
            minus[aid] = base.moved(**{name: getattr(base, name) - h})
            fd = (evaluator(plus).value - evaluator(minus).value) / (2.0 * h)
            err = abs(analytic[k] - fd) / max(abs(fd), floor)
            worst = max(worst, err)
    return worst
