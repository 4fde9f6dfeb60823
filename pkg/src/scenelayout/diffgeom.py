"""Batched, autograd-friendly OBB geometry backing the differentiable losses.

Operates on float64 tensors shaped (B, ...) so a whole set of asset pairs is
evaluated with a fixed number of tensor ops. The intersection of two convex
quadrilaterals is assembled from candidate vertices (corners of one inside
the other, plus edge-edge crossings), ordered by angle, and measured with the
shoelace formula - exact and piecewise smooth, so gradients flow through
vertex positions wherever the contact structure is locally constant.
"""

from __future__ import annotations

import torch

_EPS_DEN = 1e-12  # parallel-edge cutoff for segment intersections
_EPS_NORM = 1e-18  # guards sqrt at zero-length vectors

DTYPE = torch.float64


def cross2(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def obb_corners(center: torch.Tensor, theta: torch.Tensor, half: torch.Tensor) -> torch.Tensor:
    """Corners (B, 4, 2) counterclockwise from (+hx, +hy), rotated and shifted."""
    c, s = torch.cos(theta), torch.sin(theta)
    hx, hy = half[..., 0], half[..., 1]
    signs_x = torch.tensor([1.0, -1.0, -1.0, 1.0], dtype=center.dtype, device=center.device)
    signs_y = torch.tensor([1.0, 1.0, -1.0, -1.0], dtype=center.dtype, device=center.device)
    lx = hx[..., None] * signs_x
    ly = hy[..., None] * signs_y
    x = center[..., 0:1] + lx * c[..., None] - ly * s[..., None]
    y = center[..., 1:2] + lx * s[..., None] + ly * c[..., None]
    return torch.stack([x, y], dim=-1)


def points_in_convex_quad(pts: torch.Tensor, quad: torch.Tensor) -> torch.Tensor:
    """Whether each of (B, P, 2) points lies inside the ccw (B, 4, 2) quad."""
    v0 = quad[:, None, :, :]  # (B, 1, 4, 2)
    v1 = torch.roll(quad, -1, dims=1)[:, None, :, :]
    rel = pts[:, :, None, :] - v0  # (B, P, 4, 2)
    side = cross2(v1 - v0, rel)
    return (side >= -_EPS_DEN).all(dim=-1)


def _edge_intersections(qa: torch.Tensor, qb: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """All 16 edge-pair crossings: points (B, 16, 2) and validity (B, 16)."""
    a0 = qa[:, :, None, :]  # (B, 4, 1, 2)
    da = torch.roll(qa, -1, dims=1)[:, :, None, :] - a0
    b0 = qb[:, None, :, :]
    db = torch.roll(qb, -1, dims=1)[:, None, :, :] - b0
    diff = b0 - a0
    den = cross2(da, db)
    ok = den.abs() > _EPS_DEN
    den_safe = torch.where(ok, den, torch.ones_like(den))
    t = cross2(diff, db) / den_safe
    u = cross2(diff, da) / den_safe
    valid = ok & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    pts = a0 + t[..., None] * da
    B = qa.shape[0]
    return pts.reshape(B, 16, 2), valid.reshape(B, 16)


def _masked_convex_area(cand: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Shoelace area of the convex hull cycle formed by the masked candidates.

    Candidates are assumed to lie on one convex polygon; they are sorted by
    angle around their mean (index work under no_grad so gradients only flow
    through vertex coordinates), padded slots repeat the first vertex so the
    cyclic sum is unaffected.
    """
    B, K, _ = cand.shape
    count = mask.sum(dim=1)
    with torch.no_grad():
        denom = count.clamp(min=1).to(cand.dtype)
        center = (cand * mask[..., None]).sum(dim=1) / denom[:, None]
        rel = cand - center[:, None, :]
        ang = torch.atan2(rel[..., 1], rel[..., 0])
        ang = torch.where(mask, ang, torch.full_like(ang, 1.0e9))
        order = torch.argsort(ang, dim=1, stable=True)
        slot = torch.arange(K, device=cand.device).expand(B, K)
        slot = torch.where(slot < count[:, None], slot, torch.zeros_like(slot))
    ordered = torch.gather(cand, 1, order[..., None].expand(B, K, 2))
    cyc = torch.gather(ordered, 1, slot[..., None].expand(B, K, 2))
    area2 = cross2(cyc, torch.roll(cyc, -1, dims=1)).sum(dim=1)
    area = 0.5 * area2.abs()
    return torch.where(count >= 3, area, torch.zeros_like(area))


def convex_quad_intersection_area(qa: torch.Tensor, qb: torch.Tensor) -> torch.Tensor:
    """Intersection area (B,) of counterclockwise quads qa, qb of shape (B, 4, 2)."""
    in_ab = points_in_convex_quad(qa, qb)
    in_ba = points_in_convex_quad(qb, qa)
    cross_pts, cross_ok = _edge_intersections(qa, qb)
    cand = torch.cat([qa, qb, cross_pts], dim=1)  # (B, 24, 2)
    mask = torch.cat([in_ab, in_ba, cross_ok], dim=1)
    return _masked_convex_area(cand, mask)


def pair_geometry(
    centers_i: torch.Tensor,
    theta_i: torch.Tensor,
    half_i: torch.Tensor,
    centers_j: torch.Tensor,
    theta_j: torch.Tensor,
    half_j: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Footprint intersection area plus both corner sets for B pose pairs."""
    qa = obb_corners(centers_i, theta_i, half_i)
    qb = obb_corners(centers_j, theta_j, half_j)
    return convex_quad_intersection_area(qa, qb), qa, qb


def diou_xy(
    centers_i: torch.Tensor,
    theta_i: torch.Tensor,
    half_i: torch.Tensor,
    centers_j: torch.Tensor,
    theta_j: torch.Tensor,
    half_j: torch.Tensor,
) -> torch.Tensor:
    """Footprint DIoU metric (B,): IoU minus squared normalized 2D center distance."""
    inter, qa, qb = pair_geometry(centers_i, theta_i, half_i, centers_j, theta_j, half_j)
    area_i = 4.0 * half_i[..., 0] * half_i[..., 1]
    area_j = 4.0 * half_j[..., 0] * half_j[..., 1]
    iou = inter / (area_i + area_j - inter)
    rho2 = ((centers_i - centers_j) ** 2).sum(dim=-1)
    pts = torch.cat([qa, qb], dim=1)
    span = pts.max(dim=1).values - pts.min(dim=1).values
    c2 = (span**2).sum(dim=-1)
    return iou - rho2 / c2


def iou_diou_xyz(
    centers_i: torch.Tensor,
    theta_i: torch.Tensor,
    half_i: torch.Tensor,
    z_i: torch.Tensor,
    height_i: torch.Tensor,
    centers_j: torch.Tensor,
    theta_j: torch.Tensor,
    half_j: torch.Tensor,
    z_j: torch.Tensor,
    height_j: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """3D IoU and DIoU (B,) for pose pairs; z values are treated as constants.

    z_i/z_j are box centroids and height_* full extents; the z interval does
    not participate in gradients because z is assigned, not optimized.
    """
    inter_xy, qa, qb = pair_geometry(centers_i, theta_i, half_i, centers_j, theta_j, half_j)
    zlo_i, zhi_i = z_i - height_i / 2.0, z_i + height_i / 2.0
    zlo_j, zhi_j = z_j - height_j / 2.0, z_j + height_j / 2.0
    z_overlap = (torch.minimum(zhi_i, zhi_j) - torch.maximum(zlo_i, zlo_j)).clamp(min=0.0)
    inter_vol = inter_xy * z_overlap
    vol_i = 4.0 * half_i[..., 0] * half_i[..., 1] * height_i
    vol_j = 4.0 * half_j[..., 0] * half_j[..., 1] * height_j
    iou = inter_vol / (vol_i + vol_j - inter_vol)
    rho2 = ((centers_i - centers_j) ** 2).sum(dim=-1) + (z_i - z_j) ** 2
    pts = torch.cat([qa, qb], dim=1)
    span = pts.max(dim=1).values - pts.min(dim=1).values
    z_span = torch.maximum(zhi_i, zhi_j) - torch.minimum(zlo_i, zlo_j)
    c2 = (span**2).sum(dim=-1) + z_span**2
    return iou, iou - rho2 / c2


def safe_norm(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """2-norm with a tiny floor under the sqrt so gradients stay finite at 0."""
    return torch.sqrt((v**2).sum(dim=dim) + _EPS_NORM)


def point_segment_distance_t(
    pts: torch.Tensor, seg_a: torch.Tensor, seg_b: torch.Tensor
) -> torch.Tensor:
    """Distance from points (..., 2) to segments (..., 2), broadcastable."""
    d = seg_b - seg_a
    len2 = (d**2).sum(dim=-1)
    t = (((pts - seg_a) * d).sum(dim=-1) / len2).clamp(0.0, 1.0)
    closest = seg_a + t[..., None] * d
    return safe_norm(pts - closest)
