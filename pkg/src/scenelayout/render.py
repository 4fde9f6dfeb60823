"""Deterministic top-down schematic rendering with visual marks.

Draws the room rectangle, a labeled coordinate grid, each asset's rotated
footprint with its id, and a front-facing arrow per asset. World +y renders
screen-up. Output is byte-identical for identical inputs: elements are
emitted in a fixed order, coordinates use fixed-precision formatting, and no
timestamps or randomness are involved. SVG is the canonical format; PNG
rasterizes the same element list for APIs that need raster input.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

from PIL import Image, ImageDraw

from .core import AssetSpec, SceneState

MARGIN_PX = 60.0

ROOM_STROKE = "#1f2430"
GRID_COLOR = "#8a93a6"
ASSET_FILL = "#cfe0f0"
ASSET_STROKE = "#34506e"
FROZEN_FILL = "#dcd7e8"
ARROW_COLOR = "#b3402a"
TEXT_COLOR = "#1f2430"
AXIS_COLOR = "#3a7d44"


@dataclass(frozen=True)
class RenderOptions:
    pixels_per_meter: float = 80.0
    grid_spacing: float = 2.0
    show_labels: bool = True
    show_arrows: bool = True
    show_grid: bool = True
    format: str = "svg"  # svg | png

    def __post_init__(self) -> None:
        if self.pixels_per_meter <= 0:
            raise ValueError("pixels_per_meter must be positive")
        if self.grid_spacing <= 0:
            raise ValueError("grid_spacing must be positive")
        if self.format not in ("svg", "png"):
            raise ValueError(f"unknown render format {self.format!r}")


# Display-list primitives: ("polygon", pts, fill, stroke, width),
# ("line", p0, p1, color, width), ("circle", center, r, color),
# ("text", pos, string, size, color, anchor).


def _num(v: float) -> str:
    return f"{v:.2f}"


def _grid_values(extent: float, spacing: float) -> list[float]:
    return [k * spacing for k in range(int(math.floor(extent / spacing)) + 1)]


def _label_num(v: float) -> str:
    return f"{v:g}"


class _Canvas:
    """World-to-screen mapping plus the ordered element list."""

    def __init__(self, width_m: float, depth_m: float, ppm: float):
        self.ppm = ppm
        self.depth_m = depth_m
        self.width_px = width_m * ppm + 2 * MARGIN_PX
        self.height_px = depth_m * ppm + 2 * MARGIN_PX
        self.elements: list[tuple] = []
        self._pixel_space = False

    @classmethod
    def pixels(cls, width_px: float, height_px: float) -> "_Canvas":
        canvas = cls(1.0, 1.0, 1.0)
        canvas.width_px = width_px
        canvas.height_px = height_px
        canvas._pixel_space = True
        return canvas

    def pt(self, x: float, y: float) -> tuple[float, float]:
        if self._pixel_space:
            return (x, y)
        return (MARGIN_PX + x * self.ppm, MARGIN_PX + (self.depth_m - y) * self.ppm)

    def polygon(self, pts, fill, stroke, width=1.5):
        self.elements.append(("polygon", [self.pt(*p) for p in pts], fill, stroke, width))

    def line(self, p0, p1, color, width=1.5):
        self.elements.append(("line", self.pt(*p0), self.pt(*p1), color, width))

    def circle(self, center, r_px, color):
        self.elements.append(("circle", self.pt(*center), r_px, color))

    def text(self, pos, string, size, color=TEXT_COLOR, anchor="middle"):
        self.elements.append(("text", self.pt(*pos), string, size, color, anchor))

    def arrow(self, start, end, color, width=2.0, head_m=0.08):
        self.line(start, end, color, width)
        dx, dy = end[0] - start[0], end[1] - start[1]
        norm = math.hypot(dx, dy)
        if norm <= 0:
            return
        ux, uy = dx / norm, dy / norm
        px, py = -uy, ux
        tip = end
        left = (end[0] - head_m * ux + 0.5 * head_m * px, end[1] - head_m * uy + 0.5 * head_m * py)
        right = (end[0] - head_m * ux - 0.5 * head_m * px, end[1] - head_m * uy - 0.5 * head_m * py)
        self.elements.append(
            ("polygon", [self.pt(*tip), self.pt(*left), self.pt(*right)], color, color, 1.0)
        )


def _footprint_points(x, y, theta, hx, hy):
    c, s = math.cos(theta), math.sin(theta)
    return [
        (x + lx * c - ly * s, y + lx * s + ly * c)
        for lx, ly in ((hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy))
    ]


def _draw_grid(canvas: _Canvas, width_m: float, depth_m: float, opts: RenderOptions) -> None:
    for gx in _grid_values(width_m, opts.grid_spacing):
        for gy in _grid_values(depth_m, opts.grid_spacing):
            canvas.circle((gx, gy), 2.0, GRID_COLOR)
            if opts.show_labels:
                canvas.text(
                    (gx, gy - 0.12), f"({_label_num(gx)}, {_label_num(gy)})", 10, GRID_COLOR
                )


def _draw_origin_axes(canvas: _Canvas) -> None:
    canvas.arrow((0.0, 0.0), (0.5, 0.0), AXIS_COLOR, 2.0)
    canvas.arrow((0.0, 0.0), (0.0, 0.5), AXIS_COLOR, 2.0)
    canvas.text((0.62, 0.0), "x", 11, AXIS_COLOR)
    canvas.text((0.0, 0.62), "y", 11, AXIS_COLOR)


def _draw_asset(canvas: _Canvas, asset_id: str, x, y, theta, hx, hy,
                frozen: bool, opts: RenderOptions) -> None:
    fill = FROZEN_FILL if frozen else ASSET_FILL
    canvas.polygon(_footprint_points(x, y, theta, hx, hy), fill, ASSET_STROKE)
    if opts.show_arrows:
        length = min(0.6, max(0.15, 0.8 * min(hx, hy)))
        tip = (x + length * math.cos(theta), y + length * math.sin(theta))
        canvas.arrow((x, y), tip, ARROW_COLOR)
    if opts.show_labels:
        canvas.text((x, y + 0.06), asset_id, 11)


def render_topdown(state: SceneState, opts: RenderOptions | None = None) -> bytes:
    """Schematic plan view of the scene as SVG or PNG bytes."""
    opts = opts or RenderOptions()
    room = state.room
    if room.width <= 0 or room.depth <= 0:
        raise ValueError("room has zero area")
    canvas = _Canvas(room.width, room.depth, opts.pixels_per_meter)
    canvas.polygon(
        [(0, 0), (room.width, 0), (room.width, room.depth), (0, room.depth)],
        "none", ROOM_STROKE, 2.5,
    )
    if opts.show_grid:
        _draw_grid(canvas, room.width, room.depth, opts)
    _draw_origin_axes(canvas)
    for placed in state:
        hx, hy = placed.spec.half_extents
        pose = placed.pose
        _draw_asset(canvas, placed.spec.id, pose.x, pose.y, pose.theta, hx, hy,
                    placed.frozen, opts)
    return _emit(canvas, opts)


def render_asset_panel(assets: list[AssetSpec], opts: RenderOptions | None = None) -> bytes:
    """A card per asset: id, description, dimensions, and a to-scale footprint."""
    opts = opts or RenderOptions()
    if not assets:
        raise ValueError("asset panel needs at least one asset")
    card_w, card_h, per_row = 230.0, 200.0, 4
    rows = (len(assets) + per_row - 1) // per_row
    cols = per_row if len(assets) >= per_row else len(assets)
    canvas = _Canvas.pixels(cols * card_w, rows * card_h)

    for k, asset in enumerate(assets):
        ox = (k % per_row) * card_w
        oy = (k // per_row) * card_h
        canvas.polygon(
            [(ox + 4, oy + 4), (ox + card_w - 4, oy + 4),
             (ox + card_w - 4, oy + card_h - 4), (ox + 4, oy + card_h - 4)],
            "#ffffff", "#9aa3b2", 1.0,
        )
        canvas.text((ox + card_w / 2, oy + 22), asset.id, 12)
        desc = asset.description
        if len(desc) > 34:
            desc = desc[:33] + "…"
        canvas.text((ox + card_w / 2, oy + 40), desc, 10, "#5a6372")
        dx, dy, dz = asset.dims
        canvas.text((ox + card_w / 2, oy + 56), f"{dx:.2f} x {dy:.2f} x {dz:.2f} m", 10, "#5a6372")
        # Footprint drawn to a shared scale that fits the card body.
        body = 110.0
        scale = body / max(dx, dy, 1.0)
        fx, fy = dx * scale, dy * scale
        cx, cy = ox + card_w / 2, oy + 62 + body / 2
        canvas.polygon(
            [(cx - fx / 2, cy - fy / 2), (cx + fx / 2, cy - fy / 2),
             (cx + fx / 2, cy + fy / 2), (cx - fx / 2, cy + fy / 2)],
            ASSET_FILL, ASSET_STROKE, 1.2,
        )
        canvas.line((cx, cy), (cx + fx / 2, cy), ARROW_COLOR, 2.0)
        canvas.elements.append(
            ("polygon",
             [(cx + fx / 2, cy), (cx + fx / 2 - 6, cy - 3), (cx + fx / 2 - 6, cy + 3)],
             ARROW_COLOR, ARROW_COLOR, 1.0)
        )
    return _emit(canvas, opts)


def _emit(canvas: _Canvas, opts: RenderOptions) -> bytes:
    if opts.format == "svg":
        return _to_svg(canvas)
    return _to_png(canvas)


def _to_svg(canvas: _Canvas) -> bytes:
    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write("<!-- Top-down schematic; world +x is right, +y is up. "
              "Coordinates in meters map to pixels with y flipped. -->\n")
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(canvas.width_px)}" '
        f'height="{_num(canvas.height_px)}" viewBox="0 0 {_num(canvas.width_px)} '
        f'{_num(canvas.height_px)}">\n'
    )
    out.write(f'<rect width="{_num(canvas.width_px)}" height="{_num(canvas.height_px)}" '
              'fill="#fafbfc"/>\n')
    for el in canvas.elements:
        kind = el[0]
        if kind == "polygon":
            _, pts, fill, stroke, width = el
            pts_s = " ".join(f"{_num(px)},{_num(py)}" for px, py in pts)
            out.write(f'<polygon points="{pts_s}" fill="{fill}" stroke="{stroke}" '
                      f'stroke-width="{_num(width)}"/>\n')
        elif kind == "line":
            _, p0, p1, color, width = el
            out.write(f'<line x1="{_num(p0[0])}" y1="{_num(p0[1])}" x2="{_num(p1[0])}" '
                      f'y2="{_num(p1[1])}" stroke="{color}" stroke-width="{_num(width)}"/>\n')
        elif kind == "circle":
            _, center, r, color = el
            out.write(f'<circle cx="{_num(center[0])}" cy="{_num(center[1])}" r="{_num(r)}" '
                      f'fill="{color}"/>\n')
        elif kind == "text":
            _, pos, string, size, color, anchor = el
            out.write(f'<text x="{_num(pos[0])}" y="{_num(pos[1])}" font-size="{size}" '
                      f'font-family="Helvetica, Arial, sans-serif" fill="{color}" '
                      f'text-anchor="{anchor}">{_escape(string)}</text>\n')
    out.write("</svg>\n")
    return out.getvalue().encode("utf-8")


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _to_png(canvas: _Canvas) -> bytes:
    img = Image.new("RGBA", (int(round(canvas.width_px)), int(round(canvas.height_px))),
                    (250, 251, 252, 255))
    draw = ImageDraw.Draw(img)
    for el in canvas.elements:
        kind = el[0]
        if kind == "polygon":
            _, pts, fill, stroke, width = el
            draw.polygon(pts, fill=None if fill == "none" else fill, outline=stroke,
                         width=max(1, int(round(width))))
        elif kind == "line":
            _, p0, p1, color, width = el
            draw.line([p0, p1], fill=color, width=max(1, int(round(width))))
        elif kind == "circle":
            _, center, r, color = el
            cx, cy = center
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=color)
        elif kind == "text":
            _, pos, string, size, color, anchor = el
            px = pos[0] - 3.0 * len(string) if anchor == "middle" else pos[0]
            draw.text((px, pos[1] - 5.0), string, fill=color)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
