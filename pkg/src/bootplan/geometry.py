"""Planar footprint helpers for yaw-rotated cuboids."""

from __future__ import annotations

import math

from .model import ObjectState

Point = tuple[float, float]


def to_local(px: float, py: float, obj: ObjectState) -> Point:
    """Express world point (px, py) in the object's footprint frame."""
    c = obj.center
    dx, dy = px - c.x, py - c.y
    cs, sn = math.cos(c.yaw), math.sin(c.yaw)
    return (cs * dx + sn * dy, -sn * dx + cs * dy)


def distance_to_footprint(px: float, py: float, obj: ObjectState) -> float:
    """Euclidean distance from a point to the footprint rectangle (0 inside)."""
    lx, ly = to_local(px, py, obj)
    ex = max(abs(lx) - 0.5 * obj.length, 0.0)
    ey = max(abs(ly) - 0.5 * obj.width, 0.0)
    return math.hypot(ex, ey)


def inside_footprint(px: float, py: float, obj: ObjectState, tol: float = 0.0) -> bool:
    return distance_to_footprint(px, py, obj) <= tol


def circumradius(obj: ObjectState) -> float:
    return 0.5 * math.hypot(obj.length, obj.width)


def corners(obj: ObjectState) -> list[Point]:
    """Footprint corners, counter-clockwise."""
    c = obj.center
    cs, sn = math.cos(c.yaw), math.sin(c.yaw)
    hl, hw = 0.5 * obj.length, 0.5 * obj.width
    out = []
    for lx, ly in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((c.x + cs * lx - sn * ly, c.y + sn * lx + cs * ly))
    return out


def _polygon_area(poly: list[Point]) -> float:
    s = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return 0.5 * abs(s)


def _clip(subject: list[Point], clip: list[Point]) -> list[Point]:
    # Sutherland-Hodgman against a convex CCW clip polygon
    out = subject
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        m = len(inp)
        for j in range(m):
            px, py = inp[j - 1]
            qx, qy = inp[j]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sq >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sq)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
                out.append((qx, qy))
            elif sp >= 0.0:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def overlap_area(a: ObjectState, b: ObjectState) -> float:
    """Area of intersection of two footprints."""
    ca, cb = a.center, b.center
    if math.hypot(ca.x - cb.x, ca.y - cb.y) >= circumradius(a) + circumradius(b):
        return 0.0
    poly = _clip(corners(a), corners(b))
    if len(poly) < 3:
        return 0.0
    return _polygon_area(poly)


def overlap_fraction(a: ObjectState, b: ObjectState) -> float:
    """Overlap area relative to the smaller of the two footprints."""
    smaller = min(a.length * a.width, b.length * b.width)
    return overlap_area(a, b) / smaller


def grasp_extent(obj: ObjectState, gripper_yaw: float) -> float:
    """Object extent along the jaw closing axis (the gripper's local y axis)."""
    d = obj.center.yaw - gripper_yaw
    return abs(obj.length * math.sin(d)) + abs(obj.width * math.cos(d))
