"""Independent reference checks used by the tests.

Nothing here imports the package's geometry or verifiers: predicates are
re-derived from the task definitions with numpy and Monte-Carlo sampling, so
agreement with the package is evidence rather than tautology.
"""

from __future__ import annotations

import math

import numpy as np

SAMPLES = 10_000


def local_coords(points: np.ndarray, obj) -> np.ndarray:
    """World (n, 2) points into the object's footprint frame."""
    c = obj.center
    d = points - np.array([c.x, c.y])
    cs, sn = math.cos(c.yaw), math.sin(c.yaw)
    rot = np.array([[cs, -sn], [sn, cs]])
    return d @ rot


def in_footprint(points: np.ndarray, obj) -> np.ndarray:
    loc = local_coords(points, obj)
    return (np.abs(loc[:, 0]) <= 0.5 * obj.length) & (np.abs(loc[:, 1]) <= 0.5 * obj.width)


def disc_samples(rng: np.random.Generator, cx: float, cy: float, r: float,
                 n: int = SAMPLES) -> np.ndarray:
    rad = r * np.sqrt(rng.random(n))
    ang = rng.random(n) * 2 * np.pi
    return np.column_stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)])


def mc_near_footprint(rng, px: float, py: float, region, tol: float) -> bool:
    """Some point within ``tol`` of (px, py) lies on the region footprint."""
    return bool(in_footprint(disc_samples(rng, px, py, tol), region).any())


def mc_points_close(rng, p, q, tol: float) -> bool:
    """Discs of radius tol/2 around p and q intersect (i.e. |p - q| <= tol)."""
    pts = disc_samples(rng, p[0], p[1], 0.5 * tol)
    return bool((np.hypot(pts[:, 0] - q[0], pts[:, 1] - q[1]) <= 0.5 * tol).any())


def mc_ball_reaches(rng, p, centre, radius: float, tol: float) -> bool:
    """Some point within ``tol`` of 3-D point p is at least ``radius`` from ``centre``."""
    v = rng.normal(size=(SAMPLES, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v *= tol * np.cbrt(rng.random(SAMPLES))[:, None]
    pts = np.asarray(p) + v
    return bool((np.linalg.norm(pts - np.asarray(centre), axis=1) >= radius).any())


def mc_overlap_of_smaller(rng, a, b) -> float:
    """Footprint overlap area relative to the smaller footprint, by area sampling."""
    u = rng.random((SAMPLES, 2)) - 0.5
    loc = u * np.array([a.length, a.width])
    c = a.center
    cs, sn = math.cos(c.yaw), math.sin(c.yaw)
    world = np.column_stack([c.x + cs * loc[:, 0] - sn * loc[:, 1],
                             c.y + sn * loc[:, 0] + cs * loc[:, 1]])
    area = in_footprint(world, b).mean() * a.length * a.width
    return area / min(a.length * a.width, b.length * b.width)


def signed_distance(px: float, py: float, obj) -> float:
    """Exact signed distance from a point to the footprint edge (negative inside)."""
    lx, ly = local_coords(np.array([[px, py]]), obj)[0]
    qx = abs(lx) - 0.5 * obj.length
    qy = abs(ly) - 0.5 * obj.width
    outside = math.hypot(max(qx, 0.0), max(qy, 0.0))
    return outside + min(max(qx, qy), 0.0)


def reduce_angle(a: float) -> float:
    """Bring an angle into [-pi, pi) by repeated whole turns."""
    while a < -math.pi:
        a += 2 * math.pi
    while a >= math.pi:
        a -= 2 * math.pi
    return a
