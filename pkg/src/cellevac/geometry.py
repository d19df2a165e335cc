"""Small planar-geometry helpers shared by the scenario and motion code."""

from __future__ import annotations

import numpy as np

SQRT3 = np.sqrt(3.0)


def point_segment_distance(points, a, b):
    """Euclidean distance from each point to the segment ``a-b``.

    ``points`` may be a single ``(2,)`` point or an ``(n, 2)`` array.
    """
    p = np.asarray(points, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(p - a, axis=-1)
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def closest_point_on_segment(points, a, b):
    p = np.asarray(points, dtype=float)
    a = np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.broadcast_to(a, p.shape).copy()
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    return a + t[..., None] * ab


def segments_intersect(p1, p2, q1, q2) -> bool:
    """True when closed segments ``p1-p2`` and ``q1-q2`` share a point."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) < 1e-12:
            return 0
        return 1 if v > 0 else -1

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
                and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def hexagon_vertices(center, width, flat_top=False):
    """Six vertices of a regular hexagon with the given flat-to-flat width.

    With ``flat_top=False`` the hexagon has vertical flat sides (pointy top).
    """
    side = width / SQRT3
    offset = 0.0 if flat_top else 30.0
    ang = np.deg2rad(np.arange(6) * 60.0 + offset)
    cx, cy = center
    return np.column_stack([cx + side * np.cos(ang), cy + side * np.sin(ang)])


def hex_lattice_centers(bounds, width, origin=(0.0, 0.0), flat_top=False):
    """Lattice centers of a hex tiling covering ``bounds`` plus a one-cell margin."""
    xmin, ymin, xmax, ymax = bounds
    side = width / SQRT3
    ox, oy = origin
    if flat_top:
        dx, dy = 1.5 * side, width
    else:
        dx, dy = width, 1.5 * side
    i0 = int(np.floor((xmin - ox) / dx)) - 2
    i1 = int(np.ceil((xmax - ox) / dx)) + 2
    j0 = int(np.floor((ymin - oy) / dy)) - 2
    j1 = int(np.ceil((ymax - oy) / dy)) + 2
    centers = []
    for j in range(j0, j1 + 1):
        for i in range(i0, i1 + 1):
            if flat_top:
                cx = ox + dx * i
                cy = oy + dy * (j + 0.5 * (i % 2))
            else:
                cx = ox + dx * (i + 0.5 * (j % 2))
                cy = oy + dy * j
            centers.append((cx, cy))
    return np.asarray(centers)
