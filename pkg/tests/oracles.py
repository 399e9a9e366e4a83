"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def in_rect(pts, rect):
    """Point membership for packed rects ``(cx, cz, hl, hw, theta)``."""
    cx, cz, hl, hw, th = rect
    dx, dz = pts[:, 0] - cx, pts[:, 1] - cz
    c, s = np.cos(th), np.sin(th)
    along = dx * c - dz * s
    across = dx * s + dz * c
    return (np.abs(along) <= hl) & (np.abs(across) <= hw)


def rect_corners(rect):
    cx, cz, hl, hw, th = rect
    c, s = math.cos(th), math.sin(th)
    along, across = np.array([c, -s]), np.array([s, c])
    return np.array([[cx, cz] + i * hl * along + j * hw * across
                     for i, j in ((1, 1), (1, -1), (-1, -1), (-1, 1))])


def mc_iou(a, b, n, rng):
    """Monte-Carlo IoU from uniform points over the union's bounding box."""
    pts = np.vstack([rect_corners(a), rect_corners(b)])
    (x0, z0), (x1, z1) = pts.min(axis=0), pts.max(axis=0)
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(z0, z1, n)])
    ia, ib = in_rect(pts, a), in_rect(pts, b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def random_rect(rng, spread=3.0):
    return np.array([
        rng.uniform(-spread, spread), rng.uniform(-spread, spread),
        rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0), rng.uniform(-np.pi, np.pi),
    ])


def _in_triangle(p, a, b, c, tol):
    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    d1, d2, d3 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
    neg = min(d1, d2, d3) < -tol
    pos = max(d1, d2, d3) > tol
    return not (neg and pos)


def _on_segment(p, a, b, tol):
    ab = b - a
    L2 = ab @ ab
    t = 0.0 if L2 == 0 else min(max((p - a) @ ab / L2, 0.0), 1.0)
    return np.linalg.norm(a + t * ab - p) <= tol


def in_hull(p, pts, tol=1e-9):
    """Whether 2D point ``p`` lies in the convex hull of a few points.

    By Caratheodory's theorem it is enough to try every triangle and, for
    degenerate sets, every segment.
    """
    from itertools import combinations

    p = np.asarray(p, dtype=float)
    pts = np.asarray(pts, dtype=float)
    if len(pts) == 1:
        return np.linalg.norm(p - pts[0]) <= tol
    for a, b in combinations(pts, 2):
        if _on_segment(p, a, b, tol):
            return True
    for a, b, c in combinations(pts, 3):
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area > tol and _in_triangle(p, a, b, c, tol * max(1.0, area)):
            return True
    return False


def random_label_corpus(n, seed=0):
    """Synthetic KITTI label lines with realistic value ranges."""
    rng = np.random.default_rng(seed)
    classes = ["Car", "Van", "Truck", "Pedestrian", "Cyclist", "DontCare"]
    lines = []
    for _ in range(n):
        cls = classes[rng.integers(len(classes))]
        left, top = rng.uniform(0, 1200), rng.uniform(0, 350)
        vals = [
            rng.uniform(0, 1), int(rng.integers(0, 4)), rng.uniform(-math.pi, math.pi),
            left, top, left + rng.uniform(0, 200), top + rng.uniform(0, 100),
            rng.uniform(0.5, 4), rng.uniform(0.4, 3), rng.uniform(0.5, 12),
            rng.uniform(-40, 40), rng.uniform(-1, 3), rng.uniform(0, 80),
            rng.uniform(-math.pi, math.pi),
        ]
        toks = [cls, f"{vals[0]:.3f}", str(vals[1])] + [f"{v:.4f}" for v in vals[2:]]
        if rng.random() < 0.2:
            toks.append(f"{rng.uniform(0, 1):.4f}")
        lines.append(" ".join(toks))
    return lines
