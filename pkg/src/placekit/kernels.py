"""Hot numeric kernels with two interchangeable backends.

Rectangles are packed as float64 rows ``(cx, cz, half_len, half_wid, theta)``
in the camera xz plane.  The length axis of a rect at heading ``theta`` is
``(cos theta, -sin theta)`` and the width axis ``(sin theta, cos theta)``,
which matches the KITTI ``rotation_y`` convention.

``NUMBA`` holds the loop kernels compiled with numba (Sutherland-Hodgman
clipping for the overlap area).  ``NUMPY`` holds vectorised numpy versions
(vertex collection plus angular sort).  The module-level names point at
whichever backend ``PLACEKIT_NUMBA`` selects.
"""
from math import cos, floor, pi, sin, sqrt
from types import SimpleNamespace

import numpy as np

from ._jit import HAVE_NUMBA, USE_NUMBA, njit

TWO_PI = 2.0 * pi
AREA_EPS = 1e-9


# ---------------------------------------------------------------------------
# loop kernels (compiled by numba when available)
# ---------------------------------------------------------------------------


def _wrap_loop(a):
    if -pi <= a < pi:
        return a
    r = (a + pi) % TWO_PI - pi
    if r >= pi:
        r -= TWO_PI
    elif r < -pi:
        r += TWO_PI
    return r


def _corners_loop(rect, out):
    cx, cz, hl, hw, th = rect[0], rect[1], rect[2], rect[3], rect[4]
    c = cos(th)
    s = sin(th)
    # counter-clockwise in (x, z)
    su = (1.0, -1.0, -1.0, 1.0)
    sv = (1.0, 1.0, -1.0, -1.0)
    for k in range(4):
        a = su[k] * hl
        b = sv[k] * hw
        out[k, 0] = cx + a * c + b * s
        out[k, 1] = cz - a * s + b * c


def _poly_area_loop(pts, n):
    acc = 0.0
    for i in range(n):
        j = (i + 1) % n
        acc += pts[i, 0] * pts[j, 1] - pts[j, 0] * pts[i, 1]
    return 0.5 * abs(acc)


def _clip_area_loop(pa, pb):
    src = np.empty((16, 2))
    dst = np.empty((16, 2))
    for i in range(4):
        src[i, 0] = pa[i, 0]
        src[i, 1] = pa[i, 1]
    n = 4
    for e in range(4):
        ax = pb[e, 0]
        az = pb[e, 1]
        ex = pb[(e + 1) % 4, 0] - ax
        ez = pb[(e + 1) % 4, 1] - az
        m = 0
        for i in range(n):
            px = src[i, 0]
            pz = src[i, 1]
            qx = src[(i + 1) % n, 0]
            qz = src[(i + 1) % n, 1]
            dp = ex * (pz - az) - ez * (px - ax)
            dq = ex * (qz - az) - ez * (qx - ax)
            if dp >= 0.0:
                dst[m, 0] = px
                dst[m, 1] = pz
                m += 1
                if dq < 0.0:
                    t = dp / (dp - dq)
                    dst[m, 0] = px + t * (qx - px)
                    dst[m, 1] = pz + t * (qz - pz)
                    m += 1
            elif dq >= 0.0:
                t = dp / (dp - dq)
                dst[m, 0] = px + t * (qx - px)
                dst[m, 1] = pz + t * (qz - pz)
                m += 1
        if m < 3:
            return 0.0
        for i in range(m):
            src[i, 0] = dst[i, 0]
            src[i, 1] = dst[i, 1]
        n = m
    return _poly_area_loop(src, n)


def _inter_area_loop(a, b):
    # circumscribed-circle reject
    dx = a[0] - b[0]
    dz = a[1] - b[1]
    ra = sqrt(a[2] * a[2] + a[3] * a[3])
    rb = sqrt(b[2] * b[2] + b[3] * b[3])
    if dx * dx + dz * dz >= (ra + rb) * (ra + rb):
        return 0.0
    pa = np.empty((4, 2))
    pb = np.empty((4, 2))
    _corners_loop(a, pa)
    _corners_loop(b, pb)
    inter = _clip_area_loop(pa, pb)
    if inter <= AREA_EPS:
        return 0.0
    return inter


def _iou_pair_loop(a, b):
    inter = _inter_area_loop(a, b)
    if inter == 0.0:
        return 0.0
    union = 4.0 * a[2] * a[3] + 4.0 * b[2] * b[3] - inter
    iou = inter / union
    if iou > 1.0:
        iou = 1.0
    return iou


def _iou_matrix_loop(ra, rb):
    out = np.zeros((ra.shape[0], rb.shape[0]))
    for i in range(ra.shape[0]):
        for j in range(rb.shape[0]):
            out[i, j] = _iou_pair_loop(ra[i], rb[j])
    return out


def _overlaps_any_loop(rect, others):
    for j in range(others.shape[0]):
        if _inter_area_loop(rect, others[j]) > 0.0:
            return True
    return False


def _neighbor_mask_loop(loc, theta, locs, thetas, radius, eps_theta):
    n = locs.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    r2 = radius * radius
    for i in range(n):
        d0 = locs[i, 0] - loc[0]
        d1 = locs[i, 1] - loc[1]
        d2 = locs[i, 2] - loc[2]
        if d0 * d0 + d1 * d1 + d2 * d2 < r2:
            if abs(_wrap_loop(thetas[i] - theta)) < eps_theta:
                out[i] = True
    return out


def _deposit_loop(weight, hist, dim_sum, dim_sq, y_sum, xs, zs, thetas, dims, ys,
                  x_min, z_min, cell):
    nz = weight.shape[0]
    nx = weight.shape[1]
    nbins = hist.shape[2]
    width = TWO_PI / nbins
    dropped = 0
    for k in range(xs.shape[0]):
        ix = int(floor((xs[k] - x_min) / cell))
        iz = int(floor((zs[k] - z_min) / cell))
        if ix < 0 or ix >= nx or iz < 0 or iz >= nz:
            dropped += 1
            continue
        b = int(floor((_wrap_loop(thetas[k]) + pi) / width))
        if b >= nbins:
            b = nbins - 1
        weight[iz, ix] += 1.0
        hist[iz, ix, b] += 1.0
        for d in range(3):
            dim_sum[iz, ix, d] += dims[k, d]
            dim_sq[iz, ix, d] += dims[k, d] * dims[k, d]
        y_sum[iz, ix] += ys[k]
    return dropped


# ---------------------------------------------------------------------------
# vectorised numpy kernels
# ---------------------------------------------------------------------------


def _wrap_np(a):
    a = np.asarray(a, dtype=np.float64)
    r = np.mod(a + np.pi, TWO_PI) - np.pi
    r = np.where(r >= np.pi, r - TWO_PI, r)
    r = np.where(r < -np.pi, r + TWO_PI, r)
    # in-range angles pass through untouched
    return np.where((a >= -np.pi) & (a < np.pi), a, r)


def corners_np(rects):
    """Corner array of shape ``(n, 4, 2)``, counter-clockwise in (x, z)."""
    rects = np.atleast_2d(np.asarray(rects, dtype=np.float64))
    c = np.cos(rects[:, 4])[:, None]
    s = np.sin(rects[:, 4])[:, None]
    a = np.array([1.0, -1.0, -1.0, 1.0])[None, :] * rects[:, 2:3]
    b = np.array([1.0, 1.0, -1.0, -1.0])[None, :] * rects[:, 3:4]
    x = rects[:, 0:1] + a * c + b * s
    z = rects[:, 1:2] - a * s + b * c
    return np.stack([x, z], axis=-1)


def _cross(ax, az, bx, bz):
    return ax * bz - az * bx


def _inside_np(pts, poly, tol=1e-12):
    # pts (..., k, 2), poly (..., 4, 2) counter-clockwise
    e0 = poly
    e1 = np.roll(poly, -1, axis=-2)
    ex = (e1[..., 0] - e0[..., 0])[..., None, :]
    ez = (e1[..., 1] - e0[..., 1])[..., None, :]
    rx = pts[..., :, None, 0] - e0[..., None, :, 0]
    rz = pts[..., :, None, 1] - e0[..., None, :, 1]
    return np.all(_cross(ex, ez, rx, rz) >= -tol, axis=-1)


def inter_area_matrix_np(ra, rb):
    """Pairwise overlap areas via vertex collection and angular ordering."""
    ra = np.atleast_2d(np.asarray(ra, dtype=np.float64))
    rb = np.atleast_2d(np.asarray(rb, dtype=np.float64))
    n, m = ra.shape[0], rb.shape[0]
    if n == 0 or m == 0:
        return np.zeros((n, m))
    pa = np.broadcast_to(corners_np(ra)[:, None], (n, m, 4, 2))
    pb = np.broadcast_to(corners_np(rb)[None, :], (n, m, 4, 2))

    a_in_b = _inside_np(pa, pb)
    b_in_a = _inside_np(pb, pa)

    # edge-edge intersections, 16 per pair
    p = pa[:, :, :, None, :]
    r = (np.roll(pa, -1, axis=2) - pa)[:, :, :, None, :]
    q = pb[:, :, None, :, :]
    s = (np.roll(pb, -1, axis=2) - pb)[:, :, None, :, :]
    denom = _cross(r[..., 0], r[..., 1], s[..., 0], s[..., 1])
    qp = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(qp[..., 0], qp[..., 1], s[..., 0], s[..., 1]) / denom
        u = _cross(qp[..., 0], qp[..., 1], r[..., 0], r[..., 1]) / denom
    tol = 1e-12
    # near-parallel edges are skipped; their overlap shows up as contained corners
    scale = np.hypot(r[..., 0], r[..., 1]) * np.hypot(s[..., 0], s[..., 1])
    hit = (np.abs(denom) > 1e-12 * scale) & (t >= -tol) & (t <= 1 + tol) & (u >= -tol) & (u <= 1 + tol)
    t = np.where(hit, t, 0.0)
    xp = p + t[..., None] * r
    xp = xp.reshape(n, m, 16, 2)
    hit = hit.reshape(n, m, 16)

    pts = np.concatenate([pa, pb, xp], axis=2)
    valid = np.concatenate([a_in_b, b_in_a, hit], axis=2)
    cnt = valid.sum(axis=2)
    safe = np.maximum(cnt, 1)[..., None]
    centre = np.where(valid[..., None], pts, 0.0).sum(axis=2) / safe
    ang = np.arctan2(pts[..., 1] - centre[..., None, 1], pts[..., 0] - centre[..., None, 0])
    ang = np.where(valid, ang, np.inf)
    order = np.argsort(ang, axis=2, kind="stable")
    pts = np.take_along_axis(pts, order[..., None], axis=2)
    valid = np.take_along_axis(valid, order, axis=2)
    pts = np.where(valid[..., None], pts, pts[:, :, :1, :])
    nxt = np.roll(pts, -1, axis=2)
    area = 0.5 * np.abs(
        np.sum(pts[..., 0] * nxt[..., 1] - nxt[..., 0] * pts[..., 1], axis=2)
    )
    area = np.where(cnt >= 3, area, 0.0)
    return np.where(area > AREA_EPS, area, 0.0)


def _iou_matrix_np(ra, rb):
    ra = np.atleast_2d(np.asarray(ra, dtype=np.float64))
    rb = np.atleast_2d(np.asarray(rb, dtype=np.float64))
    inter = inter_area_matrix_np(ra, rb)
    aa = 4.0 * ra[:, 2] * ra[:, 3]
    ab = 4.0 * rb[:, 2] * rb[:, 3]
    union = aa[:, None] + ab[None, :] - inter
    return np.minimum(np.where(inter > 0, inter / union, 0.0), 1.0)


def _iou_pair_np(a, b):
    return float(_iou_matrix_np(a, b)[0, 0])


def _overlaps_any_np(rect, others):
    others = np.asarray(others, dtype=np.float64)
    if others.shape[0] == 0:
        return False
    return bool(np.any(inter_area_matrix_np(rect, others) > 0.0))


def _neighbor_mask_np(loc, theta, locs, thetas, radius, eps_theta):
    locs = np.asarray(locs, dtype=np.float64).reshape(-1, 3)
    d2 = np.sum((locs - np.asarray(loc, dtype=np.float64)) ** 2, axis=1)
    dth = np.abs(_wrap_np(np.asarray(thetas, dtype=np.float64) - theta))
    return (d2 < radius * radius) & (dth < eps_theta)


def _deposit_np(weight, hist, dim_sum, dim_sq, y_sum, xs, zs, thetas, dims, ys,
                x_min, z_min, cell):
    nz, nx = weight.shape
    nbins = hist.shape[2]
    ix = np.floor((np.asarray(xs) - x_min) / cell).astype(np.int64)
    iz = np.floor((np.asarray(zs) - z_min) / cell).astype(np.int64)
    keep = (ix >= 0) & (ix < nx) & (iz >= 0) & (iz < nz)
    ix, iz = ix[keep], iz[keep]
    b = np.floor((_wrap_np(np.asarray(thetas)[keep]) + np.pi) / (TWO_PI / nbins)).astype(np.int64)
    b = np.minimum(b, nbins - 1)
    dims = np.asarray(dims)[keep]
    np.add.at(weight, (iz, ix), 1.0)
    np.add.at(hist, (iz, ix, b), 1.0)
    np.add.at(dim_sum, (iz, ix), dims)
    np.add.at(dim_sq, (iz, ix), dims * dims)
    np.add.at(y_sum, (iz, ix), np.asarray(ys)[keep])
    return int((~keep).sum())


NUMPY = SimpleNamespace(
    name="numpy",
    iou_pair=_iou_pair_np,
    iou_matrix=_iou_matrix_np,
    overlaps_any=_overlaps_any_np,
    neighbor_mask=_neighbor_mask_np,
    deposit=_deposit_np,
)

if HAVE_NUMBA:
    # compiled bodies look helpers up by global name, so rebind them first
    for _name in ("_wrap_loop", "_corners_loop", "_poly_area_loop", "_clip_area_loop",
                  "_inter_area_loop", "_iou_pair_loop"):
        globals()[_name] = njit(globals()[_name])
    NUMBA = SimpleNamespace(
        name="numba",
        iou_pair=_iou_pair_loop,
        iou_matrix=njit(_iou_matrix_loop),
        overlaps_any=njit(_overlaps_any_loop),
        neighbor_mask=njit(_neighbor_mask_loop),
        deposit=njit(_deposit_loop),
    )
else:  # pragma: no cover
    NUMBA = None

ACTIVE = NUMBA if USE_NUMBA else NUMPY

iou_pair = ACTIVE.iou_pair
iou_matrix = ACTIVE.iou_matrix
overlaps_any = ACTIVE.overlaps_any
neighbor_mask = ACTIVE.neighbor_mask
deposit = ACTIVE.deposit
wrap = _wrap_np
