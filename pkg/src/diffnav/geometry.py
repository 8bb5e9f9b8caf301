"""Planar geometry kernels: oriented-box collision tests and raycasting.

All functions operate on packed numpy arrays so they can be evaluated for
many robot poses at once (the expert controllers score whole candidate
lattices per decision step). Conventions:

- circles: (N, 3) array of (cx, cy, r)
- rects:   (N, 4) array of axis-aligned (x0, y0, x1, y1)
- segments:(N, 4) array of (ax, ay, bx, by)

Boundary contact counts as a hit everywhere (closed footprints).
"""

from __future__ import annotations

import numpy as np

_EMPTY3 = np.zeros((0, 3))
_EMPTY4 = np.zeros((0, 4))


def pack_circles(circles) -> np.ndarray:
    if len(circles) == 0:
        return _EMPTY3
    return np.array([(c.cx, c.cy, c.r) for c in circles], dtype=float)


def pack_rects(rects) -> np.ndarray:
    if len(rects) == 0:
        return _EMPTY4
    return np.array([(r.x0, r.y0, r.x1, r.y1) for r in rects], dtype=float)


def pack_segments(walls) -> np.ndarray:
    if len(walls) == 0:
        return _EMPTY4
    return np.array([(w.x0, w.y0, w.x1, w.y1) for w in walls], dtype=float)


def box_corners(x, y, theta, half_l, half_w):
    """Corners of oriented boxes, shape (..., 4, 2)."""
    x, y, theta = np.asarray(x, float), np.asarray(y, float), np.asarray(theta, float)
    c, s = np.cos(theta), np.sin(theta)
    lx = np.stack([half_l * c, half_l * s], axis=-1)   # (...,2) body x axis * hl
    wy = np.stack([-half_w * s, half_w * c], axis=-1)  # body y axis * hw
    ctr = np.stack([x, y], axis=-1)
    return np.stack([ctr + lx + wy, ctr + lx - wy, ctr - lx - wy, ctr - lx + wy], axis=-2)


def boxes_hit_circles(x, y, theta, half_l, half_w, circles: np.ndarray):
    """Oriented box vs circle overlap, broadcast over poses. Returns bool (...,)."""
    x, y, theta = np.asarray(x, float), np.asarray(y, float), np.asarray(theta, float)
    out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    if circles.shape[0] == 0:
        return out
    c, s = np.cos(theta)[..., None], np.sin(theta)[..., None]
    dx = circles[:, 0] - x[..., None]
    dy = circles[:, 1] - y[..., None]
    # circle center in box frame
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    qx = np.clip(lx, -half_l, half_l) - lx
    qy = np.clip(ly, -half_w, half_w) - ly
    return (qx * qx + qy * qy <= circles[:, 2] ** 2).any(axis=-1)


def boxes_hit_rects(x, y, theta, half_l, half_w, rects: np.ndarray):
    """Oriented box vs axis-aligned rect overlap via SAT over the four axes."""
    x, y, theta = np.asarray(x, float), np.asarray(y, float), np.asarray(theta, float)
    out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    if rects.shape[0] == 0:
        return out
    c, s = np.cos(theta)[..., None], np.sin(theta)[..., None]
    ac, as_ = np.abs(c), np.abs(s)
    # box extent on world axes
    ex = half_l * ac + half_w * as_
    ey = half_l * as_ + half_w * ac
    sep_world = (
        (x[..., None] + ex < rects[:, 0]) | (rects[:, 2] < x[..., None] - ex)
        | (y[..., None] + ey < rects[:, 1]) | (rects[:, 3] < y[..., None] - ey)
    )
    # rect corners in box frame; rect extent on box axes
    rcx = (rects[:, 0] + rects[:, 2]) / 2
    rcy = (rects[:, 1] + rects[:, 3]) / 2
    rhx = (rects[:, 2] - rects[:, 0]) / 2
    rhy = (rects[:, 3] - rects[:, 1]) / 2
    dx = rcx - x[..., None]
    dy = rcy - y[..., None]
    # projection of rect center and half extents onto box axes
    pl = c * dx + s * dy
    pw = -s * dx + c * dy
    rl = rhx * ac + rhy * as_
    rw = rhx * as_ + rhy * ac
    sep_box = (np.abs(pl) > rl + half_l) | (np.abs(pw) > rw + half_w)
    return (~(sep_world | sep_box)).any(axis=-1)


def boxes_hit_segments(x, y, theta, half_l, half_w, segments: np.ndarray):
    """Oriented box vs line segment intersection (Liang-Barsky in box frame)."""
    x, y, theta = np.asarray(x, float), np.asarray(y, float), np.asarray(theta, float)
    out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    if segments.shape[0] == 0:
        return out
    c, s = np.cos(theta)[..., None], np.sin(theta)[..., None]
    ax = segments[:, 0] - x[..., None]
    ay = segments[:, 1] - y[..., None]
    bx = segments[:, 2] - x[..., None]
    by = segments[:, 3] - y[..., None]
    # endpoints in box frame
    alx, aly = c * ax + s * ay, -s * ax + c * ay
    blx, bly = c * bx + s * by, -s * bx + c * by
    dlx, dly = blx - alx, bly - aly

    t0 = np.zeros_like(alx)
    t1 = np.ones_like(alx)
    feasible = np.ones_like(alx, dtype=bool)
    for p, q in (
        (-dlx, alx + half_l),   # x >= -half_l
        (dlx, half_l - alx),    # x <= half_l
        (-dly, aly + half_w),
        (dly, half_w - aly),
    ):
        par = p == 0
        feasible &= ~(par & (q < 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(par, 0.0, q / np.where(par, 1.0, p))
        t0 = np.where(~par & (p < 0), np.maximum(t0, t), t0)
        t1 = np.where(~par & (p > 0), np.minimum(t1, t), t1)
    return (feasible & (t0 <= t1)).any(axis=-1)


def boxes_outside_bounds(x, y, theta, half_l, half_w, bounds):
    """True where any footprint corner leaves [x0,x1] x [y0,y1]."""
    x0, y0, x1, y1 = bounds
    corners = box_corners(x, y, theta, half_l, half_w)
    cx, cy = corners[..., 0], corners[..., 1]
    return ((cx < x0) | (cx > x1) | (cy < y0) | (cy > y1)).any(axis=-1)


def raycast_ranges(ox, oy, angles, circles, rects, segments, max_range):
    """Distance along each ray to the nearest geometry boundary.

    angles are absolute world-frame directions; returns (len(angles),) ranges
    clipped to max_range.
    """
    angles = np.asarray(angles, float)
    dx, dy = np.cos(angles), np.sin(angles)
    best = np.full(angles.shape, float(max_range))

    if circles.shape[0]:
        fx = circles[:, 0] - ox
        fy = circles[:, 1] - oy
        b = dx[:, None] * fx + dy[:, None] * fy          # (A, C)
        cc = fx * fx + fy * fy - circles[:, 2] ** 2
        disc = b * b - cc
        ok = disc >= 0
        root = np.sqrt(np.where(ok, disc, 0.0))
        t_near = b - root
        t_far = b + root
        t = np.where(t_near > 1e-9, t_near, t_far)
        t = np.where(ok & (t > 1e-9), t, np.inf)
        best = np.minimum(best, t.min(axis=1))

    if rects.shape[0]:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_x = 1.0 / dx
            inv_y = 1.0 / dy
        tx0 = (rects[:, 0] - ox) * inv_x[:, None]
        tx1 = (rects[:, 2] - ox) * inv_x[:, None]
        ty0 = (rects[:, 1] - oy) * inv_y[:, None]
        ty1 = (rects[:, 3] - oy) * inv_y[:, None]
        # rays parallel to an axis: slab test degenerates, patch with +-inf
        para_x = np.abs(dx) < 1e-12
        para_y = np.abs(dy) < 1e-12
        in_x = (ox >= rects[:, 0]) & (ox <= rects[:, 2])
        in_y = (oy >= rects[:, 1]) & (oy <= rects[:, 3])
        lo_x = np.where(para_x[:, None], np.where(in_x, -np.inf, np.inf), np.minimum(tx0, tx1))
        hi_x = np.where(para_x[:, None], np.where(in_x, np.inf, -np.inf), np.maximum(tx0, tx1))
        lo_y = np.where(para_y[:, None], np.where(in_y, -np.inf, np.inf), np.minimum(ty0, ty1))
        hi_y = np.where(para_y[:, None], np.where(in_y, np.inf, -np.inf), np.maximum(ty0, ty1))
        tmin = np.maximum(lo_x, lo_y)
        tmax = np.minimum(hi_x, hi_y)
        hit = (tmax >= tmin) & (tmax > 1e-9)
        t = np.where(tmin > 1e-9, tmin, tmax)
        t = np.where(hit, t, np.inf)
        best = np.minimum(best, t.min(axis=1))

    if segments.shape[0]:
        ex = segments[:, 2] - segments[:, 0]
        ey = segments[:, 3] - segments[:, 1]
        fx = segments[:, 0] - ox
        fy = segments[:, 1] - oy
        denom = dx[:, None] * ey - dy[:, None] * ex       # cross(d, e)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (fx * ey - fy * ex) / denom               # along ray
            u = (fx * dy[:, None] - fy * dx[:, None]) / denom  # along segment
        ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
        t = np.where(ok, t, np.inf)
        best = np.minimum(best, t.min(axis=1))

    return np.minimum(best, max_range)


def point_clearance(px, py, circles, rects, segments):
    """Distance from points (...,) to the nearest geometry boundary.

    Negative inside circles; zero inside rects. Used for spawn checks and
    the experts' all-candidates-collide fallback, not for exact collision.
    """
    px, py = np.asarray(px, float), np.asarray(py, float)
    best = np.full(np.broadcast(px, py).shape, np.inf)
    if circles.shape[0]:
        d = np.hypot(px[..., None] - circles[:, 0], py[..., None] - circles[:, 1]) - circles[:, 2]
        best = np.minimum(best, d.min(axis=-1))
    if rects.shape[0]:
        qx = np.maximum(np.maximum(rects[:, 0] - px[..., None], px[..., None] - rects[:, 2]), 0.0)
        qy = np.maximum(np.maximum(rects[:, 1] - py[..., None], py[..., None] - rects[:, 3]), 0.0)
        best = np.minimum(best, np.hypot(qx, qy).min(axis=-1))
    if segments.shape[0]:
        ex = segments[:, 2] - segments[:, 0]
        ey = segments[:, 3] - segments[:, 1]
        L2 = np.maximum(ex * ex + ey * ey, 1e-18)
        fx = px[..., None] - segments[:, 0]
        fy = py[..., None] - segments[:, 1]
        u = np.clip((fx * ex + fy * ey) / L2, 0.0, 1.0)
        d = np.hypot(fx - u * ex, fy - u * ey)
        best = np.minimum(best, d.min(axis=-1))
    return best
