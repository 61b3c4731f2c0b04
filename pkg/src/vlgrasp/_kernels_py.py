"""Pure-numpy kernels. Reference semantics for the compiled ``_ckernels`` module.

Both implementations evaluate the same expressions in the same order so that
results agree bit-for-bit on IEEE doubles.
"""

from __future__ import annotations

import numpy as np

SPHERE, BOX, CYLINDER = 0, 1, 2
EPS = 1e-9


def _local(R, o, dx, dy, dz):
    D0 = R[0, 0] * dx + R[0, 1] * dy + R[0, 2] * dz
    D1 = R[1, 0] * dx + R[1, 1] * dy + R[1, 2] * dz
    D2 = R[2, 0] * dx + R[2, 1] * dy + R[2, 2] * dz
    return o[0], o[1], o[2], D0, D1, D2


def _sphere(o0, o1, o2, D0, D1, D2, dims):
    r = dims[0]
    a = D0 * D0 + D1 * D1 + D2 * D2
    b = o0 * D0 + o1 * D1 + o2 * D2
    c = o0 * o0 + o1 * o1 + o2 * o2 - r * r
    disc = b * b - a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t = (-b - sq) / a
    t = np.where(t > EPS, t, (-b + sq) / a)
    hit &= t > EPS
    px, py, pz = o0 + t * D0, o1 + t * D1, o2 + t * D2
    return hit, t, px / r, py / r, pz / r


def _box(o0, o1, o2, D0, D1, D2, dims):
    n = D0.shape[0]
    tmin = np.full(n, -np.inf)
    tmax = np.full(n, np.inf)
    axis = np.zeros(n, dtype=np.int64)
    sgn = np.zeros(n)
    hit = np.ones(n, dtype=bool)
    for i, (oi, Di) in enumerate(((o0, D0), (o1, D1), (o2, D2))):
        h = dims[i]
        zero = Di == 0.0
        if zero.any():
            hit &= ~(zero & (abs(oi) > h))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-h - oi) / Di
            t2 = (h - oi) / Di
        lo = np.where(zero, -np.inf, np.minimum(t1, t2))
        hi = np.where(zero, np.inf, np.maximum(t1, t2))
        upd = lo > tmin
        tmin = np.where(upd, lo, tmin)
        axis = np.where(upd, i, axis)
        sgn = np.where(upd, np.where(Di > 0, -1.0, 1.0), sgn)
        tmax = np.minimum(tmax, hi)
    hit &= (tmax >= tmin) & (tmax > EPS)
    inside = tmin <= EPS
    t = np.where(inside, tmax, tmin)
    nx = np.where(axis == 0, sgn, 0.0)
    ny = np.where(axis == 1, sgn, 0.0)
    nz = np.where(axis == 2, sgn, 0.0)
    return hit, t, nx, ny, nz


def _cylinder(o0, o1, o2, D0, D1, D2, dims):
    r, hh = dims[0], dims[1]
    n = D0.shape[0]
    a = D0 * D0 + D1 * D1
    b = o0 * D0 + o1 * D1
    c = o0 * o0 + o1 * o1 - r * r
    disc = b * b - a * c
    ok = (disc >= 0) & (a > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ts = np.where(ok, (-b - sq) / np.where(a > 0, a, 1.0), np.inf)
    zs = o2 + ts * D2
    side = ok & (ts > EPS) & (zs >= -hh) & (zs <= hh)
    t_side = np.where(side, ts, np.inf)
    # near cap
    capz = hh if o2 > hh else (-hh if o2 < -hh else 0.0)
    if capz != 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = np.where(D2 != 0.0, (capz - o2) / np.where(D2 != 0.0, D2, 1.0), np.inf)
        cx = o0 + tc * D0
        cy = o1 + tc * D1
        cap = (tc > EPS) & (cx * cx + cy * cy <= r * r)
        t_cap = np.where(cap, tc, np.inf)
    else:
        t_cap = np.full(n, np.inf)
    use_cap = t_cap < t_side
    t = np.where(use_cap, t_cap, t_side)
    hit = np.isfinite(t)
    px, py = o0 + t * D0, o1 + t * D1
    with np.errstate(invalid="ignore"):
        nx = np.where(use_cap, 0.0, px / r)
        ny = np.where(use_cap, 0.0, py / r)
    nz = np.where(use_cap, 1.0 if capz > 0 else -1.0, 0.0)
    return hit, t, nx, ny, nz


_INTERSECT = {SPHERE: _sphere, BOX: _box, CYLINDER: _cylinder}


def raycast(dirs, kinds, rot, origin, dims):
    """Nearest hit of rays from the camera origin against primitives.

    ``dirs``: (N, 3) ray directions in the camera frame with unit z component.
    ``rot``: (P, 3, 3) camera-to-local rotations; ``origin``: (P, 3) camera
    origin expressed in each primitive's local frame; ``dims``: (P, 3).
    Returns ``(t, index, normals)`` where ``index`` is -1 for misses and
    normals are in the camera frame.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1, dtype=np.int64)
    normals = np.zeros((n, 3))
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    for p in range(len(kinds)):
        R = rot[p]
        o0, o1, o2, D0, D1, D2 = _local(R, origin[p], dx, dy, dz)
        hit, t, lx, ly, lz = _INTERSECT[int(kinds[p])](o0, o1, o2, D0, D1, D2, dims[p])
        better = hit & (t < best_t)
        if not better.any():
            continue
        best_t = np.where(better, t, best_t)
        best_i = np.where(better, p, best_i)
        # local normal -> camera frame: R^T n
        lx, ly, lz = lx[better], ly[better], lz[better]
        normals[better, 0] = R[0, 0] * lx + R[1, 0] * ly + R[2, 0] * lz
        normals[better, 1] = R[0, 1] * lx + R[1, 1] * ly + R[2, 1] * lz
        normals[better, 2] = R[0, 2] * lx + R[1, 2] * ly + R[2, 2] * lz
    best_t[best_i < 0] = 0.0
    return best_t, best_i, normals


def gripper_counts(points, flags, rot, trans, widths, dims, neighbors=None):
    """Per-candidate point counts in the gripper's closing region and solids.

    ``rot[k]`` has columns (approach, closing, minor) and ``trans[k]`` is the
    gripper-frame origin. ``dims`` = (finger_length, finger_thickness,
    finger_height, palm_depth, reach[, margin]). ``margin`` pads the finger
    and palm solids outward (tips, outer sides, palm back, minor axis); the
    closing region is unaffected. ``neighbors``, when given, lists for each
    candidate the indices of points that may fall in the gripper's bounding
    box (a superset filter; results are unaffected).

    Returns ``(close_target, close_all, collide, cmin, cmax)`` where
    ``cmin``/``cmax`` bound the closing-axis coordinate of target points in
    the finger slab ``0 <= a <= L, |c| <= reach, |m| <= H/2`` (+-inf when none).
    """
    L, T, H, P, reach = (float(x) for x in dims[:5])
    g = float(dims[5]) if len(dims) > 5 else 0.0
    m = len(widths)
    close_t = np.zeros(m, dtype=np.int64)
    close_a = np.zeros(m, dtype=np.int64)
    coll = np.zeros(m, dtype=np.int64)
    cmin = np.full(m, np.inf)
    cmax = np.full(m, -np.inf)
    pts = np.asarray(points, dtype=np.float64)
    flg = np.asarray(flags).astype(bool)
    hH = H * 0.5
    hHg = hH + g
    for k in range(m):
        idx = neighbors[k] if neighbors is not None else slice(None)
        q = pts[idx]
        f = flg[idx]
        if len(q) == 0:
            continue
        R = rot[k]
        t = trans[k]
        ex, ey, ez = q[:, 0] - t[0], q[:, 1] - t[1], q[:, 2] - t[2]
        qa = R[0, 0] * ex + R[1, 0] * ey + R[2, 0] * ez
        qc = R[0, 1] * ex + R[1, 1] * ey + R[2, 1] * ez
        qm = R[0, 2] * ex + R[1, 2] * ey + R[2, 2] * ez
        hw = widths[k] * 0.5
        outer = hw + T + g
        am = abs(qm)
        ac = abs(qc)
        slab = (am <= hH) & (qa >= 0.0) & (qa <= L)
        st = slab & f & (ac <= reach)
        closing = slab & (ac <= hw)
        band = am <= hHg
        finger = band & (qa >= 0.0) & (qa <= L + g) & (ac > hw) & (ac <= outer)
        palm = band & (qa >= -P - g) & (qa < 0.0) & (ac <= outer)
        close_t[k] = int(np.count_nonzero(closing & f))
        close_a[k] = int(np.count_nonzero(closing))
        coll[k] = int(np.count_nonzero(finger | palm))
        if st.any():
            cmin[k] = float(qc[st].min())
            cmax[k] = float(qc[st].max())
    return close_t, close_a, coll, cmin, cmax
