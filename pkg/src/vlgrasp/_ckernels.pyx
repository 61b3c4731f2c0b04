# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray casting and gripper point counting.

Mirrors ``_kernels_py`` expression by expression; see that module for the
argument conventions.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

cdef double EPS = 1e-9


cdef inline void _sphere(double o0, double o1, double o2, double D0, double D1, double D2,
                         double r, double* t_out, double* n) noexcept nogil:
    cdef double a = D0 * D0 + D1 * D1 + D2 * D2
    cdef double b = o0 * D0 + o1 * D1 + o2 * D2
    cdef double c = o0 * o0 + o1 * o1 + o2 * o2 - r * r
    cdef double disc = b * b - a * c
    cdef double sq, t
    t_out[0] = INFINITY
    if disc < 0:
        return
    sq = sqrt(disc)
    t = (-b - sq) / a
    if not (t > EPS):
        t = (-b + sq) / a
    if not (t > EPS):
        return
    t_out[0] = t
    n[0] = (o0 + t * D0) / r
    n[1] = (o1 + t * D1) / r
    n[2] = (o2 + t * D2) / r


cdef inline void _box(double o0, double o1, double o2, double D0, double D1, double D2,
                      double h0, double h1, double h2, double* t_out, double* n) noexcept nogil:
    cdef double tmin = -INFINITY, tmax = INFINITY
    cdef int axis = 0
    cdef double sgn = 0.0
    cdef double o[3]
    cdef double D[3]
    cdef double hh[3]
    cdef double t1, t2, lo, hi, t
    cdef int i
    o[0] = o0; o[1] = o1; o[2] = o2
    D[0] = D0; D[1] = D1; D[2] = D2
    hh[0] = h0; hh[1] = h1; hh[2] = h2
    t_out[0] = INFINITY
    for i in range(3):
        if D[i] == 0.0:
            if fabs(o[i]) > hh[i]:
                return
            continue
        t1 = (-hh[i] - o[i]) / D[i]
        t2 = (hh[i] - o[i]) / D[i]
        if t1 < t2:
            lo = t1; hi = t2
        else:
            lo = t2; hi = t1
        if lo > tmin:
            tmin = lo
            axis = i
            sgn = -1.0 if D[i] > 0 else 1.0
        if hi < tmax:
            tmax = hi
    if not (tmax >= tmin and tmax > EPS):
        return
    t = tmax if tmin <= EPS else tmin
    t_out[0] = t
    n[0] = sgn if axis == 0 else 0.0
    n[1] = sgn if axis == 1 else 0.0
    n[2] = sgn if axis == 2 else 0.0


cdef inline void _cylinder(double o0, double o1, double o2, double D0, double D1, double D2,
                           double r, double hh, double* t_out, double* n) noexcept nogil:
    cdef double a = D0 * D0 + D1 * D1
    cdef double b = o0 * D0 + o1 * D1
    cdef double c = o0 * o0 + o1 * o1 - r * r
    cdef double disc = b * b - a * c
    cdef double ts = INFINITY, zs, sq, tc = INFINITY, cx, cy, capz = 0.0
    cdef double t_side = INFINITY, t_cap = INFINITY
    if disc >= 0 and a > 0:
        sq = sqrt(disc)
        ts = (-b - sq) / a
        zs = o2 + ts * D2
        if ts > EPS and zs >= -hh and zs <= hh:
            t_side = ts
    if o2 > hh:
        capz = hh
    elif o2 < -hh:
        capz = -hh
    if capz != 0.0 and D2 != 0.0:
        tc = (capz - o2) / D2
        cx = o0 + tc * D0
        cy = o1 + tc * D1
        if tc > EPS and cx * cx + cy * cy <= r * r:
            t_cap = tc
    t_out[0] = INFINITY
    if t_cap < t_side:
        t_out[0] = t_cap
        n[0] = 0.0
        n[1] = 0.0
        n[2] = 1.0 if capz > 0 else -1.0
    elif t_side < INFINITY:
        t_out[0] = t_side
        n[0] = (o0 + t_side * D0) / r
        n[1] = (o1 + t_side * D1) / r
        n[2] = 0.0


def raycast(dirs, kinds, rot, origin, dims):
    cdef const double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const long[::1] kd = np.ascontiguousarray(kinds, dtype=np.int64)
    cdef const double[:, :, ::1] R = np.ascontiguousarray(rot, dtype=np.float64).reshape(-1, 3, 3)
    cdef const double[:, ::1] O = np.ascontiguousarray(origin, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] S = np.ascontiguousarray(dims, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = d.shape[0], P = kd.shape[0], i, p
    out_t = np.zeros(n, dtype=np.float64)
    out_i = np.full(n, -1, dtype=np.int64)
    out_n = np.zeros((n, 3), dtype=np.float64)
    cdef double[::1] bt = out_t
    cdef long[::1] bi = out_i
    cdef double[:, ::1] bn = out_n
    cdef double dx, dy, dz, D0, D1, D2, t, best
    cdef double nl[3]
    with nogil:
        for i in range(n):
            dx = d[i, 0]; dy = d[i, 1]; dz = d[i, 2]
            best = INFINITY
            for p in range(P):
                D0 = R[p, 0, 0] * dx + R[p, 0, 1] * dy + R[p, 0, 2] * dz
                D1 = R[p, 1, 0] * dx + R[p, 1, 1] * dy + R[p, 1, 2] * dz
                D2 = R[p, 2, 0] * dx + R[p, 2, 1] * dy + R[p, 2, 2] * dz
                if kd[p] == 0:
                    _sphere(O[p, 0], O[p, 1], O[p, 2], D0, D1, D2, S[p, 0], &t, nl)
                elif kd[p] == 1:
                    _box(O[p, 0], O[p, 1], O[p, 2], D0, D1, D2, S[p, 0], S[p, 1], S[p, 2], &t, nl)
                else:
                    _cylinder(O[p, 0], O[p, 1], O[p, 2], D0, D1, D2, S[p, 0], S[p, 1], &t, nl)
                if t < best:
                    best = t
                    bi[i] = p
                    bn[i, 0] = R[p, 0, 0] * nl[0] + R[p, 1, 0] * nl[1] + R[p, 2, 0] * nl[2]
                    bn[i, 1] = R[p, 0, 1] * nl[0] + R[p, 1, 1] * nl[1] + R[p, 2, 1] * nl[2]
                    bn[i, 2] = R[p, 0, 2] * nl[0] + R[p, 1, 2] * nl[1] + R[p, 2, 2] * nl[2]
            bt[i] = best if bi[i] >= 0 else 0.0
    return out_t, out_i, out_n


def gripper_counts(points, flags, rot, trans, widths, dims, neighbors=None):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef const unsigned char[::1] flg = np.ascontiguousarray(flags, dtype=np.uint8).reshape(-1)
    cdef const double[:, :, ::1] R = np.ascontiguousarray(rot, dtype=np.float64).reshape(-1, 3, 3)
    cdef const double[:, ::1] Tr = np.ascontiguousarray(trans, dtype=np.float64).reshape(-1, 3)
    cdef const double[::1] W = np.ascontiguousarray(widths, dtype=np.float64).reshape(-1)
    cdef double L = dims[0], T = dims[1], H = dims[2], Pd = dims[3], reach = dims[4]
    cdef double g = dims[5] if len(dims) > 5 else 0.0
    cdef Py_ssize_t m = W.shape[0], n = pts.shape[0], k, j, jj, nn
    ct = np.zeros(m, dtype=np.int64)
    ca = np.zeros(m, dtype=np.int64)
    co = np.zeros(m, dtype=np.int64)
    mn = np.full(m, np.inf)
    mx = np.full(m, -np.inf)
    cdef long[::1] vct = ct, vca = ca, vco = co
    cdef double[::1] vmn = mn, vmx = mx
    cdef const long[::1] nb
    cdef double hH = H * 0.5, hHg, hw, outer, ex, ey, ez, qa, qc, qm, ac, am
    cdef bint tflag, in_slab
    cdef bint use_nb = neighbors is not None
    hHg = hH + g
    all_idx = np.arange(n, dtype=np.int64)
    for k in range(m):
        if use_nb:
            nb = np.ascontiguousarray(neighbors[k], dtype=np.int64)
        else:
            nb = all_idx
        nn = nb.shape[0]
        hw = W[k] * 0.5
        outer = hw + T + g
        with nogil:
            for jj in range(nn):
                j = nb[jj]
                ex = pts[j, 0] - Tr[k, 0]
                ey = pts[j, 1] - Tr[k, 1]
                ez = pts[j, 2] - Tr[k, 2]
                qm = R[k, 0, 2] * ex + R[k, 1, 2] * ey + R[k, 2, 2] * ez
                am = fabs(qm)
                if not (am <= hHg):
                    continue
                qa = R[k, 0, 0] * ex + R[k, 1, 0] * ey + R[k, 2, 0] * ez
                if qa < -Pd - g or qa > L + g:
                    continue
                qc = R[k, 0, 1] * ex + R[k, 1, 1] * ey + R[k, 2, 1] * ez
                ac = fabs(qc)
                tflag = flg[j] != 0
                if qa >= 0.0:
                    in_slab = am <= hH and qa <= L
                    if in_slab and tflag and ac <= reach:
                        if qc < vmn[k]:
                            vmn[k] = qc
                        if qc > vmx[k]:
                            vmx[k] = qc
                    if ac <= hw:
                        if in_slab:
                            vca[k] += 1
                            if tflag:
                                vct[k] += 1
                    elif ac <= outer:
                        vco[k] += 1
                elif ac <= outer:
                    vco[k] += 1
    return ct, ca, co, mn, mx
