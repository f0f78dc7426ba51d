# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Signatures mirror graspview._pykernels exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, floor, INFINITY, M_PI

cnp.import_array()


def ray_first_hit(const double[:, ::1] origins, const double[:, ::1] dirs,
                  const double[:, ::1] v0, const double[:, ::1] e1, const double[:, ::1] e2,
                  double t_min, double t_max):
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t m = v0.shape[0]
    t_out = np.full(n, np.inf)
    idx_out = np.full(n, -1, dtype=np.int64)
    cdef double[::1] tv = t_out
    cdef long long[::1] iv = idx_out
    cdef Py_ssize_t r, k
    cdef double ox, oy, oz, dx, dy, dz
    cdef double px, py, pz, sx, sy, sz, qx, qy, qz
    cdef double det, inv, u, v, t, best
    cdef long long best_k
    for r in range(n):
        ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
        dx = dirs[r, 0]; dy = dirs[r, 1]; dz = dirs[r, 2]
        best = INFINITY
        best_k = -1
        for k in range(m):
            px = dy * e2[k, 2] - dz * e2[k, 1]
            py = dz * e2[k, 0] - dx * e2[k, 2]
            pz = dx * e2[k, 1] - dy * e2[k, 0]
            det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
            if fabs(det) < 1e-15:
                continue
            inv = 1.0 / det
            sx = ox - v0[k, 0]; sy = oy - v0[k, 1]; sz = oz - v0[k, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = sy * e1[k, 2] - sz * e1[k, 1]
            qy = sz * e1[k, 0] - sx * e1[k, 2]
            qz = sx * e1[k, 1] - sy * e1[k, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
            if t > t_min and t <= t_max and t < best:
                best = t
                best_k = k
        tv[r] = best
        iv[r] = best_k
    return t_out, idx_out


cdef inline long long _place(const double[:, ::1] points, const double[::1] seed,
                             double xx, double xy, double xz, double yx, double yy, double yz,
                             double zx, double zy, double zz, double shift,
                             double finger_depth, double half_ap, double finger_width,
                             double half_h, double eps, double* c_out):
    """Slide one hand placement in; returns the closing-region count or -1."""
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t i
    cdef double half_fd = 0.5 * finger_depth
    cdef double outer = half_ap + finger_width
    cdef double dx, dy, dz, qx, ay, qz, hi, c_first = -INFINITY, max_hi = -INFINITY, c_star
    cdef bint any_closing = False
    cdef long long count = 0
    for i in range(n):
        dx = points[i, 0] - seed[0]
        dy = points[i, 1] - seed[1]
        dz = points[i, 2] - seed[2]
        qz = dx * zx + dy * zy + dz * zz
        if fabs(qz) > half_h:
            continue
        ay = fabs(dx * yx + dy * yy + dz * yz - shift)
        if ay > outer:
            continue
        qx = dx * xx + dy * xy + dz * xz
        hi = qx - half_fd
        if hi > max_hi:
            max_hi = hi
        if ay >= half_ap:
            hi = qx + half_fd
            if hi > max_hi:
                max_hi = hi
        if ay <= half_ap:
            any_closing = True
            if qx + half_fd > c_first:
                c_first = qx + half_fd
    if not any_closing or max_hi >= c_first:
        return -1
    c_star = max_hi + eps
    if c_first - finger_depth > c_star:
        c_star = c_first - finger_depth
    if c_star > half_fd:
        return -1
    for i in range(n):
        dx = points[i, 0] - seed[0]
        dy = points[i, 1] - seed[1]
        dz = points[i, 2] - seed[2]
        qz = dx * zx + dy * zy + dz * zz
        if fabs(qz) > half_h:
            continue
        ay = fabs(dx * yx + dy * yy + dz * yz - shift)
        if ay > half_ap:
            continue
        qx = dx * xx + dy * xy + dz * xz
        if fabs(qx - c_star) <= half_fd:
            count += 1
    c_out[0] = c_star
    return count


def hand_search(const double[:, ::1] points, const double[:, ::1] seeds, const double[:, :, :, ::1] rots,
                const double[::1] shifts, double finger_depth, double aperture, double finger_width,
                double hand_height, double base_depth, double eps, long long min_points):
    cdef Py_ssize_t ns = rots.shape[0]
    cdef Py_ssize_t nk = rots.shape[1]
    cdef Py_ssize_t nl = shifts.shape[0]
    offset_out = np.full((ns, nk), np.nan)
    shift_out = np.full((ns, nk), np.nan)
    count_out = np.zeros((ns, nk), dtype=np.int64)
    ok_out = np.zeros((ns, nk), dtype=np.bool_)
    cdef double[:, ::1] off = offset_out
    cdef double[:, ::1] sh = shift_out
    cdef long long[:, ::1] cnt = count_out
    cdef cnp.npy_bool[:, ::1] ok = ok_out
    c_buf = np.empty(nl)
    n_buf = np.empty(nl, dtype=np.int64)
    cdef double[::1] cb = c_buf
    cdef long long[::1] nb = n_buf
    cdef Py_ssize_t s, k, j, n_ok, pick
    cdef double c_star
    for s in range(ns):
        for k in range(nk):
            n_ok = 0
            for j in range(nl):
                nb[j] = _place(points, seeds[s],
                               rots[s, k, 0, 0], rots[s, k, 1, 0], rots[s, k, 2, 0],
                               rots[s, k, 0, 1], rots[s, k, 1, 1], rots[s, k, 2, 1],
                               rots[s, k, 0, 2], rots[s, k, 1, 2], rots[s, k, 2, 2],
                               shifts[j], finger_depth, 0.5 * aperture, finger_width,
                               0.5 * hand_height, eps, &c_star)
                cb[j] = c_star
                if nb[j] >= min_points:
                    n_ok += 1
            if n_ok == 0:
                continue
            # middle feasible placement, counted in shift order
            pick = (n_ok - 1) // 2
            for j in range(nl):
                if nb[j] >= min_points:
                    if pick == 0:
                        off[s, k] = cb[j]
                        sh[s, k] = shifts[j]
                        cnt[s, k] = nb[j]
                        ok[s, k] = True
                        break
                    pick -= 1
    return offset_out, shift_out, count_out, ok_out


cdef inline double _wrap(double d):
    return d - 2.0 * M_PI * floor((d + M_PI) / (2.0 * M_PI))


def gaussian_splat(const double[::1] theta, const double[::1] phi, const double[:, ::1] weights,
                   const double[::1] grid, double variance):
    cdef Py_ssize_t ns = theta.shape[0]
    cdef Py_ssize_t nc = weights.shape[1]
    cdef Py_ssize_t g = grid.shape[0]
    out_arr = np.zeros((nc, g, g))
    cdef double[:, :, ::1] out = out_arr
    kt_arr = np.empty(g)
    kp_arr = np.empty(g)
    cdef double[::1] kt = kt_arr
    cdef double[::1] kp = kp_arr
    cdef double two_var = 2.0 * variance
    cdef Py_ssize_t s, c, i, j
    cdef double d, w, a
    cdef double* row
    cdef double* ktp = &kt[0]
    if ns == 0 or g == 0:
        return out_arr
    for s in range(ns):
        for i in range(g):
            d = _wrap(theta[s] - grid[i])
            kt[i] = exp(-(d * d) / two_var)
            d = phi[s] - grid[i]
            kp[i] = exp(-(d * d) / two_var)
        for c in range(nc):
            w = weights[s, c]
            if w == 0.0:
                continue
            for j in range(g):
                a = w * kp[j]
                # plain pointers let the compiler vectorise the row update
                row = &out[c, j, 0]
                for i in range(g):
                    row[i] += a * ktp[i]
    return out_arr
