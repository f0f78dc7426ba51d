"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``.

Both backends take and return the same arrays. Results agree to rounding;
summation order differs, so they are not bit-identical to each other.
"""
import numpy as np

_RAY_CHUNK = 4096


def ray_first_hit(origins, dirs, v0, e1, e2, t_min, t_max):
    """Nearest triangle hit per ray (Moller-Trumbore, two-sided).

    Returns ``(t, tri)``; misses carry ``t = inf`` and ``tri = -1``.
    """
    n = origins.shape[0]
    t_out = np.full(n, np.inf)
    idx_out = np.full(n, -1, dtype=np.int64)
    if n == 0 or v0.shape[0] == 0:
        return t_out, idx_out
    for lo in range(0, n, _RAY_CHUNK):
        o = origins[lo:lo + _RAY_CHUNK, None, :]
        d = dirs[lo:lo + _RAY_CHUNK, None, :]
        p = np.cross(d, e2[None, :, :])
        det = np.einsum("mk,rmk->rm", e1, p)
        good = np.abs(det) >= 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(good, 1.0 / np.where(good, det, 1.0), 0.0)
            s = o - v0[None, :, :]
            u = np.einsum("rmk,rmk->rm", s, p) * inv
            q = np.cross(s, e1[None, :, :])
            v = np.einsum("rmk,rmk->rm", np.broadcast_to(d, q.shape), q) * inv
            t = np.einsum("mk,rmk->rm", e2, q) * inv
        hit = good & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0)
        hit &= (t > t_min) & (t <= t_max)
        t = np.where(hit, t, np.inf)
        k = np.argmin(t, axis=1)
        best = t[np.arange(t.shape[0]), k]
        t_out[lo:lo + _RAY_CHUNK] = best
        idx_out[lo:lo + _RAY_CHUNK] = np.where(np.isfinite(best), k, -1)
    return t_out, idx_out


def hand_search(points, seeds, rots, shifts, finger_depth, aperture, finger_width,
                hand_height, base_depth, eps, min_points):
    """Slide a parallel-jaw hand along each candidate approach axis.

    ``rots[s, k]`` holds the hand axes as columns (approach, closing, height)
    for seed ``s`` and orientation ``k``. Each lateral placement in ``shifts``
    moves the hand along its closing axis before sliding in; the middle
    feasible placement (in ``shifts`` order) is kept. Returns the approach
    offset, the lateral shift, the closing-region point count and a validity
    mask, each shaped ``(S, K)``.
    """
    ns, nk = rots.shape[:2]
    offset = np.full((ns, nk), np.nan)
    shift_out = np.full((ns, nk), np.nan)
    count = np.zeros((ns, nk), dtype=np.int64)
    ok = np.zeros((ns, nk), dtype=bool)
    half_fd = 0.5 * finger_depth
    half_ap = 0.5 * aperture
    outer = half_ap + finger_width
    half_h = 0.5 * hand_height
    for s in range(ns):
        d = points - seeds[s]
        q = np.einsum("nj,kjm->knm", d, rots[s])
        qx, qz = q[..., 0], np.abs(q[..., 2])
        # axes: (shift, orientation, point)
        ay = np.abs(q[None, ..., 1] - shifts[:, None, None])
        lateral = (qz <= half_h) & (ay <= outer)
        closing = lateral & (ay <= half_ap)
        finger = lateral & (ay >= half_ap)
        hi_base = np.where(lateral, qx - half_fd, -np.inf)
        hi_finger = np.where(finger, qx + half_fd, -np.inf)
        max_hi = np.maximum(hi_base.max(axis=2, initial=-np.inf),
                            hi_finger.max(axis=2, initial=-np.inf))
        c_first = np.where(closing, qx + half_fd, -np.inf).max(axis=2, initial=-np.inf)
        valid = closing.any(axis=2) & (max_hi < c_first)
        c_star = np.maximum(max_hi + eps, c_first - finger_depth)
        valid &= c_star <= half_fd
        n_in = np.count_nonzero(closing & (np.abs(qx - c_star[..., None]) <= half_fd), axis=2)
        feasible = valid & (n_in >= min_points)
        for k in range(nk):
            js = np.flatnonzero(feasible[:, k])
            if len(js) == 0:
                continue
            j = js[(len(js) - 1) // 2]
            offset[s, k] = c_star[j, k]
            shift_out[s, k] = shifts[j]
            count[s, k] = n_in[j, k]
            ok[s, k] = True
    return offset, shift_out, count, ok


def gaussian_splat(theta, phi, weights, grid, variance):
    """Sum isotropic Gaussian kernels of weighted samples onto a square grid.

    Output is ``(channels, elevation, azimuth)``; azimuth offsets wrap at pi.
    """
    nc = weights.shape[1]
    g = grid.shape[0]
    out = np.zeros((nc, g, g))
    if theta.shape[0] == 0:
        return out
    d = theta[:, None] - grid[None, :]
    d = d - 2.0 * np.pi * np.floor((d + np.pi) / (2.0 * np.pi))
    kt = np.exp(-(d * d) / (2.0 * variance))
    d = phi[:, None] - grid[None, :]
    kp = np.exp(-(d * d) / (2.0 * variance))
    for c in range(nc):
        out[c] = (weights[:, c, None] * kp).T @ kt
    return out
