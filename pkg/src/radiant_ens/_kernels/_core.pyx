# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled ray-marching kernels.

Mirrors reference.py operation for operation: same out-of-bounds
contract, same optical-depth clamp, same accumulation order (corner
loop ascending, suffix sums from the tail).
"""

from libc.math cimport exp, floor, log1p
from libc.stdlib cimport free, malloc

import numpy as np

MAX_OPTICAL_DEPTH = 80.0  # keep in sync with _MAX below

cdef double _MAX = 80.0


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline bint _locate(
    double p, double lo, double hi, int resolution,
    Py_ssize_t* i_out, double* f_out,
) noexcept nogil:
    cdef double u
    cdef Py_ssize_t i
    if p < lo or p > hi:
        return 0
    u = (p - lo) / (hi - lo) * resolution
    i = <Py_ssize_t>floor(u)
    if i < 0:
        i = 0
    if i > resolution - 1:
        i = resolution - 1
    i_out[0] = i
    f_out[0] = u - i
    return 1


cdef inline bint _gather(
    const double[:, :, ::1] raw_density,
    const double[:, :, :, ::1] raw_rgb,
    const double[::1] lo, const double[::1] hi,
    double px, double py, double pz,
    double* raw_d, double* raw_c,
    Py_ssize_t* ii, double* ff,
) noexcept nogil:
    cdef int resolution = <int>raw_density.shape[0] - 1
    cdef int corner, dx, dy, dz
    cdef double wx, wy, wz, w
    cdef double acc_d = 0.0, acc_r = 0.0, acc_g = 0.0, acc_b = 0.0
    cdef Py_ssize_t ax, ay, az
    if not _locate(px, lo[0], hi[0], resolution, &ii[0], &ff[0]):
        return 0
    if not _locate(py, lo[1], hi[1], resolution, &ii[1], &ff[1]):
        return 0
    if not _locate(pz, lo[2], hi[2], resolution, &ii[2], &ff[2]):
        return 0
    for corner in range(8):
        dx = corner & 1
        dy = (corner >> 1) & 1
        dz = (corner >> 2) & 1
        wx = ff[0] if dx else 1.0 - ff[0]
        wy = ff[1] if dy else 1.0 - ff[1]
        wz = ff[2] if dz else 1.0 - ff[2]
        w = wx * wy * wz
        ax = ii[0] + dx
        ay = ii[1] + dy
        az = ii[2] + dz
        acc_d += w * raw_density[ax, ay, az]
        acc_r += w * raw_rgb[ax, ay, az, 0]
        acc_g += w * raw_rgb[ax, ay, az, 1]
        acc_b += w * raw_rgb[ax, ay, az, 2]
    raw_d[0] = acc_d
    raw_c[0] = acc_r
    raw_c[1] = acc_g
    raw_c[2] = acc_b
    return 1


def query_points(
    const double[:, :, ::1] raw_density,
    const double[:, :, :, ::1] raw_rgb,
    const double[::1] lo,
    const double[::1] hi,
    const double[:, ::1] points,
    double[::1] out_rho,
    double[:, ::1] out_rgb,
):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t p
    cdef double raw_d
    cdef double raw_c[3]
    cdef Py_ssize_t ii[3]
    cdef double ff[3]
    if out_rho.shape[0] != n or out_rgb.shape[0] != n:
        raise ValueError("output arrays must match the number of points")
    with nogil:
        for p in range(n):
            if _gather(
                raw_density, raw_rgb, lo, hi,
                points[p, 0], points[p, 1], points[p, 2],
                &raw_d, raw_c, ii, ff,
            ):
                out_rho[p] = _softplus(raw_d)
                out_rgb[p, 0] = _sigmoid(raw_c[0])
                out_rgb[p, 1] = _sigmoid(raw_c[1])
                out_rgb[p, 2] = _sigmoid(raw_c[2])
            else:
                out_rho[p] = 0.0
                out_rgb[p, 0] = 0.0
                out_rgb[p, 1] = 0.0
                out_rgb[p, 2] = 0.0
    return np.asarray(out_rho), np.asarray(out_rgb)


def render_rays_forward(
    const double[:, :, ::1] raw_density,
    const double[:, :, :, ::1] raw_rgb,
    const double[::1] lo,
    const double[::1] hi,
    const double[:, ::1] origins,
    const double[:, ::1] dirs,
    const double[:, ::1] ts,
    const double[:, ::1] deltas,
    double[:, ::1] out_color,
    double[::1] out_q,
):
    cdef Py_ssize_t n_rays = ts.shape[0]
    cdef Py_ssize_t n_samples = ts.shape[1]
    cdef Py_ssize_t b, i
    cdef double px, py, pz, rho, a, e, o, w, trans
    cdef double raw_d
    cdef double raw_c[3]
    cdef double col[3]
    cdef Py_ssize_t ii[3]
    cdef double ff[3]
    cdef double q
    if origins.shape[0] != n_rays or dirs.shape[0] != n_rays:
        raise ValueError("origins and dirs must match the ray count")
    if deltas.shape[0] != n_rays or deltas.shape[1] != n_samples:
        raise ValueError("deltas must match ts")
    if out_color.shape[0] != n_rays or out_q.shape[0] != n_rays:
        raise ValueError("output arrays must match the ray count")
    with nogil:
        for b in range(n_rays):
            trans = 1.0
            q = 0.0
            col[0] = 0.0
            col[1] = 0.0
            col[2] = 0.0
            for i in range(n_samples):
                px = origins[b, 0] + ts[b, i] * dirs[b, 0]
                py = origins[b, 1] + ts[b, i] * dirs[b, 1]
                pz = origins[b, 2] + ts[b, i] * dirs[b, 2]
                if _gather(
                    raw_density, raw_rgb, lo, hi,
                    px, py, pz, &raw_d, raw_c, ii, ff,
                ):
                    rho = _softplus(raw_d)
                    a = rho * deltas[b, i]
                    if a > _MAX:
                        a = _MAX
                    e = exp(-a)
                    o = 1.0 - e
                    w = trans * o
                    col[0] += w * _sigmoid(raw_c[0])
                    col[1] += w * _sigmoid(raw_c[1])
                    col[2] += w * _sigmoid(raw_c[2])
                    q += w
                    trans *= e
            out_color[b, 0] = col[0]
            out_color[b, 1] = col[1]
            out_color[b, 2] = col[2]
            out_q[b] = q
    return np.asarray(out_color), np.asarray(out_q)


def render_rays_backward(
    const double[:, :, ::1] raw_density,
    const double[:, :, :, ::1] raw_rgb,
    const double[::1] lo,
    const double[::1] hi,
    const double[:, ::1] origins,
    const double[:, ::1] dirs,
    const double[:, ::1] ts,
    const double[:, ::1] deltas,
    const double[:, ::1] d_color,
    const double[::1] d_q,
    double[:, :, ::1] grad_density,
    double[:, :, :, ::1] grad_rgb,
):
    cdef Py_ssize_t n_rays = ts.shape[0]
    cdef Py_ssize_t n_samples = ts.shape[1]
    cdef Py_ssize_t b, i
    cdef int corner, dx, dy, dz, ch
    cdef double px, py, pz, rho, a, araw, e, w, trans, gi, acc
    cdef double raw_d, d_rho, d_raw_d, s, wx, wy, wz, wc
    cdef double raw_c[3]
    cdef double d_raw_c[3]
    cdef Py_ssize_t ii[3]
    cdef double ff[3]
    cdef Py_ssize_t ax, ay, az
    cdef double* buf
    cdef double* wg_buf
    cdef double* da_buf
    cdef double* w_buf
    cdef double* a_buf
    if d_color.shape[0] != n_rays or d_q.shape[0] != n_rays:
        raise ValueError("gradient inputs must match the ray count")
    if grad_density.shape[0] != raw_density.shape[0]:
        raise ValueError("grad_density must match raw_density")
    buf = <double*> malloc(4 * n_samples * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    wg_buf = buf
    da_buf = buf + n_samples
    w_buf = buf + 2 * n_samples
    a_buf = buf + 3 * n_samples
    with nogil:
        for b in range(n_rays):
            # forward pass, keeping the per-sample pieces the reverse
            # sweep needs
            trans = 1.0
            for i in range(n_samples):
                px = origins[b, 0] + ts[b, i] * dirs[b, 0]
                py = origins[b, 1] + ts[b, i] * dirs[b, 1]
                pz = origins[b, 2] + ts[b, i] * dirs[b, 2]
                if _gather(
                    raw_density, raw_rgb, lo, hi,
                    px, py, pz, &raw_d, raw_c, ii, ff,
                ):
                    rho = _softplus(raw_d)
                    gi = (
                        d_color[b, 0] * _sigmoid(raw_c[0])
                        + d_color[b, 1] * _sigmoid(raw_c[1])
                        + d_color[b, 2] * _sigmoid(raw_c[2])
                        + d_q[b]
                    )
                else:
                    rho = 0.0
                    gi = d_q[b]
                araw = rho * deltas[b, i]
                a = araw if araw < _MAX else _MAX
                e = exp(-a)
                w = trans * (1.0 - e)
                wg_buf[i] = w * gi
                da_buf[i] = trans * e * gi
                w_buf[i] = w
                a_buf[i] = araw
                trans *= e
            # reverse sweep: subtract the suffix coupling, zero clamped
            acc = 0.0
            for i in range(n_samples - 1, -1, -1):
                da_buf[i] = da_buf[i] - acc
                acc += wg_buf[i]
                if a_buf[i] > _MAX:
                    da_buf[i] = 0.0
            # scatter pass
            for i in range(n_samples):
                px = origins[b, 0] + ts[b, i] * dirs[b, 0]
                py = origins[b, 1] + ts[b, i] * dirs[b, 1]
                pz = origins[b, 2] + ts[b, i] * dirs[b, 2]
                if not _gather(
                    raw_density, raw_rgb, lo, hi,
                    px, py, pz, &raw_d, raw_c, ii, ff,
                ):
                    continue
                d_rho = deltas[b, i] * da_buf[i]
                d_raw_d = d_rho * _sigmoid(raw_d)
                for ch in range(3):
                    s = _sigmoid(raw_c[ch])
                    d_raw_c[ch] = w_buf[i] * d_color[b, ch] * s * (1.0 - s)
                for corner in range(8):
                    dx = corner & 1
                    dy = (corner >> 1) & 1
                    dz = (corner >> 2) & 1
                    wx = ff[0] if dx else 1.0 - ff[0]
                    wy = ff[1] if dy else 1.0 - ff[1]
                    wz = ff[2] if dz else 1.0 - ff[2]
                    wc = wx * wy * wz
                    ax = ii[0] + dx
                    ay = ii[1] + dy
                    az = ii[2] + dz
                    grad_density[ax, ay, az] += wc * d_raw_d
                    grad_rgb[ax, ay, az, 0] += wc * d_raw_c[0]
                    grad_rgb[ax, ay, az, 1] += wc * d_raw_c[1]
                    grad_rgb[ax, ay, az, 2] += wc * d_raw_c[2]
    free(buf)
    return np.asarray(grad_density), np.asarray(grad_rgb)
