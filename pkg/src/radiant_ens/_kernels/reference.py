"""Vectorized numpy implementation of the ray-marching kernels.

This is the fallback backend.  The compiled extension mirrors it
operation for operation; both honour the same contract:

- samples outside the field bounds contribute zero density and colour,
- per-sample optical depth rho * delta is clamped to MAX_OPTICAL_DEPTH
  before exponentiation (gradient is zero in the clamped region),
- all arrays are float64 and C-contiguous.
"""

from __future__ import annotations

import numpy as np

MAX_OPTICAL_DEPTH = 80.0


def _softplus(x):
    return np.where(
        x > 0.0,
        x + np.log1p(np.exp(-np.abs(x))),
        np.log1p(np.exp(np.minimum(x, 0.0))),
    )


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _gather_raw(raw_density, raw_rgb, lo, hi, points):
    """Trilinear interpolation of the raw grids at each point.

    Returns (raw_d, raw_c, inside, idx, frac); callers must zero the
    activated outputs wherever inside is False.
    """
    resolution = raw_density.shape[0] - 1
    inside = np.all((points >= lo) & (points <= hi), axis=-1)
    u = (points - lo) / (hi - lo) * resolution
    idx = np.clip(np.floor(u).astype(np.int64), 0, resolution - 1)
    frac = u - idx
    frac = np.where(inside[:, None], frac, 0.0)  # keep weights bounded outside
    raw_d = np.zeros(points.shape[0])
    raw_c = np.zeros((points.shape[0], 3))
    for corner in range(8):
        dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
        wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
        w = wx * wy * wz
        ix, iy, iz = idx[:, 0] + dx, idx[:, 1] + dy, idx[:, 2] + dz
        raw_d += w * raw_density[ix, iy, iz]
        raw_c += w[:, None] * raw_rgb[ix, iy, iz]
    return raw_d, raw_c, inside, idx, frac


def query_points(raw_density, raw_rgb, lo, hi, points, out_rho, out_rgb):
    """Activated density and colour at each of the (P, 3) points."""
    raw_d, raw_c, inside, _, _ = _gather_raw(raw_density, raw_rgb, lo, hi, points)
    out_rho[:] = np.where(inside, _softplus(raw_d), 0.0)
    out_rgb[:] = np.where(inside[:, None], _sigmoid(raw_c), 0.0)
    return out_rho, out_rgb


def _forward_parts(raw_density, raw_rgb, lo, hi, origins, dirs, ts, deltas):
    n_rays, n_samples = ts.shape
    points = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    rho = np.empty(n_rays * n_samples)
    rgb = np.empty((n_rays * n_samples, 3))
    query_points(
        raw_density, raw_rgb, lo, hi, points.reshape(-1, 3), rho, rgb
    )
    rho = rho.reshape(n_rays, n_samples)
    rgb = rgb.reshape(n_rays, n_samples, 3)
    a = np.minimum(rho * deltas, MAX_OPTICAL_DEPTH)
    e = np.exp(-a)
    # transmittance before sample i: product of e over earlier samples
    trans = np.cumprod(
        np.concatenate([np.ones((n_rays, 1)), e[:, :-1]], axis=1), axis=1
    )
    w = trans * (1.0 - e)
    return points, rho, rgb, e, trans, w


def render_rays_forward(
    raw_density, raw_rgb, lo, hi, origins, dirs, ts, deltas, out_color, out_q
):
    """Composite each ray front to back; writes colour (B, 3) and opacity (B,)."""
    _, _, rgb, _, _, w = _forward_parts(
        raw_density, raw_rgb, lo, hi, origins, dirs, ts, deltas
    )
    out_color[:] = np.einsum("bn,bnc->bc", w, rgb)
    out_q[:] = w.sum(axis=1)
    return out_color, out_q


def render_rays_backward(
    raw_density,
    raw_rgb,
    lo,
    hi,
    origins,
    dirs,
    ts,
    deltas,
    d_color,
    d_q,
    grad_density,
    grad_rgb,
):
    """Accumulate raw-parameter gradients for a batch of rendered rays.

    Recomputes the forward internals rather than caching them; memory
    stays flat in the number of rays.  d(a_i) couples every later sample
    through the transmittance product:

        d_a[i] = trans[i] * e[i] * g[i] - sum_{j > i} w[j] * g[j]

    with g[j] = d_color . rgb[j] + d_q.
    """
    points, rho, rgb, e, trans, w = _forward_parts(
        raw_density, raw_rgb, lo, hi, origins, dirs, ts, deltas
    )
    g = np.einsum("bc,bnc->bn", d_color, rgb) + d_q[:, None]
    wg = w * g
    # suffix[i] = sum_{j > i} wg[j], accumulated from the tail like the
    # compiled backend's reverse loop
    rev = np.cumsum(wg[:, ::-1], axis=1)[:, ::-1]
    suffix = np.zeros_like(wg)
    suffix[:, :-1] = rev[:, 1:]
    d_a = trans * e * g - suffix
    d_a = np.where(rho * deltas > MAX_OPTICAL_DEPTH, 0.0, d_a)
    d_rho = deltas * d_a
    d_rgb = w[..., None] * d_color[:, None, :]
    _scatter_raw(
        raw_density,
        raw_rgb,
        lo,
        hi,
        points.reshape(-1, 3),
        d_rho.reshape(-1),
        d_rgb.reshape(-1, 3),
        grad_density,
        grad_rgb,
    )
    return grad_density, grad_rgb


def _scatter_raw(
    raw_density, raw_rgb, lo, hi, points, d_rho, d_rgb, grad_density, grad_rgb
):
    """Push sample-space gradients through the activations onto the grids."""
    raw_d, raw_c, inside, idx, frac = _gather_raw(
        raw_density, raw_rgb, lo, hi, points
    )
    d_raw_d = np.where(inside, d_rho * _sigmoid(raw_d), 0.0)
    s = _sigmoid(raw_c)
    d_raw_c = np.where(inside[:, None], d_rgb * s * (1.0 - s), 0.0)
    side = raw_density.shape[0]
    flat_d = grad_density.reshape(-1)
    flat_c = grad_rgb.reshape(-1, 3)
    for corner in range(8):
        dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
        wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
        w = wx * wy * wz
        lin = ((idx[:, 0] + dx) * side + (idx[:, 1] + dy)) * side + (idx[:, 2] + dz)
        np.add.at(flat_d, lin, w * d_raw_d)
        np.add.at(flat_c, lin, w[:, None] * d_raw_c)
