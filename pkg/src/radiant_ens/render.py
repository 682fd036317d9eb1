"""Volumetric rendering: sampling, compositing, and the backward pass.

Per-sample occupancy is o_i = 1 - exp(-rho_i * delta_i); transmittance
is the running product T_i = prod_{j<i} (1 - o_j); the termination
weights w_i = T_i * o_i sum to the ray opacity q.  The weights plus the
residual transmittance partition unity, which is what makes q usable as
a termination probability downstream.

``composite`` uses the product form of the transmittance and
``composite_expsum`` the exponential-of-sums form; the two are equal in
exact arithmetic and serve as mutual oracles.  Whole-image rendering
goes through the compiled kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .field import FieldSample, query
from .geometry import Camera, Image, Ray, bracket_t_range, camera_ray_grid

MAX_OPTICAL_DEPTH = _kernels.MAX_OPTICAL_DEPTH


@dataclass
class RaySamples:
    """Sample positions along one ray with their integration lengths."""

    t: np.ndarray
    delta: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.delta = np.asarray(self.delta, dtype=np.float64)
        self.points = np.asarray(self.points, dtype=np.float64)
        n = self.t.shape[0]
        if n < 1:
            raise ValueError("need at least one sample")
        if self.delta.shape != (n,) or self.points.shape != (n, 3):
            raise ValueError("t, delta and points disagree on sample count")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("t must be strictly increasing")
        if not np.all(self.delta > 0):
            raise ValueError("all deltas must be positive")


@dataclass
class CompositeResult:
    color: np.ndarray  # (3,)
    occupancy: np.ndarray  # (N,) in [0, 1)
    transmittance: np.ndarray  # (N,) in (0, 1]
    weights: np.ndarray  # (N,) w_i = T_i * o_i
    q: float  # sum of weights


def _sample_grid(t_near, t_far, n_rays, n_samples, mode, rng):
    """Sample positions and deltas for a batch of rays sharing one t range."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    width = (t_far - t_near) / n_samples
    edges = t_near + width * np.arange(n_samples)
    if mode == "midpoint":
        row = edges + 0.5 * width
        ts = np.broadcast_to(row, (n_rays, n_samples)).copy()
    elif mode == "stratified":
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        ts = edges + rng.random((n_rays, n_samples)) * width
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    deltas = np.empty_like(ts)
    deltas[:, :-1] = np.diff(ts, axis=1)
    deltas[:, -1] = width
    return ts, deltas


def sample_ray(ray: Ray, n_samples, mode="midpoint", rng=None) -> RaySamples:
    """Split [t_near, t_far] into equal bins; one sample per bin.

    Midpoint mode uses bin centers, stratified mode draws uniformly
    within each bin.  The last delta is the bin width; the others are
    the distances between consecutive samples.
    """
    ts, deltas = _sample_grid(ray.t_near, ray.t_far, 1, n_samples, mode, rng)
    t = ts[0]
    return RaySamples(
        t=t, delta=deltas[0], points=ray.origin + t[:, None] * ray.direction
    )


def _composite_from_occupancy(o, rgb):
    e = 1.0 - o
    trans = np.concatenate([[1.0], np.cumprod(e[:-1])])
    w = trans * o
    color = w @ rgb
    q = float(w.sum())
    return CompositeResult(
        color=color, occupancy=o, transmittance=trans, weights=w, q=q
    )


def _check_fields(samples, fields):
    rho = np.asarray(fields.rho, dtype=np.float64)
    rgb = np.asarray(fields.rgb, dtype=np.float64)
    n = samples.t.shape[0]
    if rho.shape != (n,) or rgb.shape != (n, 3):
        raise ValueError("field samples disagree with ray samples on count")
    if np.any(rho < 0):
        raise ValueError("densities must be nonnegative")
    return rho, rgb


def composite(samples: RaySamples, fields: FieldSample) -> CompositeResult:
    """Front-to-back compositing with the product-form transmittance."""
    rho, rgb = _check_fields(samples, fields)
    a = np.minimum(rho * samples.delta, MAX_OPTICAL_DEPTH)
    return _composite_from_occupancy(1.0 - np.exp(-a), rgb)


def composite_expsum(samples: RaySamples, fields: FieldSample) -> CompositeResult:
    """Same contract as composite, transmittance as exp of summed depths."""
    rho, rgb = _check_fields(samples, fields)
    a = np.minimum(rho * samples.delta, MAX_OPTICAL_DEPTH)
    o = 1.0 - np.exp(-a)
    cum = np.concatenate([[0.0], np.cumsum(a[:-1])])
    trans = np.exp(-cum)
    w = trans * o
    return CompositeResult(
        color=w @ rgb, occupancy=o, transmittance=trans, weights=w, q=float(w.sum())
    )


def composite_backward(samples, fields, d_color, d_q):
    """Analytic gradients of (C, q) through the compositing chain.

    Returns (d_rho, d_rgb) per sample.  With a_i = rho_i * delta_i and
    g_j = d_color . c_j + d_q, the density gradient is

        d_a[i] = T_{i+1} * g_i - sum_{j>i} w_j * g_j

    (the first term is the gain of weight i, the sum is the mass stolen
    from later samples); d_rho = delta * d_a, zero where a_i is clamped.
    """
    rho, rgb = _check_fields(samples, fields)
    d_color = np.asarray(d_color, dtype=np.float64)
    d_q = float(d_q)
    a_raw = rho * samples.delta
    a = np.minimum(a_raw, MAX_OPTICAL_DEPTH)
    e = np.exp(-a)
    trans = np.concatenate([[1.0], np.cumprod(e[:-1])])
    w = trans * (1.0 - e)
    g = rgb @ d_color + d_q
    wg = w * g
    rev = np.cumsum(wg[::-1])[::-1]
    suffix = np.zeros_like(wg)
    suffix[:-1] = rev[1:]
    d_a = trans * e * g - suffix
    d_a[a_raw > MAX_OPTICAL_DEPTH] = 0.0
    d_rho = samples.delta * d_a
    d_rgb = w[:, None] * d_color[None, :]
    return d_rho, d_rgb


def _field_arrays(field):
    lo = np.ascontiguousarray(field.bounds.lo, dtype=np.float64)
    hi = np.ascontiguousarray(field.bounds.hi, dtype=np.float64)
    return field.raw_density, field.raw_rgb, lo, hi


def render_rays(field, origins, dirs, ts, deltas):
    """Batch forward pass through the kernel backend.

    origins/dirs are (B, 3), ts/deltas (B, N); returns colours (B, 3)
    and opacities (B,).
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    ts = np.ascontiguousarray(ts, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    n_rays = origins.shape[0]
    out_color = np.empty((n_rays, 3))
    out_q = np.empty(n_rays)
    raw_d, raw_c, lo, hi = _field_arrays(field)
    _kernels.render_rays_forward(
        raw_d, raw_c, lo, hi, origins, dirs, ts, deltas, out_color, out_q
    )
    return out_color, out_q


def render_rays_backward(
    field, origins, dirs, ts, deltas, d_color, d_q, grad_density, grad_rgb
):
    """Accumulate raw-parameter gradients for a rendered ray batch."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    ts = np.ascontiguousarray(ts, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    d_color = np.ascontiguousarray(d_color, dtype=np.float64)
    d_q = np.ascontiguousarray(d_q, dtype=np.float64)
    raw_d, raw_c, lo, hi = _field_arrays(field)
    _kernels.render_rays_backward(
        raw_d, raw_c, lo, hi, origins, dirs, ts, deltas,
        d_color, d_q, grad_density, grad_rgb,
    )
    return grad_density, grad_rgb


def render_view(
    field,
    camera: Camera,
    n_samples=64,
    mode="midpoint",
    rng=None,
    t_near=None,
    t_far=None,
):
    """Render every pixel of the camera; returns (Image, q_map).

    Midpoint mode is fully deterministic and is what all evaluation and
    uncertainty paths use; stratified mode is for training only.  The t
    range defaults to a bracket of the field bounds as seen from the
    camera.
    """
    if t_near is None or t_far is None:
        t_near, t_far = bracket_t_range(field.bounds, camera.position[None, :])
    dirs = camera_ray_grid(camera).reshape(-1, 3)
    n_rays = dirs.shape[0]
    origins = np.broadcast_to(camera.position, (n_rays, 3))
    ts, deltas = _sample_grid(t_near, t_far, n_rays, n_samples, mode, rng)
    colors, q = render_rays(field, origins, dirs, ts, deltas)
    # fp roundoff can leave values an ulp outside [0, 1]
    pixels = np.clip(colors.reshape(camera.height, camera.width, 3), 0.0, 1.0)
    q_map = np.clip(q.reshape(camera.height, camera.width), 0.0, 1.0)
    return Image.from_array(pixels), q_map


def query_points(field, points):
    """Field query through the kernel backend; (P, 3) points in, arrays out."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    out_rho = np.empty(points.shape[0])
    out_rgb = np.empty((points.shape[0], 3))
    raw_d, raw_c, lo, hi = _field_arrays(field)
    _kernels.query_points(raw_d, raw_c, lo, hi, points, out_rho, out_rgb)
    return out_rho, out_rgb
