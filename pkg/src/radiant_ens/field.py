"""Dense voxel radiance field with trilinear interpolation.

Parameters are stored raw on a (R+1)^3 corner lattice and pushed through
softplus (density) and sigmoid (colour) after interpolation, so gradients
stay well behaved near zero density.  Interpolating raw values rather
than activated ones keeps the field piecewise trilinear in parameter
space, which the analytic backward pass relies on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import Aabb

_MAGIC = b"RADFIELD"
_VERSION = 1


class FieldSample(NamedTuple):
    """Activated field values: density >= 0 and colour channels in (0, 1).

    Batched queries return arrays (rho shaped like the points' leading
    dimensions, rgb with a trailing channel axis).
    """

    rho: np.ndarray
    rgb: np.ndarray


def softplus(x):
    """log(1 + exp(x)) with the large-x branch rewritten to avoid overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class VertexGradient:
    """Per-vertex loss-gradient accumulators, same shapes as the raw grids."""

    d_density: np.ndarray
    d_rgb: np.ndarray

    @classmethod
    def zeros(cls, field):
        return cls(
            d_density=np.zeros_like(field.raw_density),
            d_rgb=np.zeros_like(field.raw_rgb),
        )

    def clear(self):
        self.d_density[...] = 0.0
        self.d_rgb[...] = 0.0


@dataclass
class VoxelField:
    """Raw parameter grids over an axis-aligned box.

    raw_density has shape (R+1, R+1, R+1); raw_rgb adds a trailing channel
    axis.  Corner [0,0,0] sits at bounds.lo and corner [R,R,R] at bounds.hi.
    """

    resolution: int
    bounds: Aabb
    raw_density: np.ndarray
    raw_rgb: np.ndarray

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("resolution must be >= 1")
        side = self.resolution + 1
        self.raw_density = np.ascontiguousarray(self.raw_density, dtype=np.float64)
        self.raw_rgb = np.ascontiguousarray(self.raw_rgb, dtype=np.float64)
        if self.raw_density.shape != (side, side, side):
            raise ValueError(f"raw_density must have shape {(side, side, side)}")
        if self.raw_rgb.shape != (side, side, side, 3):
            raise ValueError(f"raw_rgb must have shape {(side, side, side, 3)}")

    @property
    def n_params(self):
        return self.raw_density.size + self.raw_rgb.size


def init_field(resolution, bounds, seed):
    """Near-empty start: softplus(-3) density everywhere, colours near 0.5."""
    rng = np.random.default_rng(seed)
    side = resolution + 1
    raw_density = -3.0 + rng.uniform(-0.1, 0.1, size=(side, side, side))
    raw_rgb = rng.uniform(-0.1, 0.1, size=(side, side, side, 3))
    return VoxelField(
        resolution=resolution,
        bounds=bounds,
        raw_density=raw_density,
        raw_rgb=raw_rgb,
    )


def _lattice_coords(field, points):
    """Cell indices and fractional offsets for each point.

    Points outside the bounds return inside=False and must contribute
    rho = 0, rgb = 0 regardless of the stored parameters.
    """
    points = np.asarray(points, dtype=np.float64)
    lo, hi = field.bounds.lo, field.bounds.hi
    inside = np.all((points >= lo) & (points <= hi), axis=-1)
    u = (points - lo) / (hi - lo) * field.resolution
    i = np.clip(np.floor(u).astype(np.int64), 0, field.resolution - 1)
    f = u - i
    f = np.where(inside[..., None], f, 0.0)  # keep weights bounded outside
    return i, f, inside


def _corner_weights(f):
    """Eight trilinear weights per point, ordered by corner bits (dz,dy,dx)."""
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    out = np.empty(f.shape[:-1] + (8,))
    for corner in range(8):
        dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        wz = fz if dz else 1.0 - fz
        out[..., corner] = wx * wy * wz
    return out


def query(field, points):
    """Activated density and colour at each point; zeros outside the bounds.

    Returns a FieldSample of (rho, rgb) with shapes (...,) and (..., 3).
    """
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise ValueError("query points must be finite")
    i, f, inside = _lattice_coords(field, points)
    w = _corner_weights(f)
    raw_d = np.zeros(points.shape[:-1])
    raw_c = np.zeros(points.shape[:-1] + (3,))
    for corner in range(8):
        dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        ix, iy, iz = i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz
        wc = w[..., corner]
        raw_d += wc * field.raw_density[ix, iy, iz]
        raw_c += wc[..., None] * field.raw_rgb[ix, iy, iz]
    rho = np.where(inside, softplus(raw_d), 0.0)
    rgb = np.where(inside[..., None], sigmoid(raw_c), 0.0)
    return FieldSample(rho=rho, rgb=rgb)


def query_backward(field, points, d_rho, d_rgb, grads=None):
    """Accumulate d(loss)/d(raw params) given gradients at query outputs.

    Gradients flow through the activation derivative at the interpolated
    raw value, then scatter to the eight corners with trilinear weights.
    Points outside the bounds contribute nothing.  Returns the
    VertexGradient (allocated fresh when not supplied).
    """
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise ValueError("query points must be finite")
    d_rho = np.asarray(d_rho, dtype=np.float64)
    d_rgb = np.asarray(d_rgb, dtype=np.float64)
    if grads is None:
        grads = VertexGradient.zeros(field)
    grad_density = grads.d_density
    grad_rgb = grads.d_rgb
    i, f, inside = _lattice_coords(field, points)
    w = _corner_weights(f)

    raw_d = np.zeros(points.shape[:-1])
    raw_c = np.zeros(points.shape[:-1] + (3,))
    for corner in range(8):
        dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        ix, iy, iz = i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz
        wc = w[..., corner]
        raw_d += wc * field.raw_density[ix, iy, iz]
        raw_c += wc[..., None] * field.raw_rgb[ix, iy, iz]

    # d softplus = sigmoid(raw); d sigmoid = s (1 - s).
    d_raw_d = np.where(inside, d_rho * sigmoid(raw_d), 0.0)
    s = sigmoid(raw_c)
    d_raw_c = np.where(inside[..., None], d_rgb * s * (1.0 - s), 0.0)

    flat_i = i.reshape(-1, 3)
    flat_w = w.reshape(-1, 8)
    flat_dd = d_raw_d.reshape(-1)
    flat_dc = d_raw_c.reshape(-1, 3)
    side = field.resolution + 1
    for corner in range(8):
        dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        lin = (
            (flat_i[:, 0] + dx) * side + (flat_i[:, 1] + dy)
        ) * side + (flat_i[:, 2] + dz)
        contrib = flat_w[:, corner] * flat_dd
        np.add.at(grad_density.reshape(-1), lin, contrib)
        np.add.at(
            grad_rgb.reshape(-1, 3), lin, flat_w[:, corner, None] * flat_dc
        )
    return grads


def save_field(field, path):
    """Binary dump: magic, version, resolution, bounds, raw arrays (LE f64)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<ii", _VERSION, field.resolution))
        fh.write(struct.pack("<6d", *field.bounds.lo, *field.bounds.hi))
        fh.write(field.raw_density.astype("<f8").tobytes())
        fh.write(field.raw_rgb.astype("<f8").tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a field file")
        version, resolution = struct.unpack("<ii", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported field version {version}")
        lox, loy, loz, hix, hiy, hiz = struct.unpack("<6d", fh.read(48))
        side = resolution + 1
        n = side**3
        raw_density = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(side, side, side)
        raw_rgb = np.frombuffer(fh.read(8 * n * 3), dtype="<f8").reshape(side, side, side, 3)
        trailing = fh.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after field data")
    return VoxelField(
        resolution=resolution,
        bounds=Aabb(lo=(lox, loy, loz), hi=(hix, hiy, hiz)),
        raw_density=raw_density.copy(),
        raw_rgb=raw_rgb.copy(),
    )
