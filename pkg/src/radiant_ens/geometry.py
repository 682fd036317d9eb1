"""Pinhole cameras, rays, image buffers, and axis-aligned boxes.

Coordinate conventions (fixed package-wide, see also the pose file format
in :mod:`radiant_ens.cli`):

* camera frame: x right, y up, z backward -- the camera looks along -z,
  so ``rotation`` (world-from-camera) is a proper rotation (det = +1);
* pixel space: x right, y down; pixel row ``py`` maps to camera -y;
* rays pass through pixel centers, i.e. (px + 0.5, py + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _vec3(value, name):
    v = np.asarray(value, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


@dataclass
class Camera:
    """Pinhole camera with a world-from-camera pose.

    ``rotation`` columns are the camera x/y/z axes expressed in world
    coordinates; the viewing direction is ``-rotation[:, 2]``.
    """

    position: np.ndarray
    rotation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.position = _vec3(self.position, "position")
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if not err < 1e-9:
            raise ValueError(f"rotation is not orthonormal (deviation {err:.3e})")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        self.position.flags.writeable = False
        self.rotation.flags.writeable = False

    @property
    def forward(self):
        """Unit viewing direction in world coordinates."""
        return -self.rotation[:, 2]

    def project(self, point):
        """Project a world point to pixel coordinates (u, v).

        Raises ValueError for points at or behind the camera plane.
        """
        pc = self.rotation.T @ (np.asarray(point, dtype=np.float64) - self.position)
        if pc[2] >= 0.0:
            raise ValueError("point is not in front of the camera")
        inv = -1.0 / pc[2]
        return self.cx + self.fx * pc[0] * inv, self.cy - self.fy * pc[1] * inv


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        self.origin = _vec3(self.origin, "origin")
        self.direction = _vec3(self.direction, "direction")
        n = float(np.linalg.norm(self.direction))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"direction must be unit length, |d| = {n!r}")
        if not (0.0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")
        self.origin.flags.writeable = False
        self.direction.flags.writeable = False

    def at(self, t):
        return self.origin + t * self.direction


@dataclass
class Image:
    """RGB image with float64 channels in [0, 1], shape (height, width, 3)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixels shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("pixels must be finite")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel channels must lie in [0, 1]")

    @classmethod
    def from_array(cls, pixels):
        pixels = np.asarray(pixels, dtype=np.float64)
        return cls(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)


@dataclass
class Aabb:
    """Axis-aligned box, lo < hi on every axis."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = _vec3(self.lo, "lo")
        self.hi = _vec3(self.hi, "hi")
        if not np.all(self.lo < self.hi):
            raise ValueError("box must satisfy lo < hi on every axis")
        self.lo.flags.writeable = False
        self.hi.flags.writeable = False

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, point):
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


def pixel_direction(camera, px, py):
    """World-space unit direction through the center of pixel (px, py)."""
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise ValueError(
            f"pixel ({px}, {py}) outside {camera.width}x{camera.height} image"
        )
    d_cam = np.array(
        [
            (px + 0.5 - camera.cx) / camera.fx,
            -(py + 0.5 - camera.cy) / camera.fy,
            -1.0,
        ]
    )
    d = camera.rotation @ d_cam
    return d / np.linalg.norm(d)


def generate_ray(camera, px, py, t_near, t_far):
    """Ray from the camera center through the center of pixel (px, py)."""
    return Ray(
        origin=camera.position,
        direction=pixel_direction(camera, px, py),
        t_near=float(t_near),
        t_far=float(t_far),
    )


def camera_ray_grid(camera):
    """Unit directions for every pixel, shape (height, width, 3).

    Vectorized companion of :func:`generate_ray`; the shared origin is
    ``camera.position``.
    """
    u = (np.arange(camera.width) + 0.5 - camera.cx) / camera.fx
    v = -(np.arange(camera.height) + 0.5 - camera.cy) / camera.fy
    d_cam = np.empty((camera.height, camera.width, 3))
    d_cam[..., 0] = u[None, :]
    d_cam[..., 1] = v[:, None]
    d_cam[..., 2] = -1.0
    d = d_cam @ camera.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d


def look_at_camera(position, target, up, fx, fy, cx, cy, width, height):
    """Camera at ``position`` with the optical axis through ``target``."""
    position = _vec3(position, "position")
    target = _vec3(target, "target")
    up = _vec3(up, "up")
    fwd = target - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("position and target coincide")
    fwd = fwd / n
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("up vector is parallel to the viewing direction")
    right = right / rn
    true_up = np.cross(right, fwd)
    rotation = np.stack([right, true_up, -fwd], axis=1)
    return Camera(
        position=position,
        rotation=rotation,
        fx=fx,
        fy=fy,
        cx=cx,
        cy=cy,
        width=width,
        height=height,
    )


def bracket_t_range(bounds, positions, margin=0.1):
    """Shared (t_near, t_far) bracketing ``bounds`` from every position.

    Uses the bounding sphere of the box plus a relative margin, so every
    ray segment [t_near, t_far] covers all geometry inside the box.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    radius = 0.5 * bounds.diagonal
    dist = np.linalg.norm(positions - bounds.center[None, :], axis=1)
    near = max(float((dist.min() - radius)) * (1.0 - margin), 1e-6)
    far = float((dist.max() + radius)) * (1.0 + margin)
    return near, far
