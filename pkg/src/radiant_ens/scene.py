"""Synthetic scenes and an exact surface renderer used as ground truth.

Surfaces are Lambertian and unshaded: a primitive contributes its flat RGB
colour no matter the viewing direction, which keeps the renderer an exact
oracle for the volumetric pipeline trained on its output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Aabb,
    Camera,
    Image,
    Ray,
    _vec3,
    bracket_t_range,
    camera_ray_grid,
    look_at_camera,
)

_INF = float("inf")


def _rgb(value, name):
    v = _vec3(value, name)
    if v.min() < 0.0 or v.max() > 1.0:
        raise ValueError(f"{name} channels must lie in [0, 1]")
    return v


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    rgb: np.ndarray

    def __post_init__(self):
        self.center = _vec3(self.center, "center")
        self.rgb = _rgb(self.rgb, "rgb")
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    rgb: np.ndarray

    def __post_init__(self):
        self.lo = _vec3(self.lo, "lo")
        self.hi = _vec3(self.hi, "hi")
        self.rgb = _rgb(self.rgb, "rgb")
        if not np.all(self.lo < self.hi):
            raise ValueError("box must satisfy lo < hi on every axis")


@dataclass
class GroundPlane:
    """Horizontal rectangle z = z0, clipped to the scene bounds footprint."""

    z0: float
    rgb: np.ndarray

    def __post_init__(self):
        self.rgb = _rgb(self.rgb, "rgb")


@dataclass
class SceneSpec:
    primitives: list
    bounds: Aabb
    background: np.ndarray | None = None  # None = "empty": misses stay unlit

    def __post_init__(self):
        if self.background is not None:
            self.background = _rgb(self.background, "background")
        for p in self.primitives:
            if not _inside_bounds(p, self.bounds):
                raise ValueError(f"primitive {p!r} extends outside scene bounds")


def _inside_bounds(prim, bounds):
    if isinstance(prim, Sphere):
        return bool(
            np.all(prim.center - prim.radius >= bounds.lo)
            and np.all(prim.center + prim.radius <= bounds.hi)
        )
    if isinstance(prim, Box):
        return bool(np.all(prim.lo >= bounds.lo) and np.all(prim.hi <= bounds.hi))
    if isinstance(prim, GroundPlane):
        return bounds.lo[2] <= prim.z0 <= bounds.hi[2]
    raise TypeError(f"unknown primitive type {type(prim).__name__}")


@dataclass
class PosedDataset:
    """Images with their cameras and the shared ray segment bounds."""

    images: list
    cameras: list
    t_near: float
    t_far: float

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise ValueError("images and cameras must have the same length")
        for img, cam in zip(self.images, self.cameras):
            if img.width != cam.width or img.height != cam.height:
                raise ValueError("image size does not match its camera")
        if not (0.0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")

    def __len__(self):
        return len(self.images)

    def subset(self, indices):
        return PosedDataset(
            images=[self.images[i] for i in indices],
            cameras=[self.cameras[i] for i in indices],
            t_near=self.t_near,
            t_far=self.t_far,
        )


# --- intersection tests ------------------------------------------------
#
# Each _hit_* helper is vectorized over ray directions with a shared
# origin and returns the smallest crossing distance in (t_near, t_far),
# or +inf for a miss.  For closed primitives the visible surface from an
# interior origin is the exit face, hence both roots are candidates.


def _hit_sphere(origin, dirs, sphere, t_near, t_far):
    oc = origin - sphere.center
    b = dirs @ oc
    c = oc @ oc - sphere.radius**2
    disc = b * b - c
    t = np.full(dirs.shape[:-1], _INF)
    ok = disc >= 0.0
    if np.any(ok):
        root = np.sqrt(disc[ok])
        t0 = -b[ok] - root
        t1 = -b[ok] + root
        cand = np.where((t0 > t_near) & (t0 < t_far), t0, _INF)
        cand = np.minimum(cand, np.where((t1 > t_near) & (t1 < t_far), t1, _INF))
        t[ok] = cand
    return t


def _hit_box(origin, dirs, lo, hi, t_near, t_far):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (lo - origin) * inv
        tb = (hi - origin) * inv
    tmin = np.nanmax(np.minimum(ta, tb), axis=-1)
    tmax = np.nanmin(np.maximum(ta, tb), axis=-1)
    t = np.full(dirs.shape[:-1], _INF)
    ok = tmax >= tmin
    entry = np.where((tmin > t_near) & (tmin < t_far), tmin, _INF)
    exit_ = np.where((tmax > t_near) & (tmax < t_far), tmax, _INF)
    t[ok] = np.minimum(entry, exit_)[ok]
    return t


def _hit_plane(origin, dirs, plane, bounds, t_near, t_far):
    dz = dirs[..., 2]
    t = np.full(dirs.shape[:-1], _INF)
    ok = dz != 0.0
    tc = np.where(ok, (plane.z0 - origin[2]) / np.where(ok, dz, 1.0), _INF)
    px = origin[0] + tc * dirs[..., 0]
    py = origin[1] + tc * dirs[..., 1]
    hit = (
        ok
        & (tc > t_near)
        & (tc < t_far)
        & (px >= bounds.lo[0])
        & (px <= bounds.hi[0])
        & (py >= bounds.lo[1])
        & (py <= bounds.hi[1])
    )
    t[hit] = tc[hit]
    return t


def _hit_distances(origin, dirs, scene, t_near, t_far):
    """Per-primitive hit distances, shape (n_prims, *dirs.shape[:-1])."""
    out = []
    for prim in scene.primitives:
        if isinstance(prim, Sphere):
            out.append(_hit_sphere(origin, dirs, prim, t_near, t_far))
        elif isinstance(prim, Box):
            out.append(_hit_box(origin, dirs, prim.lo, prim.hi, t_near, t_far))
        elif isinstance(prim, GroundPlane):
            out.append(_hit_plane(origin, dirs, prim, scene.bounds, t_near, t_far))
        else:
            raise TypeError(f"unknown primitive type {type(prim).__name__}")
    return np.stack(out, axis=0)


def intersect(ray: Ray, scene: SceneSpec):
    """Nearest surface hit along the ray, or None if everything is missed."""
    if not scene.primitives:
        return None
    dirs = ray.direction[None, :]
    dists = _hit_distances(ray.origin, dirs, scene, ray.t_near, ray.t_far)[:, 0]
    k = int(np.argmin(dists))
    if not np.isfinite(dists[k]):
        return None
    return float(dists[k]), scene.primitives[k].rgb.copy()


def render_ground_truth(scene: SceneSpec, camera: Camera) -> Image:
    """Exact nearest-hit render; misses get the background (black if empty)."""
    t_near, t_far = bracket_t_range(scene.bounds, camera.position[None, :])
    dirs = camera_ray_grid(camera)
    background = (
        np.zeros(3) if scene.background is None else np.asarray(scene.background)
    )
    pixels = np.broadcast_to(background, (camera.height, camera.width, 3)).copy()
    if scene.primitives:
        dists = _hit_distances(camera.position, dirs, scene, t_near, t_far)
        nearest = np.argmin(dists, axis=0)
        hit = np.isfinite(np.min(dists, axis=0))
        colours = np.stack([p.rgb for p in scene.primitives], axis=0)
        pixels[hit] = colours[nearest[hit]]
    return Image.from_array(pixels)


@dataclass
class Cluster:
    """Spherical cap of view directions: within max_angle of center_dir."""

    center_dir: np.ndarray
    max_angle: float  # radians

    def __post_init__(self):
        self.center_dir = _vec3(self.center_dir, "center_dir")
        n = np.linalg.norm(self.center_dir)
        if n < 1e-12:
            raise ValueError("center_dir must be nonzero")
        self.center_dir = self.center_dir / n
        if self.max_angle < 0:
            raise ValueError("max_angle must be >= 0")


def _cap_direction(center, cos_max, rng):
    # Uniform-area sample on the cap around `center`.
    z = 1.0 - rng.random() * (1.0 - cos_max)
    phi = 2.0 * np.pi * rng.random()
    s = np.sqrt(max(0.0, 1.0 - z * z))
    helper = np.array([1.0, 0.0, 0.0]) if abs(center[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    a = np.cross(center, helper)
    a /= np.linalg.norm(a)
    b = np.cross(center, a)
    return s * (np.cos(phi) * a + np.sin(phi) * b) + z * center


def make_hemisphere_cameras(
    n,
    radius,
    cluster=None,
    seed=0,
    *,
    width=64,
    height=64,
    focal=80.0,
):
    """Cameras on the upper hemisphere of ``radius``, all facing the origin.

    With ``cluster`` given, view directions are drawn from the cap around
    ``cluster.center_dir`` (rejecting draws below the equator, so the cap
    center itself must satisfy z >= 0).  Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    cameras = []
    while len(cameras) < n:
        if cluster is None:
            z = rng.random()
            phi = 2.0 * np.pi * rng.random()
            s = np.sqrt(max(0.0, 1.0 - z * z))
            d = np.array([s * np.cos(phi), s * np.sin(phi), z])
        else:
            d = _cap_direction(cluster.center_dir, np.cos(cluster.max_angle), rng)
            if d[2] < 0.0:
                continue
        up = np.array([0.0, 0.0, 1.0])
        if abs(d[2]) > 0.999:
            up = np.array([0.0, 1.0, 0.0])
        cameras.append(
            look_at_camera(
                position=radius * d,
                target=np.zeros(3),
                up=up,
                fx=focal,
                fy=focal,
                cx=width / 2.0,
                cy=height / 2.0,
                width=width,
                height=height,
            )
        )
    return cameras


def make_orbit_cameras(
    n,
    radius,
    elevation_deg,
    *,
    width=64,
    height=64,
    focal=80.0,
    azimuth0_deg=0.0,
):
    """Cameras at a fixed elevation, azimuths evenly spaced, facing origin.

    Elevation may be negative (below the equator), unlike the hemisphere
    sampler; used for held-out test rings.
    """
    el = np.deg2rad(elevation_deg)
    cameras = []
    for k in range(n):
        az = np.deg2rad(azimuth0_deg) + 2.0 * np.pi * k / n
        d = np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
        )
        up = np.array([0.0, 0.0, 1.0])
        if abs(d[2]) > 0.999:
            up = np.array([0.0, 1.0, 0.0])
        cameras.append(
            look_at_camera(
                position=radius * d,
                target=np.zeros(3),
                up=up,
                fx=focal,
                fy=focal,
                cx=width / 2.0,
                cy=height / 2.0,
                width=width,
                height=height,
            )
        )
    return cameras


def make_dataset(scene, cameras):
    """Render ground truth for every camera; shared t range brackets the scene."""
    positions = np.stack([c.position for c in cameras], axis=0)
    t_near, t_far = bracket_t_range(scene.bounds, positions)
    images = [render_ground_truth(scene, cam) for cam in cameras]
    return PosedDataset(images=images, cameras=cameras, t_near=t_near, t_far=t_far)


def floor_scene():
    """Sphere hovering over a large ground plane.

    High-elevation cameras with a tight field of view only ever see the
    sphere and the floor annulus right around it; the outer floor stays
    unobserved until a camera drops below the equator.
    """
    return SceneSpec(
        primitives=[
            Sphere(center=(0.0, 0.0, 0.1), radius=0.45, rgb=(0.85, 0.3, 0.25)),
            GroundPlane(z0=-0.4, rgb=(0.4, 0.55, 0.35)),
        ],
        bounds=Aabb(lo=(-1.2, -1.2, -0.4), hi=(1.2, 1.2, 0.8)),
        background=None,
    )


def hemisphere_scene():
    """Distinctly coloured objects resting on a ground plane.

    Designed for hemisphere-camera experiments: from any sufficiently
    elevated camera every pixel ray terminates on the floor or an object,
    so a trained field reaches q ~ 1 wherever it has seen geometry and
    epistemic uncertainty cleanly marks the matter no camera covered
    (far sides of objects, floor patches they occlude).  Opposite sides
    of the arrangement share no colour, so a camera cluster on one side
    leaves the far side genuinely unknown.
    """
    r = 0.24
    arm = 0.58
    z = -0.3 + r
    return SceneSpec(
        primitives=[
            GroundPlane(z0=-0.3, rgb=(0.45, 0.5, 0.55)),
            Sphere(center=(0.0, 0.0, 0.0), radius=0.3, rgb=(0.92, 0.92, 0.92)),
            Sphere(center=(arm, 0.0, z), radius=r, rgb=(0.9, 0.15, 0.1)),
            Sphere(center=(-arm, 0.0, z), radius=r, rgb=(0.1, 0.75, 0.2)),
            Sphere(center=(0.0, arm, z), radius=r, rgb=(0.15, 0.25, 0.9)),
            Box(
                lo=(-0.16, -arm - 0.16, -0.3),
                hi=(0.16, -arm + 0.16, -0.02),
                rgb=(0.95, 0.8, 0.1),
            ),
        ],
        bounds=Aabb(lo=(-1.5, -1.5, -0.3), hi=(1.5, 1.5, 0.45)),
        background=None,
    )


def multisphere_scene():
    """Distinctly coloured spheres around a center ball.

    Opposite sides of the arrangement share no colour, so a camera cluster
    on one side leaves the far side genuinely unknown.
    """
    r = 0.28
    arm = 0.62
    return SceneSpec(
        primitives=[
            Sphere(center=(0.0, 0.0, 0.0), radius=0.34, rgb=(0.9, 0.9, 0.9)),
            Sphere(center=(arm, 0.0, 0.0), radius=r, rgb=(0.9, 0.15, 0.1)),
            Sphere(center=(-arm, 0.0, 0.0), radius=r, rgb=(0.1, 0.75, 0.2)),
            Sphere(center=(0.0, arm, 0.0), radius=r, rgb=(0.15, 0.25, 0.9)),
            Sphere(center=(0.0, -arm, 0.0), radius=r, rgb=(0.95, 0.8, 0.1)),
            Sphere(center=(0.0, 0.0, arm), radius=r, rgb=(0.8, 0.2, 0.8)),
        ],
        bounds=Aabb(lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0)),
        background=None,
    )
