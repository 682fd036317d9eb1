"""Flat `key = value` run configuration.

`#` starts a comment, blank lines are ignored, keys may appear once.
Unknown keys are rejected so typos fail loudly instead of silently
using a default.  Scene primitives use indexed keys:

    primitive.0 = sphere 0 0 0.1 0.45 0.85 0.3 0.25
    primitive.1 = plane -0.4 0.4 0.55 0.35
    primitive.2 = box -1 -1 -1 1 1 1 0.2 0.2 0.2

(sphere: center, radius, rgb; plane: z0, rgb; box: lo, hi, rgb).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from ..geometry import Aabb
from ..scene import (
    Box,
    Cluster,
    GroundPlane,
    SceneSpec,
    Sphere,
    make_hemisphere_cameras,
    make_orbit_cameras,
)
from ..train import TrainConfig

_REQUIRED = object()

# key -> (type tag, default); _REQUIRED means the key must be present
_SCHEMA = {
    "bounds_lo": ("vec3", _REQUIRED),
    "bounds_hi": ("vec3", _REQUIRED),
    "background": ("background", None),
    "image_width": ("int", 48),
    "image_height": ("int", 48),
    "focal": ("float", 60.0),
    "hemisphere_radius": ("float", 2.5),
    "n_initial_views": ("int", 0),
    "n_train_views": ("int", 8),
    "n_test_views": ("int", 0),
    "cluster_center": ("vec3", np.array([0.0, 0.0, 1.0])),
    "cluster_max_angle_degrees": ("float", 12.0),
    "train_cap_degrees": ("float", 90.0),
    "test_elevation_degrees": ("float", -25.0),
    "camera_seed": ("int", 0),
    "resolution": ("int", 32),
    "samples_per_ray": ("int", 64),
    "ensemble_size": ("int", 5),
    "base_seed": ("int", 0),
    "train_steps": ("int", 2000),
    "rays_per_batch": ("int", 1024),
    "learning_rate": ("float", 1e-2),
    "adam_beta1": ("float", 0.9),
    "adam_beta2": ("float", 0.999),
    "adam_eps": ("float", 1e-8),
    "nbv_iterations": ("int", 10),
    "nbv_policies": ("strs", ["uncertainty", "random"]),
    "nbv_seeds": ("ints", [0, 1, 2, 3, 4]),
    "view_index": ("int", 0),
    "ensemble_dir": ("str", None),
}

_PRIMITIVE_KEY = re.compile(r"primitive\.(\d+)$")


class ConfigError(ValueError):
    pass


def _parse_floats(value, count, key):
    parts = value.split()
    if len(parts) != count:
        raise ConfigError(f"config key {key!r} needs {count} numbers")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"config key {key!r} has a non-numeric value") from None


def _convert(key, kind, value):
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "str":
            return value
    except ValueError:
        raise ConfigError(f"config key {key!r} must be a {kind}") from None
    if kind == "vec3":
        return np.array(_parse_floats(value, 3, key))
    if kind == "ints":
        try:
            return [int(p) for p in value.split()]
        except ValueError:
            raise ConfigError(f"config key {key!r} must be integers") from None
    if kind == "strs":
        return value.split()
    if kind == "background":
        if value == "empty":
            return None
        return np.array(_parse_floats(value, 3, key))
    raise AssertionError(f"unhandled kind {kind}")


def _parse_primitive(key, value):
    parts = value.split()
    if not parts:
        raise ConfigError(f"config key {key!r} is empty")
    shape, args = parts[0], parts[1:]
    try:
        numbers = [float(p) for p in args]
    except ValueError:
        raise ConfigError(f"config key {key!r} has a non-numeric value") from None
    if shape == "sphere" and len(numbers) == 7:
        return Sphere(center=numbers[0:3], radius=numbers[3], rgb=numbers[4:7])
    if shape == "box" and len(numbers) == 9:
        return Box(lo=numbers[0:3], hi=numbers[3:6], rgb=numbers[6:9])
    if shape == "plane" and len(numbers) == 4:
        return GroundPlane(z0=numbers[0], rgb=numbers[1:4])
    raise ConfigError(
        f"config key {key!r}: expected 'sphere cx cy cz r R G B', "
        "'box lx ly lz hx hy hz R G B' or 'plane z0 R G B'"
    )


@dataclass
class RunConfig:
    values: dict
    primitives: list

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def require(self, key):
        """Value of a key with no usable default; error names the key."""
        value = self.values.get(key)
        if value is None:
            raise ConfigError(f"missing required config key: {key}")
        return value


def parse_config(text):
    raw = {}
    primitives = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        match = _PRIMITIVE_KEY.match(key)
        if match:
            index = int(match.group(1))
            if index in primitives:
                raise ConfigError(f"duplicate config key {key!r}")
            primitives[index] = _parse_primitive(key, value)
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"duplicate config key {key!r}")
        raw[key] = value
    if primitives and sorted(primitives) != list(range(len(primitives))):
        raise ConfigError("primitive indices must be 0..n-1 without gaps")
    values = {}
    for key, (kind, default) in _SCHEMA.items():
        if key in raw:
            values[key] = _convert(key, kind, raw[key])
        elif default is _REQUIRED:
            raise ConfigError(f"missing required config key: {key}")
        else:
            values[key] = default
    return RunConfig(
        values=values, primitives=[primitives[i] for i in sorted(primitives)]
    )


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def build_scene(config):
    return SceneSpec(
        primitives=list(config.primitives),
        bounds=Aabb(lo=config.bounds_lo, hi=config.bounds_hi),
        background=config.background,
    )


def build_cameras(config, camera_seed=None):
    """All views in split order [initial | train | test]."""
    seed = config.camera_seed if camera_seed is None else camera_seed
    common = dict(
        width=config.image_width,
        height=config.image_height,
        focal=config.focal,
    )
    cameras = []
    if config.n_initial_views > 0:
        cameras += make_hemisphere_cameras(
            config.n_initial_views,
            config.hemisphere_radius,
            cluster=Cluster(
                center_dir=config.cluster_center,
                max_angle=math.radians(config.cluster_max_angle_degrees),
            ),
            seed=seed,
            **common,
        )
    if config.n_train_views > 0:
        cameras += make_hemisphere_cameras(
            config.n_train_views,
            config.hemisphere_radius,
            cluster=Cluster(
                center_dir=np.array([0.0, 0.0, 1.0]),
                max_angle=math.radians(config.train_cap_degrees),
            ),
            seed=seed + 1,
            **common,
        )
    if config.n_test_views > 0:
        cameras += make_orbit_cameras(
            config.n_test_views,
            config.hemisphere_radius,
            config.test_elevation_degrees,
            **common,
        )
    splits = (config.n_initial_views, config.n_train_views, config.n_test_views)
    return cameras, splits


def build_train_config(config, seed=None):
    return TrainConfig(
        steps=config.train_steps,
        rays_per_batch=config.rays_per_batch,
        samples_per_ray=config.samples_per_ray,
        learning_rate=config.learning_rate,
        adam_beta1=config.adam_beta1,
        adam_beta2=config.adam_beta2,
        adam_eps=config.adam_eps,
        seed=config.base_seed if seed is None else seed,
    )
