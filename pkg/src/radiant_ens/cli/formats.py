"""On-disk formats: PPM images, PFM float maps, pose files, datasets.

Everything here is deterministic: no timestamps, fixed float formatting
(17 significant digits, enough to round-trip a double exactly), fixed
row order.  PFM rasters are stored bottom-up with scale -1.0 (little
endian), per that format's convention.
"""

from __future__ import annotations

import os
import re

import numpy as np

from ..field import load_field, save_field
from ..geometry import Camera, Image
from ..scene import PosedDataset
from ..uncertainty import Ensemble

_FLOAT = "%.17g"


def write_ppm(path, pixels):
    """8-bit binary PPM (P6, maxval 255) from float pixels in [0, 1]."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("pixels must have shape (H, W, 3)")
    height, width = pixels.shape[:2]
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    """Read a P6 PPM back to float64 pixels in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    match = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if match is None:
        raise ValueError(f"{path}: not a binary PPM")
    width, height, maxval = (int(g) for g in match.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    raster = np.frombuffer(blob[match.end():], dtype=np.uint8)
    if raster.size != width * height * 3:
        raise ValueError(f"{path}: raster size mismatch")
    return raster.reshape(height, width, 3).astype(np.float64) / 255.0


def write_pfm(path, data):
    """PFM float map: 'Pf' for (H, W), 'PF' for (H, W, 3)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError("data must have shape (H, W) or (H, W, 3)")
    height, width = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{width} {height}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale = little endian
        fh.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: not a PFM file")
        width, height = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        if scale >= 0:
            raise ValueError(f"{path}: big-endian PFM is not supported")
        count = width * height * channels
        raster = np.frombuffer(fh.read(4 * count), dtype="<f4")
        if raster.size != count:
            raise ValueError(f"{path}: raster size mismatch")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(raster.reshape(shape)).astype(np.float64)


def write_poses(path, cameras):
    """One line per camera: id, intrinsics, size, world-from-camera pose."""
    lines = []
    for i, cam in enumerate(cameras):
        fields = [str(i)]
        fields += [_FLOAT % v for v in (cam.fx, cam.fy, cam.cx, cam.cy)]
        fields += [str(cam.width), str(cam.height)]
        fields += [_FLOAT % v for v in cam.rotation.reshape(-1)]
        fields += [_FLOAT % v for v in cam.position]
        lines.append(" ".join(fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_poses(path):
    cameras = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 19:
                raise ValueError(f"{path}: pose line needs 19 fields")
            index = int(parts[0])
            if index != len(cameras):
                raise ValueError(f"{path}: pose ids must be sequential")
            fx, fy, cx, cy = (float(v) for v in parts[1:5])
            width, height = int(parts[5]), int(parts[6])
            rotation = np.array([float(v) for v in parts[7:16]]).reshape(3, 3)
            position = np.array([float(v) for v in parts[16:19]])
            cameras.append(
                Camera(
                    position=position, rotation=rotation,
                    fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
                )
            )
    return cameras


def _write_kv(path, pairs):
    with open(path, "w") as fh:
        for key, value in pairs:
            fh.write(f"{key} = {value}\n")


def _read_kv(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def write_dataset(dirpath, dataset, splits=None):
    """Dataset directory: images/NNNN.ppm, poses.txt, meta.txt.

    `splits` gives (n_initial, n_train, n_test) for the view ordering
    [initial | train/candidates | test]; default: all views are train.
    """
    n_views = len(dataset)
    if splits is None:
        splits = (0, n_views, 0)
    if sum(splits) != n_views:
        raise ValueError("split counts must sum to the number of views")
    os.makedirs(os.path.join(dirpath, "images"), exist_ok=True)
    for i, image in enumerate(dataset.images):
        write_ppm(os.path.join(dirpath, "images", f"{i:04d}.ppm"), image.pixels)
    write_poses(os.path.join(dirpath, "poses.txt"), dataset.cameras)
    cam = dataset.cameras[0]
    _write_kv(
        os.path.join(dirpath, "meta.txt"),
        [
            ("t_near", _FLOAT % dataset.t_near),
            ("t_far", _FLOAT % dataset.t_far),
            ("width", cam.width),
            ("height", cam.height),
            ("fx", _FLOAT % cam.fx),
            ("fy", _FLOAT % cam.fy),
            ("cx", _FLOAT % cam.cx),
            ("cy", _FLOAT % cam.cy),
            ("n_views", n_views),
            ("n_initial", splits[0]),
            ("n_train", splits[1]),
            ("n_test", splits[2]),
        ],
    )


def write_ensemble(dirpath, ensemble, samples_per_ray, t_near, t_far):
    """Ensemble directory: member_NNN.field plus a manifest.

    The manifest carries what evaluation needs to reproduce the
    training-time rendering setup (sample count and ray segment).
    """
    os.makedirs(dirpath, exist_ok=True)
    for k, member in enumerate(ensemble.members):
        save_field(member, os.path.join(dirpath, f"member_{k:03d}.field"))
    first = ensemble.members[0]
    _write_kv(
        os.path.join(dirpath, "manifest.txt"),
        [
            ("n_members", len(ensemble.members)),
            ("resolution", first.resolution),
            ("base_seed", ensemble.base_seed),
            ("samples_per_ray", samples_per_ray),
            ("t_near", _FLOAT % t_near),
            ("t_far", _FLOAT % t_far),
            ("bounds_lo", " ".join(_FLOAT % v for v in first.bounds.lo)),
            ("bounds_hi", " ".join(_FLOAT % v for v in first.bounds.hi)),
        ],
    )


def read_ensemble(dirpath):
    """Read an ensemble directory; returns (Ensemble, manifest dict)."""
    meta = _read_kv(os.path.join(dirpath, "manifest.txt"))
    n_members = int(meta["n_members"])
    members = [
        load_field(os.path.join(dirpath, f"member_{k:03d}.field"))
        for k in range(n_members)
    ]
    ensemble = Ensemble(members=members, base_seed=int(meta["base_seed"]))
    manifest = {
        "samples_per_ray": int(meta["samples_per_ray"]),
        "t_near": float(meta["t_near"]),
        "t_far": float(meta["t_far"]),
    }
    return ensemble, manifest


def read_dataset(dirpath):
    """Read a dataset directory; returns (PosedDataset, splits)."""
    meta = _read_kv(os.path.join(dirpath, "meta.txt"))
    cameras = read_poses(os.path.join(dirpath, "poses.txt"))
    n_views = int(meta["n_views"])
    if n_views != len(cameras):
        raise ValueError(f"{dirpath}: meta.txt and poses.txt disagree on views")
    images = []
    for i in range(n_views):
        pixels = read_ppm(os.path.join(dirpath, "images", f"{i:04d}.ppm"))
        images.append(Image.from_array(pixels))
    dataset = PosedDataset(
        images=images,
        cameras=cameras,
        t_near=float(meta["t_near"]),
        t_far=float(meta["t_far"]),
    )
    splits = (int(meta["n_initial"]), int(meta["n_train"]), int(meta["n_test"]))
    if sum(splits) != n_views:
        raise ValueError(f"{dirpath}: split counts do not sum to n_views")
    return dataset, splits
