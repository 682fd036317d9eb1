"""Command-line interface.

    radiant-ens <subcommand> [--config PATH] [--dataset DIR] [--out DIR]
                             [--seed N] [--verbose]

Subcommands: gen-scene, train-ensemble, render-uncertainty, eval, nbv.
All outputs are deterministic functions of the inputs: rerunning a
command with identical config reproduces byte-identical files.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from ..geometry import Aabb
from ..metrics import image_nll, nll_report, psnr
from ..nbv import NbvConfig, record_to_csv, run_nbv, scores_to_csv
from ..scene import make_dataset
from ..uncertainty import ensemble_stats, train_ensemble
from .config import ConfigError, build_cameras, build_scene, build_train_config, load_config
from .formats import (
    read_dataset,
    read_ensemble,
    write_dataset,
    write_ensemble,
    write_pfm,
    write_ppm,
)

_FLOAT = "%.17g"


class UsageError(Exception):
    pass


def _need(args, name):
    value = getattr(args, name.replace("-", "_"))
    if value is None:
        raise UsageError(f"this subcommand requires --{name}")
    return value


def _train_indices(splits):
    n_initial, n_train, _ = splits
    if n_initial + n_train == 0:
        raise ValueError("dataset has no training views")
    return list(range(n_initial + n_train))


def cmd_gen_scene(args):
    config = load_config(_need(args, "config"))
    out = _need(args, "out")
    scene = build_scene(config)
    cameras, splits = build_cameras(config, camera_seed=args.seed)
    if not cameras:
        raise ValueError("config produces no cameras")
    dataset = make_dataset(scene, cameras)
    write_dataset(out, dataset, splits)
    if args.verbose:
        print(f"wrote {len(cameras)} views to {out}")
    return 0


def cmd_train_ensemble(args):
    config = load_config(_need(args, "config"))
    dataset, splits = read_dataset(_need(args, "dataset"))
    out = _need(args, "out")
    train_set = dataset.subset(_train_indices(splits))
    bounds = Aabb(lo=config.bounds_lo, hi=config.bounds_hi)
    base_seed = config.base_seed if args.seed is None else args.seed
    ensemble = train_ensemble(
        train_set,
        config.resolution,
        bounds,
        n_members=config.ensemble_size,
        base_seed=base_seed,
        train_config=build_train_config(config),
        verbose=args.verbose,
    )
    write_ensemble(
        out, ensemble, config.samples_per_ray, dataset.t_near, dataset.t_far
    )
    if args.verbose:
        print(f"wrote {len(ensemble.members)} members to {out}")
    return 0


def _vis_bytes(values):
    """Grayscale heatmap of a scalar map; returns (pixels, lo, hi)."""
    hi = float(values.max())
    if hi <= 0.0:
        hi = 1.0
    scaled = np.clip(values / hi, 0.0, 1.0)
    return np.repeat(scaled[:, :, None], 3, axis=2), 0.0, hi


def cmd_render_uncertainty(args):
    config = load_config(_need(args, "config"))
    dataset, _ = read_dataset(_need(args, "dataset"))
    out = _need(args, "out")
    ensemble, manifest = read_ensemble(config.require("ensemble_dir"))
    view = config.view_index
    if not 0 <= view < len(dataset):
        raise ValueError(f"view_index {view} outside dataset of {len(dataset)} views")
    stats = ensemble_stats(
        ensemble,
        dataset.cameras[view],
        manifest["samples_per_ray"],
        t_near=manifest["t_near"],
        t_far=manifest["t_far"],
    )
    os.makedirs(out, exist_ok=True)
    write_ppm(os.path.join(out, "mean.ppm"), stats.mu_rgb)
    write_pfm(os.path.join(out, "var_rgb.pfm"), stats.var_rgb)
    write_pfm(os.path.join(out, "qbar.pfm"), stats.q_bar)
    write_pfm(os.path.join(out, "epi.pfm"), stats.var_epi)
    write_pfm(os.path.join(out, "psi_sq.pfm"), stats.psi_sq)
    ranges = []
    for name, values in (
        ("var_rgb", stats.var_rgb_mean),
        ("qbar", stats.q_bar),
        ("epi", stats.var_epi),
        ("psi_sq", stats.psi_sq),
    ):
        pixels, lo, hi = _vis_bytes(values)
        write_ppm(os.path.join(out, f"{name}_vis.ppm"), pixels)
        ranges.append(f"{name} {_FLOAT % lo} {_FLOAT % hi}\n")
    with open(os.path.join(out, "vis_range.txt"), "w") as fh:
        fh.writelines(ranges)
    if args.verbose:
        print(f"wrote uncertainty maps for view {view} to {out}")
    return 0


def cmd_eval(args):
    config = load_config(_need(args, "config"))
    dataset, splits = read_dataset(_need(args, "dataset"))
    out = _need(args, "out")
    ensemble, manifest = read_ensemble(config.require("ensemble_dir"))
    n_initial, n_train, n_test = splits
    if n_test > 0:
        views = list(range(n_initial + n_train, len(dataset)))
    else:
        views = list(range(len(dataset)))
    rows = []
    pairs = []
    psnrs = []
    for i in views:
        stats = ensemble_stats(
            ensemble,
            dataset.cameras[i],
            manifest["samples_per_ray"],
            t_near=manifest["t_near"],
            t_far=manifest["t_far"],
        )
        mean_nll, median_nll = image_nll(stats, dataset.images[i])
        value = psnr(stats.mu_rgb, dataset.images[i])
        pairs.append((mean_nll, median_nll))
        psnrs.append(value)
        rows.append(
            f"{i},{_FLOAT % mean_nll},{_FLOAT % median_nll},{_FLOAT % value}"
        )
    report = nll_report(pairs)
    psnrs = np.array(psnrs)
    rows.append(
        f"mean,{_FLOAT % report.mean_of_means},"
        f"{_FLOAT % report.mean_of_medians},{_FLOAT % psnrs.mean()}"
    )
    rows.append(
        f"std,{_FLOAT % report.std_of_means},"
        f"{_FLOAT % report.std_of_medians},{_FLOAT % psnrs.std()}"
    )
    csv = "view,nll_mean,nll_median,psnr\n" + "\n".join(rows) + "\n"
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "eval.csv"), "w") as fh:
        fh.write(csv)
    print(csv, end="")
    return 0


def cmd_nbv(args):
    config = load_config(_need(args, "config"))
    dataset, splits = read_dataset(_need(args, "dataset"))
    out = _need(args, "out")
    n_initial, n_train, n_test = splits
    if n_initial == 0:
        raise ValueError("dataset has no initial views (set n_initial_views)")
    if n_test == 0:
        raise ValueError("dataset has no test views (set n_test_views)")
    initial = list(range(n_initial))
    candidates = list(range(n_initial, n_initial + n_train))
    tests = list(range(n_initial + n_train, len(dataset)))
    bounds = Aabb(lo=config.bounds_lo, hi=config.bounds_hi)
    seeds = config.nbv_seeds if args.seed is None else [args.seed]
    os.makedirs(out, exist_ok=True)
    for policy in config.nbv_policies:
        for seed in seeds:
            nbv_config = NbvConfig(
                initial_views=initial,
                iterations=config.nbv_iterations,
                ensemble_size=config.ensemble_size,
                policy=policy,
                train_config=build_train_config(config),
                seed=seed,
            )
            record = run_nbv(
                dataset, nbv_config, candidates, tests,
                resolution=config.resolution, bounds=bounds,
            )
            stem = f"{policy}_seed{seed}"
            with open(os.path.join(out, f"nbv_{stem}.csv"), "w") as fh:
                fh.write(record_to_csv(record))
            with open(os.path.join(out, f"scores_{stem}.csv"), "w") as fh:
                fh.write(scores_to_csv(record))
            if args.verbose:
                final = record.rows[-1]
                print(
                    f"{stem}: final avg_psnr={final.avg_psnr:.3f} "
                    f"min_psnr={final.min_psnr:.3f}"
                )
    return 0


_COMMANDS = {
    "gen-scene": (cmd_gen_scene, "render a synthetic posed dataset"),
    "train-ensemble": (cmd_train_ensemble, "train ensemble members on a dataset"),
    "render-uncertainty": (
        cmd_render_uncertainty,
        "write mean/variance/opacity/uncertainty maps for one view",
    ),
    "eval": (cmd_eval, "NLL and PSNR evaluation against ground truth"),
    "nbv": (cmd_nbv, "run the next-best-view selection experiment"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="radiant-ens",
        description="Voxel radiance-field ensembles with density-aware uncertainty.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", metavar="PATH", help="run configuration file")
        sub.add_argument("--dataset", metavar="DIR", help="dataset directory")
        sub.add_argument("--out", metavar="DIR", help="output directory")
        sub.add_argument("--seed", metavar="N", type=int, help="seed override")
        sub.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = _COMMANDS[args.command][0]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
