"""Acceptance checks: one test per shipped guarantee, run at full size.

Each test prints a single `ACCEPTANCE <n> <name>: PASS/FAIL` line
directly to the terminal (bypassing capture) with the measured numbers.
The three study tests (floor-scene epistemic medians, ensemble-size
trend, view-selection dominance) retrain ensembles from scratch and
together take roughly a quarter hour of CPU; every run is seeded, so
the outcomes are reproducible.
"""

import math
import os
import time

import numpy as np
import pytest

from radiant_ens.cli.main import main as cli_main
from radiant_ens.field import (
    FieldSample,
    VoxelField,
    init_field,
    query,
    query_backward,
)
from radiant_ens.geometry import Aabb, Ray, generate_ray
from radiant_ens.metrics import gaussian_nll, image_nll, rescale_psnr
from radiant_ens.nbv import NbvConfig, run_nbv
from radiant_ens.render import (
    RaySamples,
    composite,
    composite_backward,
    composite_expsum,
)
from radiant_ens.scene import (
    Cluster,
    GroundPlane,
    floor_scene,
    hemisphere_scene,
    intersect,
    make_dataset,
    make_hemisphere_cameras,
    make_orbit_cameras,
    multisphere_scene,
    render_ground_truth,
)
from radiant_ens.train import TrainConfig
from radiant_ens.uncertainty import (
    Ensemble,
    ensemble_stats,
    stats_from_member_renders,
    train_ensemble,
)

@pytest.fixture
def announce(capfd):
    """Print the acceptance verdict straight to the terminal, then assert."""

    def _announce(num, name, ok, detail):
        with capfd.disabled():
            print(
                f"ACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})",
                flush=True,
            )
        assert ok, f"acceptance {num} {name}: {detail}"

    return _announce


def random_ray_case(rng):
    """A random composited ray: mixed lengths, densities spanning the clamp."""
    n = int(rng.integers(1, 33))
    t = np.cumsum(rng.uniform(0.05, 0.5, size=n))
    delta = rng.uniform(0.05, 0.5, size=n)
    points = np.zeros((n, 3))
    points[:, 2] = t
    rho = rng.uniform(0.0, 50.0, size=n)
    big = rng.random(n) < 0.05
    rho[big] *= 1e4  # push some samples past the optical-depth clamp
    samples = RaySamples(t=t, delta=delta, points=points)
    fields = FieldSample(rho=rho, rgb=rng.uniform(0.0, 1.0, size=(n, 3)))
    return samples, fields


def test_01_composite_equivalence(announce):
    rng = np.random.default_rng(2026)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        samples, fields = random_ray_case(rng)
        product = composite(samples, fields)
        expsum = composite_expsum(samples, fields)
        worst = max(
            worst,
            float(np.abs(product.color - expsum.color).max()),
            abs(product.q - expsum.q),
        )
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 1.0
    announce(1, "composite-equivalence", ok,
             f"max |product - expsum| {worst:.2e} over 1000 rays, {elapsed:.2f}s")


def test_02_termination_partition(announce):
    rng = np.random.default_rng(2027)
    worst = 0.0
    for _ in range(1000):
        samples, fields = random_ray_case(rng)
        res = composite(samples, fields)
        vacuum = float(np.prod(1.0 - res.occupancy))
        worst = max(worst, abs(res.q + vacuum - 1.0))
    ok = worst < 1e-12
    announce(2, "termination-partition", ok,
             f"max |q + prod(1-o) - 1| {worst:.2e} over 1000 rays")


def _composite_gradient_instance(rng, h=1e-5):
    """Worst relative error of composite_backward vs central differences."""
    n = int(rng.integers(2, 9))
    t = np.cumsum(rng.uniform(0.05, 0.5, size=n))
    points = np.zeros((n, 3))
    points[:, 2] = t
    samples = RaySamples(t=t, delta=rng.uniform(0.05, 0.5, size=n), points=points)
    fields = FieldSample(
        rho=rng.uniform(0.0, 3.0, size=n), rgb=rng.uniform(0.0, 1.0, size=(n, 3))
    )
    d_color = rng.normal(size=3)
    d_q = rng.normal()
    d_rho, d_rgb = composite_backward(samples, fields, d_color, d_q)

    def loss(rho, rgb):
        res = composite(samples, FieldSample(rho=rho, rgb=rgb))
        return float(d_color @ res.color + d_q * res.q)

    worst = 0.0
    for k in range(n):
        plus, minus = fields.rho.copy(), fields.rho.copy()
        plus[k] += h
        minus[k] = max(minus[k] - h, 0.0)
        fd = (loss(plus, fields.rgb) - loss(minus, fields.rgb)) / (plus[k] - minus[k])
        worst = max(worst, abs(d_rho[k] - fd) / max(abs(fd), 1.0))
        for ch in range(3):
            cplus, cminus = fields.rgb.copy(), fields.rgb.copy()
            cplus[k, ch] += h
            cminus[k, ch] -= h
            fd_c = (loss(fields.rho, cplus) - loss(fields.rho, cminus)) / (2 * h)
            worst = max(worst, abs(d_rgb[k, ch] - fd_c) / max(abs(fd_c), 1.0))
    return worst


def _field_gradient_instance(rng, h=1e-4):
    """Worst relative error of query_backward vs central differences."""
    bounds = Aabb(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0))
    base = init_field(3, bounds, seed=int(rng.integers(1 << 31)))
    raw_d = base.raw_density + rng.normal(scale=1.0, size=base.raw_density.shape)
    raw_c = base.raw_rgb + rng.normal(scale=1.0, size=base.raw_rgb.shape)
    field = VoxelField(3, bounds, raw_d, raw_c)
    p = rng.uniform(0.02, 0.98, size=3)
    d_rho = rng.normal()
    d_rgb = rng.normal(size=3)
    grads = query_backward(field, p[None], np.array([d_rho]), d_rgb[None])
    i0 = np.minimum((p * 3).astype(int), 2)
    worst = 0.0
    for corner in range(8):
        idx = (
            i0[0] + (corner & 1),
            i0[1] + ((corner >> 1) & 1),
            i0[2] + ((corner >> 2) & 1),
        )
        plus, minus = raw_d.copy(), raw_d.copy()
        plus[idx] += h
        minus[idx] -= h
        fd = d_rho * (
            float(query(VoxelField(3, bounds, plus, raw_c), p).rho)
            - float(query(VoxelField(3, bounds, minus, raw_c), p).rho)
        ) / (2 * h)
        worst = max(worst, abs(grads.d_density[idx] - fd) / max(abs(fd), 1.0))
        for ch in range(3):
            cplus, cminus = raw_c.copy(), raw_c.copy()
            cplus[idx + (ch,)] += h
            cminus[idx + (ch,)] -= h
            fd_c = d_rgb[ch] * (
                query(VoxelField(3, bounds, raw_d, cplus), p).rgb[ch]
                - query(VoxelField(3, bounds, raw_d, cminus), p).rgb[ch]
            ) / (2 * h)
            worst = max(
                worst, abs(grads.d_rgb[idx + (ch,)] - fd_c) / max(abs(fd_c), 1.0)
            )
    return worst


def test_03_gradient_check(announce):
    rng = np.random.default_rng(2028)
    start = time.perf_counter()
    worst_composite = max(_composite_gradient_instance(rng) for _ in range(100))
    worst_field = max(_field_gradient_instance(rng) for _ in range(100))
    elapsed = time.perf_counter() - start
    ok = worst_composite < 1e-5 and worst_field < 1e-5 and elapsed < 10.0
    announce(3, "gradient-check", ok,
             f"composite rel {worst_composite:.2e}, field rel {worst_field:.2e}, "
             f"100 instances each, {elapsed:.1f}s")


def test_04_ensemble_stats_oracle(announce):
    rng = np.random.default_rng(2029)
    worst = 0.0
    exact = True
    for trial in range(20):
        m = int(rng.integers(1, 9))
        rgbs = rng.uniform(size=(m, 5, 4, 3))
        qs = rng.uniform(size=(m, 5, 4))
        stats = stats_from_member_renders(rgbs, qs)
        mu = rgbs.mean(axis=0)
        var = ((rgbs - mu[None]) ** 2).mean(axis=0)
        q_bar = qs.mean(axis=0)
        pairs = (
            (stats.mu_rgb, mu),
            (stats.var_rgb, var),
            (stats.var_rgb_mean, var.mean(axis=-1)),
            (stats.q_bar, q_bar),
            (stats.var_epi, (1.0 - q_bar) ** 2),
            (stats.psi_sq, var.mean(axis=-1) + (1.0 - q_bar) ** 2),
        )
        worst = max(worst, max(float(np.abs(a - b).max()) for a, b in pairs))
        perm = rng.permutation(m)
        shuffled = stats_from_member_renders(rgbs[perm], qs[perm])
        doubled = stats_from_member_renders(
            np.concatenate([rgbs, rgbs]), np.concatenate([qs, qs])
        )
        for name in ("mu_rgb", "var_rgb", "var_rgb_mean", "q_bar", "var_epi", "psi_sq"):
            exact = exact and np.array_equal(
                getattr(stats, name), getattr(shuffled, name)
            )
            exact = exact and np.array_equal(
                getattr(stats, name), getattr(doubled, name)
            )
    ok = worst < 1e-12 and exact
    announce(4, "ensemble-stats-oracle", ok,
             f"max |stats - two-pass oracle| {worst:.2e}, "
             f"permutation/duplication bit-exact: {exact}")


def test_05_nll_anchors(announce):
    rng = np.random.default_rng(2030)
    x = rng.uniform(size=(6, 7, 3))
    at_unit_norm = gaussian_nll(x, x, np.full((6, 7), 1.0 / (2.0 * np.pi)))
    at_unit_var = gaussian_nll(x, x, np.ones((6, 7)))
    err_zero = float(np.abs(at_unit_norm).max())
    err_half = float(np.abs(at_unit_var - 0.5 * math.log(2.0 * math.pi)).max())
    scalar = gaussian_nll(x[0, 0], x[0, 0], 1.0 / (2.0 * np.pi))
    ok = err_zero < 1e-12 and err_half < 1e-12 and abs(scalar) < 1e-12
    announce(5, "nll-anchors", ok,
             f"|nll(v=1/2pi)| {err_zero:.2e}, "
             f"|nll(v=1) - ln(2pi)/2| {err_half:.2e}")


def _visible_from(scene, camera, point, t_far):
    """True when the training camera has an unoccluded view of the point."""
    try:
        u, v = camera.project(point)
    except ValueError:
        return False
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        return False
    offset = point - camera.position
    dist = float(np.linalg.norm(offset))
    ray = Ray(origin=camera.position, direction=offset / dist,
              t_near=1e-6, t_far=t_far)
    hit = intersect(ray, scene)
    return hit is not None and abs(hit[0] - dist) < 1e-6


def _classify_pixels(scene, train_cams, test_cam, dataset):
    """Label every test pixel by surface type and training visibility."""
    plane = next(p for p in scene.primitives if isinstance(p, GroundPlane))
    labels = np.empty((test_cam.height, test_cam.width), dtype=object)
    for py in range(test_cam.height):
        for px in range(test_cam.width):
            ray = generate_ray(test_cam, px, py, dataset.t_near, dataset.t_far)
            hit = intersect(ray, scene)
            if hit is None:
                labels[py, px] = "miss"
                continue
            point = ray.at(hit[0])
            seen = any(
                _visible_from(scene, cam, point, dataset.t_far)
                for cam in train_cams
            )
            if abs(point[2] - plane.z0) < 1e-9:
                labels[py, px] = "floor_seen" if seen else "floor_never"
            else:
                labels[py, px] = "object_seen" if seen else "object_unseen"
    return labels


@pytest.fixture(scope="module")
def floor_study():
    """Upper-hemisphere training of the floor scene, below-equator probe.

    The 8 training views sit in a 45-degree cap around straight-down, so
    the floor strip shadowed by the sphere is never observed; the test
    camera just below the equator looks across that strip.
    """
    start = time.perf_counter()
    scene = floor_scene()
    train_cams = make_hemisphere_cameras(
        8, 2.8,
        cluster=Cluster(center_dir=(0.0, 0.0, 1.0), max_angle=math.radians(45.0)),
        seed=5, width=48, height=48, focal=170.0,
    )
    test_cam = make_orbit_cameras(1, 2.8, -3.0, width=48, height=48, focal=70.0)[0]
    dataset = make_dataset(scene, train_cams + [test_cam])
    labels = _classify_pixels(scene, train_cams, test_cam, dataset)
    ensemble = train_ensemble(
        dataset.subset(range(8)), resolution=32, bounds=scene.bounds,
        n_members=5, base_seed=0, train_config=TrainConfig(seed=0),
    )
    stats = ensemble_stats(
        ensemble, test_cam, n_samples=64,
        t_near=dataset.t_near, t_far=dataset.t_far,
    )
    truth = render_ground_truth(scene, test_cam)
    elapsed = time.perf_counter() - start
    return labels, stats, truth, elapsed


def test_06_unobserved_floor_epistemic(floor_study, announce):
    labels, stats, _, elapsed = floor_study
    never = labels == "floor_never"
    seen_object = labels == "object_seen"
    assert never.sum() > 0 and seen_object.sum() > 0
    median_never = float(np.median(stats.var_epi[never]))
    median_object = float(np.median(stats.var_epi[seen_object]))
    ok = median_never > 0.5 and median_object < 0.1 and elapsed < 300.0
    announce(6, "unobserved-floor-epistemic", ok,
             f"median epi: never-seen floor {median_never:.3f} (n={never.sum()}), "
             f"observed object {median_object:.3f} (n={seen_object.sum()}), "
             f"{elapsed:.0f}s")


def test_07_ensemble_size_trend(announce):
    start = time.perf_counter()
    scene = multisphere_scene()
    train_cams = make_hemisphere_cameras(
        10, 2.5, seed=3, width=40, height=40, focal=52.0
    )
    test_cams = make_orbit_cameras(
        3, 2.5, 20.0, width=40, height=40, focal=52.0, azimuth0_deg=15.0
    )
    dataset = make_dataset(scene, train_cams + list(test_cams))
    train_set = dataset.subset(range(10))
    truths = [render_ground_truth(scene, cam) for cam in test_cams]
    config = TrainConfig(steps=1600, rays_per_batch=512, samples_per_ray=48, seed=0)

    def mean_nll(ensemble):
        values = []
        for cam, truth in zip(test_cams, truths):
            stats = ensemble_stats(
                ensemble, cam, n_samples=48,
                t_near=dataset.t_near, t_far=dataset.t_far,
            )
            values.append(image_nll(stats, truth)[0])
        return float(np.mean(values))

    large, small = [], []
    for base_seed in (0, 100, 200):
        ens10 = train_ensemble(
            train_set, resolution=28, bounds=scene.bounds,
            n_members=10, base_seed=base_seed, train_config=config,
        )
        ens2 = Ensemble(members=ens10.members[:2], base_seed=base_seed)
        large.append(mean_nll(ens10))
        small.append(mean_nll(ens2))
    elapsed = time.perf_counter() - start
    nll10, nll2 = float(np.mean(large)), float(np.mean(small))
    ok = nll10 <= nll2 and elapsed < 900.0
    announce(7, "ensemble-size-trend", ok,
             f"mean NLL over 3 seeds: M=10 {nll10:.4f} <= M=2 {nll2:.4f}, "
             f"{elapsed:.0f}s")


def test_08_uncertainty_composition(floor_study, announce):
    _, stats, truth, _ = floor_study
    nll_full = float(gaussian_nll(truth.pixels, stats.mu_rgb, stats.psi_sq).mean())
    nll_rgb_only = float(
        gaussian_nll(truth.pixels, stats.mu_rgb, stats.var_rgb_mean).mean()
    )
    ok = nll_full < nll_rgb_only
    announce(8, "uncertainty-composition", ok,
             f"mean NLL: full {nll_full:.4f} < rgb-variance-only {nll_rgb_only:.1f}")


def test_09_view_selection_dominance(announce):
    start = time.perf_counter()
    scene = hemisphere_scene()
    initial_cams = make_hemisphere_cameras(
        5, 2.4, cluster=Cluster((0.407, 0.0, 0.914), math.radians(8.0)),
        seed=11, width=32, height=32, focal=68.0,
    )
    candidate_cams = make_orbit_cameras(
        15, 2.4, 60.0, width=32, height=32, focal=68.0, azimuth0_deg=7.0
    )
    test_cams = make_orbit_cameras(
        6, 2.4, 57.0, width=32, height=32, focal=68.0, azimuth0_deg=25.0
    )
    dataset = make_dataset(scene, initial_cams + candidate_cams + test_cams)
    initial = list(range(5))
    candidates = list(range(5, 20))
    tests = list(range(20, 26))
    config = TrainConfig(steps=1200, rays_per_batch=256, samples_per_ray=40)
    seeds = (0, 100, 200, 300, 400)

    curves = {}
    for policy in ("uncertainty", "random"):
        avg_runs, min_runs = [], []
        for seed in seeds:
            record = run_nbv(
                dataset,
                NbvConfig(initial_views=initial, iterations=10, ensemble_size=5,
                          policy=policy, train_config=config, seed=seed),
                candidates, tests, resolution=26, bounds=scene.bounds,
            )
            avg_runs.append(rescale_psnr(record.avg_curve))
            min_runs.append(rescale_psnr(record.min_curve))
        curves[policy] = (
            np.mean(avg_runs, axis=0), np.mean(min_runs, axis=0)
        )
    elapsed = time.perf_counter() - start
    avg_share = float(np.mean(curves["uncertainty"][0] >= curves["random"][0]))
    min_share = float(np.mean(curves["uncertainty"][1] > curves["random"][1]))
    ok = avg_share >= 0.6 and min_share >= 0.6 and elapsed < 2700.0
    announce(9, "view-selection-dominance", ok,
             f"avg-PSNR dominates-or-ties {avg_share:.0%} of iterations, "
             f"min-PSNR dominates {min_share:.0%}, {elapsed:.0f}s")


CLI_CONFIG = """\
bounds_lo = -1 -1 -1
bounds_hi = 1 1 1
background = empty
image_width = 10
image_height = 10
focal = 12
hemisphere_radius = 2.2
n_initial_views = 2
n_train_views = 3
n_test_views = 2
resolution = 6
samples_per_ray = 8
ensemble_size = 2
train_steps = 30
rays_per_batch = 32
nbv_iterations = 1
nbv_seeds = 0
primitive.0 = sphere 0 0 0 0.5 0.9 0.4 0.2
"""


def _tree_bytes(root):
    out = {}
    for dirpath, _, filenames in os.walk(root):
        for name in filenames:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_10_cli_determinism(tmp_path, announce):
    config_path = tmp_path / "run.cfg"
    ens_first = tmp_path / "ens_a"
    config_path.write_text(CLI_CONFIG + f"ensemble_dir = {ens_first}\n")
    outputs = {}
    for label in ("a", "b"):
        ds = tmp_path / f"ds_{label}"
        ens = tmp_path / f"ens_{label}"
        maps = tmp_path / f"maps_{label}"
        ev = tmp_path / f"eval_{label}"
        nbv = tmp_path / f"nbv_{label}"
        assert cli_main(["gen-scene", "--config", str(config_path),
                         "--out", str(ds)]) == 0
        assert cli_main(["train-ensemble", "--config", str(config_path),
                         "--dataset", str(ds), "--out", str(ens)]) == 0
        assert cli_main(["render-uncertainty", "--config", str(config_path),
                         "--dataset", str(ds), "--out", str(maps)]) == 0
        assert cli_main(["eval", "--config", str(config_path),
                         "--dataset", str(ds), "--out", str(ev)]) == 0
        assert cli_main(["nbv", "--config", str(config_path),
                         "--dataset", str(ds), "--out", str(nbv)]) == 0
        outputs[label] = {
            name: _tree_bytes(path)
            for name, path in (("gen-scene", ds), ("train-ensemble", ens),
                               ("render-uncertainty", maps), ("eval", ev),
                               ("nbv", nbv))
        }
    mismatched = [
        name for name in outputs["a"]
        if outputs["a"][name] != outputs["b"][name]
    ]
    ok = not mismatched
    announce(10, "cli-determinism", ok,
             "all 5 commands byte-identical on re-run" if ok
             else f"differs: {mismatched}")
