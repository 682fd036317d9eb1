"""Ensemble statistics and the diagonal-Gaussian predictive model.

Per pixel, the ensemble of M fields yields a mean colour mu_rgb, a
per-channel population variance var_rgb (divisor M), their channel
average var_rgb_mean, the mean ray opacity q_bar, the density-aware
epistemic term var_epi = (1 - q_bar)^2, and the total uncertainty
psi_sq = var_rgb_mean + var_epi.  The RGB variance alone goes blind
wherever no member ever saw geometry (all members render background and
agree); the epistemic term is large exactly there because q_bar ~ 0.

Member sums use exactly rounded summation, so every statistic is
bit-identical under permutation of the member list and under duplicating
the whole member list: the true sum is order-free, doubling it is exact
in binary floating point, and the extra factor cancels against 2M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .render import render_view
from .train import train_member


@dataclass
class Ensemble:
    """M fields trained on the same data from different initializations.

    Member k is expected to have been trained with seed base_seed + k;
    the seed is carried so downstream tooling can reproduce members.
    """

    members: list
    base_seed: int = 0

    def __post_init__(self):
        if len(self.members) < 1:
            raise ValueError("ensemble needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if m.resolution != first.resolution:
                raise ValueError("members disagree on resolution")
            if not (
                np.array_equal(m.bounds.lo, first.bounds.lo)
                and np.array_equal(m.bounds.hi, first.bounds.hi)
            ):
                raise ValueError("members disagree on bounds")

    def __len__(self):
        return len(self.members)


@dataclass
class EnsembleStats:
    """Per-pixel statistics; arrays share the image's (H, W) layout."""

    mu_rgb: np.ndarray  # (H, W, 3)
    var_rgb: np.ndarray  # (H, W, 3)
    var_rgb_mean: np.ndarray  # (H, W)
    q_bar: np.ndarray  # (H, W)
    var_epi: np.ndarray  # (H, W)
    psi_sq: np.ndarray  # (H, W)


def train_ensemble(
    dataset, resolution, bounds, n_members, base_seed, train_config, verbose=False
):
    """Train n_members fields with seeds base_seed + k; order-stable."""
    if n_members < 1:
        raise ValueError("n_members must be >= 1")

    def _one(k):
        return train_member(
            dataset,
            resolution,
            bounds,
            train_config.with_seed(base_seed + k),
            verbose=verbose,
        )

    members = parallel_map(_one, range(n_members))
    return Ensemble(members=members, base_seed=base_seed)


def member_render(member, camera, n_samples=64, t_near=None, t_far=None):
    """One member's view: deterministic midpoint rendering."""
    return render_view(
        member, camera, n_samples, mode="midpoint", t_near=t_near, t_far=t_far
    )


def _exact_member_mean(values):
    """Mean over axis 0 with an exactly rounded sum per element.

    math.fsum returns the correctly rounded true sum, which does not
    depend on member order, and doubles exactly when every member is
    repeated, so downstream statistics inherit bit-exact permutation
    and duplication invariance.
    """
    n_members = values.shape[0]
    columns = np.ascontiguousarray(values.reshape(n_members, -1).T)
    out = np.empty(columns.shape[0])
    for j, col in enumerate(columns):
        out[j] = math.fsum(col)
    return out.reshape(values.shape[1:]) / n_members


def stats_from_member_renders(rgbs, qs):
    """Statistics from stacked member renders: rgbs (M, ..., 3), qs (M, ...).

    Population variance, divisor M, computed two-pass (mean first, then
    mean of squared deviations) with exactly rounded member sums.
    """
    rgbs = np.asarray(rgbs, dtype=np.float64)
    qs = np.asarray(qs, dtype=np.float64)
    if rgbs.ndim < 2 or rgbs.shape[-1] != 3 or rgbs.shape[0] < 1:
        raise ValueError("rgbs must have shape (M, ..., 3) with M >= 1")
    if qs.shape != rgbs.shape[:-1]:
        raise ValueError("qs must have shape (M, ...) matching rgbs")
    mu_rgb = _exact_member_mean(rgbs)
    var_rgb = _exact_member_mean((mu_rgb[None, ...] - rgbs) ** 2)
    var_rgb_mean = (var_rgb[..., 0] + var_rgb[..., 1] + var_rgb[..., 2]) / 3.0
    q_bar = _exact_member_mean(qs)
    var_epi = (1.0 - q_bar) ** 2
    psi_sq = var_rgb_mean + var_epi
    return EnsembleStats(
        mu_rgb=mu_rgb,
        var_rgb=var_rgb,
        var_rgb_mean=var_rgb_mean,
        q_bar=q_bar,
        var_epi=var_epi,
        psi_sq=psi_sq,
    )


def ensemble_stats(ensemble, camera, n_samples=64, t_near=None, t_far=None):
    """Render every member along identical rays, then reduce per pixel."""
    renders = parallel_map(
        lambda m: member_render(m, camera, n_samples, t_near, t_far),
        ensemble.members,
    )
    rgbs = np.stack([img.pixels for img, _ in renders], axis=0)
    qs = np.stack([q for _, q in renders], axis=0)
    return stats_from_member_renders(rgbs, qs)


def predictive_distribution(stats):
    """The per-pixel Gaussian: mean mu_rgb, shared channel variance psi_sq."""
    return stats.mu_rgb, stats.psi_sq
