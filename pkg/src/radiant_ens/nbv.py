"""Iterative next-best-view selection against a random baseline.

Each iteration trains a fresh ensemble from scratch on the current
training set (member seeds fixed across iterations, so curves differ
only through the data), scores every remaining candidate view by its
mean per-pixel uncertainty, moves the selected view into the training
set, and evaluates PSNR on held-out test views.  Selection rounds use
the ensemble state *before* the move, so each record row pairs the
evaluation with the choice it led to.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .metrics import psnr, rescale_psnr
from .train import TrainConfig
from .uncertainty import ensemble_stats, train_ensemble

POLICIES = ("uncertainty", "random")


@dataclass
class NbvConfig:
    initial_views: list
    iterations: int
    ensemble_size: int
    policy: str
    train_config: TrainConfig
    seed: int = 0

    def __post_init__(self):
        if len(self.initial_views) < 1:
            raise ValueError("need at least one initial view")
        if len(set(self.initial_views)) != len(self.initial_views):
            raise ValueError("initial views must be distinct")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")


@dataclass
class IterationRecord:
    iteration: int
    chosen: int  # -1 on the final, evaluation-only row
    scores: dict  # candidate index -> score; empty on the final row
    avg_psnr: float
    min_psnr: float


@dataclass
class NbvRecord:
    policy: str
    rows: list = field(default_factory=list)

    @property
    def avg_curve(self):
        return np.array([r.avg_psnr for r in self.rows])

    @property
    def min_curve(self):
        return np.array([r.min_psnr for r in self.rows])

    @property
    def avg_rescaled(self):
        return rescale_psnr(self.avg_curve)

    @property
    def min_rescaled(self):
        return rescale_psnr(self.min_curve)


def score_view(stats):
    """Mean total uncertainty over the view's pixels."""
    if stats.psi_sq.size == 0:
        raise ValueError("empty statistics image")
    return float(np.mean(stats.psi_sq))


def select_next(candidates, policy, rng=None):
    """Pick from (index, score) pairs: argmax for the uncertainty policy
    (ties to the lowest index), uniform draw for the random policy."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("empty candidate pool")
    if policy == "uncertainty":
        best_index, best_score = candidates[0]
        for index, score in candidates[1:]:
            if score > best_score or (score == best_score and index < best_index):
                best_index, best_score = index, score
        return best_index
    if policy == "random":
        if rng is None:
            raise ValueError("random policy needs an rng")
        return candidates[int(rng.integers(len(candidates)))][0]
    raise ValueError(f"policy must be one of {POLICIES}")


def _evaluate(ensemble, dataset, test_indices, n_samples):
    values = []
    for i in test_indices:
        stats = ensemble_stats(
            ensemble,
            dataset.cameras[i],
            n_samples,
            t_near=dataset.t_near,
            t_far=dataset.t_far,
        )
        values.append(psnr(stats.mu_rgb, dataset.images[i]))
    return float(np.mean(values)), float(np.min(values))


def run_nbv(dataset, config: NbvConfig, candidate_indices, test_indices,
            resolution, bounds):
    """Run the selection loop; returns one row per trained ensemble.

    `resolution` and `bounds` define the voxel fields.  Rows 0..K-1
    carry the evaluation plus the selection made from that ensemble;
    the last row is evaluation-only (chosen = -1).  When the pool
    empties before `iterations` selections, the record simply ends
    early.
    """
    initial = list(config.initial_views)
    pool = list(candidate_indices)
    tests = list(test_indices)
    if not tests:
        raise ValueError("need at least one test view")
    if set(initial) & set(pool):
        raise ValueError("initial views overlap the candidate pool")
    if set(tests) & (set(initial) | set(pool)):
        raise ValueError("test views must be disjoint from training pools")
    train_set = list(initial)
    selection_rng = np.random.default_rng([config.seed, 2])
    n_samples = config.train_config.samples_per_ray
    record = NbvRecord(policy=config.policy)
    for iteration in range(config.iterations + 1):
        ensemble = train_ensemble(
            dataset.subset(train_set),
            resolution,
            bounds,
            n_members=config.ensemble_size,
            base_seed=config.seed,
            train_config=config.train_config,
        )
        avg, worst = _evaluate(ensemble, dataset, tests, n_samples)
        if iteration == config.iterations or not pool:
            record.rows.append(
                IterationRecord(iteration, -1, {}, avg, worst)
            )
            break
        scores = {}
        for i in pool:
            stats = ensemble_stats(
                ensemble,
                dataset.cameras[i],
                n_samples,
                t_near=dataset.t_near,
                t_far=dataset.t_far,
            )
            scores[i] = score_view(stats)
        chosen = select_next(sorted(scores.items()), config.policy, selection_rng)
        record.rows.append(IterationRecord(iteration, chosen, scores, avg, worst))
        pool.remove(chosen)
        train_set.append(chosen)
    return record


def record_to_csv(record: NbvRecord):
    """One line per row: iter,policy,chosen,avg_psnr,min_psnr,avg_rescaled,min_rescaled."""
    out = io.StringIO()
    out.write("iter,policy,chosen,avg_psnr,min_psnr,avg_rescaled,min_rescaled\n")
    avg_rescaled = record.avg_rescaled
    min_rescaled = record.min_rescaled
    for k, row in enumerate(record.rows):
        out.write(
            f"{row.iteration},{record.policy},{row.chosen},"
            f"{row.avg_psnr:.17g},{row.min_psnr:.17g},"
            f"{avg_rescaled[k]:.17g},{min_rescaled[k]:.17g}\n"
        )
    return out.getvalue()


def scores_to_csv(record: NbvRecord):
    """Per-candidate scores: iter,candidate,score (selection rows only)."""
    out = io.StringIO()
    out.write("iter,candidate,score\n")
    for row in record.rows:
        for index in sorted(row.scores):
            out.write(f"{row.iteration},{index},{row.scores[index]:.17g}\n")
    return out.getvalue()
