import numpy as np
import pytest

from radiant_ens.metrics import rescale_psnr
from radiant_ens.nbv import (
    NbvConfig,
    NbvRecord,
    record_to_csv,
    run_nbv,
    score_view,
    scores_to_csv,
    select_next,
)
from radiant_ens.scene import (
    Sphere,
    SceneSpec,
    make_dataset,
    make_hemisphere_cameras,
)
from radiant_ens.geometry import Aabb
from radiant_ens.train import TrainConfig
from radiant_ens.uncertainty import stats_from_member_renders

TINY = TrainConfig(steps=30, rays_per_batch=32, samples_per_ray=8, seed=0)


def tiny_problem(n_views=7):
    bounds = Aabb(lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0))
    scene = SceneSpec(
        primitives=[Sphere(center=(0.0, 0.0, 0.0), radius=0.5, rgb=(0.9, 0.4, 0.2))],
        bounds=bounds,
        background=None,
    )
    cams = make_hemisphere_cameras(n_views, 2.2, seed=9, width=8, height=8, focal=9.0)
    return scene, make_dataset(scene, cams)


def make_config(policy="uncertainty", iterations=2, seed=0, initial=(0,)):
    return NbvConfig(
        initial_views=list(initial),
        iterations=iterations,
        ensemble_size=2,
        policy=policy,
        train_config=TINY,
        seed=seed,
    )


class TestNbvConfig:
    def test_valid(self):
        cfg = make_config()
        assert cfg.policy == "uncertainty"

    def test_empty_initial_views(self):
        with pytest.raises(ValueError):
            make_config(initial=())

    def test_duplicate_initial_views(self):
        with pytest.raises(ValueError):
            make_config(initial=(0, 0))

    def test_negative_iterations(self):
        with pytest.raises(ValueError):
            make_config(iterations=-1)

    def test_zero_members(self):
        with pytest.raises(ValueError):
            NbvConfig([0], 1, 0, "random", TINY)

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            make_config(policy="greedy")


class TestScoreView:
    def test_mean_psi_sq(self):
        rng = np.random.default_rng(0)
        rgbs = rng.uniform(size=(3, 4, 5, 3))
        qs = rng.uniform(size=(3, 4, 5))
        stats = stats_from_member_renders(rgbs, qs)
        assert score_view(stats) == pytest.approx(float(np.mean(stats.psi_sq)), abs=0)

    def test_empty_image_rejected(self):
        stats = stats_from_member_renders(np.zeros((2, 0, 4, 3)), np.zeros((2, 0, 4)))
        with pytest.raises(ValueError, match="empty statistics image"):
            score_view(stats)


class TestSelectNext:
    def test_uncertainty_argmax(self):
        assert select_next([(5, 1.0), (2, 3.0), (7, 2.0)], "uncertainty") == 2

    def test_uncertainty_tie_lowest_index(self):
        assert select_next([(5, 3.0), (2, 3.0), (7, 3.0)], "uncertainty") == 2

    def test_empty_pool(self):
        with pytest.raises(ValueError, match="empty candidate pool"):
            select_next([], "uncertainty")

    def test_random_needs_rng(self):
        with pytest.raises(ValueError, match="random policy needs an rng"):
            select_next([(0, 1.0)], "random")

    def test_random_draws_from_pool(self):
        rng = np.random.default_rng(3)
        pool = [(4, 1.0), (9, 5.0), (6, 2.0)]
        picks = {select_next(pool, "random", rng) for _ in range(40)}
        assert picks == {4, 9, 6}

    def test_random_deterministic_per_seed(self):
        a = [select_next([(i, 0.0) for i in range(6)], "random", np.random.default_rng(7))
             for _ in range(3)]
        b = [select_next([(i, 0.0) for i in range(6)], "random", np.random.default_rng(7))
             for _ in range(3)]
        assert a == b

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            select_next([(0, 1.0)], "best")


class TestRunNbvValidation:
    def test_initial_overlaps_pool(self):
        scene, ds = tiny_problem()
        with pytest.raises(ValueError, match="overlap"):
            run_nbv(ds, make_config(initial=(0, 1)), [1, 2], [3], 4, scene.bounds)

    def test_tests_overlap_training(self):
        scene, ds = tiny_problem()
        with pytest.raises(ValueError, match="disjoint"):
            run_nbv(ds, make_config(), [1, 2], [2, 3], 4, scene.bounds)

    def test_no_test_views(self):
        scene, ds = tiny_problem()
        with pytest.raises(ValueError, match="test view"):
            run_nbv(ds, make_config(), [1, 2], [], 4, scene.bounds)


@pytest.fixture(scope="module")
def small_runs():
    scene, ds = tiny_problem()
    candidates = [1, 2, 3, 4]
    tests = [5, 6]
    records = {}
    for policy, seed in (("uncertainty", 0), ("random", 0), ("random", 1)):
        cfg = make_config(policy=policy, iterations=2, seed=seed)
        records[(policy, seed)] = run_nbv(ds, cfg, candidates, tests, 6, scene.bounds)
    return scene, ds, candidates, records


class TestRunNbv:
    def test_row_structure(self, small_runs):
        _, _, candidates, records = small_runs
        rec = records[("uncertainty", 0)]
        assert isinstance(rec, NbvRecord)
        assert rec.policy == "uncertainty"
        assert len(rec.rows) == 3  # iterations + final evaluation row
        assert [r.iteration for r in rec.rows] == [0, 1, 2]
        assert rec.rows[-1].chosen == -1
        assert rec.rows[-1].scores == {}

    def test_selection_rows_score_remaining_pool(self, small_runs):
        _, _, candidates, records = small_runs
        rec = records[("uncertainty", 0)]
        remaining = set(candidates)
        for row in rec.rows[:-1]:
            assert set(row.scores) == remaining
            assert row.chosen in remaining
            remaining.discard(row.chosen)

    def test_uncertainty_rows_pick_argmax(self, small_runs):
        _, _, _, records = small_runs
        for row in records[("uncertainty", 0)].rows[:-1]:
            best = min(i for i, s in row.scores.items()
                       if s == max(row.scores.values()))
            assert row.chosen == best

    def test_random_selection_stream(self, small_runs):
        _, _, candidates, records = small_runs
        rec = records[("random", 0)]
        rng = np.random.default_rng([0, 2])
        avail = sorted(candidates)
        for row in rec.rows[:-1]:
            expected = avail[int(rng.integers(len(avail)))]
            assert row.chosen == expected
            avail.remove(expected)

    def test_seed_changes_random_path(self, small_runs):
        _, _, _, records = small_runs
        a = [r.chosen for r in records[("random", 0)].rows]
        b = [r.chosen for r in records[("random", 1)].rows]
        assert a != b

    def test_psnr_sanity(self, small_runs):
        _, _, _, records = small_runs
        for rec in records.values():
            for row in rec.rows:
                assert np.isfinite(row.avg_psnr) and np.isfinite(row.min_psnr)
                assert row.avg_psnr >= row.min_psnr

    def test_curves_and_rescaling(self, small_runs):
        _, _, _, records = small_runs
        rec = records[("uncertainty", 0)]
        assert np.array_equal(rec.avg_curve, [r.avg_psnr for r in rec.rows])
        assert np.array_equal(rec.avg_rescaled, rescale_psnr(rec.avg_curve))
        assert rec.avg_rescaled[0] == 0.0
        assert rec.min_rescaled[0] == 0.0

    def test_deterministic(self, small_runs):
        scene, ds, candidates, records = small_runs
        ref = records[("uncertainty", 0)]
        again = run_nbv(ds, make_config(policy="uncertainty", iterations=2, seed=0),
                        candidates, [5, 6], 6, scene.bounds)
        for a, b in zip(ref.rows, again.rows):
            assert a.iteration == b.iteration
            assert a.chosen == b.chosen
            assert a.scores == b.scores
            assert a.avg_psnr == b.avg_psnr
            assert a.min_psnr == b.min_psnr

    def test_zero_iterations(self):
        scene, ds = tiny_problem(4)
        rec = run_nbv(ds, make_config(iterations=0), [1, 2], [3], 6, scene.bounds)
        assert len(rec.rows) == 1
        assert rec.rows[0].chosen == -1
        assert rec.rows[0].scores == {}

    def test_pool_exhaustion_ends_record_early(self):
        scene, ds = tiny_problem(4)
        rec = run_nbv(ds, make_config(iterations=5), [1, 2], [3], 6, scene.bounds)
        assert len(rec.rows) == 3  # two selections, then evaluation-only
        assert [r.chosen for r in rec.rows[:2]] != [-1, -1]
        assert set(r.chosen for r in rec.rows[:2]) == {1, 2}
        assert rec.rows[-1].chosen == -1


class TestCsv:
    def test_record_csv_shape(self, small_runs):
        _, _, _, records = small_runs
        rec = records[("uncertainty", 0)]
        lines = record_to_csv(rec).splitlines()
        assert lines[0] == "iter,policy,chosen,avg_psnr,min_psnr,avg_rescaled,min_rescaled"
        assert len(lines) == 1 + len(rec.rows)
        first = lines[1].split(",")
        assert first[0] == "0"
        assert first[1] == "uncertainty"
        assert int(first[2]) == rec.rows[0].chosen
        # %.17g survives the round trip exactly
        assert float(first[3]) == rec.rows[0].avg_psnr
        assert float(first[4]) == rec.rows[0].min_psnr
        assert float(first[5]) == rec.avg_rescaled[0]
        assert float(first[6]) == rec.min_rescaled[0]
        assert lines[-1].split(",")[2] == "-1"

    def test_scores_csv_shape(self, small_runs):
        _, _, candidates, records = small_runs
        rec = records[("uncertainty", 0)]
        lines = scores_to_csv(rec).splitlines()
        assert lines[0] == "iter,candidate,score"
        expected = sum(len(r.scores) for r in rec.rows)
        assert len(lines) == 1 + expected
        # rows are grouped by iteration with candidates ascending
        it0 = [l for l in lines[1:] if l.startswith("0,")]
        assert [int(l.split(",")[1]) for l in it0] == sorted(candidates)
        for line in it0:
            _, cand, score = line.split(",")
            assert float(score) == rec.rows[0].scores[int(cand)]
