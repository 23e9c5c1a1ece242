import numpy as np
import pytest

from dashshap.data import DgpSpec, GroupStructure, make_dataset, split_four_way
from dashshap.metrics import spearman
from dashshap.pipeline import (
    DashResult,
    PipelineConfig,
    dedup_select,
    filter_performance,
    fit_from_attributions,
    generate_population,
    maxmin_select,
    naive_topn_select,
    random_select,
    run_dash,
    sample_background,
    train_population,
)
from dashshap.seeding import generator
from dashshap.treeshap import ShapMatrix


def small_problem(seed=0, n=500, rho=0.5):
    groups = GroupStructure.blocks(2, 5, rho)
    spec = DgpSpec(betas=(2.0, 1.0), n=n, groups=groups, seed=seed)
    ds = make_dataset(spec)
    return ds, split_four_way(n, seed=seed + 1)


def small_config(**overrides):
    base = dict(population_size=6, k_max=4, background_size=16, master_seed=3,
                n_estimators_max=60)
    base.update(overrides)
    return PipelineConfig(**base)


class TestFilterPerformance:
    def test_epsilon_zero_keeps_argmax_ties(self):
        assert filter_performance([1.0, 2.0, 2.0, 1.5], 0.0) == [1, 2]

    def test_worked_absolute_example(self):
        assert filter_performance([-1.0, -1.05, -1.2], 0.08, "absolute") == [0, 1]

    def test_relative_mode(self):
        # |s - s*| <= eps * |s*| with s* = -1.0 -> bound 0.1
        assert filter_performance([-1.0, -1.09, -1.11], 0.1, "relative") == [0, 1]

    def test_always_contains_argmax(self):
        rng = generator(1)
        for _ in range(25):
            scores = rng.standard_normal(12)
            kept = filter_performance(scores, float(rng.random() * 0.1))
            assert int(np.argmax(scores)) in kept

    def test_monotone_in_epsilon_both_modes(self):
        rng = generator(2)
        scores = -np.abs(rng.standard_normal(30))
        for mode in ("absolute", "relative"):
            prev: set = set()
            for eps in (0.0, 0.02, 0.05, 0.1, 0.5):
                kept = set(filter_performance(scores, eps, mode))
                assert prev <= kept
                prev = kept

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            filter_performance([], 0.1)


class TestMaxMinSelect:
    def test_single_candidate(self):
        vecs = np.array([[1.0, 0.0]])
        assert maxmin_select(vecs, [0], [5.0], k_max=3, delta=0.05) == [0]

    def test_orthogonal_one_hots_all_selected(self):
        vecs = np.eye(3)
        sel = maxmin_select(vecs, [0, 1, 2], [0.5, 0.9, 0.1], k_max=3, delta=0.05)
        assert sorted(sel) == [0, 1, 2]
        assert sel[0] == 1  # starts from the top scorer

    def test_duplicate_blocked_by_delta(self):
        vecs = np.array([[1.0, 0.0], [1.0, 0.0], [0.6, 0.8]])
        scores = [3.0, 2.0, 1.0]
        # top scorer first, then the distant vector (distance 0.4); the
        # remaining duplicate has min-distance 0 < delta, so selection stops
        assert maxmin_select(vecs, [0, 1, 2], scores, k_max=3, delta=0.05) == [0, 2]

    def test_k_max_truncates(self):
        vecs = np.eye(5)
        sel = maxmin_select(vecs, list(range(5)), [5, 4, 3, 2, 1], k_max=2, delta=0.0)
        assert len(sel) == 2 and sel[0] == 0

    def test_zero_norm_vectors_are_maximally_distant(self):
        vecs = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
        sel = maxmin_select(vecs, [0, 1, 2], [3.0, 1.0, 2.0], k_max=3, delta=0.05)
        # the zero vector is distance 1 from everything, so it gets added;
        # the duplicate of the start is then blocked
        assert sel == [0, 1]

    def test_greedy_invariant_replay(self):
        rng = generator(3)
        vecs = rng.random((12, 6))
        scores = rng.standard_normal(12)
        sel = maxmin_select(vecs, list(range(12)), scores, k_max=6, delta=0.0)
        unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)

        def dist(a, b):
            return 1.0 - float(unit[a] @ unit[b])

        for step in range(1, len(sel)):
            chosen = sel[step]
            prior = sel[:step]
            remaining = [c for c in range(12) if c not in prior]
            best = max(min(dist(c, s) for s in prior) for c in remaining)
            got = min(dist(chosen, s) for s in prior)
            assert got == pytest.approx(best, abs=1e-12)

    def test_deterministic_tie_break_by_lower_index(self):
        vecs = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        sel = maxmin_select(vecs, [0, 1, 2], [9.0, 1.0, 1.0], k_max=2, delta=0.0)
        assert sel == [0, 1]  # 1 and 2 tie at distance 1; lower index wins


class TestDedupSelect:
    def test_identical_vectors_keep_top_scorer(self):
        vecs = np.tile(np.array([[3.0, 2.0, 1.0]]), (4, 1))
        assert dedup_select(vecs, [0, 1, 2, 3], [0.1, 0.9, 0.5, 0.2]) == [1]

    def test_anticorrelated_pair_both_kept(self):
        vecs = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
        assert dedup_select(vecs, [0, 1], [1.0, 0.5]) == [0, 1]

    def test_exactly_one_near_duplicate_pair(self):
        base = np.arange(30.0)
        near = base.copy()
        near[0], near[1] = near[1], near[0]  # one adjacent swap: rho_s > 0.95
        far = np.array(generator(4).permutation(base))
        vecs = np.stack([base, near, far])
        assert spearman(base, near) > 0.95
        assert spearman(base, far) < 0.95 and spearman(near, far) < 0.95
        # candidate 1 scores below candidate 0, so the pair drops 1
        assert dedup_select(vecs, [0, 1, 2], [0.9, 0.8, 0.1]) == [0, 2]

    def test_order_independence_via_score_processing(self):
        rng = generator(5)
        vecs = rng.random((6, 8))
        scores = rng.standard_normal(6)
        a = dedup_select(vecs, [0, 1, 2, 3, 4, 5], scores)
        b = dedup_select(vecs, [5, 3, 1, 0, 2, 4], scores)
        assert a == b


class TestOtherSelectors:
    def test_random_whole_set_when_k_large(self):
        assert random_select([4, 2, 7], 5, seed=1) == [2, 4, 7]

    def test_random_seeded_subset(self):
        a = random_select(list(range(20)), 5, seed=9)
        b = random_select(list(range(20)), 5, seed=9)
        assert a == b and len(a) == 5

    def test_naive_topn(self):
        assert naive_topn_select([0, 1, 2, 3], [0.1, 0.9, 0.5, 0.7], 2) == [1, 3]


class TestPopulation:
    def test_m1_population(self):
        ds, split = small_problem()
        pop = train_population(ds, split, 1, master_seed=5)
        assert pop.size == 1
        assert np.isfinite(pop.scores[0])

    def test_determinism_replay(self):
        ds, split = small_problem(seed=2)
        a = train_population(ds, split, 4, master_seed=7)
        b = train_population(ds, split, 4, master_seed=7)
        assert np.array_equal(a.scores, b.scores)
        assert np.array_equal(a.gain_vectors, b.gain_vectors)

    def test_prefix_property(self):
        ds, split = small_problem(seed=3)
        big = train_population(ds, split, 5, master_seed=11)
        small = train_population(ds, split, 3, master_seed=11)
        assert np.array_equal(big.scores[:3], small.scores)


class TestRunDash:
    def test_degenerate_single_model_pipeline(self):
        ds, split = small_problem(seed=4)
        cfg = small_config(population_size=1, k_max=1)
        res = run_dash(ds, split, cfg)
        assert res.selected == [0] and res.filtered == [0]
        assert np.array_equal(res.consensus.values, res.per_model[0].values)
        assert np.all(res.fsi == 0.0)

    def test_selected_subset_of_filtered_and_k_max(self):
        ds, split = small_problem(seed=5)
        cfg = small_config(population_size=8, k_max=3)
        res = run_dash(ds, split, cfg)
        assert set(res.selected) <= set(res.filtered)
        assert 1 <= len(res.selected) <= 3

    def test_consensus_importance_finds_top_group(self):
        # rho = 0: independent features, group 1 has the largest beta
        ds, split = small_problem(seed=6, n=900, rho=0.0)
        cfg = small_config(population_size=8, k_max=5, master_seed=17)
        res = run_dash(ds, split, cfg)
        by_group = [res.global_importance[:5].mean(), res.global_importance[5:].mean()]
        assert by_group[0] > by_group[1]

    def test_end_to_end_determinism(self):
        ds, split = small_problem(seed=7)
        cfg = small_config()
        r1 = run_dash(ds, split, cfg)
        r2 = run_dash(ds, split, cfg)
        assert r1.selected == r2.selected
        assert np.array_equal(r1.consensus.values, r2.consensus.values)
        assert np.array_equal(r1.fsi, r2.fsi)

    def test_selection_variants_run(self):
        ds, split = small_problem(seed=8)
        for selection in ("dedup", "random", "naive_topn"):
            res = run_dash(ds, split, small_config(selection=selection))
            assert isinstance(res, DashResult)
            assert len(res.selected) >= 1


class TestSampleBackground:
    def test_uses_all_when_split_small(self):
        split = split_four_way(40, (0.5, 0.2, 0.1, 0.2), seed=1)
        positions, ids = sample_background(split, 100, master_seed=0)
        assert len(positions) == split.explain.size
        assert np.array_equal(ids, split.explain)

    def test_seeded_subset(self):
        split = split_four_way(400, seed=2)
        p1, ids1 = sample_background(split, 10, master_seed=5)
        p2, ids2 = sample_background(split, 10, master_seed=5)
        assert np.array_equal(p1, p2) and len(p1) == 10
        assert np.array_equal(ids1, split.explain[p1])


class TestFitFromAttributions:
    def _mats(self, k, seed=0, n=6, p=4):
        rng = generator(seed)
        return [
            ShapMatrix(values=rng.standard_normal((n, p)), base_value=0.0,
                       model_id=f"m{j:04d}")
            for j in range(k)
        ]

    def test_single_matrix_identity(self):
        mats = self._mats(1)
        res = fit_from_attributions(mats, [1.0], small_config())
        assert np.array_equal(res.consensus.values, mats[0].values)
        assert np.all(res.fsi == 0.0)

    def test_identical_matrices_zero_fsi(self):
        base = self._mats(1)[0]
        mats = [
            ShapMatrix(values=base.values.copy(), base_value=0.0, model_id=f"m{j:04d}")
            for j in range(5)
        ]
        res = fit_from_attributions(
            mats, [1.0] * 5, small_config(diversity_threshold=0.0, k_max=5)
        )
        assert np.array_equal(res.consensus.values, base.values)
        assert np.all(res.fsi == 0.0)

    def test_round_trip_from_run_dash(self):
        ds, split = small_problem(seed=9)
        cfg = small_config(population_size=6, k_max=4)
        res = run_dash(ds, split, cfg)
        scores = res.population.scores[res.selected]
        cfg_rt = small_config(
            population_size=6,
            k_max=max(cfg.k_max, len(res.selected)),
            diversity_threshold=0.0,
        )
        back = fit_from_attributions(res.per_model, scores, cfg_rt)
        assert np.array_equal(back.consensus.values, res.consensus.values)
        assert np.array_equal(back.fsi, res.fsi)
        assert back.quadrants == res.quadrants

    def test_shape_and_alignment_validation(self):
        mats = self._mats(2)
        with pytest.raises(ValueError):
            fit_from_attributions([], [], small_config())
        with pytest.raises(ValueError):
            fit_from_attributions(mats, [1.0], small_config())
        bad = self._mats(1, n=7)
        with pytest.raises(ValueError):
            fit_from_attributions(mats + bad, [1.0, 2.0, 3.0], small_config())


class TestKEffMonotoneInEpsilon:
    def test_mean_k_eff_nondecreasing_over_seeds(self):
        # selection-only property: no attributions needed
        epsilons = (0.03, 0.05, 0.08, 0.10)
        keff = {e: [] for e in epsilons}
        for seed in range(10):
            ds, split = small_problem(seed=100 + seed, n=600, rho=0.7)
            pop = train_population(ds, split, 10, master_seed=seed)
            for eps in epsilons:
                kept = filter_performance(pop.scores, eps, "absolute")
                sel = maxmin_select(pop.gain_vectors, kept, pop.scores, 30, 0.05)
                keff[eps].append(len(sel))
        means = [float(np.mean(keff[e])) for e in epsilons]
        assert all(a <= b + 1e-12 for a, b in zip(means, means[1:]))
