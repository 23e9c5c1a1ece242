import json

import numpy as np
import pytest

from dashshap import gbdt
from dashshap.data import DgpSpec, GroupStructure, make_dataset, split_four_way
from dashshap.gbdt import (
    Hyperparams,
    MAX_DEPTH_GRID,
    gain_importance,
    make_stump,
    model_from_dict,
    model_to_dict,
    predict,
    predict_raw,
    sample_hyperparams,
    score,
    single_leaf_model,
    train,
)
from dashshap.seeding import generator


def _toy_regression(n=120, p=4, seed=0):
    rng = generator(seed)
    X = rng.standard_normal((n, p))
    y = 1.5 * X[:, 0] - 0.5 * X[:, 2] + 0.3 * rng.standard_normal(n)
    return X, y


def _paper_style_dataset(rho, seed, n=5000, n_groups=10):
    groups = GroupStructure.blocks(n_groups, 5, rho)
    spec = DgpSpec(
        betas=(2.0, 1.5, 1.0, 0.8, 0.6, 0.4, 0.3, 0.2, 0.1, 0.0)[:n_groups],
        n=n,
        groups=groups,
        seed=seed,
    )
    return make_dataset(spec), split_four_way(n, seed=seed + 1)


class TestSampleHyperparams:
    def test_every_field_on_its_grid(self):
        rng = generator(0)
        for _ in range(200):
            hp = sample_hyperparams(rng)
            assert hp.max_depth in MAX_DEPTH_GRID
            assert hp.learning_rate in gbdt.LEARNING_RATE_GRID
            assert hp.colsample_bytree in gbdt.COLSAMPLE_BYTREE_GRID
            assert hp.subsample in gbdt.SUBSAMPLE_GRID
            assert hp.reg_alpha in gbdt.REG_ALPHA_GRID
            assert hp.reg_lambda in gbdt.REG_LAMBDA_GRID
            assert hp.min_child_weight in gbdt.MIN_CHILD_WEIGHT_GRID

    def test_uniformity_over_max_depth(self):
        rng = generator(1)
        draws = [sample_hyperparams(rng).max_depth for _ in range(10_000)]
        for depth in MAX_DEPTH_GRID:
            freq = draws.count(depth) / len(draws)
            assert abs(freq - 1 / 7) < 0.02

    def test_replay_determinism(self):
        assert sample_hyperparams(generator(7)) == sample_hyperparams(generator(7))


class TestTrain:
    def test_pure_noise_early_stops_at_noise_floor(self):
        groups = GroupStructure.blocks(4, 5, 0.5)
        spec = DgpSpec(betas=(0.0,) * 4, noise_sd=0.5, n=2000, groups=groups, seed=5)
        ds = make_dataset(spec)
        split = split_four_way(2000, seed=6)
        hp = Hyperparams(max_depth=4, learning_rate=0.1, colsample_bytree=0.5,
                         subsample=0.8)
        model = train(
            ds.features[split.train], ds.target[split.train],
            ds.features[split.val], ds.target[split.val], hp, seed=1,
        )
        assert model.best_iteration < hp.n_estimators_max / 3
        assert abs(-model.val_score - 0.5) < 0.05  # val RMSE near noise sd

    def test_rmse_brackets_reference_range_at_high_rho(self):
        ds, split = _paper_style_dataset(rho=0.9, seed=17)
        hp = Hyperparams(max_depth=6, learning_rate=0.1, colsample_bytree=0.25,
                         subsample=0.8, reg_lambda=1.0, min_child_weight=5.0)
        model = train(
            ds.features[split.train], ds.target[split.train],
            ds.features[split.val], ds.target[split.val], hp, seed=2,
        )
        preds = predict_raw(model, ds.features[split.test])
        rmse = float(np.sqrt(np.mean((preds - ds.target[split.test]) ** 2)))
        assert 0.55 <= rmse <= 0.80

    def test_stumps_drive_train_error_to_zero_on_step_target(self):
        rng = generator(3)
        X = rng.standard_normal((200, 1))
        y = np.where(X[:, 0] >= 0.0, 1.0, -1.0)
        hp = Hyperparams(max_depth=1, learning_rate=0.3, n_estimators_max=500,
                         early_stopping_rounds=0)
        model = train(X, y, X, y, hp, seed=4)
        train_rmse = float(np.sqrt(np.mean((predict_raw(model, X) - y) ** 2)))
        assert train_rmse < 1e-2

    def test_constant_feature_yields_single_leaf_not_error(self):
        X = np.ones((30, 2))
        y = np.arange(30.0)
        hp = Hyperparams(max_depth=3, n_estimators_max=3, early_stopping_rounds=0)
        model = train(X, y, X, y, hp, seed=0)
        assert all(t.n_leaves == 1 for t in model.trees)
        assert np.allclose(predict_raw(model, X), y.mean())

    def test_val_must_be_nonempty(self):
        X, y = _toy_regression()
        with pytest.raises(ValueError, match="non-empty"):
            train(X, y, X[:0], y[:0], Hyperparams(), seed=0)


class TestPredict:
    def test_zero_trees_returns_base_score(self):
        model = single_leaf_model(2.5, n_features=3)
        assert np.allclose(predict_raw(model, np.zeros((4, 3))), 2.5)

    def test_stump_hand_trace(self):
        model = make_stump(0, 0.0, -1.0, 1.0, n_features=2, learning_rate=0.5)
        assert predict_raw(model, np.array([[-3.0, 9.9]]))[0] == -0.5
        assert predict_raw(model, np.array([[3.0, 9.9]]))[0] == 0.5

    def test_matches_independent_per_tree_traversal(self):
        X, y = _toy_regression(seed=5)
        hp = Hyperparams(max_depth=4, learning_rate=0.2, colsample_bytree=0.75,
                         subsample=0.9, n_estimators_max=20, early_stopping_rounds=0)
        model = train(X, y, X[:30], y[:30], hp, seed=6)

        def walk(tree, row):
            node = 0
            while tree.feature[node] >= 0:
                node = (
                    tree.left[node]
                    if row[tree.feature[node]] < tree.threshold[node]
                    else tree.right[node]
                )
            return tree.value[node]

        Xq = generator(8).standard_normal((25, 4))
        expected = model.base_score + model.learning_rate * np.array(
            [sum(walk(t, row) for t in model.trees) for row in Xq]
        )
        assert np.allclose(predict_raw(model, Xq), expected, atol=1e-12)

    def test_column_mismatch_rejected(self):
        model = make_stump(0, 0.0, -1.0, 1.0, n_features=2)
        with pytest.raises(ValueError):
            predict_raw(model, np.zeros((2, 3)))

    def test_classification_predict_is_probability(self):
        rng = generator(9)
        X = rng.standard_normal((400, 3))
        y = (X[:, 0] + 0.3 * rng.standard_normal(400) > 0).astype(float)
        hp = Hyperparams(max_depth=3, learning_rate=0.2, n_estimators_max=40)
        model = train(X[:300], y[:300], X[300:], y[300:], hp,
                      task="binary-classification", seed=1)
        probs = predict(model, X[300:])
        assert np.all((probs > 0) & (probs < 1))
        assert score(model, X[300:], y[300:]) > 0.9


class TestGainImportance:
    def test_single_stump_is_one_hot(self):
        model = make_stump(3, 0.5, -1.0, 1.0, n_features=6)
        assert gain_importance(model).tolist() == [0, 0, 0, 1.0, 0, 0]

    def test_hand_computed_six_row_example(self):
        # y = 2*x0 + x1 on the full factorial 3x2 design; lambda = 0, one
        # round, depth 2, lr 1.  Root gain 49/12 on x0, two child splits on
        # x1 with gain 1/3 each; normalized importance (49/57, 8/57).
        X = np.array([[0, 0], [0, 1], [0, 0], [1, 1], [1, 0], [1, 1]], dtype=float)
        y = 2.0 * X[:, 0] + X[:, 1]
        hp = Hyperparams(max_depth=2, learning_rate=1.0, reg_lambda=0.0,
                         n_estimators_max=1, early_stopping_rounds=0)
        model = train(X, y, X, y, hp, seed=0)
        tree = model.trees[0]
        internal_gains = sorted(tree.gain[tree.feature >= 0].tolist())
        assert np.allclose(internal_gains, [1 / 3, 1 / 3, 49 / 12])
        assert np.allclose(gain_importance(model), [49 / 57, 8 / 57])
        assert np.allclose(predict_raw(model, X), y, atol=1e-12)

    def test_importance_zero_iff_feature_never_split(self):
        X, y = _toy_regression(seed=11)
        hp = Hyperparams(max_depth=3, colsample_bytree=0.5, n_estimators_max=15,
                         early_stopping_rounds=0)
        model = train(X, y, X[:30], y[:30], hp, seed=12)
        used = set()
        for t in model.trees:
            used.update(t.feature[t.feature >= 0].tolist())
        imp = gain_importance(model)
        assert {j for j in range(4) if imp[j] > 0} <= used
        for j in range(4):
            if j not in used:
                assert imp[j] == 0.0

    def test_no_split_model_gives_zero_vector(self):
        model = single_leaf_model(1.0, n_features=3)
        assert gain_importance(model).tolist() == [0.0, 0.0, 0.0]


class TestScore:
    def test_perfect_regression_scores_zero(self):
        model = single_leaf_model(2.0, n_features=1)
        X = np.zeros((5, 1))
        assert score(model, X, np.full(5, 2.0)) == 0.0

    def test_perfectly_separated_classes_auc_one(self):
        model = make_stump(0, 0.0, -2.0, 2.0, n_features=1,
                           task="binary-classification")
        X = np.array([[-1.0], [-2.0], [1.0], [2.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        assert score(model, X, y) == 1.0

    def test_random_predictions_auc_half(self):
        n = 10_000
        rng = generator(13)
        model = make_stump(0, 0.0, -1.0, 1.0, n_features=1,
                           task="binary-classification")
        X = rng.standard_normal((n, 1))
        y = (rng.random(n) < 0.5).astype(float)  # labels independent of X
        assert abs(score(model, X, y) - 0.5) < 0.02

    def test_single_class_auc_undefined(self):
        model = make_stump(0, 0.0, -1.0, 1.0, n_features=1,
                           task="binary-classification")
        with pytest.raises(ValueError, match="single-class"):
            score(model, np.zeros((3, 1)), np.ones(3))


class TestInvariants:
    def test_retrain_is_byte_identical(self):
        X, y = _toy_regression(seed=21)
        hp = Hyperparams(max_depth=5, learning_rate=0.1, colsample_bytree=0.5,
                         subsample=0.7, reg_alpha=0.1, n_estimators_max=25)
        docs = [
            json.dumps(model_to_dict(train(X, y, X[:40], y[:40], hp, seed=33)),
                       sort_keys=True)
            for _ in range(2)
        ]
        assert docs[0] == docs[1]

    def test_serialization_roundtrip_bitexact(self):
        X, y = _toy_regression(seed=22)
        hp = Hyperparams(max_depth=4, n_estimators_max=10)
        model = train(X, y, X[:40], y[:40], hp, seed=1)
        back = model_from_dict(model_to_dict(model))
        assert json.dumps(model_to_dict(back), sort_keys=True) == json.dumps(
            model_to_dict(model), sort_keys=True
        )
        Xq = generator(5).standard_normal((10, 4))
        assert np.array_equal(predict_raw(back, Xq), predict_raw(model, Xq))

    def test_cover_consistency(self):
        X, y = _toy_regression(n=200, seed=23)
        hp = Hyperparams(max_depth=6, subsample=0.8, n_estimators_max=12,
                         early_stopping_rounds=0)
        model = train(X, y, X[:40], y[:40], hp, seed=3)
        for tree in model.trees:
            internal = np.nonzero(tree.feature >= 0)[0]
            for node in internal:
                assert tree.cover[node] == pytest.approx(
                    tree.cover[tree.left[node]] + tree.cover[tree.right[node]],
                    rel=1e-12,
                )

    @pytest.mark.parametrize("lr", [0.05, 0.1, 0.3])
    def test_monotone_training_loss_without_row_sampling(self, lr):
        groups = GroupStructure.blocks(2, 5, 0.9)
        spec = DgpSpec(betas=(2.0, 1.0), n=800, groups=groups, seed=31)
        ds = make_dataset(spec)
        split = split_four_way(800, seed=32)
        X, y = ds.features[split.train], ds.target[split.train]
        hp = Hyperparams(max_depth=4, learning_rate=lr, subsample=1.0,
                         colsample_bytree=0.6, n_estimators_max=40,
                         early_stopping_rounds=0)
        model = train(X, y, ds.features[split.val], ds.target[split.val], hp, seed=7)
        preds = np.full(len(y), model.base_score)
        prev = np.mean((preds - y) ** 2)
        for tree in model.trees:
            preds = preds + model.learning_rate * tree.predict(X)
            loss = np.mean((preds - y) ** 2)
            assert loss <= prev + 1e-9
            prev = loss

    def test_early_stopping_contract(self):
        X, y = _toy_regression(n=400, seed=41)
        hp = Hyperparams(max_depth=3, learning_rate=0.3, n_estimators_max=200,
                         early_stopping_rounds=10)
        model = train(X[:300], y[:300], X[300:], y[300:], hp, seed=8)
        history = np.array(model.val_history)
        assert model.best_iteration == int(np.argmax(history)) + 1
        assert model.val_score == history.max()
        assert len(model.trees) == model.best_iteration

    def test_huge_lambda_shrinks_leaves_to_zero(self):
        X, y = _toy_regression(seed=51)
        hp = Hyperparams(max_depth=3, reg_lambda=1e12, n_estimators_max=5,
                         early_stopping_rounds=0)
        model = train(X, y, X[:30], y[:30], hp, seed=9)
        for tree in model.trees:
            assert np.max(np.abs(tree.value)) < 1e-9
        assert np.allclose(predict_raw(model, X), y.mean(), atol=1e-6)
