from __future__ import annotations

import math

import numpy as np
import pytest
from helpers import T0, linear_dataset, make_reading, mlr_artifact, random_artifact

from edgefleet.errors import (
    CorruptArtifact,
    EmptyInput,
    FormatVersionMismatch,
    InsufficientData,
    LengthMismatch,
)
from edgefleet.models import (
    Algorithm,
    ELMConfig,
    ModelArtifact,
    RFRConfig,
    RFRParams,
    ScalerParams,
    SVRConfig,
    TrainingConfig,
    Tree,
    apply_scaler,
    chronological_test_rmse,
    contiguous_folds,
    cross_validate,
    deserialize,
    fit_scaler,
    fit_svr,
    predict,
    rmse,
    select_best,
    serialize,
    train,
    verify,
)
from edgefleet.models.forest import fit_rfr
from edgefleet.models.linear import fit_mlr, svr_objective
from edgefleet.models.validation import CVResult

# --------------------------------------------------------------------------- scaler


def test_scaler_two_point_case():
    s = fit_scaler(np.array([[1.0] * 6, [3.0] * 6]))
    assert s.means == (2.0,) * 6
    assert s.std_devs == (1.0,) * 6


def test_scaler_constant_column_is_clamped():
    X = np.random.default_rng(0).normal(size=(20, 6))
    X[:, 3] = 2.97
    s = fit_scaler(X)
    assert s.std_devs[3] == 1.0
    assert np.all(s.transform(X)[:, 3] == 0.0)


def test_scaler_standardizes_generated_data():
    from edgefleet.simulator import PROFILES, generate_room_series

    readings = generate_room_series(PROFILES["A10"], 3, T0, 500 * 5 * 60_000)
    X = np.array([r.features().values for r in readings])
    Z = fit_scaler(X).transform(X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(Z.var(axis=0) - 1.0) < 1e-9)


def test_scaler_rejects_empty_input():
    with pytest.raises(EmptyInput):
        fit_scaler(np.empty((0, 6)))


def test_apply_scaler_by_hand():
    s = ScalerParams((2.0,) * 6, (1.0,) * 6)
    assert np.all(apply_scaler(s, [2.0] * 6) == 0.0)
    x = [3.0, -1.0, 0.5, 7.0, 1e3, 2.0]
    assert np.array_equal(apply_scaler(ScalerParams.identity(), x), np.array(x))
    assert np.all(apply_scaler(ScalerParams((10.0,) * 6, (2.0,) * 6), [14.0] * 6) == 2.0)


def test_scaler_accepts_feature_vectors():
    vectors = [make_reading(aq=a).features() for a in (40.0, 60.0)]
    assert fit_scaler(vectors).means[0] == 50.0


# --------------------------------------------------------------------------- rmse


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([3, 5], [1, 1]) == pytest.approx(math.sqrt(10))
    a = np.random.default_rng(1).normal(size=50)
    assert rmse(a + 2.5, a) == pytest.approx(2.5, abs=1e-12)


def test_rmse_errors():
    with pytest.raises(LengthMismatch):
        rmse([1, 2], [1])
    with pytest.raises(EmptyInput):
        rmse([], [])


# --------------------------------------------------------------------------- regressors


def test_mlr_recovers_single_feature_line():
    X = np.zeros((50, 6))
    X[:, 0] = np.linspace(-3, 3, 50)
    y = 2 * X[:, 0] + 1
    p = train(Algorithm.MLR, X, y)
    assert np.max(np.abs(np.array(p.weights) - [2, 0, 0, 0, 0, 0])) < 1e-6
    assert abs(p.intercept - 1) < 1e-6


def test_mlr_collinear_features_do_not_raise():
    rng = np.random.default_rng(0)
    x = rng.normal(size=40)
    X = np.column_stack([x, x, x, np.zeros(40), x, x])
    p = fit_mlr(X, 3 * x + 2)
    assert rmse(p.predict(X), 3 * x + 2) < 1e-6


@pytest.mark.parametrize("algo", list(Algorithm))
def test_training_is_deterministic(algo):
    X, y, _, _ = linear_dataset(120, seed=2, noise=1.0)
    Xs = fit_scaler(X).transform(X)
    cfg = TrainingConfig(rfr=RFRConfig(n_trees=5))
    assert train(algo, Xs, y, cfg, seed=9) == train(algo, Xs, y, cfg, seed=9)


def test_training_needs_enough_samples():
    X, y, _, _ = linear_dataset(9)
    with pytest.raises(InsufficientData):
        train(Algorithm.MLR, X, y)
    X, y, _, _ = linear_dataset(40)
    with pytest.raises(InsufficientData):
        train(Algorithm.ELM, X, y)  # fewer rows than hidden units


def test_rfr_beats_global_mean_on_parabola():
    rng = np.random.default_rng(3)
    X = np.zeros((500, 6))
    X[:, 0] = rng.uniform(-1, 1, 500)
    X[:, 1:] = rng.normal(size=(500, 5))
    y = X[:, 0] ** 2
    p = train(Algorithm.RFR, X, y, seed=1)
    baseline = float(np.sqrt(np.mean((y - y.mean()) ** 2)))
    assert rmse(p.predict(X), y) < baseline


def test_rfr_trees_are_valid_and_bounded():
    X, y, _, _ = linear_dataset(300, noise=2.0)
    p = fit_rfr(X, y, RFRConfig(n_trees=4, max_depth=3, min_leaf=5), seed=0)
    for t in p.trees:
        assert t.n_nodes <= 2**4 - 1
        inner = t.feature >= 0
        assert np.all(t.left[inner] > np.arange(t.n_nodes)[inner])
        assert np.all(t.right[inner] > np.arange(t.n_nodes)[inner])


def test_forest_prediction_is_mean_of_trees():
    trees = tuple(Tree.stump(0, 0.5, v, v + 100) for v in (4.0, 6.0, 8.0))
    forest = RFRParams(trees, 3, 1, 1, 1, 0)
    art = ModelArtifact(0, Algorithm.RFR, ScalerParams.identity(), forest, T0, (0, T0), 0.0, 0.0, "A10")
    x = [0.1, 0, 0, 0, 0, 0]
    assert predict(art, x) == 6.0
    assert predict(art, x) == np.mean([t.predict(np.array([x]))[0] for t in trees])


def test_tree_rejects_bad_structure():
    with pytest.raises(ValueError):
        Tree(np.array([0, -1]), np.zeros(2), np.array([0, -1]), np.array([1, -1]), np.zeros(2))
    with pytest.raises(ValueError):
        Tree(np.array([-1]), np.zeros(1), np.array([1]), np.array([-1]), np.zeros(1))


def test_svr_best_objective_never_increases():
    X, y, _, _ = linear_dataset(200, seed=4, noise=3.0)
    Xs = fit_scaler(X).transform(X)
    params, history = fit_svr(Xs, y, SVRConfig(), seed=0)
    assert len(history) == 200
    assert history[-1] <= history[0]
    assert np.all(np.diff(history) <= 0)
    lam = 1.0 / (SVRConfig().C * len(y))
    final = svr_objective(Xs, y, np.array(params.weights), params.intercept, 0.1, lam)
    assert final == pytest.approx(history[-1])


def test_svr_fits_linear_signal():
    X, y, _, _ = linear_dataset(400, seed=5, noise=0.5)
    Xs = fit_scaler(X).transform(X)
    p = train(Algorithm.SVR, Xs, y)
    assert rmse(p.predict(Xs), y) < 0.25 * np.std(y)


def test_elm_shape_and_output_bias():
    X, y, _, _ = linear_dataset(200, seed=6)
    Xs = fit_scaler(X).transform(X)
    p = train(Algorithm.ELM, Xs, y + 1000.0, TrainingConfig(elm=ELMConfig(hidden_size=16)))
    assert p.output_weights.shape == (16,)
    assert p.input_weights.shape == (16, 6)
    assert np.all(np.abs(p.input_weights) <= 1)
    # without the output bias the 1000 offset could not be reached by 16 tanh units
    assert rmse(p.predict(Xs), y + 1000.0) < 0.3 * np.std(y)


# --------------------------------------------------------------------------- predict


def test_linear_forward_by_hand():
    art = mlr_artifact(weights=(2, 0, 0, 0, 0, 0), intercept=1)
    assert predict(art, [3, 0, 0, 0, 0, 0]) == 7.0
    assert predict(art, make_reading(aq=3.0).features()) == 7.0


def test_predict_is_pure():
    art = random_artifact(np.random.default_rng(0), Algorithm.ELM)
    x = [50.0, 120.0, 38.0, 3.0, 1012.0, 21.5]
    assert predict(art, x) == predict(art, x)


# --------------------------------------------------------------------------- cross-validation


def test_folds_partition_indices():
    folds = contiguous_folds(100, 10)
    assert [len(f) for f in folds] == [10] * 10
    joined = np.concatenate(folds)
    assert np.array_equal(joined, np.arange(100))


def test_folds_are_contiguous_with_uneven_sizes():
    folds = contiguous_folds(23, 5)
    assert [len(f) for f in folds] == [5, 5, 5, 4, 4]
    assert all(np.all(np.diff(f) == 1) for f in folds)


def test_cv_exact_on_noiseless_linear_data():
    X, y, _, _ = linear_dataset(300, seed=7)
    assert cross_validate(Algorithm.MLR, X, y, 10).cv_rmse < 1e-6


def test_two_fold_cv_matches_manual_fits():
    # each half must hold the 10-sample training minimum, so the halves have 20 rows
    rng = np.random.default_rng(12)
    X = rng.normal(size=(40, 6))
    y = X[:, 0] + 0.3 * rng.normal(size=40)
    res = cross_validate(Algorithm.MLR, X, y, k=2)
    manual = []
    for test_idx, train_idx in ((slice(0, 20), slice(20, 40)), (slice(20, 40), slice(0, 20))):
        s = fit_scaler(X[train_idx])
        p = fit_mlr(s.transform(X[train_idx]), y[train_idx])
        manual.append(rmse(p.predict(s.transform(X[test_idx])), y[test_idx]))
    assert res.fold_rmses == tuple(manual)
    assert res.cv_rmse == np.mean(manual)


def test_two_training_rows_are_below_the_minimum():
    X = np.zeros((4, 6))
    X[:, 0] = [1.0, 2.0, 4.0, 7.0]
    with pytest.raises(InsufficientData):
        cross_validate(Algorithm.MLR, X, X[:, 0], k=2)


def test_cv_rejects_too_few_samples():
    X, y, _, _ = linear_dataset(5)
    with pytest.raises(InsufficientData):
        cross_validate(Algorithm.MLR, X, y, k=10)


def test_select_best_tie_break_prefers_mlr():
    r = CVResult(5.0, (5.0,))
    assert select_best({Algorithm.RFR: r, Algorithm.ELM: r, Algorithm.MLR: r}) is Algorithm.MLR
    assert select_best({Algorithm.RFR: CVResult(4.9, ()), Algorithm.MLR: r}) is Algorithm.RFR
    assert select_best({Algorithm.ELM: r, Algorithm.SVR: r}) is Algorithm.SVR


def test_chronological_test_split():
    X, y, _, _ = linear_dataset(200, seed=8)
    assert chronological_test_rmse(Algorithm.MLR, X, y) < 1e-6


# --------------------------------------------------------------------------- artifacts


@pytest.mark.parametrize("algo", list(Algorithm))
def test_artifact_round_trip(algo):
    rng = np.random.default_rng(11)
    art = random_artifact(rng, algo)
    back = deserialize(serialize(art))
    X = rng.normal(50, 30, (100, 6))
    assert np.array_equal(back.predict_many(X), art.predict_many(X))
    assert back.params == art.params
    assert (back.version, back.room, back.training_window) == (art.version, art.room, art.training_window)


def test_artifact_header_layout():
    text = serialize(mlr_artifact(version=7)).decode()
    head = text.split("\n---\n")[0].splitlines()
    assert head[0] == "format_version: 1"
    assert [line.split(":")[0] for line in head] == [
        "format_version", "algorithm", "version", "room", "trained_at",
        "window_start", "window_end", "cv_rmse", "test_rmse", "checksum",
    ]


def test_flipped_checksum_is_corrupt():
    data = serialize(mlr_artifact())
    text = data.decode()
    line = next(l for l in text.splitlines() if l.startswith("checksum: "))
    digit = line[-1]
    flipped = text.replace(line, line[:-1] + ("0" if digit != "0" else "1"))
    with pytest.raises(CorruptArtifact):
        deserialize(flipped.encode())
    with pytest.raises(CorruptArtifact):
        verify(flipped.encode())


def test_bit_rot_in_body_is_corrupt():
    data = bytearray(serialize(mlr_artifact()))
    data[-5] = ord("9") if data[-5] != ord("9") else ord("8")
    with pytest.raises(CorruptArtifact):
        deserialize(bytes(data))


def test_unknown_format_version():
    data = serialize(mlr_artifact()).replace(b"format_version: 1", b"format_version: 999")
    with pytest.raises(FormatVersionMismatch):
        deserialize(data)


def test_artifact_invariants():
    with pytest.raises(ValueError):
        ModelArtifact(0, Algorithm.MLR, ScalerParams.identity(), mlr_artifact().params, T0, (T0, T0), 0, 0, "A10")
    with pytest.raises(ValueError):
        ModelArtifact(0, Algorithm.MLR, ScalerParams.identity(), mlr_artifact().params, T0, (0, T0), -1, 0, "A10")
    with pytest.raises(ValueError):
        ModelArtifact(0, Algorithm.SVR, ScalerParams.identity(), mlr_artifact().params, T0, (0, T0), 0, 0, "A10")
