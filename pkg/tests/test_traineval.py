import math

import numpy as np
import pytest

import oracles
from polymix import audio, features
from polymix.audio import AudioClip
from polymix.dataset import FeatureStore, INSTRUMENTS
from polymix.errors import ContractError, FormatError, StratificationError, TooShortError
from polymix.nn import PROPOSED, build_model
from polymix.traineval import (ENSEMBLE_PRESETS, PredictionMatrix, Schedule, auc_scores,
                               average_segments, ensemble_average, evaluate,
                               evaluate_predictions, f1_scores, fit, format_summary, lrap,
                               make_folds, predict_track, read_predictions, refresh_bn_stats,
                               simulate_schedule, summarize_folds, train_fold, write_predictions)
from polymix.traineval.evaluation import combine_prediction_files, f1_delta_table

SMALL = PROPOSED.scaled(depths=(4, 4, 8, 8), dense_units=16)


def one_hot(idx, n=11):
    y = np.zeros((len(idx), n), np.uint8)
    y[np.arange(len(idx)), idx] = 1
    return y


# folds --------------------------------------------------------------------

def test_folds_even_and_remainder():
    folds = make_folds(one_hot([0] * 10), 5, seed=0)
    assert np.bincount(folds).tolist() == [2] * 5
    folds = make_folds(one_hot([0] * 11), 5, seed=0)
    assert sorted(np.bincount(folds).tolist()) == [2, 2, 2, 2, 3]


def test_folds_stratified_per_class():
    labels = one_hot(np.repeat(np.arange(11), [5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 23]))
    folds = make_folds(labels, 5, seed=3)
    for c in range(11):
        counts = np.bincount(folds[labels[:, c] == 1], minlength=5)
        assert counts.max() - counts.min() <= 1
    totals = np.bincount(folds, minlength=5)
    assert totals.max() - totals.min() <= 1
    np.testing.assert_array_equal(folds, make_folds(labels, 5, seed=3))


def test_folds_errors():
    with pytest.raises(StratificationError):
        make_folds(one_hot([0] * 4 + [1] * 10), 5)
    with pytest.raises(ContractError):
        make_folds(one_hot([0] * 10), 1)


# schedule -----------------------------------------------------------------

def test_schedule_decreasing_losses():
    trace = simulate_schedule(np.linspace(1.0, 0.5, 20))
    assert len(trace) == 20
    assert all(e["events"] == ["improved"] for e in trace)
    assert trace[5]["lr"] == pytest.approx(1e-4 * 0.9 ** 5)


def test_schedule_flat_from_epoch_3():
    losses = [1.0, 0.9, 0.8, 0.7] + [0.7] * 20
    trace = simulate_schedule(losses)
    reduced = [e["epoch"] for e in trace if "lr_reduced" in e["events"]]
    assert reduced == [8]
    assert trace[-1]["epoch"] == 10 and "stop" in trace[-1]["events"]
    assert trace[-1]["best_epoch"] == 3
    assert trace[9]["lr"] == pytest.approx(1e-4 * 0.9 ** 9 * 0.5)


def test_min_delta_threshold():
    # gains below 1e-4 per epoch never count as improvements
    losses = [1.0] + [1.0 - 1e-5 * k for k in range(1, 12)]
    trace = simulate_schedule(losses)
    assert trace[-1]["epoch"] == 7 and "stop" in trace[-1]["events"]
    assert trace[-1]["best_epoch"] == 0


def tiny_store(n_per_class=6, classes=(0, 3), seed=0):
    rng = np.random.default_rng(seed)
    idx = np.repeat(classes, n_per_class)
    x = rng.random((len(idx), 96, 87)).astype(np.float32) * 0.2
    for i, c in enumerate(idx):
        x[i, 10 * c:10 * c + 10] += 0.8
    return FeatureStore(x, one_hot(idx))


def test_fit_restores_best_and_is_reproducible():
    store = tiny_store()
    sched = Schedule(batch_size=4, base_lr=3e-3, max_epochs=3, seed=1)
    runs = []
    for _ in range(2):
        model = build_model(SMALL, 0)
        history = fit(model, store, store.subset(np.arange(4)), sched)
        runs.append((model.state(), history))
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(runs[0][0][k], runs[1][0][k]) for k in runs[0][0])
    assert runs[0][1][-1]["best_epoch"] in range(3)


def test_train_fold_and_contract():
    store = tiny_store(5)
    folds = make_folds(store, 5, seed=0)
    model, history = train_fold(build_model(SMALL, 0), store, folds, 2,
                                Schedule(batch_size=4, max_epochs=1))
    assert len(history) == 2
    with pytest.raises(ContractError):
        train_fold(model, store, folds, 7)
    with pytest.raises(ContractError):
        fit(model, FeatureStore(np.zeros((0, 96, 87)), np.zeros((0, 11))), None)


def test_refresh_bn_stats_matches_population():
    store = tiny_store(6)
    model = build_model(SMALL, 0)
    refresh_bn_stats(model, store, batch_size=store.count)
    from polymix.nn import layers as L
    bn = next(layer for layer in model.layers if isinstance(layer, L.BatchNorm))
    x = model._prepare(store.features)
    for layer in model.layers:
        if layer is bn:
            break
        x = layer.forward(x, False)
    flat = x.reshape(-1, bn.channels)
    np.testing.assert_allclose(bn.buffers["mean"], flat.mean(axis=0), rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(bn.buffers["var"], flat.var(axis=0), rtol=1e-3, atol=1e-6)
    drops = [layer.rate for layer in model.layers if isinstance(layer, L.Dropout)]
    assert drops and all(r > 0 for r in drops)


# metrics ------------------------------------------------------------------

def test_lrap_hand_cases():
    assert lrap(np.array([[0.9, 0.7, 0.6, 0.4]]), np.array([[1, 0, 1, 0]])) == pytest.approx(5 / 6)
    y = np.zeros((1, 11), np.uint8)
    y[0, [2, 5]] = 1
    assert lrap(np.full((1, 11), 0.3), y) == pytest.approx(2 / 11)
    assert lrap(y.astype(float), y) == 1.0
    with pytest.raises(ContractError):
        lrap(np.zeros((1, 11)), np.zeros((1, 11)))


def test_metrics_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        scores, labels = oracles.random_matrix(rng)
        assert lrap(scores, labels) == float(oracles.lrap_brute(scores, labels))
        expected = oracles.auc_brute(scores, labels)
        if all(e is None for e in expected):
            continue
        per, mean = auc_scores(PredictionMatrix(scores, labels))
        for got, want in zip(per, expected):
            assert (math.isnan(got) and want is None) or got == float(want)


def test_lrap_rank_invariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        scores, labels = oracles.random_matrix(rng)
        a, b = rng.uniform(0.1, 3, (len(scores), 1)), rng.uniform(-1, 1, (len(scores), 1))
        assert lrap(np.exp(a * scores + b), labels) == lrap(scores, labels)


def test_auc_hand_cases():
    pm = PredictionMatrix(np.array([[0.8], [0.4], [0.6], [0.2]]), np.array([[1], [1], [0], [0]]))
    assert auc_scores(pm)[1] == 0.75
    pm = PredictionMatrix(np.full((4, 1), 0.5), np.array([[1], [1], [0], [0]]))
    assert auc_scores(pm)[1] == 0.5
    with pytest.raises(ContractError):
        auc_scores(PredictionMatrix(np.ones((2, 1)), np.ones((2, 1))))


def test_auc_skips_degenerate_classes(caplog):
    labels = one_hot([0, 0, 1, 1])
    per, mean = auc_scores(PredictionMatrix(labels * 0.9 + 0.05, labels))
    assert per[0] == per[1] == 1.0 and all(math.isnan(v) for v in per[2:])
    assert mean == 1.0


def test_f1_cases():
    micro, macro, per = f1_scores(PredictionMatrix(np.array([[0.9, 0.8]]), np.array([[1, 0]])))
    assert micro == pytest.approx(2 / 3)
    assert per.tolist() == [1.0, 0.0] and macro == 0.5
    y = one_hot([0, 3, 5])
    micro, macro, per = f1_scores(PredictionMatrix(y.astype(float), y))
    assert micro == 1.0
    assert per[1] == 0.0 and macro == pytest.approx(3 / 11)
    with pytest.raises(ContractError):
        f1_scores(PredictionMatrix(y.astype(float), y), threshold=1.0)


def test_ensemble_cases():
    y = np.array([[1, 0]])
    a = PredictionMatrix(np.array([[1.0, 0.0]]), y)
    b = PredictionMatrix(np.array([[0.0, 1.0]]), y)
    np.testing.assert_array_equal(ensemble_average([a, b]).scores, [[0.5, 0.5]])
    np.testing.assert_array_equal(ensemble_average([a, a]).scores, a.scores)
    with pytest.raises(ContractError):
        ensemble_average([a, PredictionMatrix(np.array([[1.0, 0.0]]), np.array([[0, 1]]))])
    with pytest.raises(ContractError):
        ensemble_average([a, PredictionMatrix(np.zeros((2, 2)), np.ones((2, 2)))])


def test_ensemble_within_bounds():
    rng = np.random.default_rng(2)
    labels = (rng.random((5, 11)) < 0.3).astype(np.uint8)
    pms = [PredictionMatrix(rng.random((5, 11)), labels) for _ in range(4)]
    avg = ensemble_average(pms).scores
    stack = np.stack([p.scores for p in pms])
    assert np.all(avg >= stack.min(axis=0)) and np.all(avg <= stack.max(axis=0))
    assert ENSEMBLE_PRESETS["combined"] == ("monophonic", "genre", "tempo", "pitch")


# tracks -------------------------------------------------------------------

def noise_track(seconds, seed=0):
    return AudioClip(np.random.default_rng(seed).uniform(-0.3, 0.3, int(seconds * 22050)), 22050)


def test_average_segments():
    np.testing.assert_allclose(average_segments([[0.8, 0.2], [0.6, 0.4]]), [0.7, 0.3])
    with pytest.raises(ContractError):
        average_segments(np.zeros((0, 11)))


def test_predict_track_segments():
    model = build_model(SMALL, 0)
    one = noise_track(1.0)
    direct = model.forward(features.extract(audio.standardize(one))[None])[0]
    np.testing.assert_allclose(predict_track(model, one), direct, rtol=1e-6)
    track = noise_track(5.5, 1)
    segs = audio.segment_clip(audio.standardize(track))
    assert len(segs) == 5
    expected = model.predict(features.extract_many(segs)).astype(np.float64).mean(axis=0)
    np.testing.assert_allclose(predict_track(model, track), expected, rtol=1e-6)
    with pytest.raises(TooShortError):
        predict_track(model, noise_track(0.9))


def test_evaluate_perfect_and_deterministic(tmp_path):
    y = one_hot([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 0])
    y[0, 4] = 1
    pm = PredictionMatrix(y.astype(float), y)
    report = evaluate([pm], None, y)
    assert (report.lrap, report.mean_auc, report.f1_micro, report.f1_macro) == (1, 1, 1, 1)
    assert evaluate([pm], None, y) == report
    assert "LRAP      1.000" in report.table()


def test_evaluate_models_on_tracks():
    model = build_model(SMALL, 0)
    tracks = [noise_track(2.0, s) for s in range(3)]
    y = one_hot([0, 1, 2])
    single = evaluate([model], tracks, y)
    both = evaluate([model, model], tracks, y)
    assert single == both
    assert len(evaluate([model, model], tracks, y, ensemble=False)) == 2


def test_fold_summary_format():
    rng = np.random.default_rng(0)
    y = one_hot([0, 1, 2, 0, 1, 2])
    reports = [evaluate_predictions(PredictionMatrix(rng.random((6, 11)), y)) for _ in range(5)]
    summary = summarize_folds(reports)
    values = [r.lrap for r in reports]
    assert summary["lrap"][0] == pytest.approx(np.mean(values))
    assert summary["lrap"][1] == pytest.approx(np.std(values, ddof=1))
    row = format_summary("combined", summary)
    assert row.startswith("combined | ")
    assert f"{np.mean(values):.3f} ± {np.std(values, ddof=1):.3f}" in row
    delta = f1_delta_table(reports[1], reports[0], "b", "a")
    assert len(delta.splitlines()) == 12


def test_predictions_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    y = one_hot([0, 4, 9])
    pm = PredictionMatrix(rng.random((3, 11)), y)
    write_predictions(tmp_path / "p.csv", ["a", "b", "c"], pm)
    ids, back = read_predictions(tmp_path / "p.csv")
    assert ids == ["a", "b", "c"]
    np.testing.assert_array_equal(back.scores, pm.scores)
    np.testing.assert_array_equal(back.labels, pm.labels)
    header = (tmp_path / "p.csv").read_text().splitlines()[0].split(",")
    assert header[1:12] == [f"score_{c}" for c in INSTRUMENTS]
    write_predictions(tmp_path / "q.csv", ["a", "b", "c"], PredictionMatrix(1 - pm.scores, y))
    _, avg = combine_prediction_files([tmp_path / "p.csv", tmp_path / "q.csv"])
    np.testing.assert_allclose(avg.scores, 0.5)
    (tmp_path / "bad.csv").write_text("x,y\n")
    with pytest.raises(FormatError):
        read_predictions(tmp_path / "bad.csv")
