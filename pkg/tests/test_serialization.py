import json

import numpy as np
import pytest

from p2pcredit import DataError, LinearSVMGD, LogisticRegressionGD, MLPClassifierGD
from p2pcredit.ingest import SampleSet
from p2pcredit.preprocess import apply, fit_impute_scale
from p2pcredit.serialization import (
    artifact_scores,
    build_artifact,
    dumps,
    load_artifact,
    load_state,
    save_state,
    write_json,
)
from p2pcredit.tuning import scores_of


@pytest.fixture
def fitted():
    rng = np.random.default_rng(0)
    numeric = rng.normal(size=(200, 3))
    numeric[rng.random(numeric.shape) < 0.05] = np.nan
    purpose = np.array(rng.choice(["car", "other", "small_business"], 200), dtype=object)
    labels = (rng.random(200) < 0.4).astype(int)
    s = SampleSet(numeric, ["a", "b", "c"], {"purpose": purpose}, np.arange(200), labels)
    state = fit_impute_scale(s)
    X, y = apply(state, s)
    return state, X, y


@pytest.mark.parametrize("estimator, kind", [
    (LogisticRegressionGD(max_epochs=5), "logistic"),
    (LinearSVMGD(max_epochs=5), "svm"),
    (MLPClassifierGD(hidden_layer_sizes=(5, 3), max_epochs=5), "mlp"),
])
def test_artifact_round_trip(tmp_path, fitted, estimator, kind):
    state, X, y = fitted
    estimator.fit(X, y)
    save_state(state, tmp_path / "preprocess_state.json")
    doc = build_artifact(estimator, state, family=kind, phase=2, hyperparameters={"x": 1})
    write_json(tmp_path / "model.json", doc)
    loaded, loaded_state = load_artifact(tmp_path / "model.json")
    assert loaded["model_kind"] == kind
    assert loaded["artifact_id"].startswith("model-")
    assert loaded_state.state_id == state.state_id
    X2, _ = apply(loaded_state, SampleSet(np.zeros((0, 3)), ["a", "b", "c"],
                                          {"purpose": np.zeros(0, dtype=object)},
                                          np.zeros(0), np.zeros(0)))
    assert X2.shape == (0, X.shape[1])
    np.testing.assert_allclose(artifact_scores(loaded, X), scores_of(estimator, X), rtol=0, atol=1e-12)
    assert loaded["score_kind"] == ("margin" if kind == "svm" else "probability")


def test_state_mismatch_refused(tmp_path, fitted):
    state, X, y = fitted
    est = LogisticRegressionGD(max_epochs=3).fit(X, y)
    write_json(tmp_path / "model.json",
               build_artifact(est, state, family="logistic", phase=1, hyperparameters={}))
    other = fit_impute_scale(SampleSet(np.ones((3, 3)) * [[1], [2], [3]], ["a", "b", "c"],
                                       {"purpose": np.array(["car"] * 3, dtype=object)},
                                       np.arange(3), np.array([0, 1, 0])))
    save_state(other, tmp_path / "preprocess_state.json")
    with pytest.raises(DataError, match="does not match"):
        load_artifact(tmp_path / "model.json")


def test_tampered_artifact_refused(tmp_path, fitted):
    state, X, y = fitted
    est = LogisticRegressionGD(max_epochs=3).fit(X, y)
    save_state(state, tmp_path / "preprocess_state.json")
    doc = build_artifact(est, state, family="logistic", phase=1, hyperparameters={})
    doc["params"]["bias"] += 1.0
    write_json(tmp_path / "model.json", doc)
    with pytest.raises(DataError, match="artifact_id"):
        load_artifact(tmp_path / "model.json")


def test_tampered_state_refused(tmp_path, fitted):
    state, _, _ = fitted
    save_state(state, tmp_path / "s.json")
    doc = json.load(open(tmp_path / "s.json"))
    doc["scaler_mean"][0] += 1.0
    write_json(tmp_path / "s.json", doc)
    with pytest.raises(DataError):
        load_state(tmp_path / "s.json")


def test_canonical_json():
    assert dumps({"b": 1, "a": [0.1, 2]}) == '{\n  "a": [\n    0.1,\n    2\n  ],\n  "b": 1\n}\n'
    with pytest.raises(ValueError):
        dumps({"x": float("nan")})


def test_floats_round_trip_exactly(tmp_path, fitted):
    state, _, _ = fitted
    save_state(state, tmp_path / "s.json")
    assert load_state(tmp_path / "s.json") == state
