"""JSON artifacts for fitted preprocess states and trained models."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from p2pcredit.exceptions import DataError
from p2pcredit.linear import LinearParams, LinearSVMGD, LogisticRegressionGD, logistic_predict, svm_decision
from p2pcredit.neural import MLPClassifierGD, MlpParams, mlp_forward
from p2pcredit.preprocess import PreprocessState

MODEL_SCHEMA_VERSION = 1


def dumps(doc) -> str:
    """Canonical JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(doc))


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_state(state: PreprocessState, path) -> str:
    doc = state.to_dict()
    doc["state_id"] = state.state_id
    write_json(path, doc)
    return state.state_id


def load_state(path) -> PreprocessState:
    doc = read_json(path)
    state = PreprocessState.from_dict(doc)
    if doc.get("state_id") not in (None, state.state_id):
        raise DataError(f"{path}: stored state_id does not match its contents")
    return state


def _model_kind(estimator) -> str:
    if isinstance(estimator, LogisticRegressionGD):
        return "logistic"
    if isinstance(estimator, LinearSVMGD):
        return "svm"
    if isinstance(estimator, MLPClassifierGD):
        return "mlp"
    raise DataError(f"cannot serialize estimator of type {type(estimator).__name__}")


def build_artifact(estimator, state: PreprocessState, *, family: str, phase: int,
                   hyperparameters: dict, state_file: str = "preprocess_state.json",
                   schema_map: dict | None = None) -> dict:
    """Model document paired with *state* by its identifier."""
    kind = _model_kind(estimator)
    params = estimator.params_.to_dict()
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "model_kind": kind,
        "family": family,
        "phase": phase,
        "hyperparameters": hyperparameters,
        "params": params,
        "score_threshold": float(estimator.score_threshold),
        "score_kind": "margin" if kind == "svm" else "probability",
        "feature_names": state.feature_names,
        "preprocess_state_id": state.state_id,
        "preprocess_state_file": state_file,
        "schema_map": schema_map or {},
    }
    doc["artifact_id"] = artifact_id(doc)
    return doc


def artifact_id(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "artifact_id"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return "model-" + hashlib.sha256(canon.encode()).hexdigest()[:16]


def load_artifact(path, state_path=None) -> tuple[dict, PreprocessState]:
    """Load a model document and its preprocess state, checking they pair up."""
    doc = read_json(path)
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported model schema_version {doc.get('schema_version')!r}")
    if doc.get("artifact_id") != artifact_id(doc):
        raise DataError(f"{path}: artifact_id does not match its contents")
    if state_path is None:
        state_path = os.path.join(os.path.dirname(os.path.abspath(path)), doc["preprocess_state_file"])
    state = load_state(state_path)
    if state.state_id != doc["preprocess_state_id"]:
        raise DataError(
            f"preprocess state {state.state_id} does not match the model's "
            f"{doc['preprocess_state_id']}"
        )
    return doc, state


def artifact_scores(doc: dict, X) -> np.ndarray:
    """Probabilities (logistic, MLP) or margins (SVM) from a model document."""
    kind = doc["model_kind"]
    if kind in ("logistic", "svm"):
        params = LinearParams.from_dict(doc["params"])
        return logistic_predict(params, X) if kind == "logistic" else svm_decision(params, X)
    if kind == "mlp":
        return mlp_forward(MlpParams.from_dict(doc["params"]), X)
    raise DataError(f"unknown model kind {kind!r}")
