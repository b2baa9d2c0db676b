"""Weighted logistic regression and linear SVM trained by (sub)gradient descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from p2pcredit.exceptions import DataError
from p2pcredit.preprocess import class_weights
from p2pcredit.training import TrainConfig, penalty_grad, penalty_value, run_descent

LOGISTIC = "logistic"
HINGE_SVM = "svm"


@dataclass
class LinearParams:
    weights: np.ndarray
    bias: float
    penalty: str = "l2"
    alpha: float = 0.0
    model_kind: str = LOGISTIC

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "penalty": self.penalty,
            "alpha": float(self.alpha),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearParams":
        return cls(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=float(doc["bias"]),
            penalty=doc["penalty"],
            alpha=float(doc["alpha"]),
            model_kind=doc["model_kind"],
        )


def _margins(params: LinearParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(params.weights):
        raise DataError(
            f"design matrix has {X.shape[-1]} columns, model expects {len(params.weights)}"
        )
    return X @ params.weights + params.bias


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DataError("inputs contain NaN or infinite values")


def logistic_predict(params: LinearParams, X) -> np.ndarray:
    """P(y = 1 | x) = sigmoid(w.x + b)."""
    if params.model_kind != LOGISTIC:
        raise DataError("logistic_predict needs a logistic model")
    return expit(_margins(params, X))


def svm_decision(params: LinearParams, X) -> np.ndarray:
    """Raw margins w.x + b; class 1 iff margin >= 0."""
    if params.model_kind != HINGE_SVM:
        raise DataError("svm_decision needs an SVM model")
    return _margins(params, X)


def _weights_or_ones(y, sample_weights):
    if sample_weights is None:
        return np.ones(len(y))
    sw = np.asarray(sample_weights, dtype=np.float64)
    if np.any(sw < 0):
        raise DataError("sample weights must be non-negative")
    return sw


def logistic_loss_grad(params: LinearParams, X, y, sample_weights=None):
    """Weighted mean cross-entropy plus penalty, and its gradient.

    Returns ``(loss, grad_w, grad_b)``; the bias is not penalized.
    """
    y = np.asarray(y, dtype=np.float64)
    sw = _weights_or_ones(y, sample_weights)
    _check_finite(X, y, sw, params.weights)
    z = _margins(params, X)
    total = sw.sum()
    # -log sigmoid(z) = logaddexp(0, -z)
    nll = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    loss = float(sw @ nll) / total + penalty_value([params.weights], params.penalty, params.alpha)
    r = sw * (expit(z) - y) / total
    grad_w = np.asarray(X).T @ r + penalty_grad(params.weights, params.penalty, params.alpha)
    return loss, grad_w, float(r.sum())


def svm_loss_grad(params: LinearParams, X, y, sample_weights=None):
    """Weighted mean hinge loss plus penalty, with subgradient 0 at the kink.

    *y* uses {0, 1}; it is mapped to {-1, +1} internally.
    """
    y = np.asarray(y, dtype=np.float64)
    sw = _weights_or_ones(y, sample_weights)
    _check_finite(X, y, sw, params.weights)
    ypm = 2.0 * y - 1.0
    slack = 1.0 - ypm * _margins(params, X)
    total = sw.sum()
    loss = float(sw @ np.maximum(slack, 0.0)) / total
    loss += penalty_value([params.weights], params.penalty, params.alpha)
    r = -sw * ypm * (slack > 0) / total
    grad_w = np.asarray(X).T @ r + penalty_grad(params.weights, params.penalty, params.alpha)
    return loss, grad_w, float(r.sum())


_LOSSES = {LOGISTIC: logistic_loss_grad, HINGE_SVM: svm_loss_grad}


def _row_weights(y, weighting, reference_labels):
    if weighting in (None, "none"):
        return np.ones(len(y))
    w0, w1 = class_weights(reference_labels)
    return np.where(np.asarray(y) == 1, w1, w0)


def train_linear(model_kind, alpha, penalty, X_train, y_train, config: TrainConfig | None = None,
                 X_val=None, y_val=None):
    """Train from zero initialization; returns ``(LinearParams, trace)``.

    Early stopping watches the unpenalized weighted data loss on the
    validation rows (the training rows when no validation set is given).
    Validation rows are weighted with the class weights of the training set.
    """
    config = config or TrainConfig()
    if model_kind not in _LOSSES:
        raise ValueError(f"unknown model kind {model_kind!r}")
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    sw_train = _row_weights(y_train, config.class_weighting, y_train)
    if X_val is None:
        X_val, y_val = X_train, y_train
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val)
    sw_val = _row_weights(y_val, config.class_weighting, y_train)
    loss_fn = _LOSSES[model_kind]
    p = X_train.shape[1]

    def make(ps, a=0.0):
        return LinearParams(ps[0], float(ps[1][0]), penalty, a, model_kind)

    def batch_grad(ps, idx, epoch, batch):
        _, gw, gb = loss_fn(make(ps), X_train[idx], y_train[idx], sw_train[idx])
        return [gw, np.array([gb])]

    def objective(ps):
        return loss_fn(make(ps, alpha), X_train, y_train, sw_train)[0]

    def val_loss(ps):
        return loss_fn(make(ps), X_val, y_val, sw_val)[0]

    init = [np.zeros(p), np.zeros(1)]
    best, trace = run_descent(init, [True, False], batch_grad, objective, val_loss,
                              len(y_train), config, penalty, alpha)
    return make(best, alpha), trace


# --------------------------------------------------------------------------
# estimators


class _LinearGD(ClassifierMixin, BaseEstimator):
    _model_kind = LOGISTIC
    score_threshold = 0.5

    def __init__(self, alpha=1e-3, penalty="l2", learning_rate=0.01, batch_size=256,
                 max_epochs=100, patience=5, class_weight="balanced", random_state=0):
        self.alpha = alpha
        self.penalty = penalty
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.class_weight = class_weight
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
            class_weighting=self.class_weight,
        )

    def _encode(self, y):
        return np.searchsorted(self.classes_, y)

    def fit(self, X, y, eval_set=None):
        """Fit on ``(X, y)``; ``eval_set=(X_val, y_val)`` drives early stopping."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise DataError(f"binary labels required, got classes {self.classes_.tolist()}")
        X_val = y_val = None
        if eval_set is not None:
            X_val, y_val = check_X_y(*eval_set, dtype=np.float64)
            y_val = self._encode(y_val)
        self.params_, self.trace_ = train_linear(
            self._model_kind, self.alpha, self.penalty, X, self._encode(y),
            self._train_config(), X_val, y_val,
        )
        self.n_features_in_ = X.shape[1]
        self.coef_ = self.params_.weights.reshape(1, -1)
        self.intercept_ = np.array([self.params_.bias])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return _margins(self.params_, X)

    def ranking_scores(self, X):
        """Scores used for AUC and thresholding at ``score_threshold``."""
        return self.decision_function(X)

    def predict(self, X):
        scores = self.ranking_scores(X)
        return self.classes_[(scores >= self.score_threshold).astype(int)]


class LogisticRegressionGD(_LinearGD):
    """L1/L2-penalized logistic regression fitted by mini-batch gradient descent.

    Parameters
    ----------
    alpha : float
        Penalty strength added to the mean data loss.
    penalty : {"l2", "l1"}
    learning_rate, batch_size, max_epochs, patience : optimizer settings.
    class_weight : {"balanced", None}
        ``"balanced"`` weights rows by ``N / (2 N_c)``.
    random_state : int
        Seed for mini-batch shuffling.
    """

    _model_kind = LOGISTIC
    score_threshold = 0.5

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        p1 = logistic_predict(self.params_, check_array(X, dtype=np.float64))
        return np.column_stack([1.0 - p1, p1])

    def ranking_scores(self, X):
        return self.predict_proba(X)[:, 1]


class LinearSVMGD(_LinearGD):
    """Linear SVM (hinge loss) fitted by mini-batch subgradient descent.

    Same parameters as :class:`LogisticRegressionGD`. Scores are raw margins,
    thresholded at 0 (a margin of exactly 0 predicts class 1).
    """

    _model_kind = HINGE_SVM
    score_threshold = 0.0
