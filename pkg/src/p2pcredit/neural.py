"""Feed-forward networks: tanh hidden layers, sigmoid output, inverted dropout.

``layer_sizes == (p, 1)`` is the linear classifier; ``(p, n1, n2, 1)`` the
two-hidden-layer network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from p2pcredit.exceptions import DataError
from p2pcredit.preprocess import class_weights
from p2pcredit.training import TrainConfig, run_descent

MAX_DROPOUT = 0.30
DEFAULT_NODE_GRID = {"n1": (5, 10, 15, 20, 30), "n2": (1, 3, 5, 10)}


@dataclass
class MlpParams:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[l] has shape (layer_sizes[l], layer_sizes[l+1])
    biases: list[np.ndarray]
    dropout_rate: float = 0.0
    l2_alpha: float = 0.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        self.layer_sizes = sizes
        if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise DataError(f"invalid layer sizes {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise DataError("weights/biases do not match layer_sizes")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise DataError(f"layer {l} has shape {W.shape}/{b.shape}, expected "
                                f"{(sizes[l], sizes[l + 1])}")
        if not 0.0 <= self.dropout_rate <= MAX_DROPOUT:
            raise DataError(f"dropout_rate must lie in [0, {MAX_DROPOUT}]")
        if self.l2_alpha < 0:
            raise DataError("l2_alpha must be non-negative")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "dropout_rate": float(self.dropout_rate),
            "l2_alpha": float(self.l2_alpha),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpParams":
        return cls(
            layer_sizes=tuple(doc["layer_sizes"]),
            weights=[np.asarray(W, dtype=np.float64).reshape(a, b) for W, a, b in
                     zip(doc["weights"], doc["layer_sizes"][:-1], doc["layer_sizes"][1:])],
            biases=[np.asarray(b, dtype=np.float64) for b in doc["biases"]],
            dropout_rate=float(doc["dropout_rate"]),
            l2_alpha=float(doc["l2_alpha"]),
        )


def init_params(layer_sizes, seed: int, dropout_rate=0.0, l2_alpha=0.0) -> MlpParams:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng([seed, 0])
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(layer_sizes), weights, biases, dropout_rate, l2_alpha)


@dataclass(frozen=True)
class TrainMode:
    """Identifies one mini-batch so its dropout masks can be re-derived."""

    seed: int
    epoch: int
    batch: int


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer (after dropout for hidden outputs)
    hidden: list[np.ndarray]  # tanh outputs before dropout
    masks: list[np.ndarray]  # scaled masks, one per hidden layer
    logits: np.ndarray = field(default=None)


def dropout_masks(params: MlpParams, n_rows: int, mode: TrainMode) -> list[np.ndarray]:
    """Scaled keep-masks (values 0 or 1/(1-rate)), one per hidden layer.

    Masks are a pure function of (seed, epoch, batch, layer).
    """
    rate = params.dropout_rate
    masks = []
    for l, width in enumerate(params.layer_sizes[1:-1]):
        if rate == 0.0:
            masks.append(np.ones((n_rows, width)))
            continue
        rng = np.random.default_rng([mode.seed, mode.epoch, mode.batch, l])
        keep = rng.random((n_rows, width)) >= rate
        masks.append(keep / (1.0 - rate))
    return masks


def mlp_forward(params: MlpParams, X, mode: TrainMode | None = None, masks=None):
    """Class-1 probabilities.

    With ``mode=None`` (inference) no dropout is applied and only the
    probabilities are returned. In train mode the result is
    ``(probabilities, ForwardCache)``; *masks* overrides the derived masks.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.layer_sizes[0]:
        raise DataError(f"input has {X.shape[-1]} columns, network expects {params.layer_sizes[0]}")
    train = mode is not None or masks is not None
    if train and masks is None:
        masks = dropout_masks(params, len(X), mode)
    a = X
    inputs, hidden = [], []
    for l in range(params.n_hidden):
        inputs.append(a)
        h = np.tanh(a @ params.weights[l] + params.biases[l])
        hidden.append(h)
        a = h * masks[l] if train else h
    inputs.append(a)
    logits = (a @ params.weights[-1] + params.biases[-1])[:, 0]
    p = expit(logits)
    if not train:
        return p
    return p, ForwardCache(inputs, hidden, list(masks), logits)


def mlp_loss(params: MlpParams, y, sample_weights, logits) -> float:
    y = np.asarray(y, dtype=np.float64)
    sw = np.ones(len(y)) if sample_weights is None else np.asarray(sample_weights, np.float64)
    nll = y * np.logaddexp(0.0, -logits) + (1.0 - y) * np.logaddexp(0.0, logits)
    l2 = 0.5 * params.l2_alpha * sum(float(np.sum(W * W)) for W in params.weights)
    return float(sw @ nll) / sw.sum() + l2


def mlp_backprop(params: MlpParams, X, y, sample_weights, cache: ForwardCache,
                 include_penalty: bool = True):
    """Gradients of weighted cross-entropy (+ L2 on weights) with masks held fixed.

    Returns ``(loss, grad_weights, grad_biases)``.
    """
    y = np.asarray(y, dtype=np.float64)
    sw = np.ones(len(y)) if sample_weights is None else np.asarray(sample_weights, np.float64)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(sw))):
        raise DataError("inputs contain NaN or infinite values")
    total = sw.sum()
    delta = (sw * (expit(cache.logits) - y) / total)[:, None]
    gW = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        gW[l] = cache.inputs[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l > 0:
            da = delta @ params.weights[l].T
            h = cache.hidden[l - 1]
            delta = da * cache.masks[l - 1] * (1.0 - h * h)
    if include_penalty:
        gW = [g + params.l2_alpha * W for g, W in zip(gW, params.weights)]
    loss = mlp_loss(params, y, sw, cache.logits) if include_penalty else None
    return loss, gW, gb


def _unpack(ps, template: MlpParams) -> MlpParams:
    k = len(template.weights)
    return MlpParams(template.layer_sizes, ps[:k], ps[k:], template.dropout_rate, template.l2_alpha)


def train_mlp(layer_sizes, dropout_rate, l2_alpha, X_train, y_train,
              config: TrainConfig | None = None, X_val=None, y_val=None):
    """Backpropagation with mini-batch descent and early stopping.

    *layer_sizes* is the full tuple ``(p, ..., 1)``. Returns ``(MlpParams, trace)``.
    """
    config = config or TrainConfig(class_weighting=None)
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    if X_val is None:
        X_val, y_val = X_train, y_train
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val)
    if config.class_weighting in (None, "none"):
        sw_train, sw_val = np.ones(len(y_train)), np.ones(len(y_val))
    else:
        w0, w1 = class_weights(y_train)
        sw_train = np.where(y_train == 1, w1, w0)
        sw_val = np.where(y_val == 1, w1, w0)
    template = init_params(layer_sizes, config.seed, dropout_rate, l2_alpha)
    k = len(template.weights)

    def batch_grad(ps, idx, epoch, batch):
        net = _unpack(ps, template)
        _, cache = mlp_forward(net, X_train[idx], TrainMode(config.seed, epoch, batch))
        _, gW, gb = mlp_backprop(net, X_train[idx], y_train[idx], sw_train[idx], cache,
                                 include_penalty=False)
        return gW + gb

    def logits_of(net, X):
        a = X
        for l in range(net.n_hidden):
            a = np.tanh(a @ net.weights[l] + net.biases[l])
        return (a @ net.weights[-1] + net.biases[-1])[:, 0]

    def objective(ps):
        net = _unpack(ps, template)
        return mlp_loss(net, y_train, sw_train, logits_of(net, X_train))

    def val_loss(ps):
        net = _unpack(ps, template)
        return mlp_loss(MlpParams(net.layer_sizes, net.weights, net.biases, net.dropout_rate, 0.0),
                        y_val, sw_val, logits_of(net, X_val))

    best, trace = run_descent(template.weights + template.biases, [True] * k + [False] * k,
                              batch_grad, objective, val_loss, len(y_train), config,
                              "l2", l2_alpha)
    return _unpack(best, template), trace


class MLPClassifierGD(ClassifierMixin, BaseEstimator):
    """Tanh network with a sigmoid output, trained by backpropagation.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        ``()`` gives the linear classifier, ``(n1, n2)`` the deep network.
    dropout : float
        Inverted-dropout rate on hidden outputs, within [0, 0.3].
    l2_alpha : float
        L2 strength on weight matrices (biases unpenalized).
    """

    score_threshold = 0.5

    def __init__(self, hidden_layer_sizes=(5, 3), dropout=0.2, l2_alpha=0.0, learning_rate=0.01,
                 batch_size=256, max_epochs=100, patience=5, class_weight=None, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.dropout = dropout
        self.l2_alpha = l2_alpha
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.class_weight = class_weight
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise DataError(f"binary labels required, got classes {self.classes_.tolist()}")
        X_val = y_val = None
        if eval_set is not None:
            X_val, y_val = check_X_y(*eval_set, dtype=np.float64)
            y_val = np.searchsorted(self.classes_, y_val)
        if len(tuple(self.hidden_layer_sizes)) > 2:
            raise DataError("at most two hidden layers are supported")
        sizes = (X.shape[1], *tuple(self.hidden_layer_sizes), 1)
        config = TrainConfig(self.learning_rate, self.batch_size, self.max_epochs, self.patience,
                             self.random_state, self.class_weight)
        self.params_, self.trace_ = train_mlp(sizes, self.dropout, self.l2_alpha, X,
                                              np.searchsorted(self.classes_, y), config,
                                              X_val, y_val)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        p1 = mlp_forward(self.params_, check_array(X, dtype=np.float64))
        return np.column_stack([1.0 - p1, p1])

    def ranking_scores(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return self.classes_[(self.ranking_scores(X) >= self.score_threshold).astype(int)]


def node_grid(n1_values=DEFAULT_NODE_GRID["n1"], n2_values=DEFAULT_NODE_GRID["n2"]):
    """All ``(n1, n2)`` hidden-layer combinations, n1-major."""
    return [(a, b) for a in n1_values for b in n2_values]
