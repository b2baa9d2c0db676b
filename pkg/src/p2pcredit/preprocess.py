"""Imputation, scaling, one-hot encoding, time-ordered splits and rebalancing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from p2pcredit.exceptions import DataError
from p2pcredit.ingest import SampleSet, format_month

STATE_SCHEMA_VERSION = 1


def drop_low_coverage(samples: SampleSet, threshold: float = 0.70) -> SampleSet:
    """Remove columns whose non-missing fraction is strictly below *threshold*."""
    low = {c.name: c.coverage for c in samples.columns if c.coverage < threshold}
    if not low:
        return samples
    keep_num = [j for j, n in enumerate(samples.numeric_names) if n not in low]
    keep_cat = {k: v for k, v in samples.categorical.items() if k not in low}
    if not keep_num and not keep_cat:
        raise DataError(f"every column has coverage below {threshold}: {low}")
    return SampleSet(
        numeric=samples.numeric[:, keep_num],
        numeric_names=[samples.numeric_names[j] for j in keep_num],
        categorical=keep_cat,
        dates=samples.dates,
        labels=samples.labels,
        dropped_columns=samples.dropped_columns + sorted(low.items()),
        provenance=dict(samples.provenance),
    )


@dataclass(frozen=True)
class PreprocessState:
    """Training-set statistics used to encode any sample set.

    Immutable once fitted; ``state_id`` is a content hash so artifacts can
    check they are paired with the state they were trained against.
    """

    numeric_names: tuple[str, ...]
    column_means: tuple[float, ...]
    scaler_mean: tuple[float, ...]
    scaler_std: tuple[float, ...]
    vocab: dict[str, tuple[str, ...]]
    dropped_columns: tuple[tuple[str, float], ...] = ()

    @property
    def categorical_names(self) -> tuple[str, ...]:
        return tuple(self.vocab)

    @property
    def feature_names(self) -> list[str]:
        names = list(self.numeric_names)
        for col, tokens in self.vocab.items():
            names.extend(f"{col}={t}" for t in tokens)
        return names

    @property
    def n_features(self) -> int:
        return len(self.numeric_names) + sum(len(v) for v in self.vocab.values())

    def to_dict(self) -> dict:
        return {
            "schema_version": STATE_SCHEMA_VERSION,
            "numeric_names": list(self.numeric_names),
            "column_means": list(self.column_means),
            "scaler_mean": list(self.scaler_mean),
            "scaler_std": list(self.scaler_std),
            "vocab": {k: list(v) for k, v in self.vocab.items()},
            "dropped_columns": [[n, c] for n, c in self.dropped_columns],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PreprocessState":
        version = doc.get("schema_version")
        if version != STATE_SCHEMA_VERSION:
            raise DataError(f"unsupported preprocess state schema_version {version!r}")
        return cls(
            numeric_names=tuple(doc["numeric_names"]),
            column_means=tuple(float(x) for x in doc["column_means"]),
            scaler_mean=tuple(float(x) for x in doc["scaler_mean"]),
            scaler_std=tuple(float(x) for x in doc["scaler_std"]),
            vocab={k: tuple(v) for k, v in doc["vocab"].items()},
            dropped_columns=tuple((n, float(c)) for n, c in doc.get("dropped_columns", [])),
        )

    @property
    def state_id(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return "pp-" + hashlib.sha256(canon.encode()).hexdigest()[:16]


def fit_impute_scale(train: SampleSet) -> PreprocessState:
    """Fit mean imputation, standard scaling and vocabularies on *train* only."""
    if train.n_rows == 0:
        raise DataError("cannot fit preprocessing on an empty training set")
    X = train.numeric
    observed = ~np.isnan(X)
    empty = [n for j, n in enumerate(train.numeric_names) if not observed[:, j].any()]
    if empty:
        raise DataError(f"numeric columns entirely missing in training rows: {empty}")
    # Constancy is decided exactly on the observed values: the mean of
    # identical values can round away from the value and leave a spurious
    # tiny std that blows up the scaled column.
    if X.shape[1]:
        constant = np.nanmax(X, axis=0) == np.nanmin(X, axis=0)
        means = np.where(constant, np.nanmax(X, axis=0), np.nanmean(X, axis=0))
    else:
        constant, means = np.zeros(0, dtype=bool), np.zeros(0)
    filled = np.where(observed, X, means)
    mu = np.where(constant, means, filled.mean(axis=0))
    # population std, taken on magnitude-normalized columns so squared
    # deviations of very small values do not underflow into subnormals
    mag = np.abs(filled).max(axis=0) if filled.size else np.ones(X.shape[1])
    mag = np.where(mag > 0, mag, 1.0)
    sd = (filled / mag).std(axis=0) * mag
    sd = np.where(constant | (sd == 0), 1.0, sd)
    vocab = {
        name: tuple(sorted({t for t in tokens if t is not None}))
        for name, tokens in train.categorical.items()
    }
    return PreprocessState(
        numeric_names=tuple(train.numeric_names),
        column_means=tuple(float(v) for v in means),
        scaler_mean=tuple(float(v) for v in mu),
        scaler_std=tuple(float(v) for v in sd),
        vocab=vocab,
        dropped_columns=tuple(train.dropped_columns),
    )


def apply(state: PreprocessState, samples: SampleSet) -> tuple[np.ndarray, np.ndarray]:
    """Encode *samples* with a fitted state; returns ``(X, y)``.

    Missing numeric cells take the training mean, numeric columns are
    standardized, and categorical tokens are one-hot encoded over the
    training vocabulary (unseen or missing tokens give an all-zero block).
    """
    pos = {n: j for j, n in enumerate(samples.numeric_names)}
    absent = [n for n in state.numeric_names if n not in pos]
    absent += [n for n in state.vocab if n not in samples.categorical]
    if absent:
        raise DataError(f"sample set lacks columns required by the preprocess state: {absent}")
    n = samples.n_rows
    cols = [pos[name] for name in state.numeric_names]
    X_num = samples.numeric[:, cols] if cols else np.zeros((n, 0))
    means = np.asarray(state.column_means)
    X_num = np.where(np.isnan(X_num), means, X_num)
    X_num = (X_num - np.asarray(state.scaler_mean)) / np.asarray(state.scaler_std)
    blocks = [X_num]
    for name, tokens in state.vocab.items():
        lookup = {t: i for i, t in enumerate(tokens)}
        block = np.zeros((n, len(tokens)))
        for r, tok in enumerate(samples.categorical[name]):
            i = lookup.get(tok)
            if i is not None:
                block[r, i] = 1.0
        blocks.append(block)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return np.ascontiguousarray(X), samples.labels.copy()


class SampleSetEncoder(TransformerMixin, BaseEstimator):
    """Transformer wrapper so a :class:`SampleSet` can feed an estimator.

    ``fit`` learns a :class:`PreprocessState` from the training rows only;
    ``transform`` never refits.
    """

    def fit(self, samples: SampleSet, y=None):
        self.state_ = fit_impute_scale(samples)
        self.n_features_out_ = self.state_.n_features
        return self

    def transform(self, samples: SampleSet) -> np.ndarray:
        check_is_fitted(self, "state_")
        return apply(self.state_, samples)[0]

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "state_")
        return np.asarray(self.state_.feature_names, dtype=object)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    cutoff: int | None = None  # month ordinal, inclusive upper bound

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise DataError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")


def time_split(samples: SampleSet, spec: SplitSpec) -> tuple[SampleSet, SampleSet]:
    """Date-ordered split: the earliest ``floor(f * N)`` rows train, the rest test.

    Rows dated after ``spec.cutoff`` are removed first. Ties on date keep
    input order, so the split is a pure function of the input.
    """
    keep = np.arange(samples.n_rows)
    if spec.cutoff is not None:
        keep = keep[samples.dates <= spec.cutoff]
    order = keep[np.argsort(samples.dates[keep], kind="stable")]
    n_train = int(np.floor(spec.train_fraction * len(order)))
    if n_train == 0:
        raise DataError("empty train split")
    if n_train == len(order):
        raise DataError("empty test split")
    train, test = samples.take(order[:n_train]), samples.take(order[n_train:])
    cut = {"train_last": format_month(train.dates.max()), "test_first": format_month(test.dates.min())}
    train.provenance = {**samples.provenance, "split": cut}
    test.provenance = {**samples.provenance, "split": cut}
    return train, test


def _require_both_classes(labels) -> tuple[int, int]:
    labels = np.asarray(labels)
    n1 = int(np.count_nonzero(labels == 1))
    n0 = int(np.count_nonzero(labels == 0))
    if n0 == 0 or n1 == 0:
        missing = 0 if n0 == 0 else 1
        raise DataError(f"class {missing} is absent; both classes are required")
    return n0, n1


def downsample_indices(labels, seed: int) -> np.ndarray:
    """Sorted row indices keeping every minority row and an equal-size
    uniform draw (without replacement) from the majority class."""
    labels = np.asarray(labels)
    n0, n1 = _require_both_classes(labels)
    if n0 == n1:
        return np.arange(len(labels))
    majority = 0 if n0 > n1 else 1
    maj_idx = np.flatnonzero(labels == majority)
    min_idx = np.flatnonzero(labels != majority)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(maj_idx, size=len(min_idx), replace=False)
    return np.sort(np.concatenate([min_idx, chosen]))


def downsample_majority(train: SampleSet, seed: int) -> SampleSet:
    return train.take(downsample_indices(train.labels, seed))


def class_weights(labels) -> tuple[float, float]:
    """Balanced weights ``N / (2 N_c)`` for classes 0 and 1."""
    n0, n1 = _require_both_classes(labels)
    n = n0 + n1
    return n / (2.0 * n0), n / (2.0 * n1)


def sample_weights(labels, weighting: str | None = "balanced") -> np.ndarray:
    """Per-row weights: balanced class weights, or all ones for ``None``."""
    labels = np.asarray(labels)
    if weighting in (None, "none"):
        return np.ones(len(labels))
    if weighting != "balanced":
        raise ValueError(f"unknown class weighting {weighting!r}")
    w0, w1 = class_weights(labels)
    return np.where(labels == 1, w1, w0)
