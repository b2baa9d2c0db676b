"""AUC and thresholded recall reports."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from p2pcredit.exceptions import DataError


def _class_counts(labels):
    labels = np.asarray(labels)
    n1 = int(np.count_nonzero(labels == 1))
    n0 = int(np.count_nonzero(labels == 0))
    if n0 + n1 != len(labels):
        raise DataError("labels must be 0 or 1")
    return n0, n1


def auc(scores, labels) -> float:
    """Area under the ROC curve (Mann-Whitney U / (n_pos * n_neg)).

    Ties count one half. One stable sort; tied scores share their average rank.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n0, n1 = _class_counts(labels)
    if n0 == 0 or n1 == 0:
        raise DataError(f"AUC is undefined with a single class (n0={n0}, n1={n1})")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    n = len(s)
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], n]
    # average 1-based rank of each tie group, broadcast back to rows
    group_rank = (starts + ends + 1) / 2.0
    ranks = np.repeat(group_rank, ends - starts)
    rank_sum = float(ranks[labels[order] == 1].sum())
    u = rank_sum - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


@dataclass
class EvalReport:
    auc: float
    recall_class0: float
    recall_class1: float
    recall_macro: float
    confusion: dict
    n_rows: int
    split_name: str = ""
    model_id: str = ""
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(**doc)


def recall_report(scores, labels, threshold: float = 0.5, split_name: str = "",
                  model_id: str = "") -> EvalReport:
    """Per-class recall, recall macro and AUC with prediction ``score >= threshold``.

    For SVM margins pass ``threshold=0``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n0, n1 = _class_counts(labels)
    if n0 == 0:
        raise DataError("recall undefined: class 0 is absent from the labels")
    if n1 == 0:
        raise DataError("recall undefined: class 1 is absent from the labels")
    pred = scores >= threshold
    tp = int(np.count_nonzero(pred & (labels == 1)))
    fn = n1 - tp
    fp = int(np.count_nonzero(pred & (labels == 0)))
    tn = n0 - fp
    r1 = tp / n1
    r0 = tn / n0
    return EvalReport(
        auc=auc(scores, labels),
        recall_class0=r0,
        recall_class1=r1,
        recall_macro=(r0 + r1) / 2.0,
        confusion={"tn": tn, "fp": fp, "fn": fn, "tp": tp},
        n_rows=len(labels),
        split_name=split_name,
        model_id=model_id,
        threshold=float(threshold),
    )
