"""Grid search on a time-ordered fit/validation split with a selectable objective."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone
from sklearn.model_selection import ParameterGrid

from p2pcredit.exceptions import DataError, TrainingDivergedError
from p2pcredit.metrics import EvalReport, recall_report

OBJECTIVES = ("recall_macro", "auc")
ALPHA_GRID = tuple(10.0 ** k for k in range(-5, 6))


def scores_of(estimator, X) -> np.ndarray:
    if hasattr(estimator, "ranking_scores"):
        return estimator.ranking_scores(X)
    if hasattr(estimator, "predict_proba"):
        return estimator.predict_proba(X)[:, 1]
    return estimator.decision_function(X)


def threshold_of(estimator) -> float:
    if hasattr(estimator, "score_threshold"):
        return estimator.score_threshold
    return 0.5 if hasattr(estimator, "predict_proba") else 0.0


def evaluate(estimator, X, y, split_name="", model_id="") -> EvalReport:
    return recall_report(scores_of(estimator, X), y, threshold_of(estimator), split_name, model_id)


def regularization_strength(params: dict) -> float:
    for key in ("alpha", "l2_alpha", "dropout"):
        if key in params:
            return float(params[key])
    return 0.0


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass
class GridCell:
    index: int
    params: dict
    status: str = "ok"
    error: str = ""
    fit_report: EvalReport | None = None
    val_report: EvalReport | None = None
    estimator: object = field(default=None, repr=False, compare=False)

    def objective_value(self, objective: str) -> float:
        return getattr(self.val_report, objective)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "params": {k: _jsonable(v) for k, v in self.params.items()},
            "status": self.status,
            "error": self.error,
            "fit_report": self.fit_report.to_dict() if self.fit_report else None,
            "val_report": self.val_report.to_dict() if self.val_report else None,
        }


@dataclass
class GridResult:
    cells: list[GridCell]
    objective: str
    best: int
    test_report: EvalReport | None = None

    @property
    def best_cell(self) -> GridCell:
        return self.cells[self.best]

    @property
    def best_estimator(self):
        return self.best_cell.estimator

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "best": self.best,
            "best_params": {k: _jsonable(v) for k, v in self.best_cell.params.items()},
            "test_report": self.test_report.to_dict() if self.test_report else None,
            "cells": [c.to_dict() for c in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """One row per cell: hyperparameters, fit scores, validation scores."""
        keys = sorted({k for c in self.cells for k in c.params})
        metrics = ("auc", "recall_class0", "recall_class1", "recall_macro")
        header = ["index", "status", *keys]
        header += [f"fit_{m}" for m in metrics] + [f"val_{m}" for m in metrics] + ["selected"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for c in self.cells:
            row = [c.index, c.status]
            row += [json.dumps(_jsonable(c.params[k])) if k in c.params else "" for k in keys]
            for rep in (c.fit_report, c.val_report):
                row += [repr(getattr(rep, m)) if rep else "" for m in metrics]
            row.append(int(c.index == self.best))
            w.writerow(row)
        return buf.getvalue()


def _run_cell(index, estimator, params, fit, val):
    est = clone(estimator).set_params(**params)
    cell = GridCell(index, dict(params))
    try:
        est.fit(fit[0], fit[1], eval_set=val)
        cell.fit_report = evaluate(est, fit[0], fit[1], "fit", f"cell-{index}")
        cell.val_report = evaluate(est, val[0], val[1], "validation", f"cell-{index}")
    except (TrainingDivergedError, FloatingPointError) as exc:
        cell.status, cell.error = "failed", str(exc)
        return cell
    if not (np.isfinite(cell.val_report.auc) and np.isfinite(cell.val_report.recall_macro)):
        cell.status, cell.error = "failed", "non-finite validation scores"
    cell.estimator = est
    return cell


def select_best(cells: list[GridCell], objective: str) -> int:
    """Index of the best successful cell.

    Ties on the objective go to the larger regularization strength, then to
    the earlier cell.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")
    ok = [c for c in cells if c.status == "ok"]
    if not ok:
        raise DataError("every grid cell failed")
    best = max(ok, key=lambda c: (c.objective_value(objective),
                                  regularization_strength(c.params), -c.index))
    return best.index


def grid_search(estimator, param_grid, fit, val, test=None, objective="recall_macro",
                n_jobs=1) -> GridResult:
    """Train one clone of *estimator* per grid cell on ``fit`` and score on ``val``.

    ``fit``, ``val`` and ``test`` are ``(X, y)`` pairs. Only the selected cell
    is scored on ``test``. Cells that diverge are kept in the result with
    status ``"failed"`` and never selected.
    """
    try:
        grid = list(ParameterGrid(param_grid))
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid hyperparameter grid: {exc}") from exc
    if not grid:
        raise DataError("empty hyperparameter grid")
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")
    if n_jobs == 1:
        cells = [_run_cell(i, estimator, p, fit, val) for i, p in enumerate(grid)]
    else:
        cells = Parallel(n_jobs=n_jobs)(
            delayed(_run_cell)(i, estimator, p, fit, val) for i, p in enumerate(grid)
        )
    result = GridResult(cells, objective, select_best(cells, objective))
    if test is not None:
        result.test_report = evaluate(result.best_estimator, test[0], test[1], "test",
                                      f"cell-{result.best}")
    return result


def compare_objectives(result: GridResult) -> dict:
    """Which cell each objective would select from the same trained grid."""
    summary = {}
    for objective in OBJECTIVES:
        idx = select_best(result.cells, objective)
        cell = result.cells[idx]
        rep = cell.val_report
        summary[objective] = {
            "index": idx,
            "params": {k: _jsonable(v) for k, v in cell.params.items()},
            "val_auc": rep.auc,
            "val_recall_class0": rep.recall_class0,
            "val_recall_class1": rep.recall_class1,
            "val_recall_macro": rep.recall_macro,
        }
    a, r = summary["auc"], summary["recall_macro"]
    summary["same_selection"] = a["index"] == r["index"]
    summary["recall_macro_gap"] = r["val_recall_macro"] - a["val_recall_macro"]
    return summary
