"""End-to-end runners for the acceptance (phase 1) and default (phase 2) tasks.

Each runner writes its outputs to a directory: the model artifact and its
preprocess state, a JSON report, the per-cell grid CSV and the parse
summaries. Everything written is a deterministic function of the inputs,
the configuration and the seeds.
"""

from __future__ import annotations

import contextlib
import copy
import csv
import io
import os
from dataclasses import dataclass

import numpy as np
import yaml

from p2pcredit.exceptions import DataError, StageError
from p2pcredit.ingest import (
    ACCEPTED_SCHEMA,
    REJECTED_SCHEMA,
    ParseSummary,
    SampleSet,
    build_phase1,
    build_phase2,
    normalize_token,
    parse_accepted,
    parse_cutoff,
    parse_rejected,
    phase1_unlabeled,
)
from p2pcredit.linear import LinearSVMGD, LogisticRegressionGD
from p2pcredit.neural import MLPClassifierGD, MlpParams, node_grid
from p2pcredit.preprocess import SplitSpec, apply, downsample_majority, drop_low_coverage, fit_impute_scale, time_split
from p2pcredit.serialization import (
    artifact_scores,
    build_artifact,
    dumps,
    load_artifact,
    save_state,
    write_json,
)
from p2pcredit.stats import monthly_stats, suggest_cutoff
from p2pcredit.tuning import ALPHA_GRID, compare_objectives, grid_search, scores_of

FAMILIES = ("logistic", "svm", "mlp-linear", "mlp-deep")
SCOPES = ("train_and_test", "test_only")

DEFAULTS = {
    "data": {
        "accepted": None,
        "rejected": None,
        "accepted_schema": {},
        "rejected_schema": {},
    },
    "out_dir": "runs/default",
    "seed": 0,
    "cutoff": None,
    "coverage_threshold": 0.70,
    "selection_fraction": 0.80,
    "n_jobs": 1,
    "cohort": {"token": "small_business", "scope": None},
    "phase1": {
        "family": "logistic",
        "train_fraction": 0.75,
        "objective": "recall_macro",
        "grid": None,
        "downsample": False,
        "numeric_only": False,
        "train": {"learning_rate": 0.01, "batch_size": 256, "max_epochs": 100,
                  "patience": 5, "class_weighting": "balanced"},
    },
    "phase2": {
        "family": "logistic",
        "train_fraction": 0.90,
        "objective": "recall_macro",
        "grid": None,
        "downsample": True,
        "numeric_only": False,
        "dropout": 0.20,
        "l2_alpha": 0.0,
        "train": {"learning_rate": 0.01, "batch_size": 256, "max_epochs": 100,
                  "patience": 5, "class_weighting": None},
    },
    "synthetic": {},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("grid", "synthetic"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _coerce(text: str):
    return yaml.safe_load(text)


def set_key(doc: dict, dotted: str, value) -> None:
    """Assign ``doc["a"]["b"] = value`` for ``dotted == "a.b"``."""
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


@dataclass
class RunConfig:
    """Validated run configuration (a nested dict with defaults filled in)."""

    doc: dict

    @classmethod
    def from_dict(cls, doc: dict | None) -> "RunConfig":
        merged = _merge(DEFAULTS, doc or {})
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        base = os.path.dirname(os.path.abspath(path))
        for key in ("accepted", "rejected"):
            p = doc.get("data", {}).get(key)
            if p and not os.path.isabs(p):
                doc["data"][key] = os.path.join(base, p)
        for dotted, value in (overrides or {}).items():
            set_key(doc, dotted, value)
        return cls.from_dict(doc)

    def __getitem__(self, key):
        return self.doc[key]

    def validate(self):
        for phase in ("phase1", "phase2"):
            fam = self.doc[phase]["family"]
            if fam not in FAMILIES:
                raise DataError(f"{phase}.family must be one of {FAMILIES}, got {fam!r}")
        if self.doc["phase1"]["family"].startswith("mlp"):
            raise DataError("neural networks are only used for phase 2")
        scope = self.doc["cohort"].get("scope")
        if scope not in (None, *SCOPES):
            raise DataError(f"cohort.scope must be one of {SCOPES} or null, got {scope!r}")
        self.cutoff  # raises on bad format

    @property
    def cutoff(self):
        return parse_cutoff(self.doc.get("cutoff"))

    @property
    def accepted_schema(self):
        return {**ACCEPTED_SCHEMA, **self.doc["data"]["accepted_schema"]}

    @property
    def rejected_schema(self):
        return {**REJECTED_SCHEMA, **self.doc["data"]["rejected_schema"]}

    def with_overrides(self, overrides: dict) -> "RunConfig":
        doc = copy.deepcopy(self.doc)
        for dotted, value in overrides.items():
            set_key(doc, dotted, value)
        return RunConfig.from_dict(doc)


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (DataError, FileNotFoundError, ValueError, KeyError) as exc:
        raise StageError(name, exc) from exc


# --------------------------------------------------------------------------
# loading


@dataclass
class LoadedData:
    phase1: SampleSet | None
    phase2: SampleSet | None
    accepted_summary: ParseSummary
    rejected_summary: ParseSummary | None
    accepted_records: list
    rejected_records: list


def load_data(cfg: RunConfig, need_rejected: bool = True) -> LoadedData:
    data = cfg["data"]
    if not data.get("accepted"):
        raise StageError("ingest", "data.accepted is not configured")
    acc_summary = ParseSummary()
    rej_summary = None
    with stage("ingest"):
        accepted = list(parse_accepted(data["accepted"], cfg.accepted_schema, acc_summary))
        rejected = []
        if need_rejected:
            if not data.get("rejected"):
                raise DataError("data.rejected is not configured")
            rej_summary = ParseSummary()
            rejected = list(parse_rejected(data["rejected"], cfg.rejected_schema, rej_summary))
    return LoadedData(None, None, acc_summary, rej_summary, accepted, rejected)


def _phase1_set(loaded: LoadedData) -> SampleSet:
    if loaded.phase1 is None:
        with stage("build_phase1"):
            loaded.phase1 = build_phase1(loaded.accepted_records, loaded.rejected_records)
    return loaded.phase1


def _phase2_set(loaded: LoadedData) -> SampleSet:
    if loaded.phase2 is None:
        with stage("build_phase2"):
            loaded.phase2 = build_phase2(loaded.accepted_records)
    return loaded.phase2


# --------------------------------------------------------------------------
# models


def make_estimator(family: str, phase_cfg: dict, seed: int):
    train = phase_cfg["train"]
    common = dict(
        learning_rate=float(train["learning_rate"]),
        batch_size=int(train["batch_size"]),
        max_epochs=int(train["max_epochs"]),
        patience=int(train["patience"]),
        class_weight=train.get("class_weighting"),
        random_state=int(seed),
    )
    if family == "logistic":
        return LogisticRegressionGD(**common)
    if family == "svm":
        return LinearSVMGD(**common)
    if family == "mlp-linear":
        return MLPClassifierGD(hidden_layer_sizes=(), dropout=0.0,
                               l2_alpha=float(phase_cfg.get("l2_alpha", 0.0)), **common)
    if family == "mlp-deep":
        return MLPClassifierGD(hidden_layer_sizes=(5, 3), dropout=float(phase_cfg.get("dropout", 0.2)),
                               l2_alpha=float(phase_cfg.get("l2_alpha", 0.0)), **common)
    raise DataError(f"unknown model family {family!r}")


def default_grid(family: str) -> dict:
    if family in ("logistic", "svm"):
        return {"alpha": list(ALPHA_GRID), "penalty": ["l2"]}
    if family == "mlp-linear":
        return {"l2_alpha": [10.0]}
    return {"hidden_layer_sizes": node_grid()}


def _grid(family: str, grid):
    grid = copy.deepcopy(grid) if grid else default_grid(family)
    if "hidden_layer_sizes" in grid:
        grid["hidden_layer_sizes"] = [tuple(h) for h in grid["hidden_layer_sizes"]]
    return grid


# --------------------------------------------------------------------------
# task runner


def _split_summary(name, s: SampleSet) -> dict:
    from p2pcredit.ingest import format_month

    return {
        "split": name,
        "rows": int(s.n_rows),
        "class0": int(np.count_nonzero(s.labels == 0)),
        "class1": int(np.count_nonzero(s.labels == 1)),
        "first_month": format_month(s.dates.min()) if s.n_rows else None,
        "last_month": format_month(s.dates.max()) if s.n_rows else None,
    }


def _without_categoricals(s: SampleSet) -> SampleSet:
    return SampleSet(s.numeric, s.numeric_names, {}, s.dates, s.labels, s.dropped_columns,
                     s.provenance)


def run_task(samples: SampleSet, cfg: RunConfig, phase: int, out_dir, *,
             cohort_scope: str | None = None, cohort_token: str | None = None,
             extra: dict | None = None) -> dict:
    """Coverage filter, splits, preprocessing, grid search, test scoring, artifacts."""
    pcfg = cfg[f"phase{phase}"]
    family = pcfg["family"]
    seed = int(cfg["seed"])
    os.makedirs(out_dir, exist_ok=True)
    token = normalize_token(cohort_token) if cohort_token else None

    with stage("preprocess"):
        samples = drop_low_coverage(samples, float(cfg["coverage_threshold"]))
        if pcfg.get("numeric_only"):
            samples = _without_categoricals(samples)
        cohort_share = None
        if token is not None:
            if "purpose" not in samples.categorical:
                raise DataError("cohort filtering needs the purpose column")
            mask = samples.cohort_mask(token)
            if not mask.any():
                raise DataError(f"cohort token {token!r} does not occur in the data")
            cohort_share = float(mask.mean())
            if cohort_scope == "train_and_test":
                samples = samples.take(mask)
        train, test = time_split(samples, SplitSpec(float(pcfg["train_fraction"]), cfg.cutoff))
        fit, val = time_split(train, SplitSpec(float(cfg["selection_fraction"])))
        if pcfg.get("downsample"):
            fit = downsample_majority(fit, seed)
        if token is not None and cohort_scope == "test_only":
            test = test.take(test.cohort_mask(token))
            if test.n_rows == 0:
                raise DataError(f"no {token!r} rows in the test period")
        state = fit_impute_scale(fit)
        X_fit, y_fit = apply(state, fit)
        X_val, y_val = apply(state, val)
        X_test, y_test = apply(state, test)

    with stage("grid_search"):
        estimator = make_estimator(family, pcfg, seed)
        grid = _grid(family, pcfg.get("grid"))
        result = grid_search(estimator, grid, (X_fit, y_fit), (X_val, y_val), (X_test, y_test),
                             objective=pcfg["objective"], n_jobs=int(cfg["n_jobs"]))
        comparison = compare_objectives(result)

    with stage("write_outputs"):
        best = result.best_estimator
        state_id = save_state(state, os.path.join(out_dir, "preprocess_state.json"))
        hyper = {k: (list(v) if isinstance(v, tuple) else v) for k, v in best.get_params().items()}
        schema = cfg.accepted_schema if phase == 2 else {
            "accepted": cfg.accepted_schema, "rejected": cfg.rejected_schema}
        artifact = build_artifact(best, state, family=family, phase=phase, hyperparameters=hyper,
                                  schema_map=schema)
        write_json(os.path.join(out_dir, "model.json"), artifact)
        with open(os.path.join(out_dir, "grid_cells.csv"), "w", encoding="utf-8") as fh:
            fh.write(result.to_csv())
        reports = {
            "fit": result.best_cell.fit_report.to_dict(),
            "validation": result.best_cell.val_report.to_dict(),
            "test": result.test_report.to_dict(),
        }
        for rep in reports.values():
            rep["model_id"] = artifact["artifact_id"]
        report = {
            "phase": phase,
            "family": family,
            "objective": pcfg["objective"],
            "seed": seed,
            "cohort": {"token": token, "scope": cohort_scope, "share": cohort_share},
            "model_id": artifact["artifact_id"],
            "preprocess_state_id": state_id,
            "best_params": result.to_dict()["best_params"],
            "dropped_columns": [list(c) for c in state.dropped_columns],
            "splits": [_split_summary("fit", fit), _split_summary("validation", val),
                       _split_summary("test", test)],
            "reports": reports,
            "objective_comparison": comparison,
            "grid": result.to_dict(),
            "provenance": samples.provenance,
        }
        if extra:
            report.update(extra)
        write_json(os.path.join(out_dir, "report.json"), report)
    return report


def _write_summaries(loaded: LoadedData, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    text = loaded.accepted_summary.to_text()
    if loaded.rejected_summary is not None:
        text += "\n" + loaded.rejected_summary.to_text()
    with open(os.path.join(out_dir, "parse_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)


def _cohort_args(cfg: RunConfig):
    scope = cfg["cohort"].get("scope")
    return (scope, cfg["cohort"].get("token")) if scope else (None, None)


def run_phase1(cfg: RunConfig, loaded: LoadedData | None = None, out_dir=None) -> dict:
    """Acceptance model: both CSVs, 75/25 time split, class-weighted training."""
    loaded = loaded or load_data(cfg, need_rejected=True)
    out_dir = out_dir or os.path.join(cfg["out_dir"], "phase1")
    _write_summaries(loaded, out_dir)
    scope, token = _cohort_args(cfg)
    return run_task(_phase1_set(loaded), cfg, 1, out_dir, cohort_scope=scope, cohort_token=token)


def run_phase2(cfg: RunConfig, loaded: LoadedData | None = None, out_dir=None) -> dict:
    """Default model on accepted loans: 90/10 time split, downsampled training rows."""
    loaded = loaded or load_data(cfg, need_rejected=False)
    out_dir = out_dir or os.path.join(cfg["out_dir"], "phase2")
    _write_summaries(loaded, out_dir)
    scope, token = _cohort_args(cfg)
    return run_task(_phase2_set(loaded), cfg, 2, out_dir, cohort_scope=scope, cohort_token=token,
                    extra={"build": loaded.phase2.provenance})


def run_cohort_suite(cfg: RunConfig, loaded: LoadedData | None = None) -> dict:
    """Phase 1 and 2, each trained on the cohort only and on all rows, tested on the cohort."""
    token = cfg["cohort"].get("token")
    if not token:
        raise StageError("cohort", "cohort.token is not configured")
    loaded = loaded or load_data(cfg, need_rejected=True)
    base = os.path.join(cfg["out_dir"], "cohort")
    _write_summaries(loaded, base)
    rows = []
    for phase, samples in ((1, _phase1_set(loaded)), (2, _phase2_set(loaded))):
        for scope in SCOPES:
            out = os.path.join(base, f"phase{phase}_{scope}")
            rep = run_task(samples, cfg, phase, out, cohort_scope=scope, cohort_token=token)
            test = rep["reports"]["test"]
            rows.append({
                "phase": phase,
                "scope": scope,
                "cohort_share": rep["cohort"]["share"],
                "best_params": rep["best_params"],
                "test_rows": test["n_rows"],
                "test_auc": test["auc"],
                "test_recall_class0": test["recall_class0"],
                "test_recall_class1": test["recall_class1"],
                "test_recall_macro": test["recall_macro"],
                "model_id": rep["model_id"],
            })
    summary = {"cohort": normalize_token(token), "cells": rows}
    write_json(os.path.join(base, "cohort_summary.json"), summary)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["phase", "scope", "cohort_share", "test_rows", "test_auc", "test_recall_class0",
            "test_recall_class1", "test_recall_macro", "model_id"]
    w.writerow(cols)
    for r in rows:
        w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in cols])
    with open(os.path.join(base, "cohort_summary.csv"), "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    return summary


# --------------------------------------------------------------------------
# stats, scoring, weight export


def stats_report(cfg: RunConfig, loaded: LoadedData | None = None, out_dir=None) -> dict:
    """Monthly series CSVs plus a JSON header with the cutoff advisory."""
    loaded = loaded or load_data(cfg, need_rejected=bool(cfg["data"].get("rejected")))
    out_dir = out_dir or os.path.join(cfg["out_dir"], "stats")
    os.makedirs(out_dir, exist_ok=True)
    with stage("stats"):
        ms = monthly_stats(loaded.accepted_records, loaded.rejected_records)
        advisory = suggest_cutoff(ms.default_fraction) if len(ms.default_fraction.months) else None
    for series in (ms.default_fraction, ms.rejected_fraction, ms.requested_total):
        with open(os.path.join(out_dir, f"{series.name}.csv"), "w", encoding="utf-8") as fh:
            fh.write(series.to_csv())
    with open(os.path.join(out_dir, "monthly_counts.csv"), "w", encoding="utf-8") as fh:
        fh.write(ms.counts_csv())
    from p2pcredit.ingest import format_month

    doc = {
        "window_months": ms.window,
        "window_alignment": "trailing (months t-5..t), clipped at series start",
        "months": len(ms.months),
        "first_month": format_month(ms.months[0]),
        "last_month": format_month(ms.months[-1]),
        "cutoff_advisory": advisory,
        "cutoff_note": "advisory only; rows are excluded only through the cutoff config key",
        "configured_cutoff": cfg["cutoff"],
    }
    write_json(os.path.join(out_dir, "stats_report.json"), doc)
    return doc


def predict(model_path, input_csv, output_path, *, state_path=None, source="accepted",
            schema_map=None) -> int:
    """Append ``score`` and ``predicted_class`` columns to the rows of *input_csv*.

    The preprocess state is loaded, never refitted. Returns the number of rows
    scored; rows without a parseable date are skipped like in training.
    """
    with stage("load_model"):
        doc, state = load_artifact(model_path, state_path)
    phase = doc["phase"]
    if schema_map is None:
        stored = doc.get("schema_map") or {}
        schema_map = stored.get(source, stored) if phase == 1 else stored
        schema_map = schema_map or (ACCEPTED_SCHEMA if source == "accepted" else REJECTED_SCHEMA)
    with stage("ingest"):
        if source == "accepted":
            records = list(parse_accepted(input_csv, schema_map))
        else:
            records = list(parse_rejected(input_csv, schema_map))
        with open(input_csv, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            raw_rows = list(reader)
    with stage("score"):
        if records:
            if phase == 1:
                samples = phase1_unlabeled(records)
            else:
                samples = build_phase2(records, require_label=False)
            X, _ = apply(state, samples)
            scores = artifact_scores(doc, X)
        else:
            scores = np.zeros(0)
    threshold = doc["score_threshold"]
    with open(output_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*header, "score", "predicted_class"])
        for rec, s in zip(records, scores):
            w.writerow([*raw_rows[rec.row_number], repr(float(s)), int(s >= threshold)])
    return len(records)


def export_network_weights(model_path, out_prefix) -> tuple[str, str]:
    """Write ``<prefix>_nodes.csv`` and ``<prefix>_edges.csv`` for an MLP artifact.

    Node magnitude is the summed absolute outgoing weight; ``normalized``
    divides it by the largest magnitude in the same layer.
    """
    with stage("load_model"):
        from p2pcredit.serialization import read_json

        doc = read_json(model_path)
        if doc.get("model_kind") != "mlp":
            raise DataError(f"{model_path} is a {doc.get('model_kind')} model, not an MLP")
        params = MlpParams.from_dict(doc["params"])
    names = doc.get("feature_names") or []
    sizes = params.layer_sizes
    nodes_path, edges_path = f"{out_prefix}_nodes.csv", f"{out_prefix}_edges.csv"
    os.makedirs(os.path.dirname(os.path.abspath(nodes_path)), exist_ok=True)

    def node_id(layer, i):
        return f"L{layer}N{i}"

    def label(layer, i):
        if layer == 0:
            return names[i] if i < len(names) else f"x{i}"
        if layer == len(sizes) - 1:
            return "output"
        return f"h{layer}_{i}"

    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "layer", "index", "label", "out_abs_weight", "normalized"])
        for layer, width in enumerate(sizes):
            if layer < len(params.weights):
                mag = np.abs(params.weights[layer]).sum(axis=1)
            else:
                mag = np.zeros(width)
            top = mag.max() if mag.size else 0.0
            norm = mag / top if top > 0 else np.zeros_like(mag)
            for i in range(width):
                w.writerow([node_id(layer, i), layer, i, label(layer, i),
                            repr(float(mag[i])), repr(float(norm[i]))])
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "weight"])
        for layer, W in enumerate(params.weights):
            for i in range(W.shape[0]):
                for j in range(W.shape[1]):
                    w.writerow([node_id(layer, i), node_id(layer + 1, j), repr(float(W[i, j]))])
    return nodes_path, edges_path
