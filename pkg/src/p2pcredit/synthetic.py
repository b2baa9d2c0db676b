"""Synthetic accepted/rejected loan files with a known logistic ground truth.

Acceptance follows ``P(accepted | x) = sigmoid(b + sum_j w_j (x_j - c_j) + e_purpose)``
over the phase-1 features, and default among accepted loans follows the same
form over the built phase-2 features. Weights are in raw feature units, so a
model trained on standardized columns should recover ``w_j * std_j``.

In ``"quota"`` mode rows are drawn until the accepted/rejected counts are
filled; the retained rows are then a case-control sample, which leaves the
slope vector of the logistic rule unchanged and only shifts the intercept.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from p2pcredit.exceptions import DataError
from p2pcredit.ingest import (
    PHASE1_NUMERIC,
    PHASE2_NUMERIC,
    format_month,
    month_ordinal,
    normalize_token,
    ordinal_to_month,
    parse_month,
)

MONTH_ABBR = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")

ACCEPTED_COLUMNS = (
    "id", "loan_amnt", "term", "int_rate", "installment", "grade", "emp_length",
    "home_ownership", "annual_inc", "verification_status", "issue_d", "loan_status",
    "purpose", "addr_state", "dti", "earliest_cr_line", "fico_range_low", "fico_range_high",
    "open_acc", "pub_rec", "revol_bal", "revol_util", "total_acc", "mort_acc",
    "pub_rec_bankruptcies",
)
REJECTED_COLUMNS = (
    "Amount Requested", "Application Date", "Loan Title", "Risk_Score",
    "Debt-To-Income Ratio", "Zip Code", "State", "Employment Length", "Policy Code",
)

_STATES = ("CA", "NY", "TX", "FL", "IL", "NJ", "PA", "OH", "GA", "VA")


def _default_purposes():
    return {
        "debt_consolidation": 0.55, "credit_card": 0.20, "home_improvement": 0.08,
        "other": 0.07, "major_purchase": 0.04, "small_business": 0.03, "car": 0.03,
    }


@dataclass
class SyntheticConfig:
    n_accepted: int = 1000
    n_rejected: int = 10000
    sampling: str = "quota"  # "quota" | "bernoulli"
    start_month: str = "2012-01"
    n_months: int = 48
    purposes: dict = field(default_factory=_default_purposes)
    cohort: str = "small_business"
    phase1_weights: dict = field(default_factory=lambda: {
        "dti": -0.6, "emp_length": 1.0, "loan_amount": -0.0005})
    phase1_centers: dict = field(default_factory=lambda: {
        "dti": 18.0, "emp_length": 5.0, "loan_amount": 13000.0})
    phase1_bias: float = -4.0
    phase1_purpose_effects: dict = field(default_factory=lambda: {
        "debt_consolidation": 0.5, "small_business": -1.0})
    phase2_weights: dict = field(default_factory=lambda: {
        "fico": -0.16, "dti": 0.4, "log_annual_income": -5.0,
        "revolving_utilization": 0.1, "term": 0.12, "loan_amount": 0.0001})
    phase2_centers: dict = field(default_factory=lambda: {
        "fico": 712.0, "dti": 15.0, "log_annual_income": 11.05,
        "revolving_utilization": 50.0, "term": 43.0, "loan_amount": 11000.0})
    phase2_bias: float = -5.0
    phase2_purpose_effects: dict = field(default_factory=lambda: {"small_business": 1.0})
    cohort_phase1_rule: str = "shared"  # "shared" | "inverted"
    cohort_phase2_rule: str = "shared"
    current_fraction: float = 0.10
    default_decline_months: int = 0
    emp_missing_rate: float = 0.02
    bankruptcy_missing_rate: float = 0.03

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_accepted < 0 or self.n_rejected < 0 or self.n_accepted + self.n_rejected == 0:
            raise DataError("row counts must be non-negative with a positive total")
        if self.sampling not in ("quota", "bernoulli"):
            raise DataError(f"sampling must be 'quota' or 'bernoulli', got {self.sampling!r}")
        if parse_month(self.start_month) is None:
            raise DataError(f"unparseable start_month {self.start_month!r}")
        if self.n_months < 1:
            raise DataError("n_months must be at least 1")
        probs = list(self.purposes.values())
        if not probs or any(p < 0 or not math.isfinite(p) for p in probs) or sum(probs) <= 0:
            raise DataError("purpose probabilities must be finite, non-negative, positive in sum")
        for name in self.phase1_weights:
            if name not in PHASE1_NUMERIC:
                raise DataError(f"phase1 weight for unknown feature {name!r}")
        for name in self.phase2_weights:
            if name not in PHASE2_NUMERIC:
                raise DataError(f"phase2 weight for unknown feature {name!r}")
        for rule in (self.cohort_phase1_rule, self.cohort_phase2_rule):
            if rule not in ("shared", "inverted"):
                raise DataError(f"cohort rule must be 'shared' or 'inverted', got {rule!r}")
        for name in ("current_fraction", "emp_missing_rate", "bankruptcy_missing_rate"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise DataError(f"{name} must lie in [0, 1), got {v}")
        if not 0 <= self.default_decline_months <= self.n_months:
            raise DataError("default_decline_months must lie in [0, n_months]")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "SyntheticConfig":
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class SyntheticData:
    accepted_path: str
    rejected_path: str
    truth_path: str
    ground_truth: dict
    phase1_numeric: np.ndarray  # rows in build_phase1 order: accepted then rejected
    phase1_purpose: list
    phase1_dates: np.ndarray
    phase1_labels: np.ndarray
    phase2_numeric: np.ndarray  # every accepted row, file order
    phase2_categorical: list
    phase2_status: list


def _fmt(x: float, digits: int) -> str:
    return f"{x:.{digits}f}"


def _emp_text(v: float, missing_token: str) -> str:
    if math.isnan(v):
        return missing_token
    v = int(v)
    if v == 0:
        return "< 1 year"
    if v >= 10:
        return "10+ years"
    return "1 year" if v == 1 else f"{v} years"


def _mon_yyyy(ordinal: int) -> str:
    y, m = ordinal_to_month(ordinal)
    return f"{MONTH_ABBR[m - 1]}-{y:04d}"


def _title(token: str) -> str:
    return token.replace("_", " ").capitalize()


def _linear_rule(features: dict, weights: dict, centers: dict, bias: float, effects: dict,
                 purposes, invert=None) -> np.ndarray:
    n = len(purposes)
    slope = np.zeros(n)
    for name, w in weights.items():
        x = features[name]
        c = centers.get(name, 0.0)
        slope += w * np.where(np.isnan(x), 0.0, x - c)
    if invert is not None:
        slope = np.where(invert, -slope, slope)
    eff = np.array([effects.get(p, 0.0) for p in purposes])
    return bias + slope + eff


def _draw_phase1(rng, cfg: SyntheticConfig, n: int):
    tokens = list(cfg.purposes)
    probs = np.array([cfg.purposes[t] for t in tokens], dtype=float)
    probs /= probs.sum()
    loan = np.clip(np.round(rng.lognormal(np.log(12000), 0.6, n) / 25.0) * 25.0, 1000, 40000)
    dti = np.clip(rng.normal(18.0, 8.0, n), 0.0, 45.0)
    dti = np.array([float(_fmt(v, 2)) for v in dti])
    emp = rng.integers(0, 11, n).astype(float)
    emp[rng.random(n) < cfg.emp_missing_rate] = np.nan
    purpose = [tokens[i] for i in rng.choice(len(tokens), size=n, p=probs)]
    month = rng.integers(0, cfg.n_months, n)
    return {"dti": dti, "emp_length": emp, "loan_amount": loan}, purpose, month


def _phase1_population(rng, cfg: SyntheticConfig):
    """Rows for phase 1 as (features, purposes, month offsets, labels)."""
    cohort = normalize_token(cfg.cohort)

    def labelled(n):
        feats, purpose, month = _draw_phase1(rng, cfg, n)
        invert = None
        if cfg.cohort_phase1_rule == "inverted":
            invert = np.array([p == cohort for p in purpose])
        logit = _linear_rule(feats, cfg.phase1_weights, cfg.phase1_centers, cfg.phase1_bias,
                             cfg.phase1_purpose_effects, purpose, invert)
        label = (rng.random(n) < expit(logit)).astype(int)
        return feats, purpose, month, label

    if cfg.sampling == "bernoulli":
        return labelled(cfg.n_accepted + cfg.n_rejected)

    need = {1: cfg.n_accepted, 0: cfg.n_rejected}
    keep = {1: [], 0: []}
    chunk = max(1000, (cfg.n_accepted + cfg.n_rejected) // 4)
    for _ in range(2000):
        if all(len(keep[c]) >= need[c] for c in (0, 1)):
            break
        feats, purpose, month, label = labelled(chunk)
        for i in range(chunk):
            c = int(label[i])
            if len(keep[c]) < need[c]:
                keep[c].append((feats["dti"][i], feats["emp_length"][i],
                                feats["loan_amount"][i], purpose[i], month[i]))
    else:
        raise DataError("acceptance quota could not be filled; adjust phase1_bias")
    rows = keep[1] + keep[0]
    labels = np.array([1] * len(keep[1]) + [0] * len(keep[0]), dtype=int)
    feats = {
        "dti": np.array([r[0] for r in rows], dtype=float),
        "emp_length": np.array([r[1] for r in rows], dtype=float),
        "loan_amount": np.array([r[2] for r in rows], dtype=float),
    }
    return feats, [r[3] for r in rows], np.array([r[4] for r in rows], dtype=int), labels


def _annuity(amount, term, annual_rate=0.12):
    r = annual_rate / 12.0
    return amount * r / (1.0 - (1.0 + r) ** (-term))


def generate_synthetic(config: SyntheticConfig | dict | None, seed: int, out_dir) -> SyntheticData:
    """Write ``accepted.csv``, ``rejected.csv`` and ``ground_truth.json`` to *out_dir*.

    Output is a deterministic function of ``(config, seed)``.
    """
    cfg = config if isinstance(config, SyntheticConfig) else SyntheticConfig.from_dict(config)
    rng = np.random.default_rng(seed)
    start = month_ordinal(*parse_month(cfg.start_month))
    cohort = normalize_token(cfg.cohort)

    feats1, purpose, month_off, label = _phase1_population(rng, cfg)
    n = len(label)
    dates = start + month_off
    acc = np.flatnonzero(label == 1)
    rej = np.flatnonzero(label == 0)
    n_acc = len(acc)

    # phase-2 attributes for accepted rows
    term = np.where(rng.random(n_acc) < 0.7, 36.0, 60.0)
    loan_acc = feats1["loan_amount"][acc]
    installment = np.array([float(_fmt(v, 2)) for v in _annuity(loan_acc, term)])
    home = rng.choice(["RENT", "MORTGAGE", "OWN"], size=n_acc, p=[0.4, 0.5, 0.1])
    verif = rng.choice(["Not Verified", "Source Verified", "Verified"], size=n_acc,
                       p=[0.3, 0.35, 0.35])
    history = rng.integers(24, 361, n_acc)
    open_acc = (rng.poisson(11, n_acc) + 1).astype(float)
    pub_rec = rng.poisson(0.2, n_acc).astype(float)
    revol_util = np.array([float(_fmt(v, 1)) for v in np.clip(rng.normal(50, 24, n_acc), 0, 150)])
    total_acc = open_acc + rng.poisson(12, n_acc)
    mort_acc = rng.poisson(1.2, n_acc).astype(float)
    bankrupt = rng.poisson(0.1, n_acc).astype(float)
    bankrupt[rng.random(n_acc) < cfg.bankruptcy_missing_rate] = np.nan
    income = np.maximum(np.round(rng.lognormal(np.log(65000), 0.5, n_acc) / 100.0) * 100.0, 4000.0)
    fico_low = np.clip(np.round(rng.normal(700, 30, n_acc) / 5.0) * 5.0, 660, 845)
    revol_bal = np.round(rng.lognormal(np.log(12000), 1.0, n_acc))
    revol_bal[rng.random(n_acc) < 0.03] = 0.0

    p2 = {
        "loan_amount": loan_acc,
        "term": term,
        "installment": installment,
        "emp_length": feats1["emp_length"][acc],
        "dti": feats1["dti"][acc],
        "earliest_credit_line": history / 12.0,
        "open_credit_lines": open_acc,
        "derogatory_public_records": pub_rec,
        "revolving_utilization": revol_util,
        "total_credit_lines": total_acc,
        "mortgage_credit_lines": mort_acc,
        "bankruptcies": bankrupt,
        "log_annual_income": np.log(income),
        "fico": fico_low + 2.0,
        "log_revolving_balance": np.log(revol_bal + 1.0),
    }
    purpose_acc = [purpose[i] for i in acc]
    invert2 = None
    if cfg.cohort_phase2_rule == "inverted":
        invert2 = np.array([p == cohort for p in purpose_acc])
    logit2 = _linear_rule(p2, cfg.phase2_weights, cfg.phase2_centers, cfg.phase2_bias,
                          cfg.phase2_purpose_effects, purpose_acc, invert2)
    defaulted = rng.random(n_acc) < expit(logit2)
    current = rng.random(n_acc) < cfg.current_fraction
    hide = np.zeros(n_acc, dtype=bool)
    if cfg.default_decline_months:
        k = cfg.default_decline_months
        pos = month_off[acc] - (cfg.n_months - k)  # 0..k-1 inside the final window
        ramp = np.where(pos >= 0, 0.9 * (pos + 1) / k, 0.0)
        hide = defaulted & (rng.random(n_acc) < ramp)
    charged = rng.random(n_acc) < 0.9
    status = np.where(current | hide, "Current",
                      np.where(defaulted, np.where(charged, "Charged Off", "Default"), "Fully Paid"))

    os.makedirs(out_dir, exist_ok=True)
    acc_path = os.path.join(out_dir, "accepted.csv")
    rej_path = os.path.join(out_dir, "rejected.csv")
    truth_path = os.path.join(out_dir, "ground_truth.json")

    grades = np.array(list("ABCDEFG"))
    with open(acc_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCEPTED_COLUMNS)
        for k, i in enumerate(acc):
            d = int(dates[i])
            w.writerow([
                100000 + k,
                _fmt(loan_acc[k], 1),
                f" {int(term[k])} months",
                _fmt(float(np.clip(6 + 0.02 * p2["dti"][k] * 10, 5, 30)), 2),
                _fmt(installment[k], 2),
                grades[min(int(p2["dti"][k] // 7), 6)],
                _emp_text(p2["emp_length"][k], "n/a"),
                home[k],
                _fmt(income[k], 1),
                verif[k],
                _mon_yyyy(d),
                status[k],
                purpose_acc[k],
                _STATES[k % len(_STATES)],
                _fmt(p2["dti"][k], 2),
                _mon_yyyy(d - int(history[k])),
                _fmt(fico_low[k], 1),
                _fmt(fico_low[k] + 4.0, 1),
                _fmt(open_acc[k], 1),
                _fmt(pub_rec[k], 1),
                _fmt(revol_bal[k], 1),
                _fmt(revol_util[k], 1) + "%",
                _fmt(total_acc[k], 1),
                _fmt(mort_acc[k], 1),
                "" if math.isnan(bankrupt[k]) else _fmt(bankrupt[k], 1),
            ])
    days = rng.integers(1, 29, len(rej))
    with open(rej_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REJECTED_COLUMNS)
        for k, i in enumerate(rej):
            y, m = ordinal_to_month(int(dates[i]))
            w.writerow([
                _fmt(feats1["loan_amount"][i], 1),
                f"{y:04d}-{m:02d}-{int(days[k]):02d}",
                _title(purpose[i]),
                "",
                _fmt(feats1["dti"][i], 2) + "%",
                f"{100 + k % 900:03d}xx",
                _STATES[k % len(_STATES)],
                _emp_text(feats1["emp_length"][i], ""),
                "0",
            ])

    order = np.concatenate([acc, rej])
    truth = {
        "seed": int(seed),
        "rows": {"accepted": int(n_acc), "rejected": int(len(rej)),
                 "phase2_labelled": int(np.count_nonzero(status != "Current"))},
        "first_month": format_month(start),
        "last_month": format_month(start + cfg.n_months - 1),
        "phase1": {"weights": cfg.phase1_weights, "centers": cfg.phase1_centers,
                   "bias": cfg.phase1_bias, "purpose_effects": cfg.phase1_purpose_effects,
                   "cohort_rule": cfg.cohort_phase1_rule},
        "phase2": {"weights": cfg.phase2_weights, "centers": cfg.phase2_centers,
                   "bias": cfg.phase2_bias, "purpose_effects": cfg.phase2_purpose_effects,
                   "cohort_rule": cfg.cohort_phase2_rule},
        "cohort": cohort,
        "config": asdict(cfg),
    }
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")

    p1_numeric = np.column_stack([feats1[name] for name in PHASE1_NUMERIC])[order]
    p2_numeric = np.column_stack([p2[name] for name in PHASE2_NUMERIC])
    p2_cat = [(normalize_token(home[k]), normalize_token(verif[k]), purpose_acc[k])
              for k in range(n_acc)]
    return SyntheticData(
        accepted_path=acc_path,
        rejected_path=rej_path,
        truth_path=truth_path,
        ground_truth=truth,
        phase1_numeric=p1_numeric,
        phase1_purpose=[purpose[i] for i in order],
        phase1_dates=dates[order],
        phase1_labels=label[order],
        phase2_numeric=p2_numeric,
        phase2_categorical=p2_cat,
        phase2_status=list(status),
    )


def truth_vector(weights: dict, feature_names, scaler_std=None) -> np.ndarray:
    """Ground-truth weights aligned to *feature_names*, optionally in standardized units."""
    out = np.array([float(weights.get(n, 0.0)) for n in feature_names])
    if scaler_std is not None:
        out = out * np.asarray(scaler_std)
    return out
