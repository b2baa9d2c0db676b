"""Parsing of the accepted/rejected loan CSV exports and sample-set construction.

Two raw schemas are supported, the accepted-loan export (one row per issued
loan, with its repayment status) and the rejected-loan export (one row per
declined application, with only a handful of columns). Column names are
resolved through a *schema map* from logical field names to header names, so
renamed exports still load.
"""

from __future__ import annotations

import csv
import math
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Iterable, Iterator, Mapping

import numpy as np

from p2pcredit.exceptions import DataError

ACCEPTED_SCHEMA = {
    "loan_amount": "loan_amnt",
    "term": "term",
    "installment": "installment",
    "emp_length": "emp_length",
    "home_ownership": "home_ownership",
    "verification_status": "verification_status",
    "purpose": "purpose",
    "dti": "dti",
    "earliest_credit_line": "earliest_cr_line",
    "open_credit_lines": "open_acc",
    "derogatory_public_records": "pub_rec",
    "revolving_utilization": "revol_util",
    "total_credit_lines": "total_acc",
    "mortgage_credit_lines": "mort_acc",
    "bankruptcies": "pub_rec_bankruptcies",
    "annual_income": "annual_inc",
    "fico_low": "fico_range_low",
    "fico_high": "fico_range_high",
    "revolving_balance": "revol_bal",
    "date": "issue_d",
    "loan_status": "loan_status",
}

REJECTED_SCHEMA = {
    "loan_amount": "Amount Requested",
    "date": "Application Date",
    "purpose": "Loan Title",
    "dti": "Debt-To-Income Ratio",
    "emp_length": "Employment Length",
}

PHASE1_NUMERIC = ("dti", "emp_length", "loan_amount")
PHASE1_CATEGORICAL = ("purpose",)

PHASE2_NUMERIC = (
    "loan_amount",
    "term",
    "installment",
    "emp_length",
    "dti",
    "earliest_credit_line",
    "open_credit_lines",
    "derogatory_public_records",
    "revolving_utilization",
    "total_credit_lines",
    "mortgage_credit_lines",
    "bankruptcies",
    "log_annual_income",
    "fico",
    "log_revolving_balance",
)
PHASE2_CATEGORICAL = ("home_ownership", "verification_status", "purpose")

FULLY_PAID_STATUSES = frozenset({"Fully Paid"})
DEFAULTED_STATUSES = frozenset({"Charged Off", "Default"})

_MISSING_TOKENS = frozenset({"", "n/a", "na", "nan", "none", "null"})


class Source(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class LoanRecord:
    """One parsed CSV row. ``date`` is ``(year, month)``."""

    source: Source
    date: tuple[int, int]
    fields_raw: Mapping[str, str | None]
    row_number: int = -1

    def get(self, name: str) -> str | None:
        return self.fields_raw.get(name)


@dataclass
class ParseSummary:
    """Row accounting for one parsed file."""

    path: str = ""
    source: str = ""
    rows_read: int = 0
    retained: int = 0
    dropped: Counter = field(default_factory=Counter)

    def drop(self, reason: str) -> None:
        self.dropped[reason] += 1

    @property
    def n_dropped(self) -> int:
        return sum(self.dropped.values())

    def to_text(self) -> str:
        lines = [
            f"file: {self.path}",
            f"source: {self.source}",
            f"rows_read: {self.rows_read}",
            f"retained: {self.retained}",
            f"dropped: {self.n_dropped}",
        ]
        for reason in sorted(self.dropped):
            lines.append(f"dropped[{reason}]: {self.dropped[reason]}")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# field parsers


def month_ordinal(year: int, month: int) -> int:
    return year * 12 + (month - 1)


def ordinal_to_month(ordinal: int) -> tuple[int, int]:
    year, m0 = divmod(int(ordinal), 12)
    return year, m0 + 1


def format_month(ordinal: int) -> str:
    year, month = ordinal_to_month(ordinal)
    return f"{year:04d}-{month:02d}"


def parse_month(text: str | None) -> tuple[int, int] | None:
    """Parse ``Mon-YYYY`` or ``YYYY-MM-DD`` (also ``YYYY-MM``) to ``(year, month)``."""
    if text is None:
        return None
    text = text.strip()
    if not text:
        return None
    for fmt in ("%b-%Y", "%Y-%m-%d", "%Y-%m"):
        try:
            d = datetime.strptime(text, fmt)
        except ValueError:
            continue
        return d.year, d.month
    return None


def parse_cutoff(value) -> int | None:
    """Cutoff month from config: ``None``, ``"YYYY-MM"`` or a ``Mon-YYYY`` string."""
    if value is None or value == "":
        return None
    ym = parse_month(str(value))
    if ym is None:
        raise DataError(f"unparseable cutoff date {value!r}")
    return month_ordinal(*ym)


def parse_number(text: str | None) -> float:
    """Float from a raw cell; trailing ``%`` is stripped, blanks give NaN."""
    if text is None:
        return math.nan
    text = text.strip()
    if text.lower() in _MISSING_TOKENS:
        return math.nan
    if text.endswith("%"):
        text = text[:-1].strip()
    try:
        return float(text)
    except ValueError:
        return math.nan


def parse_emp_length(text: str | None) -> float:
    """``"10+ years"`` -> 10, ``"< 1 year"`` -> 0, ``"n years"`` -> n, else NaN."""
    if text is None:
        return math.nan
    t = text.strip().lower()
    if t in _MISSING_TOKENS:
        return math.nan
    if t.startswith("<"):
        return 0.0
    m = re.match(r"^(\d+)\s*\+?\s*(years?)?$", t)
    if m is None:
        return math.nan
    return float(min(int(m.group(1)), 10))


def parse_term(text: str | None) -> float:
    if text is None:
        return math.nan
    m = re.search(r"\d+", text)
    return float(m.group()) if m else math.nan


def normalize_token(text: str | None) -> str | None:
    """Lower-case, trim and join internal whitespace with ``_``."""
    if text is None:
        return None
    t = text.strip().lower()
    if t in _MISSING_TOKENS:
        return None
    return re.sub(r"\s+", "_", t)


def credit_history_years(issue: tuple[int, int], earliest: str | None) -> float:
    """Years between the earliest credit line and the issue month."""
    ym = parse_month(earliest)
    if ym is None:
        return math.nan
    months = month_ordinal(*issue) - month_ordinal(*ym)
    return max(months, 0) / 12.0


def _log_positive(text: str | None) -> float:
    x = parse_number(text)
    return math.log(x) if x > 0 else math.nan


def _log1p_nonneg(text: str | None) -> float:
    x = parse_number(text)
    return math.log(x + 1.0) if x >= 0 else math.nan


def _fico(rec: LoanRecord) -> float:
    lo = parse_number(rec.get("fico_low"))
    hi = parse_number(rec.get("fico_high"))
    if math.isnan(hi):
        return lo
    if math.isnan(lo):
        return hi
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# CSV parsing


def _open_checked(path, schema_map: Mapping[str, str], source: Source):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{source.value} loan file not found: {path}")
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise DataError(f"{path}: missing header row") from None
    index = {name: i for i, name in enumerate(header)}
    absent = [col for col in schema_map.values() if col not in index]
    if absent:
        fh.close()
        raise DataError(f"{path}: missing mapped columns {sorted(absent)}")
    if "date" not in schema_map:
        fh.close()
        raise DataError("schema map must define a 'date' column")
    return fh, reader, header, index


def _parse(path, schema_map, source: Source, summary: ParseSummary | None):
    schema_map = dict(schema_map)
    if source is Source.REJECTED:
        schema_map.pop("loan_status", None)
    fh, reader, header, index = _open_checked(path, schema_map, source)
    summary = summary if summary is not None else ParseSummary()
    summary.path = str(path)
    summary.source = source.value
    cols = [(name, index[col]) for name, col in schema_map.items()]
    width = len(header)

    def rows() -> Iterator[LoanRecord]:
        with fh:
            for row_number, row in enumerate(reader):
                summary.rows_read += 1
                if len(row) != width:
                    summary.drop("malformed_row")
                    continue
                raw = {name: (row[i] if row[i] != "" else None) for name, i in cols}
                date = parse_month(raw["date"])
                if date is None:
                    summary.drop("bad_date")
                    continue
                summary.retained += 1
                yield LoanRecord(source, date, raw, row_number)

    return rows()


def parse_accepted(path, schema_map: Mapping[str, str] | None = None,
                   summary: ParseSummary | None = None) -> Iterator[LoanRecord]:
    """Stream records from an accepted-loans CSV.

    Missing files and absent mapped columns raise immediately. Rows that are
    malformed or carry no parseable date are skipped and tallied in *summary*
    as the stream is consumed.
    """
    return _parse(path, schema_map or ACCEPTED_SCHEMA, Source.ACCEPTED, summary)


def parse_rejected(path, schema_map: Mapping[str, str] | None = None,
                   summary: ParseSummary | None = None) -> Iterator[LoanRecord]:
    """Stream records from a rejected-applications CSV (see :func:`parse_accepted`)."""
    return _parse(path, schema_map or REJECTED_SCHEMA, Source.REJECTED, summary)


# --------------------------------------------------------------------------
# sample sets


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    kind: str  # "numeric" | "categorical"
    coverage: float


@dataclass
class SampleSet:
    """Column-oriented samples: numeric matrix (NaN = missing), categorical
    token arrays (None = missing), month ordinals and binary labels."""

    numeric: np.ndarray
    numeric_names: list[str]
    categorical: dict[str, np.ndarray]
    dates: np.ndarray
    labels: np.ndarray
    dropped_columns: list[tuple[str, float]] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.numeric = np.asarray(self.numeric, dtype=np.float64).reshape(len(self.dates), len(self.numeric_names))
        self.dates = np.asarray(self.dates, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.dates)
        if self.numeric.shape[1] != len(self.numeric_names):
            raise DataError("numeric matrix width does not match numeric_names")
        lengths = {self.numeric.shape[0], len(self.labels)}
        lengths.update(len(v) for v in self.categorical.values())
        if lengths != {n}:
            raise DataError(f"parallel columns have inconsistent row counts: {sorted(lengths)}")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def n_rows(self) -> int:
        return len(self.dates)

    @property
    def columns(self) -> list[ColumnInfo]:
        n = max(self.n_rows, 1)
        out = []
        for j, name in enumerate(self.numeric_names):
            cov = float(np.count_nonzero(~np.isnan(self.numeric[:, j]))) / n
            out.append(ColumnInfo(name, "numeric", cov if self.n_rows else 0.0))
        for name, tokens in self.categorical.items():
            cov = sum(t is not None for t in tokens) / n
            out.append(ColumnInfo(name, "categorical", cov if self.n_rows else 0.0))
        return out

    def take(self, index) -> "SampleSet":
        """Row subset (boolean mask or integer index), preserving given order."""
        index = np.asarray(index)
        return SampleSet(
            numeric=self.numeric[index],
            numeric_names=list(self.numeric_names),
            categorical={k: v[index] for k, v in self.categorical.items()},
            dates=self.dates[index],
            labels=self.labels[index],
            dropped_columns=list(self.dropped_columns),
            provenance=dict(self.provenance),
        )

    def tokens(self, name: str) -> np.ndarray:
        return self.categorical[name]

    def cohort_mask(self, token: str, column: str = "purpose") -> np.ndarray:
        token = normalize_token(token)
        return np.array([t == token for t in self.categorical[column]], dtype=bool)


def _assemble(rows_num, rows_cat, dates, labels, numeric_names, cat_names, provenance):
    n = len(dates)
    numeric = np.array(rows_num, dtype=np.float64).reshape(n, len(numeric_names))
    categorical = {}
    for j, name in enumerate(cat_names):
        arr = np.empty(n, dtype=object)
        arr[:] = [r[j] for r in rows_cat]
        categorical[name] = arr
    return SampleSet(numeric, list(numeric_names), categorical, dates, labels,
                     provenance=provenance)


def _phase1_row(rec: LoanRecord):
    num = (
        parse_number(rec.get("dti")),
        parse_emp_length(rec.get("emp_length")),
        parse_number(rec.get("loan_amount")),
    )
    return num, (normalize_token(rec.get("purpose")),)


def build_phase1(accepted: Iterable[LoanRecord], rejected: Iterable[LoanRecord]) -> SampleSet:
    """Acceptance task: label 1 for accepted records, 0 for rejected ones.

    Rows keep input order (accepted stream first). The date is the issue date
    for accepted loans and the application date for rejected ones.
    """
    rows_num, rows_cat, dates, labels = [], [], [], []
    counts = Counter()
    for label, stream in ((1, accepted), (0, rejected)):
        for rec in stream:
            num, cat = _phase1_row(rec)
            rows_num.append(num)
            rows_cat.append(cat)
            dates.append(month_ordinal(*rec.date))
            labels.append(label)
            counts[label] += 1
    if counts[1] == 0 or counts[0] == 0:
        raise DataError(
            f"phase 1 needs both classes; got {counts[1]} accepted and {counts[0]} rejected rows"
        )
    prov = {"rows_in": len(dates), "rows_out": len(dates), "dropped": {}}
    return _assemble(rows_num, rows_cat, dates, labels, PHASE1_NUMERIC, PHASE1_CATEGORICAL, prov)


def phase1_unlabeled(records: Iterable[LoanRecord]) -> SampleSet:
    """Phase-1 features for records of either source, with label -1 (scoring only)."""
    rows_num, rows_cat, dates = [], [], []
    for rec in records:
        num, cat = _phase1_row(rec)
        rows_num.append(num)
        rows_cat.append(cat)
        dates.append(month_ordinal(*rec.date))
    prov = {"rows_in": len(dates), "rows_out": len(dates), "dropped": {}}
    return _assemble(rows_num, rows_cat, dates, [-1] * len(dates), PHASE1_NUMERIC,
                     PHASE1_CATEGORICAL, prov)


def status_label(status: str | None) -> int | None:
    """1 for defaulted, 0 for fully paid, None for any other status."""
    if status is None:
        return None
    s = status.strip()
    if s in DEFAULTED_STATUSES:
        return 1
    if s in FULLY_PAID_STATUSES:
        return 0
    return None


def phase2_features(rec: LoanRecord):
    """Numeric and categorical phase-2 feature tuples for one accepted record."""
    g = rec.get
    num = (
        parse_number(g("loan_amount")),
        parse_term(g("term")),
        parse_number(g("installment")),
        parse_emp_length(g("emp_length")),
        parse_number(g("dti")),
        credit_history_years(rec.date, g("earliest_credit_line")),
        parse_number(g("open_credit_lines")),
        parse_number(g("derogatory_public_records")),
        parse_number(g("revolving_utilization")),
        parse_number(g("total_credit_lines")),
        parse_number(g("mortgage_credit_lines")),
        parse_number(g("bankruptcies")),
        _log_positive(g("annual_income")),
        _fico(rec),
        _log1p_nonneg(g("revolving_balance")),
    )
    cat = (
        normalize_token(g("home_ownership")),
        normalize_token(g("verification_status")),
        normalize_token(g("purpose")),
    )
    return num, cat


def build_phase2(accepted: Iterable[LoanRecord], require_label: bool = True) -> SampleSet:
    """Default task on accepted loans: 1 = charged off/default, 0 = fully paid.

    Records with any other status are dropped and counted by status in
    ``provenance["dropped"]``. With ``require_label=False`` every record is
    kept and unlabeled rows get label -1 (used for batch scoring).
    """
    rows_num, rows_cat, dates, labels = [], [], [], []
    dropped = Counter()
    rows_in = 0
    for rec in accepted:
        rows_in += 1
        label = status_label(rec.get("loan_status"))
        if label is None:
            if require_label:
                dropped[f"status:{rec.get('loan_status')}"] += 1
                continue
            label = -1
        num, cat = phase2_features(rec)
        rows_num.append(num)
        rows_cat.append(cat)
        dates.append(month_ordinal(*rec.date))
        labels.append(label)
    if not dates and require_label:
        raise DataError("phase 2: no fully paid or defaulted loans retained")
    prov = {"rows_in": rows_in, "rows_out": len(dates), "dropped": dict(sorted(dropped.items()))}
    return _assemble(rows_num, rows_cat, dates, labels, PHASE2_NUMERIC, PHASE2_CATEGORICAL, prov)
