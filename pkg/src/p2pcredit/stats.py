"""Monthly default/rejection statistics with trailing moving windows."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass

import numpy as np

from p2pcredit.exceptions import DataError
from p2pcredit.ingest import DEFAULTED_STATUSES, LoanRecord, format_month, month_ordinal

WINDOW = 6


def trailing_moving(values, window: int = WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean and population std over ``values[t-window+1 .. t]``,
    clipped at the start of the series."""
    values = np.asarray(values, dtype=np.float64)
    mean = np.empty_like(values)
    std = np.empty_like(values)
    for t in range(len(values)):
        w = values[max(0, t - window + 1): t + 1]
        mean[t] = w.mean()
        std[t] = w.std()
    return mean, std


@dataclass
class Series:
    name: str
    months: np.ndarray  # month ordinals with data for this series
    values: np.ndarray
    moving_average: np.ndarray
    moving_std: np.ndarray
    counts: np.ndarray | None = None  # denominators behind each value, if a fraction

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["month", self.name, "moving_average", "moving_std"])
        for m, v, a, s in zip(self.months, self.values, self.moving_average, self.moving_std):
            w.writerow([format_month(m), repr(float(v)), repr(float(a)), repr(float(s))])
        return buf.getvalue()


@dataclass
class MonthlyStats:
    months: np.ndarray
    accepted: np.ndarray
    rejected: np.ndarray
    defaulted: np.ndarray
    default_fraction: Series
    rejected_fraction: Series
    requested_total: Series
    window: int = WINDOW

    @property
    def total(self) -> np.ndarray:
        return self.accepted + self.rejected

    def counts_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["month", "accepted", "rejected", "defaulted", "total_requested"])
        for row in zip(self.months, self.accepted, self.rejected, self.defaulted, self.total):
            w.writerow([format_month(row[0]), *map(int, row[1:])])
        return buf.getvalue()


def _series(name, months, values, window, counts=None):
    ma, ms = trailing_moving(values, window)
    return Series(name, np.asarray(months), np.asarray(values, dtype=float), ma, ms, counts)


def monthly_stats(accepted, rejected, window: int = WINDOW) -> MonthlyStats:
    """Per-month counts and fractions from accepted and rejected record streams."""
    acc, rej, dflt = Counter(), Counter(), Counter()
    for rec in accepted:
        m = month_ordinal(*rec.date)
        acc[m] += 1
        status = rec.get("loan_status")
        if status is not None and status.strip() in DEFAULTED_STATUSES:
            dflt[m] += 1
    for rec in rejected:
        rej[month_ordinal(*rec.date)] += 1
    months = np.array(sorted(set(acc) | set(rej)), dtype=np.int64)
    if len(months) == 0:
        raise DataError("no records with parseable dates")
    a = np.array([acc[m] for m in months])
    r = np.array([rej[m] for m in months])
    d = np.array([dflt[m] for m in months])
    has_acc = a > 0
    return MonthlyStats(
        months=months,
        accepted=a,
        rejected=r,
        defaulted=d,
        default_fraction=_series("default_fraction", months[has_acc], d[has_acc] / a[has_acc], window,
                                 a[has_acc]),
        rejected_fraction=_series("rejected_fraction", months, r / (a + r), window, a + r),
        requested_total=_series("requested_total", months, (a + r).astype(float), window),
        window=window,
    )


def suggest_cutoff(series: Series, min_run: int = 4, rel_drop: float = 0.25, min_prefix: int = 6,
                   min_f: float = 10.0):
    """Advisory onset of a sustained decline running to the end of the series.

    Fits ``value = a + b * max(0, t - onset)`` by least squares for every
    candidate onset and keeps the best fit. Returns a dict describing the
    decline, or None when no decline of at least ``rel_drop`` (relative to
    the level before onset) over at least ``min_run`` months is found, or
    when the hinge fit does not beat a flat line by an F statistic of at
    least ``min_f`` (noisy monthly fractions otherwise trigger it).

    Months are weighted by ``series.counts`` when present, since a fraction
    over n rows has variance proportional to 1/n.
    """
    y = np.asarray(series.values, dtype=float)
    n = len(y)
    t = np.arange(n, dtype=float)
    wts = np.ones(n) if series.counts is None else np.asarray(series.counts, dtype=float)
    wts = wts / wts.mean()
    sw = np.sqrt(wts)
    best = None
    for onset in range(min_prefix, n - min_run + 1):
        A = np.column_stack([np.ones(n), np.maximum(0.0, t - onset + 1)])
        coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
        sse = float(np.sum(wts * (A @ coef - y) ** 2))
        if best is None or sse < best[0]:
            best = (sse, onset, coef)
    if best is None:
        return None
    _, onset, (level, slope) = best
    drop = -slope * (n - onset)
    if slope >= 0 or level <= 0 or drop < rel_drop * level:
        return None
    flat = np.sum(wts * y) / np.sum(wts)
    sse_flat = float(np.sum(wts * (y - flat) ** 2))
    sse_hinge = best[0]
    f_stat = (sse_flat - sse_hinge) / (sse_hinge / (n - 2)) if sse_hinge > 0 else np.inf
    if f_stat < min_f:
        return None
    return {
        "cutoff": format_month(series.months[onset]),
        "last_month_before_decline": format_month(series.months[onset - 1]),
        "baseline_level": float(level),
        "slope_per_month": float(slope),
        "relative_drop": float(drop / level),
        "months_declining": int(n - onset),
        "f_statistic": float(f_stat) if np.isfinite(f_stat) else None,
    }
