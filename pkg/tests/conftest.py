import csv
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from p2pcredit.ingest import ACCEPTED_SCHEMA, REJECTED_SCHEMA  # noqa: E402
from p2pcredit.synthetic import SyntheticConfig, generate_synthetic  # noqa: E402

BUNDLED_PURPOSES = {
    "debt_consolidation": 0.50,
    "credit_card": 0.18,
    "home_improvement": 0.07,
    "other": 0.06,
    "major_purchase": 0.03,
    "small_business": 0.12,
    "car": 0.04,
}

ACCEPTED_DEFAULTS = {
    "loan_amount": "10000",
    "term": " 36 months",
    "installment": "332.1",
    "emp_length": "5 years",
    "home_ownership": "RENT",
    "verification_status": "Verified",
    "purpose": "credit_card",
    "dti": "15.5",
    "earliest_credit_line": "Jan-2005",
    "open_credit_lines": "9",
    "derogatory_public_records": "0",
    "revolving_utilization": "45.2",
    "total_credit_lines": "20",
    "mortgage_credit_lines": "1",
    "bankruptcies": "0",
    "annual_income": "65000",
    "fico_low": "700",
    "fico_high": "704",
    "revolving_balance": "12000",
    "date": "Mar-2015",
    "loan_status": "Fully Paid",
}

REJECTED_DEFAULTS = {
    "loan_amount": "5000",
    "date": "2015-03-14",
    "purpose": "Debt consolidation",
    "dti": "22.1%",
    "emp_length": "2 years",
}


def _write(path, schema, defaults, rows):
    names = list(schema)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([schema[n] for n in names])
        for row in rows:
            merged = {**defaults, **row}
            w.writerow(["" if merged[n] is None else merged[n] for n in names])
    return str(path)


def write_accepted(path, rows):
    """Accepted-loan CSV in the export schema; each row overrides ACCEPTED_DEFAULTS."""
    return _write(path, ACCEPTED_SCHEMA, ACCEPTED_DEFAULTS, rows)


def write_rejected(path, rows):
    return _write(path, REJECTED_SCHEMA, REJECTED_DEFAULTS, rows)


@pytest.fixture
def accepted_csv(tmp_path):
    return lambda rows, name="accepted.csv": write_accepted(tmp_path / name, rows)


@pytest.fixture
def rejected_csv(tmp_path):
    return lambda rows, name="rejected.csv": write_rejected(tmp_path / name, rows)


def bundled_config(**overrides) -> SyntheticConfig:
    doc = {"n_accepted": 1000, "n_rejected": 10000, "current_fraction": 0.05,
           "purposes": dict(BUNDLED_PURPOSES)}
    doc.update(overrides)
    return SyntheticConfig.from_dict(doc)


@pytest.fixture(scope="session")
def bundled(tmp_path_factory):
    """The bundled synthetic pair (1,000 accepted, 10,000 rejected), seed 7."""
    out = tmp_path_factory.mktemp("bundled")
    return generate_synthetic(bundled_config(), 7, out)


# acceptance-criterion reporting ------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(number, title, passed, detail=""):
        """*passed* is True, False, or None for a criterion that was not run."""
        ACCEPTANCE_LINES.append((number, title, None if passed is None else bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}  {detail}".rstrip())
