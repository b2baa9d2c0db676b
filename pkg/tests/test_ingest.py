import math

import numpy as np
import pytest

from p2pcredit import DataError
from p2pcredit.ingest import (
    PHASE1_NUMERIC,
    PHASE2_NUMERIC,
    ParseSummary,
    SampleSet,
    Source,
    build_phase1,
    build_phase2,
    credit_history_years,
    format_month,
    month_ordinal,
    normalize_token,
    parse_accepted,
    parse_cutoff,
    parse_emp_length,
    parse_month,
    parse_number,
    parse_rejected,
    status_label,
)


class TestFieldParsers:
    @pytest.mark.parametrize("text, expected", [
        ("10+ years", 10.0),
        ("< 1 year", 0.0),
        ("1 year", 1.0),
        ("7 years", 7.0),
        ("n/a", math.nan),
        ("", math.nan),
        (None, math.nan),
        ("about five", math.nan),
    ])
    def test_emp_length(self, text, expected):
        got = parse_emp_length(text)
        if math.isnan(expected):
            assert math.isnan(got)
        else:
            assert got == expected

    def test_percent_is_stripped(self):
        assert parse_number("15.2%") == 15.2
        assert parse_number(" 3.5 % ") == 3.5

    def test_blank_and_garbage_numbers_are_missing(self):
        assert math.isnan(parse_number(""))
        assert math.isnan(parse_number("n/a"))
        assert math.isnan(parse_number("twelve"))

    @pytest.mark.parametrize("text, ym", [
        ("Dec-2015", (2015, 12)),
        ("2015-12-31", (2015, 12)),
        ("2015-12", (2015, 12)),
        ("15/12/2015", None),
        ("", None),
    ])
    def test_parse_month(self, text, ym):
        assert parse_month(text) == ym

    def test_month_ordinal_round_trip(self):
        for y in (2007, 2018):
            for m in range(1, 13):
                assert format_month(month_ordinal(y, m)) == f"{y:04d}-{m:02d}"

    def test_cutoff(self):
        assert parse_cutoff(None) is None
        assert parse_cutoff("2016-01") == month_ordinal(2016, 1)
        assert parse_cutoff("Jan-2016") == month_ordinal(2016, 1)
        with pytest.raises(DataError):
            parse_cutoff("soon")

    def test_tokens_are_normalized(self):
        assert normalize_token("  Debt Consolidation ") == "debt_consolidation"
        assert normalize_token("debt_consolidation") == "debt_consolidation"
        assert normalize_token("CAR") == "car"
        assert normalize_token("") is None

    def test_credit_history_years(self):
        assert credit_history_years((2015, 3), "Mar-2005") == 10.0
        assert credit_history_years((2015, 3), "Sep-2014") == 0.5
        assert math.isnan(credit_history_years((2015, 3), None))

    def test_status_mapping(self):
        assert status_label("Fully Paid") == 0
        assert status_label("Charged Off") == 1
        assert status_label("Default") == 1
        assert status_label("Current") is None
        assert status_label(None) is None


class TestParseAccepted:
    def test_valid_rows(self, accepted_csv):
        path = accepted_csv([{}, {}, {}])
        summary = ParseSummary()
        records = list(parse_accepted(path, summary=summary))
        assert len(records) == 3
        assert all(r.source is Source.ACCEPTED for r in records)
        assert summary.rows_read == 3 and summary.retained == 3 and summary.n_dropped == 0

    def test_empty_issue_date_is_dropped_and_counted(self, accepted_csv):
        path = accepted_csv([{}, {"date": ""}, {"date": "someday"}])
        summary = ParseSummary()
        records = list(parse_accepted(path, summary=summary))
        assert len(records) == 1
        assert summary.dropped["bad_date"] == 2
        assert summary.retained + summary.n_dropped == summary.rows_read

    def test_malformed_row_is_dropped(self, tmp_path, accepted_csv):
        path = accepted_csv([{}, {}])
        with open(path, "a", encoding="utf-8") as fh:
            fh.write("1,2,3\n")
        summary = ParseSummary()
        assert len(list(parse_accepted(path, summary=summary))) == 2
        assert summary.dropped["malformed_row"] == 1

    def test_missing_file_is_fatal(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_accepted(tmp_path / "nope.csv")

    def test_missing_columns_are_listed(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("loan_amnt,issue_d\n100,Jan-2015\n")
        with pytest.raises(DataError) as err:
            parse_accepted(path)
        assert "loan_status" in str(err.value) and "dti" in str(err.value)

    def test_schema_map_handles_renamed_columns(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("amt,when,title,ratio,emp\n500,2014-02-01,Car,10%,3 years\n")
        schema = {"loan_amount": "amt", "date": "when", "purpose": "title", "dti": "ratio",
                  "emp_length": "emp"}
        (rec,) = list(parse_rejected(path, schema))
        assert rec.date == (2014, 2)
        assert rec.get("dti") == "10%"

    def test_summary_text_is_line_oriented(self, accepted_csv):
        path = accepted_csv([{}, {"date": ""}])
        summary = ParseSummary()
        list(parse_accepted(path, summary=summary))
        text = summary.to_text()
        assert "rows_read: 2" in text and "retained: 1" in text
        assert "dropped[bad_date]: 1" in text


class TestParseRejected:
    def test_percent_dti(self, rejected_csv):
        (rec,) = list(parse_rejected(rejected_csv([{"dti": "15.2%"}])))
        assert parse_number(rec.get("dti")) == 15.2

    def test_rejected_records_carry_no_status(self, rejected_csv):
        (rec,) = list(parse_rejected(rejected_csv([{}])))
        assert rec.source is Source.REJECTED
        assert "loan_status" not in rec.fields_raw

    @pytest.mark.parametrize("raw, years", [("10+ years", 10.0), ("< 1 year", 0.0)])
    def test_emp_length(self, rejected_csv, raw, years):
        (rec,) = list(parse_rejected(rejected_csv([{"emp_length": raw}])))
        assert parse_emp_length(rec.get("emp_length")) == years


class TestBuildPhase1:
    def test_counts_and_labels(self, accepted_csv, rejected_csv):
        acc = list(parse_accepted(accepted_csv([{}, {}])))
        rej = list(parse_rejected(rejected_csv([{}, {}, {}])))
        s = build_phase1(acc, rej)
        assert s.n_rows == 5
        assert s.labels.sum() == 2
        assert s.numeric_names == list(PHASE1_NUMERIC)
        assert list(s.categorical) == ["purpose"]

    def test_input_order_is_kept(self, accepted_csv, rejected_csv):
        acc = list(parse_accepted(accepted_csv([{"date": "Jun-2016"}, {"date": "Jan-2012"}])))
        rej = list(parse_rejected(rejected_csv([{"date": "2014-01-01"}])))
        s = build_phase1(acc, rej)
        assert [format_month(d) for d in s.dates] == ["2016-06", "2012-01", "2014-01"]

    def test_purpose_tokens_shared_across_sources(self, accepted_csv, rejected_csv):
        acc = list(parse_accepted(accepted_csv([{"purpose": "debt_consolidation"}])))
        rej = list(parse_rejected(rejected_csv([{"purpose": "Debt Consolidation"}])))
        s = build_phase1(acc, rej)
        assert list(s.categorical["purpose"]) == ["debt_consolidation", "debt_consolidation"]

    def test_empty_class_is_fatal(self, accepted_csv):
        acc = list(parse_accepted(accepted_csv([{}])))
        with pytest.raises(DataError):
            build_phase1(acc, [])
        with pytest.raises(DataError):
            build_phase1([], acc)

    def test_no_status_derived_feature(self, accepted_csv, rejected_csv):
        acc = list(parse_accepted(accepted_csv([{"loan_status": "Charged Off"}])))
        rej = list(parse_rejected(rejected_csv([{}])))
        s = build_phase1(acc, rej)
        names = set(s.numeric_names) | set(s.categorical)
        assert names == {"dti", "emp_length", "loan_amount", "purpose"}


class TestBuildPhase2:
    def test_status_filter(self, accepted_csv):
        rows = [{"loan_status": s} for s in ("Fully Paid", "Current", "Charged Off", "Default")]
        s = build_phase2(parse_accepted(accepted_csv(rows)))
        assert s.n_rows == 3
        assert list(s.labels) == [0, 1, 1]
        assert s.provenance["dropped"] == {"status:Current": 1}
        assert s.provenance["rows_in"] == s.provenance["rows_out"] + 1

    def test_log_features(self, accepted_csv):
        s = build_phase2(parse_accepted(accepted_csv([
            {"annual_income": "100000", "revolving_balance": "0"},
        ])))
        col = s.numeric_names.index
        assert s.numeric[0, col("log_annual_income")] == pytest.approx(11.512925465, abs=1e-9)
        assert s.numeric[0, col("log_revolving_balance")] == 0.0

    def test_eighteen_features_and_no_excluded_ones(self, accepted_csv):
        s = build_phase2(parse_accepted(accepted_csv([{}])))
        names = s.numeric_names + list(s.categorical)
        assert len(names) == 18
        assert s.numeric_names == list(PHASE2_NUMERIC)
        for banned in ("int_rate", "grade", "sub_grade", "addr_state", "zip_code"):
            assert banned not in names

    def test_fico_is_midpoint(self, accepted_csv):
        s = build_phase2(parse_accepted(accepted_csv([{"fico_low": "690", "fico_high": "694"}])))
        assert s.numeric[0, s.numeric_names.index("fico")] == 692.0

    def test_term_and_credit_history(self, accepted_csv):
        s = build_phase2(parse_accepted(accepted_csv([
            {"term": " 60 months", "date": "Mar-2015", "earliest_credit_line": "Mar-2000"},
        ])))
        col = s.numeric_names.index
        assert s.numeric[0, col("term")] == 60.0
        assert s.numeric[0, col("earliest_credit_line")] == 15.0

    def test_no_labelled_rows_is_fatal(self, accepted_csv):
        with pytest.raises(DataError):
            build_phase2(parse_accepted(accepted_csv([{"loan_status": "Current"}])))

    def test_unlabelled_mode_keeps_every_row(self, accepted_csv):
        s = build_phase2(parse_accepted(accepted_csv([{"loan_status": "Current"}, {}])),
                         require_label=False)
        assert list(s.labels) == [-1, 0]


class TestSampleSet:
    def test_inconsistent_lengths_rejected(self):
        with pytest.raises(DataError):
            SampleSet(np.zeros((3, 1)), ["a"], {"c": np.array(["x", "y"], dtype=object)},
                      np.arange(3), np.zeros(3))

    def test_coverage(self):
        s = SampleSet(np.array([[1.0], [np.nan], [3.0], [np.nan]]), ["a"],
                      {"c": np.array(["x", None, None, None], dtype=object)},
                      np.arange(4), np.zeros(4))
        cov = {c.name: c.coverage for c in s.columns}
        assert cov == {"a": 0.5, "c": 0.25}

    def test_take_and_cohort_mask(self):
        s = SampleSet(np.arange(4.0).reshape(4, 1), ["a"],
                      {"purpose": np.array(["car", "small_business", "car", None], dtype=object)},
                      np.arange(4), np.array([0, 1, 0, 1]))
        m = s.cohort_mask("Small Business")
        assert list(m) == [False, True, False, False]
        sub = s.take(m)
        assert sub.n_rows == 1 and sub.numeric[0, 0] == 1.0
