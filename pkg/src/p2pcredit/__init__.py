"""Two-phase P2P lending models: loan acceptance and default prediction."""

from p2pcredit.exceptions import DataError, StageError, TrainingDivergedError
from p2pcredit.ingest import (
    LoanRecord,
    SampleSet,
    build_phase1,
    build_phase2,
    parse_accepted,
    parse_rejected,
)
from p2pcredit.linear import LinearSVMGD, LogisticRegressionGD
from p2pcredit.metrics import EvalReport, auc, recall_report
from p2pcredit.neural import MLPClassifierGD
from p2pcredit.preprocess import (
    PreprocessState,
    SampleSetEncoder,
    class_weights,
    downsample_majority,
    drop_low_coverage,
    time_split,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "EvalReport",
    "LinearSVMGD",
    "LoanRecord",
    "LogisticRegressionGD",
    "MLPClassifierGD",
    "PreprocessState",
    "SampleSet",
    "SampleSetEncoder",
    "StageError",
    "TrainingDivergedError",
    "auc",
    "build_phase1",
    "build_phase2",
    "class_weights",
    "downsample_majority",
    "drop_low_coverage",
    "parse_accepted",
    "parse_rejected",
    "recall_report",
    "time_split",
]
