from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd

from unlabeled_risk.core.errors import ConfigError
from unlabeled_risk.utils.constants import FLOAT_FORMAT

CONVERGED = "converged"
STALLED = "stalled"
MAX_ITERATIONS = "max_iterations"

TRACE_COLUMNS = ["iter", "risk_unsup", "risk_sup", "error_rate"]
TEST_COLUMNS = ["risk_unsup_test", "risk_sup_test"]


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    risk_unsup: float
    risk_sup: Optional[float] = None
    error_rate: Optional[float] = None
    risk_unsup_test: Optional[float] = None
    risk_sup_test: Optional[float] = None


class TrainTrace:
    """
    Per-iteration history of a training run: the unsupervised risk on the
    training margins and, when a labeled evaluation set is attached, the
    supervised risk and error rate on it. Runs on a train/test split also
    carry both risks on the test split.
    """

    def __init__(self):
        self._records: List[TraceRecord] = []
        self.status: Optional[str] = None

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self._records], dtype=int)

    @property
    def risks(self) -> np.ndarray:
        return np.array([r.risk_unsup for r in self._records])

    @property
    def has_test_columns(self) -> bool:
        return any(r.risk_sup_test is not None for r in self._records)

    def append(self, record: TraceRecord) -> None:
        if self._records and record.iteration <= self._records[-1].iteration:
            raise ConfigError(
                f"Trace iterations must increase: {record.iteration} after "
                f"{self._records[-1].iteration}."
            )
        self._records.append(record)

    def to_frame(self) -> pd.DataFrame:
        columns = TRACE_COLUMNS + (TEST_COLUMNS if self.has_test_columns else [])
        rows = [[getattr(r, _FIELDS.get(c, c)) for c in columns] for r in self._records]
        frame = pd.DataFrame(rows, columns=columns)
        return frame.astype({c: (int if c == "iter" else float) for c in columns})

    def write_csv(self, path) -> None:
        """
        Write ``iter,risk_unsup,risk_sup,error_rate`` (plus the test columns
        when present); missing values are empty fields.
        """
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")

    def __len__(self):
        return len(self._records)

    def __repr__(self):
        return f"TrainTrace(records={len(self)}, status={self.status!r})"


_FIELDS = {"iter": "iteration"}
