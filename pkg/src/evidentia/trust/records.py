"""Evaluation records and curve containers shared by every analysis."""
import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from evidentia.errors import ContractError

NUM_GRADES = 5
OA_GRADE = 2


@dataclass(frozen=True)
class EvalRecord:
    y_true: int
    gamma: float
    grade_pred: int
    epistemic: float
    aleatoric: float
    prob_oa: float


class RecordSet:
    """Column-oriented collection of EvalRecords."""

    columns = tuple(f.name for f in fields(EvalRecord))

    def __init__(self, y_true, gamma, grade_pred, epistemic, aleatoric, prob_oa):
        self.y_true = np.asarray(y_true, dtype=np.int64)
        self.gamma = np.asarray(gamma, dtype=np.float64)
        self.grade_pred = np.asarray(grade_pred, dtype=np.int64)
        self.epistemic = np.asarray(epistemic, dtype=np.float64)
        self.aleatoric = np.asarray(aleatoric, dtype=np.float64)
        self.prob_oa = np.asarray(prob_oa, dtype=np.float64)
        n = len(self.y_true)
        if any(len(getattr(self, c)) != n for c in self.columns):
            raise ContractError("record columns differ in length")
        for name in ("y_true", "grade_pred"):
            v = getattr(self, name)
            if np.any((v < 0) | (v >= NUM_GRADES)):
                raise ContractError(f"{name} outside 0..{NUM_GRADES - 1}")
        if np.any((self.prob_oa < 0) | (self.prob_oa > 1)):
            raise ContractError("prob_oa outside [0, 1]")

    @classmethod
    def from_records(cls, records):
        if isinstance(records, RecordSet):
            return records
        records = list(records)
        return cls(*([getattr(r, c) for r in records] for c in cls.columns))

    def __len__(self):
        return len(self.y_true)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i):
        return EvalRecord(int(self.y_true[i]), float(self.gamma[i]), int(self.grade_pred[i]),
                          float(self.epistemic[i]), float(self.aleatoric[i]), float(self.prob_oa[i]))

    def take(self, index):
        index = np.asarray(index)
        return RecordSet(*(getattr(self, c)[index] for c in self.columns))

    @property
    def correct(self):
        return self.grade_pred == self.y_true

    @property
    def oa_true(self):
        return self.y_true >= OA_GRADE

    @property
    def oa_pred(self):
        return self.grade_pred >= OA_GRADE

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self:
                w.writerow([r.y_true, fmt(r.gamma), r.grade_pred, fmt(r.epistemic),
                            fmt(r.aleatoric), fmt(r.prob_oa)])

    @classmethod
    def from_csv(cls, path):
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        missing = set(cls.columns) - set(rows[0] if rows else cls.columns)
        if missing:
            raise ContractError(f"record file lacks columns {sorted(missing)}")
        return cls(*([float(r[c]) if c not in ("y_true", "grade_pred") else int(r[c]) for r in rows]
                     for c in cls.columns))


def as_records(records):
    rs = RecordSet.from_records(records)
    return rs


@dataclass
class CostParams:
    review: float = 10.0
    ai: float = 0.2
    fn_penalty: float = 100.0
    fp_penalty: float = 20.0
    clinician_error: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ContractError(f"cost parameter {f.name} must be >= 0")
        if self.clinician_error > 1:
            raise ContractError("clinician_error is a probability")


@dataclass
class CurveSeries:
    x: np.ndarray
    y: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape != self.y.shape:
            raise ContractError("curve x and y lengths differ")
        if np.any(np.diff(self.x) <= 0):
            raise ContractError("curve x grid must be strictly increasing")

    def with_band(self, lower, upper):
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        # a percentile band need not contain the full-sample estimate; widen to bracket it
        return CurveSeries(self.x, self.y, np.minimum(lower, self.y), np.maximum(upper, self.y))


def fmt(v):
    """Nine significant digits, the export precision for every table."""
    return f"{float(v):.9g}"
