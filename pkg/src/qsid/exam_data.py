"""Parsing, validation, and preprocessing of exam score data.

Scores are canonicalized at ingest to integer multiples of a grain
(default 0.01 points) so that score equality, marginal fitting, and report
values all share one exact notion of "identical".
"""

import csv
import io
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation, ROUND_HALF_UP
from enum import Enum

import numpy as np

from qsid.errors import EmptyExamError, ParseError

DEFAULT_GRAIN = Decimal("0.01")

MIN_STUDENTS = 25
MIN_QUESTIONS = 20
LOW_COMPLEXITY_LIMIT = 15.0


@dataclass(eq=False)
class ScoreMatrix:
    """Canonical n-students x p-questions score matrix in grain units.

    `units[i, s]` is student i's score on question s divided by `grain`,
    rounded half away from zero. All equality logic runs on these integers.
    """

    student_ids: tuple
    question_labels: tuple
    units: np.ndarray
    grain: Decimal = DEFAULT_GRAIN
    missing_id_rows: int = 0
    empty_cells: int = 0

    def __post_init__(self):
        self.student_ids = tuple(self.student_ids)
        self.question_labels = tuple(self.question_labels)
        self.units = np.asarray(self.units, dtype=np.int64)
        if self.units.ndim != 2:
            raise ValueError("units must be a 2-D array")
        if self.units.shape != (len(self.student_ids), len(self.question_labels)):
            raise ValueError("units shape does not match ids/labels")
        if self.units.size and self.units.min() < 0:
            raise ValueError("scores must be non-negative")
        if any(not s for s in self.student_ids):
            raise ValueError("student ids must be non-empty")
        if self.grain <= 0:
            raise ValueError("grain must be positive")
        self.units.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.student_ids)

    @property
    def p(self) -> int:
        return len(self.question_labels)

    def test_score_units(self) -> np.ndarray:
        """Per-student total score in grain units."""
        return self.units.sum(axis=1)

    def points(self, units: int) -> float:
        return float(Decimal(int(units)) * self.grain)

    def take(self, rows) -> "ScoreMatrix":
        """Row subset preserving the given order; exclusion counters reset."""
        rows = list(rows)
        return ScoreMatrix(
            student_ids=tuple(self.student_ids[i] for i in rows),
            question_labels=self.question_labels,
            units=self.units[rows].copy(),
            grain=self.grain,
        )

    def equals(self, other: "ScoreMatrix") -> bool:
        return (
            self.student_ids == other.student_ids
            and self.question_labels == other.question_labels
            and self.grain == other.grain
            and np.array_equal(self.units, other.units)
        )

    def to_csv(self) -> str:
        """Canonical CSV serialization; parse(to_csv()) round-trips bit-exactly."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["student_id", *self.question_labels])
        for sid, row in zip(self.student_ids, self.units):
            writer.writerow([sid, *(self._format_units(u) for u in row)])
        return buf.getvalue()

    def _format_units(self, u: int) -> str:
        return str((Decimal(int(u)) * self.grain).quantize(self.grain))

    def to_json_dict(self) -> dict:
        """Debug echo of the canonical matrix."""
        return {
            "grain": str(self.grain),
            "student_ids": list(self.student_ids),
            "question_labels": list(self.question_labels),
            "scores": [[self._format_units(u) for u in row] for row in self.units],
        }


@dataclass
class ExclusionLog:
    """Rows removed during preprocessing, by reason."""

    duplicate_ids: tuple = ()
    missing_id_rows: int = 0
    low_score_ids: tuple = ()
    empty_cells: int = 0


class EligibilityStatus(str, Enum):
    OK = "ok"
    OK_LOW_COMPLEXITY = "ok_low_complexity_warning"
    REJECTED_TOO_FEW_STUDENTS = "rejected_too_few_students"
    REJECTED_TOO_FEW_QUESTIONS = "rejected_too_few_questions"


@dataclass
class ExamEligibility:
    n_students: int
    n_questions: int
    complexity: float
    status: EligibilityStatus

    @property
    def rejected(self) -> bool:
        return self.status in (
            EligibilityStatus.REJECTED_TOO_FEW_STUDENTS,
            EligibilityStatus.REJECTED_TOO_FEW_QUESTIONS,
        )


def _canonical_units(text: str, grain: Decimal, where: str) -> int:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise ParseError(f"non-numeric score {text!r} at {where}") from None
    if not value.is_finite():
        raise ParseError(f"non-numeric score {text!r} at {where}")
    if value < 0:
        raise ParseError(f"negative score {text!r} at {where}")
    return int((value / grain).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def parse_exam(source, fmt: str = "csv", grain: Decimal = DEFAULT_GRAIN) -> ScoreMatrix:
    """Parse a delimited byte stream into a canonical ScoreMatrix.

    Header must be `student_id,<q1>,...,<qp>`. Empty cells become score 0
    (counted in `empty_cells`); rows without a student id are dropped and
    counted in `missing_id_rows`.
    """
    if fmt != "csv":
        raise ParseError(f"unsupported input format: {fmt!r}")
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    text = io.TextIOWrapper(source, encoding="utf-8-sig", newline="")
    reader = csv.reader(text)

    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input: missing header row") from None
    header = [cell.strip() for cell in header]
    if not header or header[0] != "student_id":
        raise ParseError("malformed header: first column must be 'student_id'")
    labels = header[1:]
    if not labels:
        raise ParseError("malformed header: no question columns")
    if any(not lbl for lbl in labels):
        raise ParseError("malformed header: empty question label")

    ids: list[str] = []
    rows: list[list[int]] = []
    missing = 0
    empty_cells = 0
    for lineno, cells in enumerate(reader, start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise ParseError(
                f"row {lineno} has {len(cells)} cells, expected {len(header)}"
            )
        sid = cells[0].strip()
        if not sid:
            missing += 1
            continue
        row = []
        for label, cell in zip(labels, cells[1:]):
            cell = cell.strip()
            if not cell:
                empty_cells += 1
                row.append(0)
            else:
                row.append(_canonical_units(cell, grain, f"row {lineno}, column {label!r}"))
        ids.append(sid)
        rows.append(row)

    units = np.array(rows, dtype=np.int64).reshape(len(rows), len(labels))
    return ScoreMatrix(
        student_ids=tuple(ids),
        question_labels=tuple(labels),
        units=units,
        grain=grain,
        missing_id_rows=missing,
        empty_cells=empty_cells,
    )


def preprocess(m: ScoreMatrix) -> tuple[ScoreMatrix, ExclusionLog]:
    """Apply the exclusion rules: duplicated ids and extremely low scorers.

    Every row sharing a duplicated student id is removed (no keep-first),
    then students whose test score is <= 5% of the maximum test score are
    removed. Row order is preserved.
    """
    if m.n == 0:
        raise EmptyExamError("exam has no usable rows")

    seen: dict[str, int] = {}
    for sid in m.student_ids:
        seen[sid] = seen.get(sid, 0) + 1
    duplicates = tuple(sid for sid in dict.fromkeys(m.student_ids) if seen[sid] > 1)
    keep = [i for i, sid in enumerate(m.student_ids) if seen[sid] == 1]
    if not keep:
        raise EmptyExamError("all rows removed: every student id is duplicated")

    totals = m.units[keep].sum(axis=1)
    max_total = int(totals.max())
    # total <= 5% of max, exact in integer units: 20*total <= max
    low_mask = 20 * totals <= max_total
    low_ids = tuple(m.student_ids[keep[i]] for i in np.nonzero(low_mask)[0])
    retained = [keep[i] for i in np.nonzero(~low_mask)[0]]
    if not retained:
        raise EmptyExamError("all rows removed by the low-score rule")

    out = ScoreMatrix(
        student_ids=tuple(m.student_ids[i] for i in retained),
        question_labels=m.question_labels,
        units=m.units[retained].copy(),
        grain=m.grain,
    )
    log = ExclusionLog(
        duplicate_ids=duplicates,
        missing_id_rows=m.missing_id_rows,
        low_score_ids=low_ids,
        empty_cells=m.empty_cells,
    )
    return out, log


def check_eligibility(m: ScoreMatrix) -> ExamEligibility:
    """Gate on student count, question count, and complexity."""
    from qsid.metrics import complexity as _complexity

    total = _complexity(m).total if m.n >= 1 else 0.0
    if m.n < MIN_STUDENTS:
        status = EligibilityStatus.REJECTED_TOO_FEW_STUDENTS
    elif m.p < MIN_QUESTIONS:
        status = EligibilityStatus.REJECTED_TOO_FEW_QUESTIONS
    elif total < LOW_COMPLEXITY_LIMIT:
        status = EligibilityStatus.OK_LOW_COMPLEXITY
    else:
        status = EligibilityStatus.OK
    return ExamEligibility(
        n_students=m.n, n_questions=m.p, complexity=total, status=status
    )


def combine_exams(exams: list[ScoreMatrix], labels: list[str]) -> tuple[ScoreMatrix, tuple]:
    """Join exams on student id, concatenating question columns.

    Only students present in every exam are kept (order: first exam's row
    order). Question labels are prefixed with the exam label to stay unique.
    Returns the combined matrix and the ids dropped by the join.
    """
    if len(exams) != len(labels):
        raise ValueError("one label per exam required")
    if len(exams) == 1:
        return exams[0], ()
    grains = {e.grain for e in exams}
    if len(grains) != 1:
        raise ParseError("combined exams must share one grain")

    # An id duplicated inside one exam cannot be aligned across exams; it is
    # excluded from the join and reported alongside the not-in-all-exams ids.
    unique_sets = []
    for e in exams:
        counts: dict[str, int] = {}
        for sid in e.student_ids:
            counts[sid] = counts.get(sid, 0) + 1
        unique_sets.append({sid for sid, c in counts.items() if c == 1})
    common = set.intersection(*unique_sets)
    ordered = [sid for sid in exams[0].student_ids if sid in common]
    dropped = tuple(
        sid
        for e in exams
        for sid in e.student_ids
        if sid not in common
    )
    if not ordered:
        raise EmptyExamError("no student appears in every combined exam")

    blocks = []
    for exam in exams:
        index = {sid: i for i, sid in enumerate(exam.student_ids)}
        blocks.append(exam.units[[index[sid] for sid in ordered]])
    units = np.hstack(blocks)
    qlabels = tuple(
        f"{label}:{q}" for exam, label in zip(exams, labels) for q in exam.question_labels
    )
    combined = ScoreMatrix(
        student_ids=tuple(ordered),
        question_labels=qlabels,
        units=units,
        grain=exams[0].grain,
        missing_id_rows=sum(e.missing_id_rows for e in exams),
        empty_cells=sum(e.empty_cells for e in exams),
    )
    return combined, tuple(dict.fromkeys(dropped))
