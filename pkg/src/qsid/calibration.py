"""Class-size-specific collusion-score thresholds and FPR intervals.

A threshold table maps class sizes to the four CS cutoffs (c1..c4). The
shipped defaults carry the published over-250 row plus sub-250 rows
calibrated at build time against bundled simulated null exams; users can
recalibrate from their own proctored exams via subsampling-and-quantile-
matching.
"""

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from qsid import util
from qsid.errors import CalibrationError, ConfigError, DegenerateExamError
from qsid.exam_data import ScoreMatrix
from qsid.groups import DEFAULT_FPR_LEVELS, RiskBin, assign_bins, merge_groups, provisional_groups
from qsid.metrics import identity_scores, student_metrics

DEFAULT_GRID = tuple(range(15, 51, 5)) + tuple(range(60, 251, 10))
DEFAULT_ANCHORS = (0.9455, 0.9971, 0.9988, 0.9999)
OVER_250_ROW = (1.23, 1.50, 1.60, 1.70)

_MAX_RETRIES = 10


@dataclass
class FprInterval:
    """A false-positive-rate estimate with its 95% Wald half-width."""

    estimate: float
    half_width: float
    n: int

    def clipped(self) -> tuple[float, float]:
        return (
            max(0.0, self.estimate - self.half_width),
            min(1.0, self.estimate + self.half_width),
        )


def wald_ci(p_hat: float, n: int) -> FprInterval:
    """95% Wald interval for a proportion: p +- 1.96*sqrt(p(1-p)/n)."""
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError("p_hat must lie in [0, 1]")
    if n < 1:
        raise ValueError("n must be at least 1")
    half = 1.96 * math.sqrt(p_hat * (1.0 - p_hat) / n)
    return FprInterval(estimate=p_hat, half_width=half, n=n)


@dataclass
class ThresholdTable:
    grid: tuple
    rows: dict
    over_250: tuple
    quantile_anchors: tuple = DEFAULT_ANCHORS

    def __post_init__(self):
        self.grid = tuple(int(n) for n in self.grid)
        if list(self.grid) != sorted(set(self.grid)):
            raise ConfigError("grid sizes must be strictly increasing")
        q1, q2, q3, q4 = self.quantile_anchors
        if not (0 < q1 < q2 < q3 < q4 < 1):
            raise ConfigError("quantile anchors must satisfy 0 < q1 < q2 < q3 < q4 < 1")
        for size, row in list(self.rows.items()) + [("over_250", self.over_250)]:
            c1, c2, c3, c4 = row
            if not (0 < c1 < c2 < c3 < c4):
                raise ConfigError(f"thresholds for {size} must satisfy 0 < c1 < c2 < c3 < c4")

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.dumps())

    def dumps(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        buf.write("#anchors," + ",".join(repr(q) for q in self.quantile_anchors) + "\n")
        writer.writerow(["class_size", "c1", "c2", "c3", "c4"])
        for size in self.grid:
            writer.writerow([size, *(repr(c) for c in self.rows[size])])
        writer.writerow(["over_250", *(repr(c) for c in self.over_250)])
        return buf.getvalue()

    @classmethod
    def load(cls, path) -> "ThresholdTable":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return cls.loads(fh.read())

    @classmethod
    def loads(cls, text: str) -> "ThresholdTable":
        anchors = DEFAULT_ANCHORS
        rows: dict = {}
        over = None
        grid = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#anchors,"):
                    anchors = tuple(float(v) for v in line.split(",")[1:])
                continue
            cells = [c.strip() for c in line.split(",")]
            if cells[0] == "class_size":
                continue
            if len(cells) != 5:
                raise ConfigError(f"bad threshold row: {line!r}")
            values = tuple(float(v) for v in cells[1:])
            if cells[0] == "over_250":
                over = values
            else:
                size = int(cells[0])
                grid.append(size)
                rows[size] = values
        if over is None:
            raise ConfigError("threshold table is missing the over_250 row")
        return cls(grid=tuple(grid), rows=rows, over_250=over, quantile_anchors=anchors)


def default_threshold_table() -> ThresholdTable:
    """The table shipped with the package (sub-250 rows are calibrated
    against bundled simulated null exams, not real proctored data)."""
    text = resources.files("qsid.data").joinpath("default_thresholds.csv").read_text()
    return ThresholdTable.loads(text)


def threshold_lookup(table: ThresholdTable, n: int) -> tuple[float, float, float, float]:
    """Thresholds for a class of n students: over-250 row above 250, else
    the nearest grid row (exact ties round to the larger size)."""
    if n > 250:
        return table.over_250
    if not table.grid:
        raise ConfigError("threshold table has no class-size rows")
    best = min(table.grid, key=lambda g: (abs(g - n), -g))
    if best not in table.rows:
        raise ConfigError(f"threshold table is missing the row for class size {best}")
    return table.rows[best]


def exam_cs_values(m: ScoreMatrix) -> np.ndarray:
    """Collusion scores of every student in one exam."""
    return np.array([sm.cs for sm in student_metrics(m, identity_scores(m))])


def _subsample_cs(exam: ScoreMatrix, n: int, seed: int, exam_idx: int, rep: int) -> np.ndarray:
    for attempt in range(_MAX_RETRIES + 1):
        rng = util.rng_stream(seed, util.STREAM_CALIBRATE, exam_idx, n, rep, attempt)
        rows = np.sort(rng.choice(exam.n, size=n, replace=False))
        try:
            return exam_cs_values(exam.take(rows))
        except DegenerateExamError:
            continue
    raise CalibrationError(
        f"subsample of size {n} from exam {exam_idx} stayed degenerate "
        f"after {_MAX_RETRIES} retries"
    )


def _pooled_quantiles(pool: np.ndarray, anchors: tuple) -> tuple:
    values = tuple(float(np.quantile(pool, q, method="linear")) for q in anchors)
    if not (0 < values[0] < values[1] < values[2] < values[3]):
        raise CalibrationError(
            "calibrated thresholds are not strictly increasing; the pooled "
            "CS sample has too little mass above the anchors"
        )
    return values


def calibrate_thresholds(
    null_exams: list[ScoreMatrix],
    grid: tuple = DEFAULT_GRID,
    anchors: tuple = DEFAULT_ANCHORS,
    repeats: int = 100,
    seed: int = 0,
    threads: int | None = None,
) -> ThresholdTable:
    """Build a threshold table from proctored (collusion-free) exams.

    For each grid size n, every null exam is subsampled to n students
    `repeats` times without replacement, each subsampled student's CS is
    computed within the subsample, and the pooled CS values give the four
    anchor quantiles. The over-250 row uses the un-subsampled pooled CS
    values. Degenerate subsamples are redrawn up to 10 times.

    Deterministic for a given seed regardless of thread count.
    """
    if not null_exams:
        raise CalibrationError("at least one null exam is required")
    grid = tuple(int(n) for n in grid)
    if grid:
        largest = max(grid)
        for idx, exam in enumerate(null_exams):
            if exam.n < largest:
                raise CalibrationError(
                    f"null exam {idx} has {exam.n} students; every null exam "
                    f"must have at least max(grid) = {largest}"
                )

    full_pool = np.concatenate([exam_cs_values(exam) for exam in null_exams])
    over_250 = _pooled_quantiles(full_pool, anchors)

    tasks = [
        (n, e, r)
        for n in grid
        for e in range(len(null_exams))
        for r in range(repeats)
    ]
    results: dict[tuple, np.ndarray] = {}
    workers = util.worker_count(threads)
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for key, cs in zip(
                tasks,
                pool.map(
                    lambda t: _subsample_cs(null_exams[t[1]], t[0], seed, t[1], t[2]),
                    tasks,
                ),
            ):
                results[key] = cs
    else:
        for n, e, r in tasks:
            results[(n, e, r)] = _subsample_cs(null_exams[e], n, seed, e, r)

    rows = {}
    for n in grid:
        pool_values = np.concatenate(
            [results[(n, e, r)] for e in range(len(null_exams)) for r in range(repeats)]
        )
        rows[n] = _pooled_quantiles(pool_values, anchors)

    return ThresholdTable(grid=grid, rows=rows, over_250=over_250, quantile_anchors=anchors)


def null_bin_rates(
    null_exams: list[ScoreMatrix], table: ThresholdTable
) -> dict[RiskBin, FprInterval]:
    """Cumulative fraction of null-exam students landing in each risk bin.

    Optional diagnostic for recalibrating the empirical FPR levels from
    user-provided proctored exams; reported alongside the fixed defaults,
    never silently replacing them.
    """
    counts = {RiskBin.LOW: 0, RiskBin.MEDIUM: 0, RiskBin.HIGH: 0}
    total = 0
    for exam in null_exams:
        total += exam.n
        thresholds = threshold_lookup(table, exam.n)
        metrics = student_metrics(exam, identity_scores(exam))
        groups = merge_groups(provisional_groups(metrics, thresholds[0], thresholds[1]), metrics)
        for g in assign_bins(groups, thresholds, DEFAULT_FPR_LEVELS):
            counts[g.bin] += len(g.members)
    low = counts[RiskBin.LOW]
    med = low + counts[RiskBin.MEDIUM]
    high = med + counts[RiskBin.HIGH]
    return {
        RiskBin.LOW: wald_ci(low / total, total),
        RiskBin.MEDIUM: wald_ci(med / total, total),
        RiskBin.HIGH: wald_ci(high / total, total),
    }
