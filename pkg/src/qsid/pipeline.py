"""End-to-end orchestration: parse -> preprocess -> detect -> quantify.

Produces a ReportBundle, a JSON-serializable snapshot of everything the
instructor report shows. Rendering (HTML) and serialization (JSON) live in
qsid.report; the bundle round-trips through JSON without loss.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qsid.calibration import (
    ThresholdTable,
    default_threshold_table,
    threshold_lookup,
    wald_ci,
)
from qsid.errors import IneligibleExamError, ParseError, QsidError
from qsid.exam_data import (
    EligibilityStatus,
    check_eligibility,
    combine_exams,
    parse_exam,
    preprocess,
)
from qsid.groups import (
    DEFAULT_FPR_LEVELS,
    EMP_FPR_NULL_STUDENTS,
    RiskBin,
    apply_synfpr_exclusion,
    assign_bins,
    merge_groups,
    provisional_groups,
)
from qsid.metrics import complexity, identity_scores, student_metrics
from qsid.synthetic import CS_HIST_BIN_WIDTH, fit_copula, synthetic_fpr

SCHEMA_VERSION = 1

_STAGE_HINTS = {
    "parse": "check the CSV header and cell values at the named location",
    "preprocess": "the exam lost all rows to exclusion rules; verify the input data",
    "metrics": "identity metrics are degenerate; the exam may have near-constant scores",
    "thresholds": "check the threshold table file format and grid rows",
    "detect": "internal detection-stage failure",
    "synthetic": "the fitted null model failed; try fewer cohorts or check score variation",
}


class StageError(QsidError):
    """An upstream failure annotated with its pipeline stage and a hint."""

    def __init__(self, stage: str, original: Exception):
        self.stage = stage
        self.original = original
        hint = _STAGE_HINTS.get(stage, "")
        super().__init__(f"[{stage}] {original}" + (f" ({hint})" if hint else ""))


@dataclass
class RunConfig:
    input_paths: tuple
    output_dir: str = "."
    seed: int = 0
    synthetic_students: int = 100_000
    cohorts: int = 5
    threshold_table_path: str | None = None
    empirical_cs_path: str | None = "bundled"
    formats: tuple = ("html", "json")
    course_label: str = ""
    exam_label: str = ""
    threads: int | None = None

    def __post_init__(self):
        if isinstance(self.input_paths, (str, Path)):
            self.input_paths = (str(self.input_paths),)
        self.input_paths = tuple(str(p) for p in self.input_paths)
        if self.synthetic_students < 1:
            raise ValueError("synthetic_students must be at least 1")
        if self.cohorts < 2:
            raise ValueError("cohorts must be at least 2")
        unknown = set(self.formats) - {"html", "json"}
        if unknown:
            raise ValueError(f"unknown output formats: {sorted(unknown)}")


@dataclass
class ReportHeader:
    course_label: str
    exam_label: str
    n_students: int
    n_exams_combined: int
    n_questions: int
    complexity: float
    complexity_per_exam: tuple
    low_complexity_warning: bool


@dataclass
class HistogramSeries:
    label: str
    n_samples: int
    counts: tuple


@dataclass
class CsHistograms:
    bin_width: float
    query: HistogramSeries
    empirical: HistogramSeries | None
    synthetic: HistogramSeries


@dataclass
class StudentRow:
    id: str
    test_score: float
    rank: int
    max_is: int
    median_is: float
    im: float
    local_median_im: float
    cs: float
    partner1_id: str
    partner2_id: str
    partner1_tie_ids: tuple


@dataclass
class GroupRow:
    rank: int
    member_ids: tuple
    member_cs: tuple
    max_cs: float
    bin: str
    emp_fpr: float
    syn_fpr: float
    excluded: bool


@dataclass
class FprBinRow:
    bin: str
    emp_level: float
    emp_half_width: float
    emp_n: int
    syn_level: float
    syn_half_width: float
    syn_n: int


@dataclass
class IsHistogramData:
    group_rank: int
    member_id: str
    counts: tuple
    group_pair_is: tuple


@dataclass
class ExclusionReport:
    duplicate_ids: tuple
    missing_id_rows: int
    low_score_ids: tuple
    empty_cells: int
    join_dropped_ids: tuple


@dataclass
class ReportBundle:
    schema_version: int
    header: ReportHeader
    thresholds: dict
    students: tuple
    groups: tuple
    fpr_bins: tuple
    cs_histograms: CsHistograms
    is_histograms: tuple
    exclusions: ExclusionReport
    n_synthetic: int
    synthetic_replicates: int
    seed: int
    cohorts: int

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "header": {
                "course_label": self.header.course_label,
                "exam_label": self.header.exam_label,
                "n_students": self.header.n_students,
                "n_exams_combined": self.header.n_exams_combined,
                "n_questions": self.header.n_questions,
                "complexity": self.header.complexity,
                "complexity_per_exam": list(self.header.complexity_per_exam),
                "low_complexity_warning": self.header.low_complexity_warning,
            },
            "thresholds": dict(self.thresholds),
            "students": [
                {
                    "id": s.id,
                    "test_score": s.test_score,
                    "rank": s.rank,
                    "max_is": s.max_is,
                    "median_is": s.median_is,
                    "im": s.im,
                    "local_median_im": s.local_median_im,
                    "cs": s.cs,
                    "partner1_id": s.partner1_id,
                    "partner2_id": s.partner2_id,
                    "partner1_tie_ids": list(s.partner1_tie_ids),
                }
                for s in self.students
            ],
            "groups": [
                {
                    "rank": g.rank,
                    "member_ids": list(g.member_ids),
                    "member_cs": list(g.member_cs),
                    "max_cs": g.max_cs,
                    "bin": g.bin,
                    "emp_fpr": g.emp_fpr,
                    "syn_fpr": g.syn_fpr,
                    "excluded": g.excluded,
                }
                for g in self.groups
            ],
            "fpr_bins": [
                {
                    "bin": r.bin,
                    "emp_level": r.emp_level,
                    "emp_half_width": r.emp_half_width,
                    "emp_n": r.emp_n,
                    "syn_level": r.syn_level,
                    "syn_half_width": r.syn_half_width,
                    "syn_n": r.syn_n,
                }
                for r in self.fpr_bins
            ],
            "cs_histograms": {
                "bin_width": self.cs_histograms.bin_width,
                "query": _series_dict(self.cs_histograms.query),
                "empirical": _series_dict(self.cs_histograms.empirical),
                "synthetic": _series_dict(self.cs_histograms.synthetic),
            },
            "is_histograms": [
                {
                    "group_rank": h.group_rank,
                    "member_id": h.member_id,
                    "counts": list(h.counts),
                    "group_pair_is": list(h.group_pair_is),
                }
                for h in self.is_histograms
            ],
            "exclusions": {
                "duplicate_ids": list(self.exclusions.duplicate_ids),
                "missing_id_rows": self.exclusions.missing_id_rows,
                "low_score_ids": list(self.exclusions.low_score_ids),
                "empty_cells": self.exclusions.empty_cells,
                "join_dropped_ids": list(self.exclusions.join_dropped_ids),
            },
            "n_synthetic": self.n_synthetic,
            "synthetic_replicates": self.synthetic_replicates,
            "seed": self.seed,
            "cohorts": self.cohorts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportBundle":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ParseError(f"unsupported report schema version: {d.get('schema_version')!r}")
        h = d["header"]
        ch = d["cs_histograms"]
        return cls(
            schema_version=d["schema_version"],
            header=ReportHeader(
                course_label=h["course_label"],
                exam_label=h["exam_label"],
                n_students=h["n_students"],
                n_exams_combined=h["n_exams_combined"],
                n_questions=h["n_questions"],
                complexity=h["complexity"],
                complexity_per_exam=tuple(h["complexity_per_exam"]),
                low_complexity_warning=h["low_complexity_warning"],
            ),
            thresholds=dict(d["thresholds"]),
            students=tuple(
                StudentRow(
                    id=s["id"],
                    test_score=s["test_score"],
                    rank=s["rank"],
                    max_is=s["max_is"],
                    median_is=s["median_is"],
                    im=s["im"],
                    local_median_im=s["local_median_im"],
                    cs=s["cs"],
                    partner1_id=s["partner1_id"],
                    partner2_id=s["partner2_id"],
                    partner1_tie_ids=tuple(s["partner1_tie_ids"]),
                )
                for s in d["students"]
            ),
            groups=tuple(
                GroupRow(
                    rank=g["rank"],
                    member_ids=tuple(g["member_ids"]),
                    member_cs=tuple(g["member_cs"]),
                    max_cs=g["max_cs"],
                    bin=g["bin"],
                    emp_fpr=g["emp_fpr"],
                    syn_fpr=g["syn_fpr"],
                    excluded=g["excluded"],
                )
                for g in d["groups"]
            ),
            fpr_bins=tuple(
                FprBinRow(
                    bin=r["bin"],
                    emp_level=r["emp_level"],
                    emp_half_width=r["emp_half_width"],
                    emp_n=r["emp_n"],
                    syn_level=r["syn_level"],
                    syn_half_width=r["syn_half_width"],
                    syn_n=r["syn_n"],
                )
                for r in d["fpr_bins"]
            ),
            cs_histograms=CsHistograms(
                bin_width=ch["bin_width"],
                query=_series_from(ch["query"]),
                empirical=_series_from(ch["empirical"]),
                synthetic=_series_from(ch["synthetic"]),
            ),
            is_histograms=tuple(
                IsHistogramData(
                    group_rank=h2["group_rank"],
                    member_id=h2["member_id"],
                    counts=tuple(h2["counts"]),
                    group_pair_is=tuple(h2["group_pair_is"]),
                )
                for h2 in d["is_histograms"]
            ),
            exclusions=ExclusionReport(
                duplicate_ids=tuple(d["exclusions"]["duplicate_ids"]),
                missing_id_rows=d["exclusions"]["missing_id_rows"],
                low_score_ids=tuple(d["exclusions"]["low_score_ids"]),
                empty_cells=d["exclusions"]["empty_cells"],
                join_dropped_ids=tuple(d["exclusions"]["join_dropped_ids"]),
            ),
            n_synthetic=d["n_synthetic"],
            synthetic_replicates=d["synthetic_replicates"],
            seed=d["seed"],
            cohorts=d["cohorts"],
        )


def _series_dict(s: HistogramSeries | None):
    if s is None:
        return None
    return {"label": s.label, "n_samples": s.n_samples, "counts": list(s.counts)}


def _series_from(d) -> HistogramSeries | None:
    if d is None:
        return None
    return HistogramSeries(label=d["label"], n_samples=d["n_samples"], counts=tuple(d["counts"]))


def _bin_counts(values: np.ndarray, width: float) -> tuple:
    if len(values) == 0:
        return (0,)
    idx = np.floor(np.asarray(values, dtype=np.float64) / width).astype(np.int64)
    return tuple(int(c) for c in np.bincount(idx))


def load_empirical_cs(path) -> np.ndarray:
    """Read a precomputed null CS sample: one value per line, '#' comments
    and an optional 'cs' header allowed."""
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line == "cs":
                continue
            values.append(float(line))
    if not values:
        raise ParseError(f"empirical CS sample {path!r} contains no values")
    return np.array(values)


def bundled_empirical_cs_path() -> str:
    from importlib import resources

    return str(resources.files("qsid.data").joinpath("empirical_control_cs.csv"))


def run_pipeline(cfg: RunConfig) -> ReportBundle:
    """Run the full analysis for one query exam (or combined exams)."""
    try:
        exams = []
        labels = []
        for path in cfg.input_paths:
            with open(path, "rb") as fh:
                exams.append(parse_exam(fh))
            labels.append(Path(path).stem)
        combined, join_dropped = combine_exams(exams, labels)
    except OSError as exc:
        raise StageError("parse", exc) from exc
    except QsidError as exc:
        raise StageError("parse", exc) from exc

    try:
        pre, log = preprocess(combined)
    except QsidError as exc:
        raise StageError("preprocess", exc) from exc

    eligibility = check_eligibility(pre)
    if eligibility.rejected:
        raise IneligibleExamError(eligibility)

    try:
        is_matrix = identity_scores(pre)
        metrics = student_metrics(pre, is_matrix)
    except QsidError as exc:
        raise StageError("metrics", exc) from exc

    try:
        table = (
            ThresholdTable.load(cfg.threshold_table_path)
            if cfg.threshold_table_path
            else default_threshold_table()
        )
        thresholds = threshold_lookup(table, pre.n)
    except QsidError as exc:
        raise StageError("thresholds", exc) from exc

    try:
        provisional = provisional_groups(metrics, thresholds[0], thresholds[1])
        groups = assign_bins(merge_groups(provisional, metrics), thresholds)
    except QsidError as exc:
        raise StageError("detect", exc) from exc

    try:
        model = fit_copula(pre, k_cohorts=cfg.cohorts, seed=cfg.seed)
        syn = synthetic_fpr(
            pre,
            table,
            min_students=cfg.synthetic_students,
            seed=cfg.seed,
            k_cohorts=cfg.cohorts,
            threads=cfg.threads,
            model=model,
        )
        groups = apply_synfpr_exclusion(groups, syn)
    except QsidError as exc:
        raise StageError("synthetic", exc) from exc

    empirical_series = None
    if cfg.empirical_cs_path is not None:
        path = (
            bundled_empirical_cs_path()
            if cfg.empirical_cs_path == "bundled"
            else cfg.empirical_cs_path
        )
        try:
            emp_values = load_empirical_cs(path)
        except OSError as exc:
            raise StageError("parse", exc) from exc
        empirical_series = HistogramSeries(
            label="empirical control",
            n_samples=len(emp_values),
            counts=_bin_counts(emp_values, CS_HIST_BIN_WIDTH),
        )

    profile = complexity(pre)
    per_exam = _per_exam_complexity(profile, exams, labels) if len(exams) > 1 else (profile.total,)

    index_to_id = {i: metrics[i].student_id for i in range(pre.n)}
    students = tuple(
        StudentRow(
            id=sm.student_id,
            test_score=sm.test_score,
            rank=sm.rank,
            max_is=sm.max_is,
            median_is=sm.median_is,
            im=sm.im,
            local_median_im=sm.local_median_im,
            cs=sm.cs,
            partner1_id=index_to_id[sm.partner1],
            partner2_id=index_to_id.get(sm.partner2, ""),
            partner1_tie_ids=tuple(index_to_id[j] for j in sm.partner1_ties),
        )
        for sm in metrics
    )

    group_rows = tuple(
        GroupRow(
            rank=rank,
            member_ids=g.member_ids,
            member_cs=tuple(metrics[i].cs for i in g.members),
            max_cs=g.max_cs,
            bin=g.bin.value,
            emp_fpr=g.emp_fpr,
            syn_fpr=g.syn_fpr,
            excluded=g.excluded,
        )
        for rank, g in enumerate(groups, start=1)
    )

    fpr_bins = tuple(
        FprBinRow(
            bin=bin_.value,
            emp_level=level,
            emp_half_width=wald_ci(level, EMP_FPR_NULL_STUDENTS).half_width,
            emp_n=EMP_FPR_NULL_STUDENTS,
            syn_level=syn.cumulative[i],
            syn_half_width=syn.intervals[i].half_width,
            syn_n=syn.n_synthetic,
        )
        for i, (bin_, level) in enumerate(
            zip((RiskBin.LOW, RiskBin.MEDIUM, RiskBin.HIGH), DEFAULT_FPR_LEVELS)
        )
    )

    cs_values = np.array([sm.cs for sm in metrics])
    cs_histograms = CsHistograms(
        bin_width=CS_HIST_BIN_WIDTH,
        query=HistogramSeries(
            label="query exam",
            n_samples=pre.n,
            counts=_bin_counts(cs_values, CS_HIST_BIN_WIDTH),
        ),
        empirical=empirical_series,
        synthetic=HistogramSeries(
            label="synthetic control",
            n_samples=syn.n_synthetic,
            counts=syn.cs_hist_counts,
        ),
    )

    is_histograms = []
    for row, g in zip(group_rows, groups):
        if g.excluded:
            continue
        top = g.members[0]
        others = [j for j in range(pre.n) if j != top]
        is_values = is_matrix[top, others]
        pair_values = tuple(int(is_matrix[top, j]) for j in g.members if j != top)
        is_histograms.append(
            IsHistogramData(
                group_rank=row.rank,
                member_id=metrics[top].student_id,
                counts=tuple(int(c) for c in np.bincount(is_values, minlength=1)),
                group_pair_is=pair_values,
            )
        )

    exam_label = cfg.exam_label or " + ".join(labels)
    header = ReportHeader(
        course_label=cfg.course_label or "Course",
        exam_label=exam_label,
        n_students=pre.n,
        n_exams_combined=len(exams),
        n_questions=pre.p,
        complexity=profile.total,
        complexity_per_exam=per_exam,
        low_complexity_warning=eligibility.status == EligibilityStatus.OK_LOW_COMPLEXITY,
    )

    return ReportBundle(
        schema_version=SCHEMA_VERSION,
        header=header,
        thresholds={
            "c1": thresholds[0],
            "c2": thresholds[1],
            "c3": thresholds[2],
            "c4": thresholds[3],
            "class_size_row": "over_250" if pre.n > 250 else str(_nearest_grid(table, pre.n)),
            "source": cfg.threshold_table_path or "default",
        },
        students=students,
        groups=group_rows,
        fpr_bins=fpr_bins,
        cs_histograms=cs_histograms,
        is_histograms=tuple(is_histograms),
        exclusions=ExclusionReport(
            duplicate_ids=log.duplicate_ids,
            missing_id_rows=log.missing_id_rows,
            low_score_ids=log.low_score_ids,
            empty_cells=log.empty_cells,
            join_dropped_ids=join_dropped,
        ),
        n_synthetic=syn.n_synthetic,
        synthetic_replicates=syn.replicates,
        seed=cfg.seed,
        cohorts=cfg.cohorts,
    )


def _nearest_grid(table: ThresholdTable, n: int) -> int:
    return min(table.grid, key=lambda g: (abs(g - n), -g))


def _per_exam_complexity(profile, exams, labels) -> tuple:
    # question labels are prefixed "<label>:" when exams were combined
    totals = []
    offset = 0
    for exam in exams:
        block = profile.per_question[offset : offset + exam.p]
        totals.append(float(sum(block)))
        offset += exam.p
    return tuple(totals)
