"""Copula-based synthetic null exams and synthetic FPR estimation.

Students are split into test-score cohorts. Per cohort, every question
gets a multinomial marginal over its observed grain-unit scores, and a
Gaussian copula correlation is estimated from the distributional transform
of the scores. Sampling the fitted model yields exams that preserve
question and test-score distributions while students stay independent,
i.e. collusion-free by construction.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from functools import cached_property

import numpy as np
from scipy.special import ndtr, ndtri

from qsid import util
from qsid.calibration import FprInterval, ThresholdTable, threshold_lookup, wald_ci
from qsid.errors import CohortSizeError, DegenerateExamError, QsidError
from qsid.exam_data import ScoreMatrix
from qsid.groups import DEFAULT_FPR_LEVELS, RiskBin, assign_bins, merge_groups, provisional_groups
from qsid.metrics import identity_scores, student_metrics

DEFAULT_COHORTS = 5
MIN_SYNTHETIC_STUDENTS = 100_000
CS_HIST_BIN_WIDTH = 0.05

_EIG_FLOOR = 1e-8
_U_CLAMP = 1e-12
_MAX_RETRIES = 10


@dataclass
class CohortModel:
    n_cohort: int
    supports: list
    probs: list
    corr: np.ndarray
    corr_factor: np.ndarray

    @cached_property
    def cumulative(self) -> list:
        return [np.cumsum(p) for p in self.probs]


@dataclass
class CopulaModel:
    cohorts: list
    question_labels: tuple
    grain: Decimal

    @property
    def n(self) -> int:
        return sum(c.n_cohort for c in self.cohorts)

    @property
    def p(self) -> int:
        return len(self.question_labels)

    @classmethod
    def from_marginals(
        cls,
        cohort_sizes,
        supports,
        probs,
        corr,
        question_labels=None,
        grain: Decimal = Decimal("0.01"),
    ) -> "CopulaModel":
        """Build a model directly from marginals and a latent correlation.

        Every cohort shares the given per-question supports/probabilities and
        correlation. Used to construct synthetic null generators without
        fitting to data.
        """
        supports = [np.asarray(s, dtype=np.int64) for s in supports]
        probs = [np.asarray(p, dtype=np.float64) for p in probs]
        p = len(supports)
        if question_labels is None:
            question_labels = tuple(f"q{i + 1}" for i in range(p))
        for theta in probs:
            if abs(float(theta.sum()) - 1.0) > 1e-12:
                raise ValueError("marginal probabilities must sum to 1")
        repaired = _repair_correlation(np.asarray(corr, dtype=np.float64))
        factor = np.linalg.cholesky(repaired)
        cohorts = [
            CohortModel(
                n_cohort=int(size),
                supports=supports,
                probs=probs,
                corr=repaired,
                corr_factor=factor,
            )
            for size in cohort_sizes
        ]
        return cls(cohorts=cohorts, question_labels=tuple(question_labels), grain=grain)

    def to_json_dict(self) -> dict:
        """Audit dump: per-cohort supports, probabilities, correlations."""
        return {
            "grain": str(self.grain),
            "question_labels": list(self.question_labels),
            "cohorts": [
                {
                    "n_cohort": c.n_cohort,
                    "marginals": [
                        {
                            "support": [int(v) for v in s],
                            "probs": [float(x) for x in th],
                        }
                        for s, th in zip(c.supports, c.probs)
                    ],
                    "corr": [[float(x) for x in row] for row in c.corr],
                }
                for c in self.cohorts
            ],
        }


@dataclass
class SynFprEstimate:
    """Cumulative per-bin synthetic false-positive rates.

    `cumulative` holds (f1-bin, f1-or-f2, any-bin) student fractions, which
    are non-decreasing by construction.
    """

    n_synthetic: int
    replicates: int
    cumulative: tuple
    intervals: tuple
    cs_hist_counts: tuple
    cs_hist_bin_width: float = CS_HIST_BIN_WIDTH

    def interval_for(self, bin_: RiskBin) -> FprInterval:
        index = {RiskBin.LOW: 0, RiskBin.MEDIUM: 1, RiskBin.HIGH: 2}[bin_]
        return self.intervals[index]


def _repair_correlation(corr: np.ndarray, floor: float = _EIG_FLOOR) -> np.ndarray:
    """Clip eigenvalues at the floor and renormalize to unit diagonal.

    Sample correlations from short cohorts are routinely rank-deficient;
    the repaired matrix is what gets factorized for sampling.
    """
    a = np.array((corr + corr.T) / 2.0, dtype=np.float64)
    for _ in range(20):
        w, v = np.linalg.eigh(a)
        if w.min() >= floor:
            return a
        # clip above the floor so renormalization cannot sink back below it
        w = np.clip(w, 2.0 * floor, None)
        a = (v * w) @ v.T
        d = np.sqrt(np.diag(a))
        a = a / np.outer(d, d)
        np.fill_diagonal(a, 1.0)
        a = (a + a.T) / 2.0
    raise QsidError("correlation repair failed to reach the eigenvalue floor")


def distributional_transform(
    units: np.ndarray, support: np.ndarray, cumulative: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Randomized CDF transform u = v*P(X < x) + (1 - v)*P(X <= x).

    For non-contiguous supports, "just below x" means the CDF mass strictly
    below x's support point. With v ~ Uniform[0,1) the result is uniform on
    [0, 1] when the CDF matches the data distribution.
    """
    idx = np.searchsorted(support, units)
    hi = cumulative[idx]
    lo = np.where(idx > 0, cumulative[np.maximum(idx - 1, 0)], 0.0)
    return v * lo + (1.0 - v) * hi


def _cohort_slices(sizes: list[int]) -> list[slice]:
    slices, start = [], 0
    for s in sizes:
        slices.append(slice(start, start + s))
        start += s
    return slices


def fit_copula(m: ScoreMatrix, k_cohorts: int = DEFAULT_COHORTS, seed: int = 0) -> CopulaModel:
    """Fit the no-collusion generative model to a preprocessed exam.

    Students are sorted by test score (ties by id) and split into
    `k_cohorts` contiguous quantile cohorts of near-equal size. Questions
    constant within a cohort keep a single-atom marginal and are excluded
    from correlation estimation.
    """
    if k_cohorts < 1:
        raise ValueError("k_cohorts must be at least 1")
    n, p = m.n, m.p
    if n < 2 * k_cohorts:
        raise CohortSizeError(
            f"{n} students cannot form {k_cohorts} cohorts of at least 2; "
            "pass a smaller --cohorts value"
        )
    totals = m.test_score_units()
    order = sorted(range(n), key=lambda i: (-totals[i], m.student_ids[i]))
    base, rem = divmod(n, k_cohorts)
    sizes = [base + (1 if k < rem else 0) for k in range(k_cohorts)]

    rng = util.rng_stream(seed, util.STREAM_FIT)
    cohorts = []
    for sl in _cohort_slices(sizes):
        rows = order[sl]
        sub = m.units[rows]
        nc = len(rows)
        supports, probs = [], []
        z = np.empty((nc, p))
        constant = np.zeros(p, dtype=bool)
        v = rng.random((nc, p))
        for s in range(p):
            support, counts = np.unique(sub[:, s], return_counts=True)
            theta = counts / nc
            supports.append(support)
            probs.append(theta)
            if len(support) == 1:
                constant[s] = True
                continue
            u = distributional_transform(sub[:, s], support, np.cumsum(theta), v[:, s])
            z[:, s] = ndtri(np.clip(u, _U_CLAMP, 1.0 - _U_CLAMP))

        corr = np.eye(p)
        active = np.nonzero(~constant)[0]
        if len(active) > 1:
            sample_corr = np.corrcoef(z[:, active], rowvar=False)
            corr[np.ix_(active, active)] = sample_corr
        repaired = _repair_correlation(corr)
        cohorts.append(
            CohortModel(
                n_cohort=nc,
                supports=supports,
                probs=probs,
                corr=repaired,
                corr_factor=np.linalg.cholesky(repaired),
            )
        )
    return CopulaModel(cohorts=cohorts, question_labels=m.question_labels, grain=m.grain)


def _sample_cohort(cohort: CohortModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `count` synthetic students from one cohort model, in grain units."""
    p = len(cohort.supports)
    z = rng.standard_normal((count, p)) @ cohort.corr_factor.T
    u = ndtr(z)
    units = np.empty((count, p), dtype=np.int64)
    cums = cohort.cumulative
    for s in range(p):
        cum = cums[s]
        idx = np.minimum(np.searchsorted(cum, u[:, s], side="left"), len(cum) - 1)
        units[:, s] = cohort.supports[s][idx]
    return units


def _sample_units(model: CopulaModel, rng: np.random.Generator) -> np.ndarray:
    return np.vstack([_sample_cohort(c, c.n_cohort, rng) for c in model.cohorts])


def sample_synthetic(model: CopulaModel, seed: int = 0) -> ScoreMatrix:
    """One synthetic control exam sampled from the fitted model."""
    rng = util.rng_stream(seed, util.STREAM_SAMPLE)
    units = _sample_units(model, rng)
    ids = tuple(
        f"syn-{k + 1}-{i + 1}"
        for k, c in enumerate(model.cohorts)
        for i in range(c.n_cohort)
    )
    return ScoreMatrix(
        student_ids=ids,
        question_labels=model.question_labels,
        units=units,
        grain=model.grain,
    )


def replicate_count(n: int, min_students: int) -> int:
    """Synthetic exams needed for at least `min_students` total students."""
    if n < 1 or min_students < 1:
        raise ValueError("n and min_students must be positive")
    return math.ceil(min_students / n)


def _detect_bin_counts(
    m: ScoreMatrix, thresholds: tuple
) -> tuple[tuple[int, int, int], np.ndarray]:
    """Run detection on one exam; return per-bin flagged counts and CS values."""
    metrics = student_metrics(m, identity_scores(m))
    provisional = provisional_groups(metrics, thresholds[0], thresholds[1])
    groups = assign_bins(merge_groups(provisional, metrics), thresholds, DEFAULT_FPR_LEVELS)
    counts = {RiskBin.LOW: 0, RiskBin.MEDIUM: 0, RiskBin.HIGH: 0}
    for g in groups:
        counts[g.bin] += len(g.members)
    cs = np.array([sm.cs for sm in metrics])
    return (counts[RiskBin.LOW], counts[RiskBin.MEDIUM], counts[RiskBin.HIGH]), cs


def _one_replicate(model: CopulaModel, thresholds: tuple, seed: int, rep: int):
    ids = None
    for attempt in range(_MAX_RETRIES + 1):
        rng = util.rng_stream(seed, util.STREAM_SYNFPR, rep, attempt)
        units = _sample_units(model, rng)
        if ids is None:
            ids = tuple(
                f"syn-{k + 1}-{i + 1}"
                for k, c in enumerate(model.cohorts)
                for i in range(c.n_cohort)
            )
        exam = ScoreMatrix(
            student_ids=ids,
            question_labels=model.question_labels,
            units=units,
            grain=model.grain,
        )
        try:
            counts, cs = _detect_bin_counts(exam, thresholds)
        except DegenerateExamError:
            continue
        hist = np.bincount(np.floor(cs / CS_HIST_BIN_WIDTH).astype(np.int64))
        return counts, hist
    raise QsidError(
        f"synthetic replicate {rep} stayed degenerate after {_MAX_RETRIES} retries; "
        "the fitted null model carries too little score variation"
    )


def synthetic_fpr(
    m: ScoreMatrix,
    table: ThresholdTable,
    min_students: int = MIN_SYNTHETIC_STUDENTS,
    seed: int = 0,
    k_cohorts: int = DEFAULT_COHORTS,
    threads: int | None = None,
    model: CopulaModel | None = None,
) -> SynFprEstimate:
    """Estimate cumulative per-bin FPRs from synthetic control exams.

    Fits one null model to the query exam, samples ceil(min_students / n)
    replicates of the same size, runs the detection steps on each with the
    query exam's thresholds, and reports the cumulative fraction of
    synthetic students per bin with Wald intervals. Deterministic for a
    given seed regardless of thread count.
    """
    if model is None:
        model = fit_copula(m, k_cohorts=k_cohorts, seed=seed)
    thresholds = threshold_lookup(table, m.n)
    reps = replicate_count(m.n, min_students)

    workers = util.worker_count(threads)
    if workers > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda r: _one_replicate(model, thresholds, seed, r), range(reps))
            )
    else:
        results = [_one_replicate(model, thresholds, seed, r) for r in range(reps)]

    f1 = sum(r[0][0] for r in results)
    f2 = sum(r[0][1] for r in results)
    f3 = sum(r[0][2] for r in results)
    n_synthetic = reps * m.n
    cumulative = (
        f1 / n_synthetic,
        (f1 + f2) / n_synthetic,
        (f1 + f2 + f3) / n_synthetic,
    )
    width = max(len(r[1]) for r in results)
    hist = np.zeros(width, dtype=np.int64)
    for _, h in results:
        hist[: len(h)] += h
    return SynFprEstimate(
        n_synthetic=n_synthetic,
        replicates=reps,
        cumulative=cumulative,
        intervals=tuple(wald_ci(c, n_synthetic) for c in cumulative),
        cs_hist_counts=tuple(int(c) for c in hist),
    )
