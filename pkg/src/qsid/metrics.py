"""Per-pair identity scores and per-student collusion statistics.

For each student the pipeline derives, from the pairwise identity-score
matrix: the max and median identity score, the identity metric
(max - median), a rank-local median of identity metrics, and the collusion
score (identity metric divided by its local median). Exam complexity
summarizes how discriminating the question scores are.
"""

from dataclasses import dataclass

import numpy as np

from qsid import _kernels
from qsid.errors import DegenerateExamError
from qsid.exam_data import ScoreMatrix

WINDOW_MAX = 31
WINDOW_MIN = 7


@dataclass
class StudentMetrics:
    student_id: str
    test_score: float
    rank: int
    max_is: int
    median_is: float
    im: float
    local_median_im: float
    cs: float
    partner1: int
    partner2: int
    partner1_ties: tuple = ()


@dataclass
class ComplexityProfile:
    per_question: tuple
    total: float


def identity_scores(m: ScoreMatrix) -> np.ndarray:
    """Symmetric (n, n) matrix of identical-question-score counts.

    Exact integer equality on grain units; the diagonal is set to 0 and
    carries no meaning.
    """
    if m.n < 2:
        raise ValueError("identity scores require at least 2 students")
    return _kernels.identity_score_matrix(m.units)


def local_median_windows(n: int) -> list[tuple[int, int]]:
    """Inclusive (lo, hi) rank window for each rank 1..n.

    Classes under 31 students use the whole class everywhere. Otherwise the
    window is the centered 31 ranks, except near the list ends where it
    shrinks: ranks 4..15 get the centered window [1, 2r-1] (size 7 at rank 4,
    growing by 2 per rank up to 31 at rank 16), ranks 1..3 share the rank-4
    window, and the bottom of the list mirrors the top.
    """
    if n < 2:
        raise ValueError("windows require at least 2 students")
    if n < WINDOW_MAX:
        return [(1, n)] * n
    windows = []
    for r in range(1, n + 1):
        if r <= 3:
            windows.append((1, WINDOW_MIN))
        elif r <= 15:
            windows.append((1, 2 * r - 1))
        elif r <= n - 15:
            windows.append((r - 15, r + 15))
        elif r >= n - 2:
            windows.append((n - WINDOW_MIN + 1, n))
        else:
            mirrored = n - r + 1
            windows.append((n - (2 * mirrored - 1) + 1, n))
    return windows


def _off_diagonal(is_matrix: np.ndarray) -> np.ndarray:
    n = is_matrix.shape[0]
    mask = ~np.eye(n, dtype=bool)
    return is_matrix[mask].reshape(n, n - 1)


def student_metrics(m: ScoreMatrix, is_matrix: np.ndarray) -> list[StudentMetrics]:
    """Compute ranks, partners, identity metrics, and collusion scores.

    Ranks order students by descending test score with ties broken by
    ascending student id. Partner ties resolve to the lowest row index.
    Raises DegenerateExamError when any rank window has a zero median IM.
    """
    n = m.n
    if n < 2:
        raise ValueError("metrics require at least 2 students")
    if is_matrix.shape != (n, n):
        raise ValueError("identity-score matrix shape mismatch")

    work = is_matrix.copy()
    np.fill_diagonal(work, -1)
    max_is = work.max(axis=1)
    partner1 = work.argmax(axis=1)
    tie_counts = (work == max_is[:, None]).sum(axis=1)
    ties = [
        tuple(int(j) for j in np.nonzero(work[i] == max_is[i])[0] if j != partner1[i])
        if tie_counts[i] > 1
        else ()
        for i in range(n)
    ]
    rows = np.arange(n)
    work[rows, partner1] = -1
    # with exactly 2 students there is no valid 2nd partner
    partner2 = work.argmax(axis=1) if n > 2 else np.full(n, -1, dtype=np.int64)

    median_is = np.median(_off_diagonal(is_matrix), axis=1)
    im = max_is - median_is

    totals = m.test_score_units()
    order = sorted(range(n), key=lambda i: (-totals[i], m.student_ids[i]))
    rank = np.empty(n, dtype=np.int64)
    for pos, i in enumerate(order):
        rank[i] = pos + 1

    ims_by_rank = im[np.asarray(order)]
    windows = local_median_windows(n)
    if n < WINDOW_MAX:
        local_medians_by_rank = np.full(n, np.median(ims_by_rank))
    else:
        # the interior windows all span 31 ranks; batch them in one call
        local_medians_by_rank = np.empty(n)
        interior = np.median(
            np.lib.stride_tricks.sliding_window_view(ims_by_rank, WINDOW_MAX), axis=1
        )
        local_medians_by_rank[15 : n - 15] = interior
        for r in list(range(1, 16)) + list(range(n - 14, n + 1)):
            lo, hi = windows[r - 1]
            local_medians_by_rank[r - 1] = np.median(ims_by_rank[lo - 1 : hi])
    zero = np.nonzero(local_medians_by_rank == 0.0)[0]
    if zero.size:
        raise DegenerateExamError(int(zero.min()) + 1, int(zero.max()) + 1)
    local_median_im = local_medians_by_rank[rank - 1]
    cs = im / local_median_im

    return [
        StudentMetrics(
            student_id=m.student_ids[i],
            test_score=m.points(totals[i]),
            rank=int(rank[i]),
            max_is=int(max_is[i]),
            median_is=float(median_is[i]),
            im=float(im[i]),
            local_median_im=float(local_median_im[i]),
            cs=float(cs[i]),
            partner1=int(partner1[i]),
            partner2=int(partner2[i]),
            partner1_ties=ties[i],
        )
        for i in range(n)
    ]


def complexity(m: ScoreMatrix) -> ComplexityProfile:
    """Per-question and total complexity of the score distributions.

    A question scored identically by everyone contributes 0; one with all n
    scores distinct contributes log10(n). Complexities of combined exams add.
    """
    if m.n < 1:
        raise ValueError("complexity requires at least 1 student")
    n = m.n
    per_question = []
    for s in range(m.p):
        _, counts = np.unique(m.units[:, s], return_counts=True)
        collision = float(np.square(counts / n).sum())
        per_question.append(float(-np.log10(collision)) + 0.0)
    return ComplexityProfile(per_question=tuple(per_question), total=float(sum(per_question)))
