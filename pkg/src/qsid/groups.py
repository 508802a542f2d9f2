"""Collusion-group formation, risk binning, and the synthetic-FPR gate.

Qualifying {student, 1st partner} pairs are unioned into provisional
groups, provisional groups are merged when two members share a 2nd partner
found in a later group, and each final group is binned by its maximum
collusion score.
"""

from dataclasses import dataclass, replace
from enum import Enum

from qsid.metrics import StudentMetrics

# Fixed cumulative false-positive levels of the three risk bins, derived
# from a 10,816-student proctored null sample.
DEFAULT_FPR_LEVELS = (0.0004, 0.0020, 0.0056)
EMP_FPR_NULL_STUDENTS = 10816

SYNFPR_EXCLUSION_LIMIT = 0.008


class RiskBin(str, Enum):
    LOW = "low_risk_f1"
    MEDIUM = "medium_risk_f2"
    HIGH = "high_risk_f3"


@dataclass
class CollusionGroup:
    """A detected group: member indices ordered by descending CS then id."""

    members: tuple
    member_ids: tuple
    max_cs: float
    bin: RiskBin | None = None
    emp_fpr: float | None = None
    syn_fpr: float | None = None
    excluded: bool = False


class _UnionFind:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        root = x
        while self.parent.setdefault(root, root) != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def provisional_groups(
    metrics: list[StudentMetrics], c1: float, c2: float
) -> list[tuple[int, ...]]:
    """Connected components of qualifying {student, 1st partner} pairs.

    A pair qualifies when both collusion scores are >= c1 and at least one
    is >= c2. Components are ordered by descending max member CS, ties by
    smallest member student id.
    """
    if not (c2 > c1 > 0):
        raise ValueError("thresholds must satisfy c2 > c1 > 0")
    uf = _UnionFind()
    flagged = set()
    for i, sm in enumerate(metrics):
        j = sm.partner1
        if (
            sm.cs >= c1
            and metrics[j].cs >= c1
            and max(sm.cs, metrics[j].cs) >= c2
        ):
            uf.union(i, j)
            flagged.add(i)
            flagged.add(j)

    components: dict[int, list[int]] = {}
    for i in sorted(flagged):
        components.setdefault(uf.find(i), []).append(i)
    sets = [tuple(sorted(members)) for members in components.values()]
    sets.sort(
        key=lambda t: (
            -max(metrics[i].cs for i in t),
            min(metrics[i].student_id for i in t),
        )
    )
    return sets


def merge_groups(
    provisional: list[tuple[int, ...]], metrics: list[StudentMetrics]
) -> list[CollusionGroup]:
    """Single-pass 2nd-partner merge of provisional groups into final groups.

    For each surviving group, the duplicate-2nd-partner set is computed once
    from the original members (not refreshed while absorbing later groups),
    and its members are scanned in ascending student id.
    """
    sets = [set(t) for t in provisional]
    result = []
    for k, original in enumerate(provisional):
        if not sets[k]:
            continue
        merged = set(sets[k])
        counts: dict[int, int] = {}
        for i in original:
            p2 = metrics[i].partner2
            if p2 >= 0:
                counts[p2] = counts.get(p2, 0) + 1
        shared = [l for l, c in counts.items() if c >= 2 and l not in set(original)]
        shared.sort(key=lambda l: metrics[l].student_id)
        for l in shared:
            for s in range(k + 1, len(sets)):
                if l in sets[s]:
                    merged |= sets[s]
                    sets[s] = set()
                    break
        ordered = tuple(
            sorted(merged, key=lambda i: (-metrics[i].cs, metrics[i].student_id))
        )
        result.append(
            CollusionGroup(
                members=ordered,
                member_ids=tuple(metrics[i].student_id for i in ordered),
                max_cs=max(metrics[i].cs for i in ordered),
            )
        )
    return result


def assign_bins(
    groups: list[CollusionGroup],
    thresholds: tuple[float, float, float, float],
    fpr_levels: tuple[float, float, float] = DEFAULT_FPR_LEVELS,
) -> list[CollusionGroup]:
    """Bin each group by max CS and attach the bin's empirical FPR level."""
    c1, c2, c3, c4 = thresholds
    if not (c1 < c2 < c3 < c4):
        raise ValueError("thresholds must satisfy c1 < c2 < c3 < c4")
    f1, f2, f3 = fpr_levels
    if not (f1 < f2 < f3):
        raise ValueError("FPR levels must satisfy f1 < f2 < f3")
    out = []
    for g in groups:
        if g.max_cs >= c4:
            bin_, fpr = RiskBin.LOW, f1
        elif g.max_cs >= c3:
            bin_, fpr = RiskBin.MEDIUM, f2
        elif g.max_cs >= c2:
            bin_, fpr = RiskBin.HIGH, f3
        else:
            raise ValueError(
                f"internal invariant violated: group max CS {g.max_cs} below c2={c2}"
            )
        out.append(replace(g, bin=bin_, emp_fpr=fpr))
    return out


def apply_synfpr_exclusion(groups: list[CollusionGroup], syn) -> list[CollusionGroup]:
    """Attach per-bin cumulative synthetic FPRs; exclude bins above 0.8%."""
    by_bin = {
        RiskBin.LOW: syn.cumulative[0],
        RiskBin.MEDIUM: syn.cumulative[1],
        RiskBin.HIGH: syn.cumulative[2],
    }
    out = []
    for g in groups:
        syn_fpr = by_bin[g.bin]
        out.append(replace(g, syn_fpr=syn_fpr, excluded=syn_fpr > SYNFPR_EXCLUSION_LIMIT))
    return out
