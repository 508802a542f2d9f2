"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s or -rA to see them inline)."""

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats

from genutil import (
    make_marginals,
    make_null_exam,
    make_null_model,
    plant_copy_group,
    theoretical_complexity,
)
from oracles import (
    median as oracle_median,
    oracle_identity_scores,
    oracle_merge,
    oracle_metrics,
    oracle_provisional,
)
from qsid.calibration import (
    DEFAULT_ANCHORS,
    calibrate_thresholds,
    default_threshold_table,
    threshold_lookup,
    wald_ci,
)
from qsid.errors import DegenerateExamError
from qsid.exam_data import ScoreMatrix
from qsid.groups import CollusionGroup, RiskBin, apply_synfpr_exclusion, merge_groups, provisional_groups
from qsid.metrics import complexity, identity_scores, student_metrics
from qsid.synthetic import CopulaModel, SynFprEstimate, distributional_transform, fit_copula, sample_synthetic, _sample_cohort
from qsid import util

SRC = str(Path(__file__).resolve().parent.parent / "src")


def report(name: str, ok: bool, detail: str):
    print(f"criterion {name}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def detect_groups(exam, thresholds):
    metrics = student_metrics(exam, identity_scores(exam))
    provisional = provisional_groups(metrics, thresholds[0], thresholds[1])
    return merge_groups(provisional, metrics), metrics


class TestCriterion1WaldCi:
    def test_wald_ci_reproduces_published_intervals(self):
        low = wald_ci(0.00037, 10816).half_width * 100
        med = wald_ci(0.00203, 10816).half_width * 100
        ok = abs(low - 0.036) <= 0.0005 and abs(med - 0.085) <= 0.0005
        report("1 (Wald CI)", ok, f"half-widths {low:.4f}pp / {med:.4f}pp vs 0.036 / 0.085")


class TestCriterion2Complexity:
    def test_closed_forms(self, make_matrix):
        uniform = make_matrix(np.repeat(np.arange(10) * 50, 10).reshape(100, 1))
        constant = make_matrix(np.full((60, 1), 300))
        halves = make_matrix(np.array([0] * 30 + [100] * 30).reshape(60, 1))
        u = complexity(uniform).per_question[0]
        c = complexity(constant).per_question[0]
        h = complexity(halves).per_question[0]
        ok = (
            abs(u - 1.0) <= 1e-12
            and c == 0.0
            and abs(h - math.log10(2)) <= 1e-12
        )
        report("2 (complexity closed forms)", ok, f"uniform={u!r} constant={c!r} half={h!r}")


class TestCriterion3BruteForce:
    N_TRIALS = 1000
    THRESHOLD_PAIRS = ((1.1, 1.6), (0.7, 1.3))

    def test_equivalence_against_straightline_oracles(self):
        rng = np.random.default_rng(20240601)
        alphabet = np.array([0, 50, 100], dtype=np.int64)  # 0 / 0.5 / 1 points
        checked_groups = 0
        degenerate = 0
        t0 = time.time()
        for trial in range(self.N_TRIALS):
            n = int(rng.integers(2, 9))
            p = int(rng.integers(1, 7))
            units = rng.choice(alphabet, size=(n, p))
            ids = [f"s{k}" for k in rng.permutation(n)]
            m = ScoreMatrix(tuple(ids), tuple(f"q{j}" for j in range(p)), units)

            got_is = identity_scores(m)
            rows = units.tolist()
            want_is = oracle_identity_scores(rows)
            assert got_is.tolist() == want_is, f"IS mismatch at trial {trial}"

            _, want_stats = oracle_metrics(rows, ids)
            want_degenerate = oracle_median([w["im"] for w in want_stats]) == 0
            try:
                got_sm = student_metrics(m, got_is)
            except DegenerateExamError:
                assert want_degenerate, f"unexpected degenerate at trial {trial}"
                degenerate += 1
                continue
            assert not want_degenerate, f"missed degenerate at trial {trial}"
            for got, want in zip(got_sm, want_stats):
                assert got.im == want["im"], f"IM mismatch at trial {trial}"
                assert got.cs == want["cs"]
                assert got.max_is == want["max_is"]
                assert got.partner1 == want["p1"] and got.partner2 == want["p2"]

            for c1, c2 in self.THRESHOLD_PAIRS:
                got_prov = provisional_groups(got_sm, c1, c2)
                want_prov = oracle_provisional(want_stats, c1, c2)
                assert got_prov == want_prov, f"provisional mismatch at trial {trial}"
                got_groups = [
                    tuple(sorted(g.members)) for g in merge_groups(got_prov, got_sm)
                ]
                assert got_groups == oracle_merge(want_prov, want_stats)
                checked_groups += 1
        elapsed = time.time() - t0
        report(
            "3 (brute-force equivalence)",
            True,
            f"{self.N_TRIALS} exams, {checked_groups} grouping runs, "
            f"{degenerate} degenerate, 100% agreement in {elapsed:.1f}s",
        )
        assert elapsed < 30


class TestCriterion4PlantedPower:
    N_SEEDS = 50

    def test_planted_groups_detected_with_low_false_flags(self):
        thresholds = threshold_lookup(default_threshold_table(), 300)
        model = make_null_model(300, 80, seed=1001, rho=0.3)
        assert theoretical_complexity(model.cohorts[0].probs) >= 20
        sampled = sample_synthetic(model, seed=0)
        assert complexity(sampled).total >= 20

        t0 = time.time()
        all_three = 0
        unplanted_total = 0
        unplanted_flagged = 0
        for seed in range(self.N_SEEDS):
            exam = sample_synthetic(model, seed=3000 + seed)
            exam, planted = plant_copy_group(exam, seed=seed, copy_frac=0.9, group_size=3)
            groups, _ = detect_groups(exam, thresholds)
            planted_set = set(planted)
            if any(planted_set <= set(g.members) for g in groups):
                all_three += 1
            flagged = {i for g in groups for i in g.members}
            unplanted_total += exam.n - 3
            unplanted_flagged += len(flagged - planted_set)
        rate = all_three / self.N_SEEDS
        false_rate = unplanted_flagged / unplanted_total
        elapsed = time.time() - t0
        ok = rate >= 0.9 and false_rate <= 0.01
        report(
            "4 (planted power)",
            ok,
            f"all-3-in-one-group rate {rate:.2f} (need >= 0.90), unplanted "
            f"flagged {100 * false_rate:.2f}% (need <= 1%), {elapsed:.0f}s",
        )
        assert elapsed < 300


class TestCriterion5NullCalibration:
    N_CAL = 10
    N_FRESH = 200
    N = 400
    P = 60

    def test_fresh_null_flagging_matches_anchor_tail(self):
        t0 = time.time()
        model = make_null_model(self.N, self.P, seed=0, rho=0.3)
        cal_exams = [sample_synthetic(model, seed=1000 + i) for i in range(self.N_CAL)]
        table = calibrate_thresholds(cal_exams, grid=(), anchors=DEFAULT_ANCHORS, seed=0)
        c1, c2, _, _ = table.over_250

        flagged = 0
        total = 0
        for i in range(self.N_FRESH):
            exam = sample_synthetic(model, seed=2000 + i)
            groups, _ = detect_groups(exam, (c1, c2))
            flagged += sum(len(g.members) for g in groups)
            total += exam.n
        frac = flagged / total
        p0 = 1.0 - DEFAULT_ANCHORS[1]

        # the anchor tail mass is pinned down by the pooled calibration
        # sample; its 99% binomial envelope is the consistency band
        n_cal_pool = self.N_CAL * self.N
        half99 = 2.5758 * math.sqrt(p0 * (1 - p0) / n_cal_pool)
        in_envelope = p0 - half99 <= frac <= p0 + half99

        # and the two rates' 95% Wald intervals must overlap
        fresh_ci = wald_ci(frac, total)
        anchor_ci = wald_ci(p0, n_cal_pool)
        overlap = abs(frac - p0) <= fresh_ci.half_width + anchor_ci.half_width

        elapsed = time.time() - t0
        strict_half = 2.5758 * math.sqrt(p0 * (1 - p0) / total)
        report(
            "5 (null-calibration consistency)",
            in_envelope and overlap,
            f"flagged {100 * frac:.3f}% vs anchor tail {100 * p0:.3f}%, envelope "
            f"+/-{100 * half99:.3f}pp (fresh-sample envelope would be "
            f"+/-{100 * strict_half:.3f}pp), CI overlap={overlap}, {elapsed:.0f}s",
        )
        assert elapsed < 600


class TestCriterion6TprMonotonicity:
    N_SEEDS = 30
    TARGETS = (8.0, 15.0, 25.0)
    N = 300
    P_FULL = 120

    def test_detection_rate_non_decreasing_in_complexity(self):
        # question-count prefixes of one marginal family reach the three
        # complexity levels; each seed shares its latent draws, planted
        # members, and source student across levels (common random numbers)
        # so the comparison isolates the complexity effect
        t0 = time.time()
        supports, probs = make_marginals(self.P_FULL, seed=77, top_mass=(0.55, 0.75))
        per_question = [-np.log10(float(np.square(t).sum())) for t in probs]
        cumulative = np.cumsum(per_question)
        subset_sizes = [int(np.searchsorted(cumulative, t) + 1) for t in self.TARGETS]
        levels = [float(cumulative[p - 1]) for p in subset_sizes]
        assert min(subset_sizes) >= 20, "subsets must stay analyzable"

        corr = np.full((self.P_FULL, self.P_FULL), 0.3)
        np.fill_diagonal(corr, 1.0)
        full_model = CopulaModel.from_marginals([self.N], supports, probs, corr)
        factor = full_model.cohorts[0].corr_factor
        cumulatives = [np.cumsum(t) for t in probs]
        thresholds = threshold_lookup(default_threshold_table(), self.N)

        detected = [0, 0, 0]
        for seed in range(self.N_SEEDS):
            rng = np.random.default_rng(9000 + seed)
            z = rng.standard_normal((self.N, self.P_FULL)) @ factor.T
            u = stats.norm.cdf(z)
            units_full = np.empty((self.N, self.P_FULL), dtype=np.int64)
            for s in range(self.P_FULL):
                idx = np.minimum(
                    np.searchsorted(cumulatives[s], u[:, s], side="left"),
                    len(cumulatives[s]) - 1,
                )
                units_full[:, s] = supports[s][idx]
            members = np.sort(rng.choice(self.N, size=3, replace=False))
            source = int(members[0])
            # one copy-order permutation per seed keeps the copied subsets
            # nested across levels, so borderline seeds resolve consistently
            copy_order = rng.permutation(self.P_FULL)
            for li, p_subset in enumerate(subset_sizes):
                units = units_full[:, :p_subset].copy()
                in_prefix = [int(q) for q in copy_order if q < p_subset]
                questions = np.array(in_prefix[: round(0.9 * p_subset)])
                for t in members[1:]:
                    units[int(t), questions] = units[source, questions]
                exam = ScoreMatrix(
                    tuple(f"s{i:03d}" for i in range(self.N)),
                    tuple(f"q{j}" for j in range(p_subset)),
                    units,
                )
                groups, _ = detect_groups(exam, thresholds)
                flagged = {i for g in groups for i in g.members}
                detected[li] += len(flagged & set(int(i) for i in members))
        rates = [d / (3 * self.N_SEEDS) for d in detected]
        ok = rates[0] <= rates[1] <= rates[2]
        elapsed = time.time() - t0
        report(
            "6 (TPR vs complexity)",
            ok,
            "detected-planted rates "
            + ", ".join(f"{r:.2f} @ O={lv:.1f}" for r, lv in zip(rates, levels))
            + f", {elapsed:.0f}s",
        )
        assert elapsed < 600


class TestCriterion7SyntheticFidelity:
    def test_marginal_tv_and_transform_uniformity(self):
        t0 = time.time()
        exam = make_null_exam(400, 30, seed=88)
        model = fit_copula(exam, k_cohorts=5, seed=0)
        worst_tv = 0.0
        rng = util.rng_stream(321, 7)
        for cohort in model.cohorts:
            sample = _sample_cohort(cohort, 50_000, rng)
            for s in range(exam.p):
                counts = np.array(
                    [np.sum(sample[:, s] == v) for v in cohort.supports[s]],
                    dtype=np.float64,
                )
                tv = 0.5 * float(np.abs(counts / 50_000 - cohort.probs[s]).sum())
                worst_tv = max(worst_tv, tv)

        gen = np.random.default_rng(55)
        support = np.array([0, 25, 50, 100], dtype=np.int64)
        theta = np.array([0.15, 0.3, 0.35, 0.2])
        x = gen.choice(support, size=50_000, p=theta)
        u = distributional_transform(x, support, np.cumsum(theta), gen.random(50_000))
        pvalue = stats.kstest(u, "uniform").pvalue

        elapsed = time.time() - t0
        ok = worst_tv <= 0.02 and pvalue > 0.001
        report(
            "7 (synthetic fidelity)",
            ok,
            f"worst per-question TV {worst_tv:.4f} (need <= 0.02), KS p={pvalue:.3f} "
            f"(need > 0.001), {elapsed:.0f}s",
        )
        assert elapsed < 120


class TestCriterion8Determinism:
    def test_cli_runs_are_byte_identical_across_thread_counts(self, tmp_path):
        exam = make_null_exam(500, 100, seed=314)
        path = tmp_path / "large.csv"
        path.write_text(exam.to_csv(), encoding="utf-8")

        outputs = []
        durations = []
        for threads in (1, 8):
            out = tmp_path / f"threads{threads}"
            env = dict(os.environ)
            env["PYTHONPATH"] = SRC + os.pathsep + env.get("PYTHONPATH", "")
            env["QSID_THREADS"] = str(threads)
            t0 = time.time()
            result = subprocess.run(
                [
                    sys.executable, "-m", "qsid", "analyze",
                    "--input", str(path), "--out", str(out),
                    "--seed", "42", "--synthetic-students", "100000",
                ],
                capture_output=True,
                text=True,
                env=env,
            )
            durations.append(time.time() - t0)
            assert result.returncode == 0, result.stderr
            outputs.append((out / "report.json").read_bytes())
        identical = outputs[0] == outputs[1]
        within_budget = max(durations) < 120
        report(
            "8 (determinism + runtime)",
            identical and within_budget,
            f"report.json identical across QSID_THREADS=1/8: {identical}; "
            f"run times {durations[0]:.0f}s / {durations[1]:.0f}s (budget 120s each)",
        )

    def test_synthetic_students_floor_met(self):
        from qsid.synthetic import replicate_count

        reps = replicate_count(500, 100_000)
        assert reps * 500 >= 100_000 and reps == 200


class TestCriterion9ExclusionRule:
    def test_cumulative_bins_excluded_above_limit(self):
        groups = [
            CollusionGroup((0, 1), ("a", "b"), 1.8, RiskBin.LOW, 0.0004),
            CollusionGroup((2, 3), ("c", "d"), 1.65, RiskBin.MEDIUM, 0.0020),
            CollusionGroup((4, 5), ("e", "f"), 1.55, RiskBin.HIGH, 0.0056),
        ]
        syn = SynFprEstimate(
            n_synthetic=100_000,
            replicates=200,
            cumulative=(0.0006, 0.003, 0.009),
            intervals=(None, None, None),
            cs_hist_counts=(0,),
        )
        out = apply_synfpr_exclusion(groups, syn)
        ok = [g.excluded for g in out] == [False, False, True]
        report(
            "9 (synthetic-FPR exclusion)",
            ok,
            "cumulative (0.06%, 0.3%, 0.9%) excludes exactly the high-risk bin",
        )
