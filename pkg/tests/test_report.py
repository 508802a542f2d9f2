import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from genutil import make_null_exam, plant_copy_group
from qsid.calibration import ThresholdTable, OVER_250_ROW
from qsid.errors import IneligibleExamError
from qsid.exam_data import parse_exam, preprocess
from qsid.metrics import identity_scores, student_metrics
from qsid.pipeline import (
    CsHistograms,
    ExclusionReport,
    GroupRow,
    HistogramSeries,
    IsHistogramData,
    ReportBundle,
    ReportHeader,
    RunConfig,
    StageError,
    run_pipeline,
)
from qsid.report import bundle_from_json, emit_json, group_color, render_html


@pytest.fixture(scope="module")
def planted_exam_csv(tmp_path_factory):
    exam = make_null_exam(60, 40, seed=31)
    exam, planted = plant_copy_group(exam, seed=99, copy_frac=0.9, group_size=3)
    path = tmp_path_factory.mktemp("exam") / "midterm.csv"
    path.write_text(exam.to_csv(), encoding="utf-8")
    ids = tuple(exam.student_ids[i] for i in planted)
    return path, ids


@pytest.fixture(scope="module")
def planted_bundle(planted_exam_csv, tmp_path_factory):
    path, planted_ids = planted_exam_csv
    cfg = RunConfig(
        input_paths=(str(path),),
        output_dir=str(tmp_path_factory.mktemp("out")),
        seed=7,
        synthetic_students=3000,
    )
    return run_pipeline(cfg), planted_ids, cfg


class TestRunPipeline:
    def test_planted_group_detected(self, planted_bundle):
        bundle, planted_ids, _ = planted_bundle
        containing = [
            g for g in bundle.groups if set(planted_ids) <= set(g.member_ids)
        ]
        assert containing, "planted students should land in one group"

    def test_one_is_histogram_per_retained_group(self, planted_bundle):
        bundle, _, _ = planted_bundle
        retained = [g for g in bundle.groups if not g.excluded]
        assert len(bundle.is_histograms) == len(retained)
        assert [h.group_rank for h in bundle.is_histograms] == [g.rank for g in retained]

    def test_rejects_small_class(self, tmp_path):
        exam = make_null_exam(24, 30, seed=1)
        path = tmp_path / "small.csv"
        path.write_text(exam.to_csv(), encoding="utf-8")
        cfg = RunConfig(input_paths=(str(path),), output_dir=str(tmp_path))
        with pytest.raises(IneligibleExamError) as err:
            run_pipeline(cfg)
        assert err.value.eligibility.status.value == "rejected_too_few_students"

    def test_missing_file_is_stage_error(self, tmp_path):
        cfg = RunConfig(input_paths=(str(tmp_path / "nope.csv"),), output_dir=".")
        with pytest.raises(StageError, match=r"\[parse\]"):
            run_pipeline(cfg)

    def test_json_deterministic_for_same_config(self, planted_bundle, planted_exam_csv):
        bundle, _, cfg = planted_bundle
        again = run_pipeline(cfg)
        assert emit_json(bundle) == emit_json(again)

    def test_report_numbers_equal_pipeline_numbers(self, planted_bundle, planted_exam_csv):
        bundle, _, _ = planted_bundle
        path, _ = planted_exam_csv
        with open(path, "rb") as fh:
            pre, _ = preprocess(parse_exam(fh))
        metrics = student_metrics(pre, identity_scores(pre))
        by_id = {m.student_id: m for m in metrics}
        for row in bundle.students:
            assert row.cs == by_id[row.id].cs
            assert row.max_is == by_id[row.id].max_is
        for g in bundle.groups:
            assert g.max_cs == max(g.member_cs)

    def test_combined_exams_join_and_sum_complexity(self, tmp_path):
        a = make_null_exam(40, 14, seed=61)
        b = make_null_exam(40, 14, seed=62)  # same ids: single-cohort naming
        pa, pb = tmp_path / "mid1.csv", tmp_path / "mid2.csv"
        pa.write_text(a.to_csv(), encoding="utf-8")
        pb.write_text(b.to_csv(), encoding="utf-8")
        cfg = RunConfig(
            input_paths=(str(pa), str(pb)),
            output_dir=str(tmp_path),
            synthetic_students=400,
        )
        bundle = run_pipeline(cfg)
        assert bundle.header.n_exams_combined == 2
        assert bundle.header.n_questions == 28
        assert len(bundle.header.complexity_per_exam) == 2
        assert bundle.header.complexity == pytest.approx(
            sum(bundle.header.complexity_per_exam), abs=1e-9
        )
        assert bundle.header.exam_label == "mid1 + mid2"

    def test_low_complexity_warning_flag(self, tmp_path):
        # ~log10(2) per question over 21 questions -> complexity ~6 < 15
        rng = np.random.default_rng(0)
        from qsid.exam_data import ScoreMatrix

        units = rng.integers(0, 2, size=(40, 21)) * 100
        exam = ScoreMatrix(
            tuple(f"s{i:02d}" for i in range(40)),
            tuple(f"q{j}" for j in range(21)),
            units,
        )
        path = tmp_path / "lowc.csv"
        path.write_text(exam.to_csv(), encoding="utf-8")
        cfg = RunConfig(
            input_paths=(str(path),), output_dir=str(tmp_path), synthetic_students=500
        )
        bundle = run_pipeline(cfg)
        assert bundle.header.low_complexity_warning
        assert "below 15" in render_html(bundle)


class TestJson:
    def test_validates_against_published_schema(self, planted_bundle):
        bundle, _, _ = planted_bundle
        schema = json.loads(
            resources.files("qsid.data").joinpath("report_schema.json").read_text()
        )
        jsonschema.validate(json.loads(emit_json(bundle)), schema)

    def test_round_trip_preserves_rendered_html(self, planted_bundle):
        bundle, _, _ = planted_bundle
        loaded = bundle_from_json(emit_json(bundle))
        assert render_html(loaded) == render_html(bundle)
        assert emit_json(loaded) == emit_json(bundle)

    def test_zero_groups_serializes_empty_list(self, zero_group_bundle):
        data = json.loads(emit_json(zero_group_bundle))
        assert data["groups"] == []


@pytest.fixture(scope="module")
def zero_group_bundle(tmp_path_factory):
    exam = make_null_exam(40, 24, seed=41)
    base = tmp_path_factory.mktemp("zero")
    path = base / "quiet.csv"
    path.write_text(exam.to_csv(), encoding="utf-8")
    # a custom table with unreachable cutoffs guarantees zero groups
    table = ThresholdTable(
        grid=(40,), rows={40: (50.0, 60.0, 70.0, 80.0)}, over_250=OVER_250_ROW
    )
    tpath = base / "table.csv"
    table.save(tpath)
    cfg = RunConfig(
        input_paths=(str(path),),
        output_dir=str(base),
        synthetic_students=400,
        threshold_table_path=str(tpath),
    )
    return run_pipeline(cfg)


class TestRenderHtml:
    def test_zero_groups_message_and_histograms_present(self, zero_group_bundle):
        html_text = render_html(zero_group_bundle)
        assert "No collusion groups detected" in html_text
        assert html_text.count("<svg") >= 3  # two CS panels + bar chart

    def test_no_external_fetches(self, planted_bundle):
        html_text = render_html(planted_bundle[0])
        for marker in ("http://", "https://", "<script", "url("):
            assert marker not in html_text.replace(
                'xmlns="http://www.w3.org/2000/svg"', ""
            )

    def test_empirical_absent_note(self, planted_exam_csv, tmp_path):
        path, _ = planted_exam_csv
        cfg = RunConfig(
            input_paths=(str(path),),
            output_dir=str(tmp_path),
            synthetic_students=500,
            empirical_cs_path=None,
        )
        bundle = run_pipeline(cfg)
        html_text = render_html(bundle)
        assert bundle.cs_histograms.empirical is None
        assert "No empirical-control CS sample" in html_text

    def test_empirical_bundled_default_present(self, planted_bundle):
        bundle, _, _ = planted_bundle
        assert bundle.cs_histograms.empirical is not None
        assert bundle.cs_histograms.empirical.n_samples == 10_000

    def test_eight_groups_get_eight_histograms_with_cycled_palette(self):
        students = tuple(
            __import__("qsid.pipeline", fromlist=["StudentRow"]).StudentRow(
                id=f"s{i:02d}",
                test_score=100.0 - i,
                rank=i + 1,
                max_is=10,
                median_is=5.0,
                im=5.0,
                local_median_im=2.0,
                cs=2.5,
                partner1_id="s00",
                partner2_id="s01",
                partner1_tie_ids=(),
            )
            for i in range(16)
        )
        groups = tuple(
            GroupRow(
                rank=r,
                member_ids=(f"s{2 * (r - 1):02d}", f"s{2 * r - 1:02d}"),
                member_cs=(2.5, 2.0),
                max_cs=2.5,
                bin="low_risk_f1",
                emp_fpr=0.0004,
                syn_fpr=0.0006,
                excluded=False,
            )
            for r in range(1, 9)
        )
        hists = tuple(
            IsHistogramData(
                group_rank=r, member_id=f"s{2 * (r - 1):02d}", counts=(0, 2, 5, 1), group_pair_is=(3,)
            )
            for r in range(1, 9)
        )
        bundle = ReportBundle(
            schema_version=1,
            header=ReportHeader("C", "E", 16, 1, 20, 25.0, (25.0,), False),
            thresholds={
                "c1": 1.23, "c2": 1.5, "c3": 1.6, "c4": 1.7,
                "class_size_row": "over_250", "source": "default",
            },
            students=students,
            groups=groups,
            fpr_bins=(),
            cs_histograms=CsHistograms(
                bin_width=0.05,
                query=HistogramSeries("query exam", 16, (1, 2, 3)),
                empirical=None,
                synthetic=HistogramSeries("synthetic control", 100, (10, 20)),
            ),
            is_histograms=hists,
            exclusions=ExclusionReport((), 0, (), 0, ()),
            n_synthetic=100,
            synthetic_replicates=10,
            seed=0,
            cohorts=5,
        )
        html_text = render_html(bundle)
        assert html_text.count("identity scores of student") == 8
        for rank in range(1, 9):
            assert group_color(rank) in html_text

    def test_excluded_groups_move_to_appendix(self, planted_bundle):
        bundle, _, _ = planted_bundle
        excluded = GroupRow(
            rank=len(bundle.groups) + 1,
            member_ids=("zz1", "zz2"),
            member_cs=(1.55, 1.5),
            max_cs=1.55,
            bin="high_risk_f3",
            emp_fpr=0.0056,
            syn_fpr=0.012,
            excluded=True,
        )
        patched = ReportBundle(
            **{
                **bundle.__dict__,
                "groups": tuple(bundle.groups) + (excluded,),
            }
        )
        html_text = render_html(patched)
        assert "Appendix: groups excluded" in html_text
        assert "zz1" in html_text

    def test_cs_display_rounding_two_decimals(self, planted_bundle):
        bundle, _, _ = planted_bundle
        html_text = render_html(bundle)
        top = max(g.max_cs for g in bundle.groups)
        assert f"{top:.2f}" in html_text
