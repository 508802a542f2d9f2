"""Command-line interface: analyze, calibrate, complexity.

Exit codes: 0 success, 1 internal error, 3 input error, 4 eligibility
rejection. Worker threads are capped by the QSID_THREADS environment
variable.
"""

import json
import sys
from pathlib import Path

import click

from qsid import __version__
from qsid.calibration import (
    DEFAULT_ANCHORS,
    DEFAULT_GRID,
    calibrate_thresholds,
    null_bin_rates,
)
from qsid.errors import (
    CalibrationError,
    ConfigError,
    EmptyExamError,
    IneligibleExamError,
    ParseError,
    QsidError,
)
from qsid.exam_data import combine_exams, parse_exam, preprocess
from qsid.metrics import complexity as complexity_profile
from qsid.pipeline import RunConfig, StageError, run_pipeline
from qsid.report import emit_json, render_html

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 3
EXIT_INELIGIBLE = 4

_INPUT_ERRORS = (ParseError, EmptyExamError, ConfigError, CalibrationError, OSError)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__, prog_name="qsid")
def main():
    """Detect likely collusion groups from graded exam question scores."""


@main.command()
@click.option("--input", "inputs", multiple=True, required=True,
              type=click.Path(exists=False), help="Exam CSV; repeat to combine exams.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--synthetic-students", default=100_000, show_default=True, type=int,
              help="Minimum total synthetic students for the synthetic FPR.")
@click.option("--cohorts", default=5, show_default=True, type=int,
              help="Test-score cohorts for the null model.")
@click.option("--thresholds", "thresholds_path", type=click.Path(), default=None,
              help="Threshold table CSV (default: bundled table).")
@click.option("--empirical-cs", "empirical_cs", type=click.Path(), default=None,
              help="Precomputed null CS sample (default: bundled simulated sample).")
@click.option("--no-empirical-cs", is_flag=True, default=False,
              help="Omit the empirical-control histogram.")
@click.option("--format", "formats", default="html,json", show_default=True,
              help="Comma-separated subset of html,json.")
@click.option("--course", default="", help="Course label for the report header.")
@click.option("--exam-label", default="", help="Exam label for the report header.")
@click.option("--dump-metrics", is_flag=True, default=False,
              help="Also write per-student metrics to metrics.json.")
@click.option("--echo-matrix", is_flag=True, default=False,
              help="Also write the canonical parsed matrix to matrix.json.")
@click.option("--dump-model", is_flag=True, default=False,
              help="Also write the fitted null model to model.json (audit).")
def analyze(inputs, out_dir, seed, synthetic_students, cohorts, thresholds_path,
            empirical_cs, no_empirical_cs, formats, course, exam_label,
            dump_metrics, echo_matrix, dump_model):
    """Analyze one exam (or several combined) and write the report."""
    fmt = tuple(f.strip() for f in formats.split(",") if f.strip())
    if no_empirical_cs:
        empirical_path = None
    elif empirical_cs is not None:
        empirical_path = empirical_cs
    else:
        empirical_path = "bundled"
    try:
        cfg = RunConfig(
            input_paths=tuple(inputs),
            output_dir=out_dir,
            seed=seed,
            synthetic_students=synthetic_students,
            cohorts=cohorts,
            threshold_table_path=thresholds_path,
            empirical_cs_path=empirical_path,
            formats=fmt,
            course_label=course,
            exam_label=exam_label,
        )
    except ValueError as exc:
        _fail(EXIT_INPUT, str(exc))

    try:
        bundle = run_pipeline(cfg)
    except IneligibleExamError as exc:
        e = exc.eligibility
        click.echo(
            f"exam rejected: {e.status.value} "
            f"(students={e.n_students}, questions={e.n_questions})",
            err=True,
        )
        sys.exit(EXIT_INELIGIBLE)
    except StageError as exc:
        code = EXIT_INPUT if isinstance(exc.original, _INPUT_ERRORS) else EXIT_INTERNAL
        _fail(code, str(exc))
    except QsidError as exc:
        _fail(EXIT_INTERNAL, str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "json" in fmt:
        (out / "report.json").write_text(emit_json(bundle), encoding="utf-8")
    if "html" in fmt:
        (out / "report.html").write_text(render_html(bundle), encoding="utf-8")
    if dump_metrics:
        rows = [s.__dict__ | {"partner1_tie_ids": list(s.partner1_tie_ids)}
                for s in bundle.students]
        (out / "metrics.json").write_text(
            json.dumps(rows, indent=2) + "\n", encoding="utf-8"
        )
    if echo_matrix:
        matrix = _parse_combined(cfg.input_paths)
        (out / "matrix.json").write_text(
            json.dumps(matrix.to_json_dict(), indent=2) + "\n", encoding="utf-8"
        )
    if dump_model:
        from qsid.synthetic import fit_copula

        pre, _ = preprocess(_parse_combined(cfg.input_paths))
        model = fit_copula(pre, k_cohorts=cohorts, seed=seed)
        (out / "model.json").write_text(
            json.dumps(model.to_json_dict(), indent=2) + "\n", encoding="utf-8"
        )
    if bundle.header.low_complexity_warning:
        click.echo(
            f"warning: complexity {bundle.header.complexity:.1f} is below 15; "
            "detection power is reduced (consider combining exams)",
            err=True,
        )
    n_groups = sum(1 for g in bundle.groups if not g.excluded)
    click.echo(
        f"analyzed {bundle.header.n_students} students, "
        f"{bundle.header.n_questions} questions: {n_groups} collusion group(s)"
        + (f" + {len(bundle.groups) - n_groups} excluded" if n_groups < len(bundle.groups) else "")
    )
    sys.exit(EXIT_OK)


def _parse_combined(paths):
    exams, labels = [], []
    for path in paths:
        with open(path, "rb") as fh:
            exams.append(parse_exam(fh))
        labels.append(Path(path).stem)
    combined, _ = combine_exams(exams, labels)
    return combined


@main.command()
@click.option("--nulls", "nulls_dir", required=True, type=click.Path(),
              help="Directory of proctored (collusion-free) exam CSVs.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Path for the threshold table CSV.")
@click.option("--repeats", default=100, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--anchors", default=",".join(str(a) for a in DEFAULT_ANCHORS),
              show_default=True, help="Four quantile anchors, comma-separated.")
@click.option("--bin-rates", is_flag=True, default=False,
              help="Also print cumulative null bin rates under the new table.")
def calibrate(nulls_dir, out_path, repeats, seed, anchors, bin_rates):
    """Calibrate class-size thresholds from a directory of null exams."""
    try:
        anchor_values = tuple(float(a) for a in anchors.split(","))
        if len(anchor_values) != 4:
            raise ConfigError("exactly four quantile anchors are required")
        paths = sorted(Path(nulls_dir).glob("*.csv"))
        if not paths:
            raise ParseError(f"no .csv files found in {nulls_dir!r}")
        exams = []
        for path in paths:
            with open(path, "rb") as fh:
                exams.append(preprocess(parse_exam(fh))[0])
        table = calibrate_thresholds(
            exams, grid=DEFAULT_GRID, anchors=anchor_values, repeats=repeats, seed=seed
        )
        table.save(out_path)
        click.echo(f"wrote thresholds for {len(table.grid)} class sizes to {out_path}")
        if bin_rates:
            rates = null_bin_rates(exams, table)
            for bin_, ci in rates.items():
                click.echo(
                    f"{bin_.value}: {100 * ci.estimate:.3f}% "
                    f"(+/- {100 * ci.half_width:.3f}%) of {ci.n} null students"
                )
    except _INPUT_ERRORS as exc:
        _fail(EXIT_INPUT, str(exc))
    except QsidError as exc:
        _fail(EXIT_INTERNAL, str(exc))
    sys.exit(EXIT_OK)


@main.command()
@click.option("--input", "inputs", multiple=True, required=True, type=click.Path(),
              help="Exam CSV; repeat to combine exams.")
def complexity(inputs):
    """Print total and per-question complexity for an exam."""
    try:
        combined = _parse_combined(inputs)
        pre, _ = preprocess(combined)
        profile = complexity_profile(pre)
    except _INPUT_ERRORS as exc:
        _fail(EXIT_INPUT, str(exc))
    except QsidError as exc:
        _fail(EXIT_INTERNAL, str(exc))
    click.echo(f"total\t{profile.total:.4f}")
    for label, value in zip(pre.question_labels, profile.per_question):
        click.echo(f"{label}\t{value:.4f}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
