"""Instructor report rendering: self-contained HTML with inline SVG, and
stable-key-order JSON.

Display formatting is fixed (collusion scores at 2 decimals, FPR
percentages at 2-3 significant figures); underlying numbers in the JSON
are never rounded.
"""

import html
import json

import numpy as np

from qsid.pipeline import ReportBundle

# 12-color band palette cycled across group rows and charts.
PALETTE = (
    "#8DD3C7", "#FFFFB3", "#BEBADA", "#FB8072", "#80B1D3", "#FDB462",
    "#B3DE69", "#FCCDE5", "#D9D9D9", "#BC80BD", "#CCEBC5", "#FFED6F",
)

_QUERY_COLOR = "#1F77B4"
_CONTROL_COLOR = "#D62728"
_BASE_BAR = "#9FB4C7"


def emit_json(bundle: ReportBundle) -> str:
    """Serialize the bundle with stable key order."""
    return json.dumps(bundle.to_dict(), indent=2) + "\n"


def bundle_from_json(text: str) -> ReportBundle:
    return ReportBundle.from_dict(json.loads(text))


def _fmt_cs(v: float) -> str:
    return f"{v:.2f}"


def _fmt_level(v: float) -> str:
    return f"{100.0 * v:.2f}%"


def _fmt_fpr(v: float) -> str:
    return f"{100.0 * v:.3f}%"


def _esc(s) -> str:
    return html.escape(str(s), quote=True)


def group_color(rank: int) -> str:
    return PALETTE[(rank - 1) % len(PALETTE)]


def _svg_open(width: int, height: int) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" role="img">'
    ]


def _axis(parts: list, x0: int, y0: int, x1: int, y1: int):
    parts.append(
        f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="#444" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#444" stroke-width="1"/>'
    )


def _svg_histogram_overlay(
    series: list,
    bin_width: float,
    title: str,
    x_label: str,
    width: int = 440,
    height: int = 280,
) -> str:
    """Overlayed proportion-per-bin histograms for (label, color, series)."""
    left, right, top, bottom = 46, 10, 26, 34
    plot_w, plot_h = width - left - right, height - top - bottom
    n_bins = max(len(s.counts) for _, _, s in series)
    props = []
    for _, _, s in series:
        scale = max(1, s.n_samples)
        arr = np.zeros(n_bins)
        arr[: len(s.counts)] = np.asarray(s.counts, dtype=np.float64) / scale
        props.append(arr)
    y_max = max(1e-9, max(float(a.max()) for a in props))

    parts = _svg_open(width, height)
    parts.append(
        f'<text x="{width / 2:.1f}" y="15" text-anchor="middle" font-size="13" '
        f'fill="#222">{_esc(title)}</text>'
    )
    _axis(parts, left, top, width - right, height - bottom)
    bw = plot_w / n_bins
    for (label, color, _), arr in zip(series, props):
        for b, v in enumerate(arr):
            if v <= 0:
                continue
            h = plot_h * v / y_max
            x = left + b * bw
            y = height - bottom - h
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(bw - 0.4, 0.5):.2f}" '
                f'height="{h:.2f}" fill="{color}" fill-opacity="0.55"/>'
            )
    # x ticks at integer CS values
    max_x = n_bins * bin_width
    tick = 0.0
    while tick <= max_x + 1e-9:
        x = left + (tick / bin_width) * bw
        parts.append(
            f'<line x1="{x:.2f}" y1="{height - bottom}" x2="{x:.2f}" '
            f'y2="{height - bottom + 4}" stroke="#444" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{height - bottom + 16}" text-anchor="middle" '
            f'font-size="10" fill="#444">{tick:g}</text>'
        )
        tick += max(0.5, round(max_x / 8 / 0.5) * 0.5)
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 4}" text-anchor="middle" '
        f'font-size="11" fill="#444">{_esc(x_label)}</text>'
    )
    parts.append(
        f'<text x="12" y="{(height - bottom + top) / 2:.1f}" text-anchor="middle" '
        f'font-size="11" fill="#444" transform="rotate(-90 12 '
        f'{(height - bottom + top) / 2:.1f})">proportion of students</text>'
    )
    ly = top + 6
    for label, color, _ in series:
        parts.append(
            f'<rect x="{width - right - 150}" y="{ly - 9}" width="11" height="11" '
            f'fill="{color}" fill-opacity="0.55"/>'
        )
        parts.append(
            f'<text x="{width - right - 134}" y="{ly}" font-size="11" '
            f'fill="#222">{_esc(label)}</text>'
        )
        ly += 16
    parts.append("</svg>")
    return "".join(parts)


def _svg_cs_bars(bundle: ReportBundle, width: int = 880, height: int = 260) -> str:
    """Per-student CS bars ordered by test-score rank; group members colored."""
    left, right, top, bottom = 46, 10, 10, 34
    plot_w, plot_h = width - left - right, height - top - bottom
    by_rank = sorted(bundle.students, key=lambda s: s.rank)
    member_color = {}
    for g in bundle.groups:
        if g.excluded:
            continue
        for mid in g.member_ids:
            member_color[mid] = group_color(g.rank)
    y_max = max(1e-9, max(s.cs for s in by_rank))
    n = len(by_rank)
    bw = plot_w / n
    parts = _svg_open(width, height)
    _axis(parts, left, top, width - right, height - bottom)
    for i, s in enumerate(by_rank):
        h = plot_h * s.cs / y_max
        x = left + i * bw
        color = member_color.get(s.id, _BASE_BAR)
        parts.append(
            f'<rect x="{x:.2f}" y="{height - bottom - h:.2f}" '
            f'width="{max(bw - 0.3, 0.4):.2f}" height="{h:.2f}" fill="{color}"/>'
        )
    step = max(1, n // 10)
    for rank in list(range(1, n + 1, step)) + [n]:
        x = left + (rank - 0.5) * bw
        parts.append(
            f'<text x="{x:.2f}" y="{height - bottom + 14}" text-anchor="middle" '
            f'font-size="10" fill="#444">{rank}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 4}" text-anchor="middle" font-size="11" '
        f'fill="#444">student test-score rank (1 = highest)</text>'
    )
    parts.append(
        f'<text x="12" y="{(height - bottom + top) / 2:.1f}" text-anchor="middle" '
        f'font-size="11" fill="#444" transform="rotate(-90 12 '
        f'{(height - bottom + top) / 2:.1f})">collusion score</text>'
    )
    parts.append("</svg>")
    return "".join(parts)


def _svg_is_histogram(hist, color: str, width: int = 430, height: int = 250) -> str:
    """IS counts for one group's top member; within-group pairs stacked in color."""
    left, right, top, bottom = 40, 10, 26, 34
    plot_w, plot_h = width - left - right, height - top - bottom
    counts = np.asarray(hist.counts, dtype=np.int64)
    pair = np.zeros_like(counts)
    for v in hist.group_pair_is:
        if v < len(pair):
            pair[v] += 1
    base = counts - pair
    n_bins = len(counts)
    y_max = max(1, int(counts.max()))
    bw = plot_w / n_bins
    parts = _svg_open(width, height)
    parts.append(
        f'<text x="{width / 2:.1f}" y="15" text-anchor="middle" font-size="13" fill="#222">'
        f"Group {hist.group_rank}: identity scores of student {_esc(hist.member_id)}</text>"
    )
    _axis(parts, left, top, width - right, height - bottom)
    for b in range(n_bins):
        x = left + b * bw
        hb = plot_h * base[b] / y_max
        hp = plot_h * pair[b] / y_max
        if base[b]:
            parts.append(
                f'<rect x="{x:.2f}" y="{height - bottom - hb:.2f}" '
                f'width="{max(bw - 0.3, 0.4):.2f}" height="{hb:.2f}" fill="{_BASE_BAR}"/>'
            )
        if pair[b]:
            parts.append(
                f'<rect x="{x:.2f}" y="{height - bottom - hb - hp:.2f}" '
                f'width="{max(bw - 0.3, 0.4):.2f}" height="{hp:.2f}" fill="{color}" '
                f'stroke="#333" stroke-width="0.6"/>'
            )
    step = max(1, n_bins // 8)
    for v in range(0, n_bins, step):
        x = left + (v + 0.5) * bw
        parts.append(
            f'<text x="{x:.2f}" y="{height - bottom + 14}" text-anchor="middle" '
            f'font-size="10" fill="#444">{v}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 4}" text-anchor="middle" font-size="11" '
        f'fill="#444">identity score with every other student</text>'
    )
    parts.append("</svg>")
    return "".join(parts)


_CSS = """
body { font-family: Helvetica, Arial, sans-serif; margin: 28px; color: #1a1a1a; }
h1 { font-size: 20px; } h2 { font-size: 16px; margin-top: 30px; }
table { border-collapse: collapse; margin: 10px 0; }
th, td { border: 1px solid #bbb; padding: 4px 10px; font-size: 13px; text-align: right; }
th { background: #f0f0f0; }
td.id { text-align: left; }
.warn { color: #B00020; border: 1px solid #B00020; padding: 8px 12px; margin: 12px 0; }
.note { color: #555; font-style: italic; margin: 8px 0; }
.meta { color: #333; font-size: 13px; }
.charts { display: flex; flex-wrap: wrap; gap: 14px; }
"""


def render_html(bundle: ReportBundle) -> str:
    """Render a single self-contained HTML report (no external fetches)."""
    b = bundle
    out = []
    out.append("<!DOCTYPE html>")
    out.append('<html lang="en"><head><meta charset="utf-8">')
    out.append(f"<title>Collusion report: {_esc(b.header.exam_label)}</title>")
    out.append(f"<style>{_CSS}</style></head><body>")
    out.append("<h1>Collusion analysis report</h1>")
    out.append(
        '<p class="meta">'
        f"<b>Course:</b> {_esc(b.header.course_label)} &nbsp; "
        f"<b>Query exam:</b> {_esc(b.header.exam_label)} &nbsp; "
        f"<b>Students:</b> {b.header.n_students} &nbsp; "
        f"<b>Exams combined:</b> {b.header.n_exams_combined} &nbsp; "
        f"<b>Questions:</b> {b.header.n_questions} &nbsp; "
        f"<b>Complexity:</b> {b.header.complexity:.1f}"
        + (
            " ("
            + ", ".join(f"{c:.1f}" for c in b.header.complexity_per_exam)
            + " per exam)"
            if len(b.header.complexity_per_exam) > 1
            else ""
        )
        + "</p>"
    )
    if b.header.low_complexity_warning:
        out.append(
            '<div class="warn">Warning: this exam\'s complexity of '
            f"{b.header.complexity:.1f} is below 15, so detection power is reduced. "
            "Combining several exams from the same class raises complexity "
            "(complexities add).</div>"
        )

    out.append("<h2>1. Collusion-score distributions vs. two negative controls</h2>")
    out.append(
        '<p class="note">Each student receives a collusion score (CS). Exams with '
        "significant collusion show more students at high CS than either control.</p>"
    )
    out.append('<div class="charts">')
    query = b.cs_histograms.query
    if b.cs_histograms.empirical is not None:
        out.append(
            _svg_histogram_overlay(
                [
                    ("query exam", _QUERY_COLOR, query),
                    ("empirical control", _CONTROL_COLOR, b.cs_histograms.empirical),
                ],
                b.cs_histograms.bin_width,
                "A. Query vs. empirical control",
                "collusion score",
            )
        )
    out.append(
        _svg_histogram_overlay(
            [
                ("query exam", _QUERY_COLOR, query),
                ("synthetic control", "#E6A817", b.cs_histograms.synthetic),
            ],
            b.cs_histograms.bin_width,
            "B. Query vs. synthetic control",
            "collusion score",
        )
    )
    out.append("</div>")
    if b.cs_histograms.empirical is None:
        out.append(
            '<p class="note">No empirical-control CS sample was supplied, so the '
            "empirical-control histogram is omitted; the synthetic control above is "
            "generated from this exam's fitted null model.</p>"
        )

    out.append("<h2>2. Collusion groups</h2>")
    main_groups = [g for g in b.groups if not g.excluded]
    if main_groups:
        out.append("<table><tr><th>Group</th><th>empFPR</th><th>synFPR</th>"
                   "<th>Student ID</th><th>CS</th></tr>")
        for g in main_groups:
            color = group_color(g.rank)
            for mid, cs in zip(g.member_ids, g.member_cs):
                out.append(
                    f'<tr style="background:{color}"><td>{g.rank}</td>'
                    f"<td>{_fmt_level(g.emp_fpr)}</td><td>{_fmt_fpr(g.syn_fpr)}</td>"
                    f'<td class="id">{_esc(mid)}</td><td>{_fmt_cs(cs)}</td></tr>'
                )
        out.append("</table>")
    else:
        out.append('<p class="note">No collusion groups detected.</p>')

    out.append("<h3>95% confidence limits for the FPRs</h3>")
    out.append(
        "<table><tr><th>FPR bin</th><th>Empirical FPR</th><th>Synthetic FPR</th></tr>"
    )
    for row in b.fpr_bins:
        out.append(
            f"<tr><td>{_fmt_level(row.emp_level)}</td>"
            f"<td>{_fmt_fpr(row.emp_level)} (&plusmn;{_fmt_fpr(row.emp_half_width)})</td>"
            f"<td>{_fmt_fpr(row.syn_level)} (&plusmn;{_fmt_fpr(row.syn_half_width)})</td></tr>"
        )
    out.append("</table>")
    out.append(
        f'<p class="note">Synthetic FPRs are cumulative fractions of '
        f"{b.n_synthetic:,} synthetic students across {b.synthetic_replicates} "
        "model-sampled control exams.</p>"
    )

    out.append("<h2>3. Collusion scores ranked by student test score</h2>")
    out.append(_svg_cs_bars(bundle))

    out.append("<h2>4. Identity-score histograms, one per collusion group</h2>")
    if b.is_histograms:
        out.append(
            '<p class="note">For each group, identity scores between the group member '
            "with the highest CS and every other student. Pairs within the group stack "
            "in the group color and appear as outliers to the right.</p>"
        )
        out.append('<div class="charts">')
        for hist in b.is_histograms:
            out.append(_svg_is_histogram(hist, group_color(hist.group_rank)))
        out.append("</div>")
    else:
        out.append('<p class="note">No collusion groups detected.</p>')

    out.append("<h2>5. Preprocessing exclusions</h2>")
    ex = b.exclusions
    out.append("<ul>")
    out.append(f"<li>Rows without a student id: {ex.missing_id_rows}</li>")
    out.append(
        "<li>Duplicated student ids (all copies removed): "
        + (", ".join(_esc(i) for i in ex.duplicate_ids) if ex.duplicate_ids else "none")
        + "</li>"
    )
    out.append(
        "<li>Students at &le;5% of the top test score: "
        + (", ".join(_esc(i) for i in ex.low_score_ids) if ex.low_score_ids else "none")
        + "</li>"
    )
    out.append(f"<li>Empty score cells filled with 0: {ex.empty_cells}</li>")
    if ex.join_dropped_ids:
        out.append(
            "<li>Students absent from at least one combined exam: "
            + ", ".join(_esc(i) for i in ex.join_dropped_ids)
            + "</li>"
        )
    out.append("</ul>")

    excluded = [g for g in b.groups if g.excluded]
    if excluded:
        out.append("<h2>Appendix: groups excluded by the synthetic-FPR rule</h2>")
        out.append(
            '<p class="note">These groups fall in a bin whose cumulative synthetic FPR '
            "exceeds 0.8%, so they are withheld from the main table.</p>"
        )
        out.append(
            "<table><tr><th>Group</th><th>empFPR</th><th>synFPR</th>"
            "<th>Student ID</th><th>CS</th></tr>"
        )
        for g in excluded:
            for mid, cs in zip(g.member_ids, g.member_cs):
                out.append(
                    f"<tr><td>{g.rank}</td><td>{_fmt_level(g.emp_fpr)}</td>"
                    f"<td>{_fmt_fpr(g.syn_fpr)}</td><td class=\"id\">{_esc(mid)}</td>"
                    f"<td>{_fmt_cs(cs)}</td></tr>"
                )
        out.append("</table>")

    out.append("</body></html>")
    return "\n".join(out) + "\n"
