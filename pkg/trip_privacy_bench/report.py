"""
Static report rendering: ROC panels as SVG, summary.md and summary.html.

Everything is rendered from the CSV files of a results directory; output bytes
depend only on those files.
"""

import html
import json
import logging
import os

from .config import (CURVE_COLORS, EPSILON_UNIT_NOTE, LIGHT_THEME, PLOT_DIR, SUMMARY_FILE,
                     SUMMARY_HTML_FILE)
from .database import ResultsDatabase, result_from_row
from .errors import StorageError
from .evaluation import STATUS_NA, STATUS_OK, od_sensitivity, relative_drop
from .utils import adjust_color

# Import markdown if available for rendering
try:
    import markdown
    HAS_MARKDOWN = True
except ImportError:
    HAS_MARKDOWN = False

logger = logging.getLogger(__name__)

RUN_INFO_FILE = "run_config.json"


def _num(value):
    return f"{value:.2f}"


class SvgCanvas:
    """Minimal SVG writer with deterministic number formatting."""

    def __init__(self, width, height, theme=LIGHT_THEME):
        self.width = width
        self.height = height
        self.theme = theme
        self.elements = [f'<rect x="0" y="0" width="{width}" height="{height}" '
                         f'fill="{theme["bg_color"]}"/>']

    def line(self, x1, y1, x2, y2, color, width=1.0, dash=None):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.elements.append(f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
                             f'stroke="{color}" stroke-width="{width}"{dash_attr}/>')

    def polyline(self, points, color, width=1.5, dash=None):
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.elements.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                             f'stroke-width="{width}"{dash_attr}/>')

    def text(self, x, y, content, size=11, anchor="start", color=None):
        self.elements.append(f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" '
                             f'font-family="{self.theme["font_family"]}" text-anchor="{anchor}" '
                             f'fill="{color or self.theme["fg_color"]}">{html.escape(content)}</text>')

    def to_string(self):
        body = "\n".join(self.elements)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n{body}\n</svg>\n')


def curve_style(row):
    """Color and dash pattern of one ROC curve."""
    color = CURVE_COLORS.get(f"{row['detector']}/{row['privacy']}", CURVE_COLORS["default"])
    if row["epsilon"] and float(row["epsilon"]) < 0.1:
        # smaller epsilon, lighter shade
        color = adjust_color(color, 60)
    dash = "6,3" if row["od_mode"] == "shifted" else None
    return color, dash


def curve_label(row):
    privacy = row["privacy"] if not row["epsilon"] else f"{row['privacy']} eps={float(row['epsilon']):g}"
    return f"{row['detector']} {privacy} {row['od_mode']} auc={float(row['auc']):.3f}"


def roc_panel_svg(title, curves, size=360, legend_line=14):
    """One ROC panel; curves is a list of (label, color, dash, points)."""
    margin = 48
    plot = size - margin - 16
    height = size + legend_line * len(curves) + 8
    canvas = SvgCanvas(size, height)
    theme = canvas.theme

    def to_px(fpr, tpr):
        return margin + fpr * plot, 16 + (1.0 - tpr) * plot

    for k in range(6):
        v = k / 5.0
        x, _ = to_px(v, 0.0)
        _, y = to_px(0.0, v)
        canvas.line(x, 16, x, 16 + plot, theme["grid_color"])
        canvas.line(margin, y, margin + plot, y, theme["grid_color"])
        canvas.text(x, 16 + plot + 14, f"{v:.1f}", size=9, anchor="middle")
        canvas.text(margin - 6, y + 3, f"{v:.1f}", size=9, anchor="end")
    canvas.line(*to_px(0.0, 0.0), *to_px(1.0, 1.0), theme["diagonal_color"], dash="4,4")
    canvas.text(margin + plot / 2, 12, title, size=12, anchor="middle")
    canvas.text(margin + plot / 2, 16 + plot + 28, "false positive rate", size=10, anchor="middle")

    for i, (label, color, dash, points) in enumerate(curves):
        canvas.polyline([to_px(x, y) for x, y in points], color, dash=dash)
        ly = size + 4 + legend_line * i
        canvas.line(8, ly - 4, 28, ly - 4, color, width=2.0, dash=dash)
        canvas.text(32, ly, label, size=9)
    return canvas.to_string()


def render_roc_panels(db, rows, plot_dir):
    """One SVG per attack intent; returns the written paths."""
    panels = {}
    for row in rows:
        if row["status"] == STATUS_OK:
            panels.setdefault((float(row["c"]), float(row["q"])), []).append(row)
    os.makedirs(plot_dir, exist_ok=True)
    written = []
    for (c, q), panel_rows in sorted(panels.items()):
        curves = []
        for row in panel_rows:
            color, dash = curve_style(row)
            curves.append((curve_label(row), color, dash, db.load_roc_points(row)))
        path = os.path.join(plot_dir, f"roc_c{c:g}_q{q:g}.svg")
        with open(path, "w") as f:
            f.write(roc_panel_svg(f"ROC, c={c:g} m, q={q:g}", curves))
        written.append(path)
    return written


def _outcome(auc):
    if auc >= 0.9:
        return "detects"
    if auc >= 0.7:
        return "degraded"
    return "fails"


def _mean_auc(results, detector, privacy_label):
    aucs = [r.auc for r in results if r.status == STATUS_OK and r.cell.detector == detector
            and r.cell.privacy.label == privacy_label]
    return sum(aucs) / len(aucs) if aucs else None


def summary_markdown(results, run_info=None):
    """Markdown summary of an experiment's result rows."""
    detectors = sorted({r.cell.detector for r in results}, key=lambda d: ("dbscan", "seq").index(d))
    settings = sorted({r.cell.privacy for r in results}, key=lambda s: s.sort_key)
    lines = ["# Trip Privacy Bench results", ""]
    if run_info:
        lines += ["## Run", ""]
        lines += [f"- **{key}**: `{json.dumps(run_info[key], sort_keys=True)}`" for key in sorted(run_info)]
        lines.append("")
    lines += [f"Note: {EPSILON_UNIT_NOTE}.", ""]

    lines += ["## Detector outcome by privacy setting", "",
              "| privacy | " + " | ".join(detectors) + " |",
              "|---|" + "---|" * len(detectors)]
    for setting in settings:
        cells = []
        for detector in detectors:
            statuses = {r.status for r in results
                        if r.cell.detector == detector and r.cell.privacy == setting}
            mean = _mean_auc(results, detector, setting.label)
            if statuses == {STATUS_NA}:
                cells.append("N/A")
            elif mean is None:
                cells.append("failed")
            else:
                cells.append(f"{mean:.3f} ({_outcome(mean)})")
        lines.append(f"| {setting.label} | " + " | ".join(cells) + " |")
    lines.append("")

    lines += ["## Privacy comparison", ""]
    dbscan_01 = _mean_auc(results, "dbscan", "location(eps=0.1)")
    seq_01 = _mean_auc(results, "seq", "location(eps=0.1)")
    if dbscan_01 is not None and seq_01 is not None:
        verdict = "yes" if dbscan_01 < seq_01 else "no"
        lines.append(f"- AUC(dbscan, eps=0.1) < AUC(seq, eps=0.1): **{verdict}** "
                     f"({dbscan_01:.3f} vs {seq_01:.3f})")
    else:
        lines.append("- AUC(dbscan, eps=0.1) < AUC(seq, eps=0.1): not available")
    for detector in detectors:
        baseline = _mean_auc(results, detector, "none")
        for setting in settings:
            if setting.label == "none":
                continue
            value = _mean_auc(results, detector, setting.label)
            if baseline and value is not None:
                lines.append(f"- {detector}, {setting.label}: relative AUC drop "
                             f"{relative_drop(baseline, value):.1%}")
    lines.append("")

    lines += ["## O-D sensitivity", ""]
    try:
        rows = od_sensitivity(results)
        lines += ["| detector | privacy | c | q | auc same | auc shifted | gap |",
                  "|---|---|---|---|---|---|---|"]
        lines += [f"| {r.detector} | {r.privacy} | {r.c:g} | {r.q:g} | {r.auc_same:.3f} | "
                  f"{r.auc_shifted:.3f} | {r.gap:+.3f} |" for r in rows]
    except ValueError:
        lines.append("Not available: no cell was scored in both O-D modes.")
    lines.append("")

    lines += ["## All cells", "",
              "| detector | privacy | c | q | od | status | auc | min_pts |",
              "|---|---|---|---|---|---|---|---|"]
    for r in results:
        auc = f"{r.auc:.4f}" if r.auc is not None else ""
        status = r.status if not r.message or r.status == STATUS_OK else f"{r.status}: {r.message}"
        min_pts = "" if r.min_pts is None else str(r.min_pts)
        lines.append(f"| {r.cell.detector} | {r.cell.privacy.label} | {r.cell.c:g} | {r.cell.q:g} | "
                     f"{r.cell.od_mode.value} | {status} | {auc} | {min_pts} |")
    lines.append("")
    return "\n".join(lines)


def summary_html(md_text, theme=LIGHT_THEME):
    if HAS_MARKDOWN:
        body = markdown.markdown(md_text, extensions=["tables"])
    else:
        body = f"<pre>{html.escape(md_text)}</pre>"
    return ("<!DOCTYPE html>\n<html>\n<head>\n<title>Trip Privacy Bench results</title>\n"
            "<style>\n"
            f"body {{ font-family: {theme['font_family']}; margin: 20px; "
            f"color: {theme['fg_color']}; background-color: {theme['bg_color']}; }}\n"
            f"table {{ border-collapse: collapse; }}\n"
            f"td, th {{ border: 1px solid {theme['grid_color']}; padding: 4px 8px; }}\n"
            "</style>\n</head>\n<body>\n" + body + "\n</body>\n</html>\n")


def render_report(out_dir):
    """Re-render plots, summary.md and summary.html from the CSVs in out_dir."""
    db = ResultsDatabase(out_dir)
    rows, message = db.load_results()
    if not rows:
        raise StorageError(message)
    results = [result_from_row(row) for row in rows]
    run_info = None
    info_path = os.path.join(out_dir, RUN_INFO_FILE)
    if os.path.exists(info_path):
        with open(info_path, "r") as f:
            run_info = json.load(f)

    written = render_roc_panels(db, rows, os.path.join(out_dir, PLOT_DIR))
    md_text = summary_markdown(results, run_info)
    try:
        for name, text in ((SUMMARY_FILE, md_text), (SUMMARY_HTML_FILE, summary_html(md_text))):
            path = os.path.join(out_dir, name)
            with open(path, "w") as f:
                f.write(text)
            written.append(path)
    except OSError as e:
        raise StorageError(f"Cannot write report: {e}")
    logger.info("Rendered %d report files in %s", len(written), out_dir)
    return written
