"""Timeline CSV/SVG and report JSON writers."""

import csv
import json
import math
from pathlib import Path

TIMELINE_COLUMNS = ("frame", "raw_score", "smoothed_score", "threshold", "in_ground_truth", "in_prediction")


def _cells(series, length):
    out = [""] * length
    if series is not None:
        for i, s in enumerate(series.scores):
            t = series.offset + i
            if 0 <= t < length:
                out[t] = repr(float(s))
    return out


def _mask(intervals, length):
    out = [0] * length
    for iv in intervals:
        for t in range(max(iv.onset, 0), min(iv.offset, length - 1) + 1):
            out[t] = 1
    return out


def export_timeline(path, raw, smoothed, threshold, ground_truth, spots, video_length):
    """Write ``<path>.csv`` and ``<path>.svg`` (``path`` is a prefix); one CSV row per video frame.

    Frames without a score (the last ``k`` raw frames, the smoothing borders)
    get empty score cells.  Returns the two paths.
    """
    path = Path(path)
    if path.suffix in (".csv", ".svg"):
        path = path.with_suffix("")
    csv_path, svg_path = path.parent / f"{path.name}.csv", path.parent / f"{path.name}.svg"
    raw_cells = _cells(raw, video_length)
    sm_cells = _cells(smoothed, video_length)
    gt = _mask(ground_truth, video_length)
    pred = _mask([s.interval for s in spots], video_length)
    thr = "" if threshold is None else repr(float(threshold))
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMELINE_COLUMNS)
        for t in range(video_length):
            w.writerow((t, raw_cells[t], sm_cells[t], thr, gt[t], pred[t]))
    svg_path.write_text(timeline_svg(smoothed, threshold, ground_truth, spots, video_length))
    return csv_path, svg_path


def read_timeline(path):
    """Parse a timeline CSV back into column lists (empty cells become None)."""
    cols = {c: [] for c in TIMELINE_COLUMNS}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for c in TIMELINE_COLUMNS:
                v = row[c]
                if c in ("frame", "in_ground_truth", "in_prediction"):
                    cols[c].append(int(v))
                else:
                    cols[c].append(float(v) if v else None)
    return cols


def timeline_svg(smoothed, threshold, ground_truth, spots, video_length, width=900, height=240):
    """Score curve with a dashed threshold line; ground-truth bars above predicted bars underneath."""
    pad, bar = 40, 10
    plot_h = height - 2 * pad - 3 * bar
    values = [] if smoothed is None else [float(s) for s in smoothed.scores]
    top = max(values + [threshold or 0.0, 1e-9])
    bottom = min(values + [threshold or 0.0, 0.0])
    span = top - bottom or 1.0

    def sx(t):
        return pad + (width - 2 * pad) * t / max(video_length - 1, 1)

    def sy(v):
        return pad + plot_h * (1 - (v - bottom) / span)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{pad + plot_h}" x2="{width - pad}" y2="{pad + plot_h}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{pad + plot_h}" stroke="black"/>']
    if values:
        pts = " ".join(f"{sx(smoothed.offset + i):.2f},{sy(v):.2f}" for i, v in enumerate(values)
                       if math.isfinite(v))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f5fa8" stroke-width="1.2"/>')
    if threshold is not None:
        y = sy(threshold)
        parts.append(f'<line x1="{pad}" y1="{y:.2f}" x2="{width - pad}" y2="{y:.2f}" '
                     'stroke="#c0392b" stroke-dasharray="5,3"/>')
    for row, (ivs, colour, label) in enumerate(((ground_truth, "#27ae60", "ground truth"),
                                                ([s.interval for s in spots], "#e67e22", "predicted"))):
        y = pad + plot_h + bar * (row + 1) + row * 2
        parts.append(f'<text x="{width - pad + 4}" y="{y + bar - 1}">{label}</text>')
        for iv in ivs:
            x0, x1 = sx(iv.onset), sx(iv.offset)
            parts.append(f'<rect x="{x0:.2f}" y="{y}" width="{max(x1 - x0, 1):.2f}" height="{bar}" fill="{colour}"/>')
    parts.append(f'<text x="{pad}" y="{height - 6}">frame 0</text>')
    parts.append(f'<text x="{width - pad}" y="{height - 6}" text-anchor="end">frame {video_length - 1}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def report_json(report):
    data = report.to_dict() if hasattr(report, "to_dict") else report
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def export_report(report, path):
    """Write the report as JSON; key order follows the report's own (stable) layout."""
    Path(path).write_text(report_json(report))
    return Path(path)


def load_report(path):
    return json.loads(Path(path).read_text())
