"""Result tables: aligned text to stdout plus a JSON twin with identical
content. Rendering is a pure function of the JSON payload, so re-emitting
from the file reproduces the text byte for byte.
"""

import json
from pathlib import Path

_EER_COL = "EER(%)"


def render_table(report: dict) -> str:
    """Aligned text table for a report dict of the form
    {"title": ..., "note": ..., "rows": [{"config", "eer", "min_dcf": {p: v}}]}.

    The row with the lowest EER is marked with ``*``.
    """
    rows = report["rows"]
    p_targets = sorted({p for r in rows for p in r["min_dcf"]}, key=float)
    headers = ["Config", _EER_COL] + [f"minDCF(p={p})" for p in p_targets]

    best = min(range(len(rows)), key=lambda i: rows[i]["eer"]) if rows else -1
    cells = []
    for i, r in enumerate(rows):
        mark = " *" if i == best and len(rows) > 1 else ""
        cells.append(
            [r["config"] + mark, f"{100.0 * r['eer']:.4f}"]
            + [f"{r['min_dcf'][p]:.4f}" for p in p_targets]
        )

    widths = [
        max(len(h), *(len(row[j]) for row in cells)) if cells else len(h)
        for j, h in enumerate(headers)
    ]
    def fmt(row):
        left = row[0].ljust(widths[0])
        rest = [v.rjust(w) for v, w in zip(row[1:], widths[1:])]
        return "  ".join([left] + rest).rstrip()

    lines = [report["title"], "-" * len(report["title"])]
    lines.append(fmt(headers))
    lines.extend(fmt(row) for row in cells)
    if report.get("note"):
        lines.append("")
        lines.append(report["note"])
    return "\n".join(lines) + "\n"


def result_row(config_label: str, eval_report) -> dict:
    return {
        "config": config_label,
        "eer": eval_report.eer,
        "min_dcf": {str(p): v for p, v in eval_report.min_dcf.items()},
    }


def write_report(report: dict, out_dir, stem: str = "report") -> tuple[Path, Path]:
    """Write <stem>.txt and <stem>.json; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt = out / f"{stem}.txt"
    js = out / f"{stem}.json"
    txt.write_text(render_table(report), encoding="utf-8")
    js.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return txt, js


def load_report(json_path) -> dict:
    return json.loads(Path(json_path).read_text(encoding="utf-8"))
