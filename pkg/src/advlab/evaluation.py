"""Metrics and report emission: top-k errors, accuracy tables, curves.

Reports keep exact correct/total counts; accuracy is always derived as
correct/total at full precision and only rounded at CSV-write time. The
curve renderer emits a self-contained SVG whose bytes are a pure function
of the report, so identical runs produce identical plots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ReportRow", "EvalReport", "top_k_error", "write_csv", "read_csv", "render_curve"]


@dataclass(frozen=True)
class ReportRow:
    setting: float  # epsilon, patch size, or k, depending on the attack
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def add(self, setting: float, correct: int, total: int) -> None:
        if not 0 <= correct <= total:
            raise ValueError(f"report row: correct={correct} outside [0, {total}]")
        self.rows.append(ReportRow(float(setting), int(correct), int(total)))

    def accuracy_by_setting(self) -> dict[float, float]:
        return {row.setting: row.accuracy for row in self.rows}


def top_k_error(log_probs: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose true label is absent from the k best classes.

    Ties are broken in favour of the lower class index, which therefore
    occupies the better rank.
    """
    lp = np.asarray(log_probs)
    if lp.ndim != 2:
        raise ValueError(f"top_k_error: expected (B, C) log-probs, got shape {lp.shape}")
    classes = lp.shape[1]
    if not 1 <= k <= classes:
        raise ValueError(f"top_k_error: k must lie in [1, {classes}], got {k}")
    y = np.asarray(labels)
    ranked = np.argsort(-lp, axis=1, kind="stable")
    hit = (ranked[:, :k] == y[:, None]).any(axis=1)
    return int((~hit).sum()) / len(hit)


def write_csv(report: EvalReport, path) -> None:
    """Table layout: header then one ``setting,correct,total,accuracy`` row."""
    lines = ["epsilon,correct,total,accuracy"]
    for row in report.rows:
        lines.append(f"{row.setting:.3f},{row.correct},{row.total},{row.accuracy:.4f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> EvalReport:
    """Parse a report CSV back into exact counts."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or lines[0] != "epsilon,correct,total,accuracy":
        raise ValueError(f"{path}: not an evaluation report CSV")
    report = EvalReport()
    for line in lines[1:]:
        setting, correct, total, _ = line.split(",")
        report.add(float(setting), int(correct), int(total))
    return report


# ---------------------------------------------------------------------------
# SVG curve
# ---------------------------------------------------------------------------

_W, _H = 640, 440
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 20, 20, 50


def render_curve(report: EvalReport, path, x_label: str | None = None) -> None:
    """Accuracy-vs-setting line plot as a deterministic standalone SVG.

    Each report row becomes exactly one circular data marker. The y axis is
    fixed to [0, 1]; the x axis spans the settings. Needs at least two rows.
    """
    if len(report.rows) < 2:
        raise ValueError(f"render_curve: need at least 2 rows, got {len(report.rows)}")
    label = x_label or report.metadata.get("setting", "epsilon")
    xs = [row.setting for row in report.rows]
    ys = [row.accuracy for row in report.rows]
    x_lo, x_hi = min(xs), max(xs)
    span = (x_hi - x_lo) or 1.0

    def px(x: float) -> float:
        return _LEFT + (x - x_lo) / span * (_W - _LEFT - _RIGHT)

    def py(y: float) -> float:
        return _TOP + (1.0 - y) * (_H - _TOP - _BOTTOM)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{_LEFT}" y1="{py(0):.2f}" x2="{_W - _RIGHT}" y2="{py(0):.2f}" '
        'stroke="black"/>',
        f'<line x1="{_LEFT}" y1="{py(0):.2f}" x2="{_LEFT}" y2="{py(1):.2f}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = py(tick)
        parts.append(
            f'<line x1="{_LEFT - 5}" y1="{y:.2f}" x2="{_LEFT}" y2="{y:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_LEFT - 10}" y="{y + 4:.2f}" font-size="12" '
            f'text-anchor="end">{tick:g}</text>'
        )
    for x in sorted(set(xs)):
        parts.append(
            f'<line x1="{px(x):.2f}" y1="{py(0):.2f}" x2="{px(x):.2f}" '
            f'y2="{py(0) + 5:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px(x):.2f}" y="{py(0) + 18:.2f}" font-size="12" '
            f'text-anchor="middle">{x:g}</text>'
        )
    points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="2"/>')
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="4" fill="steelblue"/>')
    parts.append(
        f'<text x="{(_LEFT + _W - _RIGHT) / 2:.2f}" y="{_H - 12}" font-size="14" '
        f'text-anchor="middle">{label}</text>'
    )
    parts.append(
        f'<text x="18" y="{(_TOP + _H - _BOTTOM) / 2:.2f}" font-size="14" '
        f'text-anchor="middle" transform="rotate(-90 18 {(_TOP + _H - _BOTTOM) / 2:.2f})">'
        "accuracy</text>"
    )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
