"""Accuracy of estimated plot heights against ground truth."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CropHeightError, PairingError
from .groundheight import HeightReport

BIN_PERCENT = 5.0


@dataclass
class PlotError:
    row: int
    col: int
    estimate: float
    truth: float

    @property
    def error(self) -> float:
        return self.estimate - self.truth

    @property
    def percent_error(self) -> float:
        return 100.0 * self.error / self.truth


@dataclass
class EvaluationReport:
    plots: list
    degenerate: list  # (row, col) of plots without a usable estimate

    @property
    def n(self) -> int:
        return len(self.plots)

    def errors(self) -> np.ndarray:
        return np.array([p.error for p in self.plots])

    def percent_errors(self) -> np.ndarray:
        return np.array([p.percent_error for p in self.plots])

    @property
    def rmse(self) -> float:
        e = self.errors()
        return float(np.sqrt(np.mean(e * e))) if len(e) else math.nan

    @property
    def mean_error(self) -> float:
        e = self.errors()
        return float(e.mean()) if len(e) else math.nan

    @property
    def mean_percent_error(self) -> float:
        pe = self.percent_errors()
        return float(pe.mean()) if len(pe) else math.nan

    @property
    def mean_abs_percent_error(self) -> float:
        pe = self.percent_errors()
        return float(np.abs(pe).mean()) if len(pe) else math.nan

    @property
    def std_error_of_mean(self) -> float:
        e = self.errors()
        if len(e) < 2:
            return math.nan
        return float(e.std(ddof=1) / math.sqrt(len(e)))

    def histogram(self) -> list[tuple[float, float, int]]:
        """``(lo, hi, count)`` for 5%-wide, left-closed bins aligned at 0, from the lowest to the highest occupied bin."""
        pe = self.percent_errors()
        if len(pe) == 0:
            return []
        # round first so e.g. 0.85 vs 1.0 lands in [-15, -10), not one bin lower
        idx = np.floor(np.round(pe, 9) / BIN_PERCENT).astype(np.int64)
        lo, hi = int(idx.min()), int(idx.max())
        counts = np.bincount(idx - lo, minlength=hi - lo + 1)
        return [((lo + i) * BIN_PERCENT, (lo + i + 1) * BIN_PERCENT, int(c)) for i, c in enumerate(counts)]

    def summary(self) -> dict:
        return {
            "n_plots": self.n,
            "n_degenerate": len(self.degenerate),
            "rmse_m": self.rmse,
            "mean_error_m": self.mean_error,
            "mean_percent_error": self.mean_percent_error,
            "mean_abs_percent_error": self.mean_abs_percent_error,
            "std_error_of_mean_m": self.std_error_of_mean,
        }

    def to_json(self) -> str:
        doc = {
            "summary": self.summary(),
            "histogram": [{"lo_percent": lo, "hi_percent": hi, "count": c} for lo, hi, c in self.histogram()],
            "plots": [
                {
                    "plot_row": p.row,
                    "plot_col": p.col,
                    "estimate_m": p.estimate,
                    "truth_m": p.truth,
                    "error_m": p.error,
                    "percent_error": p.percent_error,
                }
                for p in self.plots
            ],
            "degenerate": [list(rc) for rc in self.degenerate],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["plot_row", "plot_col", "estimate_m", "truth_m", "error_m", "percent_error"])
        for p in self.plots:
            w.writerow([p.row, p.col, f"{p.estimate:.6f}", f"{p.truth:.6f}", f"{p.error:.6f}",
                        f"{p.percent_error:.4f}"])
        return buf.getvalue()

    def to_svg(self, title: str = "Signed percent error") -> str:
        return histogram_svg(self.histogram(), title)


def evaluate(estimates: HeightReport, truth: dict) -> EvaluationReport:
    """Pair estimates with ``truth`` (``{(row, col): height_m}``) and compute the metrics.

    Degenerate estimates are listed but left out of the metrics.
    """
    est_ids = {(p.row, p.col) for p in estimates.plots}
    truth_ids = set(truth)
    missing_truth = sorted(est_ids - truth_ids)
    missing_est = sorted(truth_ids - est_ids)
    if missing_truth or missing_est:
        raise PairingError(
            f"unmatched plot ids: estimates without truth {missing_truth}, truth without estimates {missing_est}"
        )
    plots, degenerate = [], []
    for p in sorted(estimates.plots, key=lambda q: (q.row, q.col)):
        if p.degenerate or not math.isfinite(p.height):
            degenerate.append((p.row, p.col))
            continue
        t = truth[(p.row, p.col)]
        if t <= 0:
            raise CropHeightError(f"non-positive true height for plot {(p.row, p.col)}")
        plots.append(PlotError(p.row, p.col, p.height, t))
    return EvaluationReport(plots, degenerate)


def truth_from_manifest(doc: dict) -> dict:
    return {(t["row"], t["col"]): float(t["true_height"]) for t in doc["ground_truth"]["plots"]}


def truth_from_csv(text: str) -> dict:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(rows[0]) != {"plot_row", "plot_col", "height_m"}:
        raise CropHeightError("field truth CSV must have columns plot_row,plot_col,height_m")
    out = {}
    for r in rows:
        key = (int(r["plot_row"]), int(r["plot_col"]))
        if key in out:
            raise PairingError(f"duplicate truth row for plot {key}")
        out[key] = float(r["height_m"])
    return out


def histogram_svg(bins: list[tuple[float, float, int]], title: str) -> str:
    w, h = 640, 360
    left, right, top, bottom = 50, 20, 40, 50
    pw, ph = w - left - right, h - top - bottom
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    if bins:
        peak = max(c for _, _, c in bins) or 1
        bw = pw / len(bins)
        for i, (lo, hi, c) in enumerate(bins):
            bh = ph * c / peak
            x = left + i * bw
            out.append(
                f'<rect x="{x:.2f}" y="{top + ph - bh:.2f}" width="{bw * 0.9:.2f}" height="{bh:.2f}" '
                f'fill="steelblue"><title>{lo:g} to {hi:g} %: {c}</title></rect>'
            )
            out.append(
                f'<text x="{x + bw * 0.45:.2f}" y="{top + ph + 16}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="10">{lo:g}</text>'
            )
        out.append(
            f'<text x="{left - 8}" y="{top + 4}" text-anchor="end" font-family="sans-serif" font-size="10">{peak}</text>'
        )
    out.append(
        f'<text x="{w / 2:.1f}" y="{h - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">'
        "signed error (% of true height, 5 % bins)</text>"
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
