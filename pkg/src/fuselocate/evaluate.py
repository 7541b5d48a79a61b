"""Trajectory evaluation: time alignment, 2D error metrics, comparison
reports and a dependency-free SVG overlay renderer.

Error aggregation is written so the same numbers fall out of a plain
python loop: per-sample error is sqrt(dx*dx + dy*dy) and the mean is a
sequential sum in sample order, both of which round identically in scalar
and vector form.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .fileio import fmt_float, write_csv
from .world import FREE, UNKNOWN, WALL, OccupancyGrid, Trajectory


@dataclass(eq=False)
class AlignedPairs:
    """Truth and estimate positions sampled on the truth clock."""

    t: np.ndarray
    truth_xy: np.ndarray
    est_xy: np.ndarray
    n_dropped: int


def align(truth: Trajectory, estimate: Trajectory) -> AlignedPairs:
    """Interpolate the estimate onto truth timestamps inside the overlap.

    Truth samples outside the estimate's time span are dropped (counted in
    n_dropped).  Raises if the two spans do not overlap at all.
    """
    t0 = max(float(truth.t[0]), float(estimate.t[0]))
    t1 = min(float(truth.t[-1]), float(estimate.t[-1]))
    if t0 > t1:
        raise ValueError(
            f"trajectories do not overlap in time "
            f"(truth [{truth.t[0]:.3f}, {truth.t[-1]:.3f}], "
            f"estimate [{estimate.t[0]:.3f}, {estimate.t[-1]:.3f}])"
        )
    inside = (truth.t >= t0) & (truth.t <= t1)
    tt = truth.t[inside]
    ex = np.interp(tt, estimate.t, estimate.x)
    ey = np.interp(tt, estimate.t, estimate.y)
    return AlignedPairs(
        t=tt,
        truth_xy=np.column_stack([truth.x[inside], truth.y[inside]]),
        est_xy=np.column_stack([ex, ey]),
        n_dropped=int(len(truth) - inside.sum()),
    )


def position_errors(pairs: AlignedPairs) -> np.ndarray:
    """Per-sample planar distance between truth and estimate."""
    d = pairs.est_xy - pairs.truth_xy
    return np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])


def mean_2d_error(pairs: AlignedPairs) -> float:
    """Mean planar error, summed sequentially in sample order."""
    errors = position_errors(pairs)
    if len(errors) == 0:
        raise ValueError("no aligned samples to average")
    total = 0.0
    for e in errors:
        total += float(e)
    return total / len(errors)


def error_cdf(errors) -> np.ndarray:
    """(n, 2) array of (error, cumulative fraction), sorted ascending."""
    e = np.sort(np.asarray(errors, np.float64))
    frac = (np.arange(len(e)) + 1.0) / len(e)
    return np.column_stack([e, frac])


@dataclass(eq=False)
class MethodReport:
    method: str
    n_samples: int
    n_dropped: int
    mean_m: float
    median_m: float
    p95_m: float
    max_m: float
    errors: np.ndarray

    @classmethod
    def from_pairs(cls, method: str, pairs: AlignedPairs) -> "MethodReport":
        errors = position_errors(pairs)
        return cls(
            method=method,
            n_samples=len(errors),
            n_dropped=pairs.n_dropped,
            mean_m=mean_2d_error(pairs),
            median_m=float(np.percentile(errors, 50.0)),
            p95_m=float(np.percentile(errors, 95.0)),
            max_m=float(errors.max()),
            errors=errors,
        )


@dataclass(eq=False)
class ComparisonResult:
    reports: dict
    winner: str
    warnings: list = field(default_factory=list)


def compare_methods(truth: Trajectory, estimates: dict) -> ComparisonResult:
    """Score every estimate against the same truth and rank by mean error."""
    if not estimates:
        raise ValueError("no estimates to compare")
    reports = {}
    for name, traj in estimates.items():
        reports[name] = MethodReport.from_pairs(name, align(truth, traj))
    winner = min(sorted(reports), key=lambda name: reports[name].mean_m)
    warnings = []
    if "EKF" in reports and winner != "EKF":
        warnings.append(
            f"fusion (EKF, {reports['EKF'].mean_m:.3f} m) was beaten by "
            f"{winner} ({reports[winner].mean_m:.3f} m)"
        )
    return ComparisonResult(reports=reports, winner=winner, warnings=warnings)


REPORT_HEADER = ["run_id", "floor", "direction", "method",
                 "mean_m", "median_m", "p95_m", "max_m", "n_samples"]


def write_report_csv(rows, path) -> None:
    """rows: iterables matching REPORT_HEADER (strings and numbers)."""
    cols = list(zip(*rows)) if rows else [[] for _ in REPORT_HEADER]
    write_csv(path, REPORT_HEADER, [list(c) for c in cols])


def write_events_jsonl(events, path) -> None:
    with open(path, "w", newline="") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# SVG overlay

_PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
_DASHES = ["7 3", "2 3", "8 3 2 3", "4 2", "10 4", "1 4"]


def render_overlay(grid: OccupancyGrid, truth, estimates: dict, path=None,
                   stride: int = 10, aps=None, title: str = "") -> str:
    """Draw the floor plan with truth and estimate tracks; returns the SVG.

    ``estimates`` maps label -> Trajectory.  ``stride`` decimates the
    polylines (the final point is always kept).  When ``path`` is given the
    document is also written there.
    """
    scale = 60.0
    margin = 24.0
    legend_h = 26.0 * (1 + (len(estimates) + (1 if truth is not None else 0) + 1) // 2)
    w_px = grid.width_m * scale + 2 * margin
    h_px = grid.height_m * scale + 2 * margin + legend_h

    def sx(x):
        return margin + (x - grid.origin[0]) * scale

    def sy(y):
        return legend_h + margin + (grid.height_m - (y - grid.origin[1])) * scale

    parts = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w_px:.0f}" '
        f'height="{h_px:.0f}" viewBox="0 0 {w_px:.0f} {h_px:.0f}">'
    )
    parts.append(f'<rect width="{w_px:.0f}" height="{h_px:.0f}" fill="#ffffff"/>')
    if title:
        parts.append(
            f'<text x="{margin:.0f}" y="17" font-family="sans-serif" '
            f'font-size="13" fill="#000000">{title}</text>'
        )

    res_px = grid.resolution * scale
    for state, color in ((WALL, "#303030"), (UNKNOWN, "#d8d8d8")):
        for iy in range(grid.height):
            row = grid.cells[iy]
            run_start = None
            for ix in range(grid.width + 1):
                on = ix < grid.width and row[ix] == state
                if on and run_start is None:
                    run_start = ix
                elif not on and run_start is not None:
                    x0 = sx(grid.origin[0] + run_start * grid.resolution)
                    y0 = sy(grid.origin[1] + (iy + 1) * grid.resolution)
                    parts.append(
                        f'<rect x="{x0:.2f}" y="{y0:.2f}" '
                        f'width="{(ix - run_start) * res_px:.2f}" '
                        f'height="{res_px:.2f}" fill="{color}"/>'
                    )
                    run_start = None

    if aps:
        for ap in aps:
            parts.append(
                f'<circle cx="{sx(ap.x):.2f}" cy="{sy(ap.y):.2f}" r="4" '
                f'fill="none" stroke="#555555" stroke-width="1.5"/>'
            )

    def polyline(traj, color, width, dash):
        idx = list(range(0, len(traj), max(1, stride)))
        if idx[-1] != len(traj) - 1:
            idx.append(len(traj) - 1)
        pts = " ".join(f"{sx(traj.x[i]):.2f},{sy(traj.y[i]):.2f}" for i in idx)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        return (
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{dash_attr}/>'
        )

    legend = []
    if truth is not None:
        parts.append(polyline(truth, "#000000", 2.0, ""))
        legend.append(("ground truth", "#000000", ""))
    for i, (name, traj) in enumerate(estimates.items()):
        color = _PALETTE[i % len(_PALETTE)]
        dash = _DASHES[i % len(_DASHES)]
        parts.append(polyline(traj, color, 1.5, dash))
        legend.append((name, color, dash))

    lx, ly = margin, 22.0 + (14.0 if title else 0.0)
    for i, (label, color, dash) in enumerate(legend):
        col = i % 2
        row = i // 2
        x0 = lx + col * (w_px - 2 * margin) / 2
        y0 = ly + row * 18.0
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(
            f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x0 + 28:.1f}" '
            f'y2="{y0:.1f}" stroke="{color}" stroke-width="2"{dash_attr}/>'
        )
        parts.append(
            f'<text x="{x0 + 34:.1f}" y="{y0 + 4:.1f}" font-family="sans-serif" '
            f'font-size="12" fill="#000000">{label}</text>'
        )

    parts.append("</svg>")
    doc = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(doc)
    return doc
