"""Regret bounds, log-log slope fits and phase-transition detection."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .core import FeedbackMode
from .engine import AggregateStats
from .errors import (
    BudgetTooSmallError,
    DomainError,
    InsufficientDataError,
    ModeError,
    RangeError,
)


class SweepAxis(str, enum.Enum):
    BUDGET_B = "BUDGET_B"
    EXTRA_BUDGET_B_EX = "EXTRA_BUDGET_B_EX"
    HORIZON_T = "HORIZON_T"


def theoretical_bound(mode: FeedbackMode, T: int, K: int, B: float) -> float:
    """Expected-regret upper bound of the matching learner, switching costs included.

    FULL and FLEX: T sqrt(6 K ln K / B).  BANDIT: T sqrt(2 K ln K / B) + B,
    i.e. the exponential-weights term plus at most one switch per batch.
    """
    mode = FeedbackMode(mode)
    if K < 2 or T < K:
        raise DomainError(f"need T >= K >= 2, got T={T}, K={K}")
    if B < K:
        raise BudgetTooSmallError(f"budget B={B} is below K={K}: requires K <= B")
    if mode is FeedbackMode.BANDIT:
        if B > T:
            raise ModeError(f"budget B={B} exceeds T={T}: bandit feedback gives one observation per round")
        return T * math.sqrt(2 * K * math.log(K) / B) + B
    if B > K * T:
        raise RangeError(f"budget B={B} exceeds K*T={K * T}: requires B <= K*T")
    return T * math.sqrt(6 * K * math.log(K) / B)


def bandit_loss_bound(T: int, K: int, B: float) -> float:
    """T sqrt(2 K ln K / B): the bandit bound without the switching term."""
    return theoretical_bound(FeedbackMode.BANDIT, T, K, B) - B


def fit_loglog_slope(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """OLS slope of log y against log x, and its standard error."""
    if len(points) < 3:
        raise InsufficientDataError(f"need at least 3 points for a slope fit, got {len(points)}")
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    if not (np.all(x > 0) and np.all(y > 0)):
        raise DomainError("log-log fit needs strictly positive x and y")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise InsufficientDataError("all x values are equal")
    if np.ptp(ly) == 0:
        return 0.0, 0.0
    res = stats.linregress(lx, ly)
    return float(res.slope), float(res.stderr)


def _sse(lx: np.ndarray, ly: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(lx, ly, 1)
    if np.ptp(ly) == 0:
        slope, intercept = 0.0, float(ly[0])
    resid = ly - (slope * lx + intercept)
    return float(slope), float(resid @ resid)


@dataclass(frozen=True)
class SweepResult:
    axis: SweepAxis
    points: tuple[tuple[float, AggregateStats], ...]
    fitted_slope: float
    slope_stderr: float

    @classmethod
    def from_points(cls, axis: SweepAxis, points: Sequence[tuple[float, AggregateStats]]) -> SweepResult:
        """Sort by axis value and fit mean total regret against it."""
        pts = tuple(sorted(points, key=lambda p: p[0]))
        slope, se = fit_loglog_slope([(x, s.mean_regret) for x, s in pts])
        return cls(SweepAxis(axis), pts, slope, se)

    @property
    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=float)

    @property
    def means(self) -> np.ndarray:
        return np.array([p[1].mean_regret for p in self.points], dtype=float)


def two_piece_fit(
    xs: Sequence[float], ys: Sequence[float], grid: Sequence[float] | None = None,
) -> tuple[float, float, float]:
    """Best split of a log-log curve into two independent lines.

    Points with x <= breakpoint go left.  Each side needs 3 points.  Returns
    (breakpoint, left slope, right slope); near-ties go to the smaller
    breakpoint.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if not (np.all(x > 0) and np.all(y > 0)):
        raise DomainError("log-log fit needs strictly positive x and y")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    lx, ly = np.log(x), np.log(y)
    candidates = sorted(set(float(c) for c in (x if grid is None else grid)))
    best: tuple[float, float, float, float] | None = None
    for c in candidates:
        left = x <= c
        if left.sum() < 3 or (~left).sum() < 3:
            continue
        ls, lsse = _sse(lx[left], ly[left])
        rs, rsse = _sse(lx[~left], ly[~left])
        total = lsse + rsse
        if best is None or total < best[0] - 1e-12 * (1.0 + best[0]):
            best = (total, c, ls, rs)
    if best is None:
        raise InsufficientDataError("no candidate breakpoint leaves 3 points on each side")
    return best[1], best[2], best[3]


def detect_phase_transition(
    sweep: SweepResult, breakpoint_grid: Sequence[float] | None = None,
) -> tuple[float, float, float]:
    """Breakpoint and the two log-log slopes of mean regret on either side.

    ``breakpoint_grid`` defaults to the sweep's own axis values.
    """
    return two_piece_fit(sweep.xs, sweep.means, breakpoint_grid)


FIT_COLUMNS = ("axis", "slope", "stderr", "breakpoint", "left_slope", "right_slope")
PLOT_COLUMNS = ("x", "mean", "lower", "upper", "bound")


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_fit_summary(
    path: str | Path,
    sweep: SweepResult,
    transition: tuple[float, float, float] | None = None,
) -> None:
    bp, ls, rs = transition if transition is not None else (None, None, None)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        w.writerow([sweep.axis.value, _fmt(sweep.fitted_slope), _fmt(sweep.slope_stderr),
                    _fmt(bp), _fmt(ls), _fmt(rs)])


def write_plot_data(
    path: str | Path,
    points: Sequence[tuple[float, AggregateStats]],
    bounds: Sequence[float | None] | None = None,
) -> None:
    bounds = list(bounds) if bounds is not None else [None] * len(points)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for (x, s), bound in zip(points, bounds):
            w.writerow([_fmt(x), _fmt(s.mean_regret), _fmt(s.mean_regret - s.stderr_regret),
                        _fmt(s.mean_regret + s.stderr_regret), _fmt(bound)])
