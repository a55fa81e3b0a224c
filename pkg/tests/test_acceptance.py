"""Acceptance suite: one PASS/FAIL line per criterion, printed at the end of the session.

Tolerances are the published ones and are never relaxed.  Criteria whose
target is not reached by a faithful run fail here on purpose.
"""

import dataclasses
import math
import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import SUPPLEMENTARY_LINES
from switchbudget import lemmas
from switchbudget.adversary import HardInstanceGenerator, StochasticGapGenerator
from switchbudget.analysis import (
    SweepAxis,
    SweepResult,
    bandit_loss_bound,
    detect_phase_transition,
    fit_loglog_slope,
    theoretical_bound,
)
from switchbudget.core import FeedbackMode, LossMatrix
from switchbudget.engine import GameConfig, Setting, aggregate, repetition_seed, run_repetitions
from switchbudget.learner import (
    resolve_spec_bandit,
    resolve_spec_flex,
    resolve_spec_full,
    route_extra_budget,
)

pytestmark = pytest.mark.acceptance

GAP_T, GAP_K, GAP, BASE = 10_000, 4, 0.2, 0.4
BUDGETS = (64, 256, 1024, 4096)


class CheckedSource:
    """Adversary wrapper that records the range of every loss it serves."""

    def __init__(self, inner):
        self.inner = inner
        self.low, self.high, self.count = math.inf, -math.inf, 0

    def generate(self, seed: int) -> LossMatrix:
        lm = self.inner.generate(seed)
        self.low = min(self.low, float(lm.values.min()))
        self.high = max(self.high, float(lm.values.max()))
        self.count += 1
        return lm

    def describe(self):
        return self.inner.describe()


@dataclasses.dataclass
class Invariants:
    runs: int = 0
    violations: list = dataclasses.field(default_factory=list)
    low: float = math.inf
    high: float = -math.inf
    reruns: int = 0


INVARIANTS = Invariants()


def simulate(inner, spec, budget, reps, base_seed=0, setting=Setting.TOTAL_BUDGET):
    """Run ``reps`` repetitions and record the hard invariants for criterion 8."""
    source = CheckedSource(inner)
    config = GameConfig(spec, budget, setting, repetitions=reps, base_seed=base_seed)
    recs = run_repetitions(source, spec, config)
    label = f"{spec.feedback_mode.value} T={spec.horizon} B={budget}"
    INVARIANTS.runs += len(recs)
    INVARIANTS.low = min(INVARIANTS.low, source.low)
    INVARIANTS.high = max(INVARIANTS.high, source.high)
    for rec in recs:
        if rec.observations_used > budget:
            INVARIANTS.violations.append(f"{label}: {rec.observations_used} observations")
        if spec.feedback_mode is FeedbackMode.BANDIT and rec.switch_count > spec.num_batches - 1:
            INVARIANTS.violations.append(f"{label}: {rec.switch_count} switches")
    # replay the first and last repetition alone; records must be bit-identical
    for r in (0, reps - 1):
        again = run_repetitions(inner, spec, config, reps=[r])[0]
        INVARIANTS.reruns += 1
        if again != recs[r] or repr(again.total_regret) != repr(recs[r].total_regret):
            INVARIANTS.violations.append(f"{label}: rerun of repetition {r} differs")
    assert all(rec.seed == repetition_seed(base_seed, i) for i, rec in enumerate(recs))
    return recs


def timed(report, n, passed, detail, start):
    return report(n, passed, f"{detail} [{time.time() - start:.1f}s]")


# ---------------------------------------------------------------------------


def test_criterion_1_unbiasedness(acceptance_report):
    start = time.time()
    res = lemmas.check_unbiasedness(K=3, tau=2)
    assert timed(acceptance_report, 1, res.passed, res.detail + f" (limit {lemmas.EXACT_TOL:g})", start)


def test_criterion_2_sd_marginals(acceptance_report):
    start = time.time()
    exact = [lemmas.check_sd_exact(True), lemmas.check_sd_exact(False)]
    mc = lemmas.check_sd_monte_carlo(100_000)
    passed = all(r.passed for r in exact) and mc.passed
    detail = f"exact, SD on: {exact[0].detail}; exact, SD off: {exact[1].detail}; Monte Carlo: {mc.detail}"
    assert timed(acceptance_report, 2, passed, detail, start)


def test_criterion_3_switch_bound(acceptance_report):
    start = time.time()
    T, K, B, reps = 10_000, 4, 1024, 10_000
    spec = resolve_spec_full(T, K, B)
    recs = simulate(StochasticGapGenerator(T, K, GAP, BASE), spec, B, reps, base_seed=11)
    sw = np.array([r.switch_count for r in recs], dtype=float)
    mean, se = sw.mean(), sw.std(ddof=1) / math.sqrt(reps)
    limit = spec.learning_rate * spec.num_batches
    passed = mean <= limit + 3 * se
    assert timed(acceptance_report, 3, passed,
                 f"pi_full T={T} K={K} B={B}, {reps} reps: mean switches {mean:.3f} +/- {se:.3f} "
                 f"<= eta*N + 3se = {limit + 3 * se:.3f}", start)


@lru_cache(maxsize=None)
def gap_sweep():
    """Criterion 4 data: {(mode, M): [(B, stats), ...]}; criterion 5 reuses the FULL rows."""
    gen = StochasticGapGenerator(GAP_T, GAP_K, GAP, BASE)
    out = {}
    for B in BUDGETS:
        specs = {("FULL", GAP_K): resolve_spec_full(GAP_T, GAP_K, B)}
        for M in (1, 2, GAP_K):
            specs[("FLEX", M)] = resolve_spec_flex(GAP_T, GAP_K, B, M)
        for key, spec in specs.items():
            out.setdefault(key, []).append((B, aggregate(simulate(gen, spec, B, 200, base_seed=1))))
    return out


def test_criterion_4_upper_bound(acceptance_report):
    start = time.time()
    misses, worst = [], 0.0
    for (mode, M), points in gap_sweep().items():
        for B, stats in points:
            bound = theoretical_bound(FeedbackMode(mode), GAP_T, GAP_K, B)
            worst = max(worst, stats.mean_regret / bound)
            if stats.mean_regret > bound:
                misses.append(f"{mode} M={M} B={B}: {stats.mean_regret:.1f} > {bound:.1f}")
    detail = (f"FULL + FLEX M in {{1,2,4}}, B in {BUDGETS}, 200 reps: "
              f"max mean regret / bound = {worst:.3f}")
    if misses:
        detail += "; " + "; ".join(misses)
    assert timed(acceptance_report, 4, not misses, detail, start)


def test_criterion_5_total_budget_slope(acceptance_report):
    start = time.time()
    points = gap_sweep()[("FULL", GAP_K)]
    slope, se = fit_loglog_slope([(B, s.mean_regret) for B, s in points])
    means = ", ".join(f"B={B}: {s.mean_regret:.1f}" for B, s in points)
    passed = -0.65 <= slope <= -0.35
    assert timed(acceptance_report, 5, passed,
                 f"pi_full slope {slope:.3f} +/- {se:.3f}, target [-0.65, -0.35] ({means})", start)


def test_criterion_6_bandit_horizon_slope(acceptance_report):
    start = time.time()
    K, pts = 4, []
    for T in (2**10, 2**12, 2**14, 2**16):
        gen = HardInstanceGenerator.for_regime(T, K, 0, c2=0.1)
        spec = route_extra_budget(T, K, 0)
        stats = aggregate(simulate(gen, spec, 0, 100, base_seed=2, setting=Setting.EXTRA_BUDGET))
        pts.append((T, stats.mean_regret))
    slope, se = fit_loglog_slope(pts)
    means = ", ".join(f"T={T}: {m:.1f}" for T, m in pts)
    passed = 0.55 <= slope <= 0.80
    assert timed(acceptance_report, 6, passed,
                 f"batched EXP3 (B_ex=0 endpoint) K={K}, 100 reps: slope {slope:.3f} +/- {se:.3f}, "
                 f"target [0.55, 0.80] ({means})", start)


def extra_budget_sweep(**constants):
    T, K, pts = 2**14, 4, []
    for e in range(4, 15):
        B_ex = 2**e
        gen = HardInstanceGenerator.for_regime(T, K, B_ex, **constants)
        spec = route_extra_budget(T, K, B_ex)
        recs = simulate(gen, spec, B_ex, 100, base_seed=3, setting=Setting.EXTRA_BUDGET)
        pts.append((B_ex, aggregate(recs)))
    sweep = SweepResult.from_points(SweepAxis.EXTRA_BUDGET_B_EX, pts)
    bp, left, right = detect_phase_transition(sweep)
    means = ", ".join(f"{int(x)}: {s.mean_regret:.1f}" for x, s in pts)
    return bp, left, right, means


def test_criterion_7_phase_transition(acceptance_report):
    start = time.time()
    bp, left, right, means = extra_budget_sweep()
    passed = -0.15 <= left <= 0.15 and -0.65 <= right <= -0.35
    detail = (f"router T=2^14 K=4, B_ex=2^4..2^14, default constants, 100 reps: breakpoint {bp:g}, "
              f"left {left:.3f} (target [-0.15, 0.15]), right {right:.3f} (target [-0.65, -0.35]) "
              f"(mean regret by B_ex: {means})")
    timed(acceptance_report, 7, passed, detail, start)
    # reported for comparison only; does not count towards the criterion
    s_start = time.time()
    bp2, left2, right2, means2 = extra_budget_sweep(c1=1.0, c2=10.0, c3=10.0)
    SUPPLEMENTARY_LINES.append(
        f"INFO criterion 7 (supplementary, c1=1, c2=c3=10, not counted): breakpoint {bp2:g}, "
        f"left {left2:.3f}, right {right2:.3f} (mean regret by B_ex: {means2}) "
        f"[{time.time() - s_start:.1f}s]"
    )
    assert passed


def test_criterion_9_no_switching_cost(acceptance_report):
    start = time.time()
    T, K, reps = GAP_T, GAP_K, 100
    gen = StochasticGapGenerator(T, K, GAP, BASE)
    parts, passed = [], True
    for B in (T // 4, T):
        spec = resolve_spec_bandit(T, K, B)
        on = simulate(gen, spec, B, reps, base_seed=4)
        off = simulate(gen, dataclasses.replace(spec, switching_costs_enabled=False), B, reps, base_seed=4)
        mean = float(np.mean([r.loss_regret for r in on]))
        bound = bandit_loss_bound(T, K, B)
        exact = all(
            a.loss_regret == b.loss_regret and a.switch_count == b.switch_count
            and b.total_regret == b.loss_regret and a.total_regret == b.total_regret + a.switch_count
            for a, b in zip(on, off)
        )
        passed &= mean <= bound and exact
        parts.append(f"B={B}: mean loss regret {mean:.1f} <= {bound:.1f}, "
                     f"enabled - disabled == switches in {'all' if exact else 'not all'} {reps} runs")
    assert timed(acceptance_report, 9, passed, f"pi_b T={T} K={K}: " + "; ".join(parts), start)


def test_criterion_8_hard_invariants(acceptance_report):
    # runs last in this module so that it covers every run made above
    inv = INVARIANTS
    passed = inv.runs > 0 and not inv.violations and 0.0 <= inv.low and inv.high <= 1.0
    detail = (f"{inv.runs} runs: budget ledger and pi_b switch cap held, served losses in "
              f"[{inv.low:.3g}, {inv.high:.3g}], {inv.reruns} fixed-seed reruns bit-identical")
    if inv.violations:
        detail = f"{len(inv.violations)} violations: " + "; ".join(inv.violations[:5])
    assert acceptance_report(8, passed, detail)
