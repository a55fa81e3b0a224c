"""Exact and statistical checks of the properties the learner relies on.

Each check returns a :class:`LemmaResult`; ``run_all`` is what
``switchbudget verify`` executes.  The exact checks enumerate every random
outcome of a small configuration, so their tolerance is float rounding only.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .adversary import delta, rho
from .core import AlgorithmSpec, FeedbackMode, LossMatrix
from .engine import GameConfig, repetition_seed, run_repetitions, simulate
from .learner import (
    LearnerState,
    estimate_loss,
    normalize_log_weights,
    omd_update,
    resolve_spec_full,
    sd_keep_probability,
)

EXACT_TOL = 1e-12
TV_TOL = 0.02

Estimator = Callable[..., np.ndarray]


@dataclass(frozen=True)
class LemmaResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# unbiasedness


def _fixed_batch(K: int, tau: int) -> np.ndarray:
    # distinct, non-dyadic entries so that a wrong weight cannot cancel out
    return (np.arange(tau * K, dtype=float).reshape(tau, K) * 0.137 + 0.05) % 1.0


def enumerated_mean_estimate(
    mode: FeedbackMode,
    batch: np.ndarray,
    M: int,
    distribution: np.ndarray | None = None,
    estimator: Estimator = estimate_loss,
) -> np.ndarray:
    """E[estimate] over every equiprobable (u, observation set) and, for BANDIT, A ~ w."""
    tau, K = batch.shape
    mode = FeedbackMode(mode)
    w = np.full(K, 1.0 / K) if distribution is None else np.asarray(distribution, dtype=float)
    if mode is FeedbackMode.FULL:
        outcomes = [(tuple(range(K)), 1.0, 0)]
    elif mode is FeedbackMode.FLEX:
        subsets = list(itertools.combinations(range(K), M))
        outcomes = [(s, 1.0 / len(subsets), 0) for s in subsets]
    else:
        outcomes = [((a,), float(w[a]), a) for a in range(K)]
    total = np.zeros(K)
    for u in range(tau):
        for obs, p, a in outcomes:
            observed = {k: float(batch[u, k]) for k in obs}
            total += (p / tau) * estimator(mode, observed, obs, M, K, w, a)
    return total


def check_unbiasedness(estimator: Estimator = estimate_loss, K: int = 3, tau: int = 2) -> LemmaResult:
    batch = _fixed_batch(K, tau)
    target = batch.mean(axis=0)
    w = np.arange(1, K + 1, dtype=float)
    w /= w.sum()
    cases = [(FeedbackMode.FLEX, M) for M in range(1, K + 1)]
    cases += [(FeedbackMode.FULL, K), (FeedbackMode.BANDIT, 1)]
    worst = 0.0
    for mode, M in cases:
        est = enumerated_mean_estimate(mode, batch, M, w, estimator)
        worst = max(worst, float(np.max(np.abs(est - target))))
    return LemmaResult(
        "unbiasedness", worst <= EXACT_TOL,
        f"K={K}, tau={tau}, FLEX M=1..{K}, FULL, BANDIT: max |E[est] - batch mean| = {worst:.3g}",
    )


# ---------------------------------------------------------------------------
# Shrinking Dartboard marginal


def exact_sd_marginals(
    losses: np.ndarray, tau: int, eta: float, sd_enabled: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """(P(A_b = k), E[w_b[k]]) for every batch b under full information.

    Enumerates every sequence of sampled rounds and, along each, propagates
    the exact law of the action through the keep-or-resample kernel.
    """
    T, K = losses.shape
    N = T // tau
    p_action = np.zeros((N, K))
    mean_w = np.zeros((N, K))
    for us in itertools.product(range(tau), repeat=N):
        path_p = tau ** -N
        state = LearnerState(np.zeros(K), np.full(K, 1.0 / K), 0, 1)
        law = np.full(K, 1.0 / K)
        for b, u in enumerate(us):
            p_action[b] += path_p * law
            mean_w[b] += path_p * state.distribution
            est = losses[b * tau + u]
            keep = np.array([
                sd_keep_probability(LearnerState(state.log_weights, state.distribution, k), est, eta, sd_enabled)
                for k in range(K)
            ])
            state = omd_update(state, est, eta)
            law = law * keep + (law @ (1.0 - keep)) * state.distribution
    return p_action, mean_w


def check_sd_exact(sd_enabled: bool = True) -> LemmaResult:
    K, N = 2, 3
    worst = 0.0
    for tau in (1, 2):
        losses = _fixed_batch(K, N * tau)[::-1].copy()
        p_action, mean_w = exact_sd_marginals(losses, tau, eta=0.9, sd_enabled=sd_enabled)
        worst = max(worst, float(np.max(np.abs(p_action - mean_w))))
    name = "sd_marginal_exact" + ("" if sd_enabled else "_sd_off")
    return LemmaResult(name, worst <= EXACT_TOL,
                       f"K={K}, N={N}, tau in (1, 2): max |P(A_b=k) - E[w_b[k]]| = {worst:.3g}")


def mc_sd_tv(runs: int = 100_000, K: int = 5, N: int = 20, seed: int = 7, chunk: int = 20_000) -> float:
    """Largest per-batch total-variation distance between the empirical law of A_b and mean w_b."""
    tau, M = 2, 2
    rng = np.random.default_rng(seed)
    losses = LossMatrix(rng.random((N * tau, K)))
    eta = 0.8
    spec = AlgorithmSpec(FeedbackMode.FLEX, N, tau, eta, True, M, N * tau, K, N * M)
    config = GameConfig(spec, spec.budget)
    counts = np.zeros((N, K))
    w_sum = np.zeros((N, K))
    for start in range(0, runs, chunk):
        seeds = [repetition_seed(seed, r) for r in range(start, min(runs, start + chunk))]
        sim = simulate(losses, spec, config, seeds, history=True)
        batch_actions = sim.actions[:, ::tau][:, :N]
        for b in range(N):
            counts[b] += np.bincount(batch_actions[:, b], minlength=K)
        w_sum += sim.weights.sum(axis=0)
    emp = counts / runs
    return float(np.max(0.5 * np.abs(emp - w_sum / runs).sum(axis=1)))


def check_sd_monte_carlo(runs: int = 100_000) -> LemmaResult:
    tv = mc_sd_tv(runs)
    return LemmaResult("sd_marginal_mc", tv <= TV_TOL,
                       f"K=5, N=20, {runs} runs: max TV = {tv:.4f} (limit {TV_TOL})")


# ---------------------------------------------------------------------------
# switch count


def check_switch_bound(reps: int = 2_000, T: int = 10_000, K: int = 4, B: int = 1024, seed: int = 11) -> LemmaResult:
    from .adversary import StochasticGapGenerator

    spec = resolve_spec_full(T, K, B)
    gen = StochasticGapGenerator(T, K, gap=0.2, base=0.4)
    recs = run_repetitions(gen, spec, GameConfig(spec, B, repetitions=reps, base_seed=seed))
    sw = np.array([r.switch_count for r in recs], dtype=float)
    mean, se = float(sw.mean()), float(sw.std(ddof=1) / math.sqrt(len(sw)))
    limit = spec.learning_rate * spec.num_batches
    return LemmaResult("switch_bound", mean <= limit + 3 * se,
                       f"pi_full T={T}, K={K}, B={B}, {reps} reps: mean switches {mean:.3f} "
                       f"+/- {se:.3f} vs eta*N = {limit:.3f}")


# ---------------------------------------------------------------------------
# walk indexing


def _delta_by_string(t: int) -> int:
    s = format(t, "b")
    return len(s) - len(s.rstrip("0"))


def _rho_by_string(t: int) -> int:
    s = format(t, "b")
    i = s.rindex("1")
    return int(s[:i] + "0" + s[i + 1:], 2)


def check_walk_tables(limit: int = 1 << 16) -> LemmaResult:
    bad: list[str] = []
    for t in range(1, limit + 1):
        d, r = delta(t), rho(t)
        if d != _delta_by_string(t) or r != _rho_by_string(t):
            bad.append(f"t={t}: table mismatch")
        if not (r < t and t - r == 1 << d):
            bad.append(f"t={t}: rho(t) = {r}")
        if t % 2 == 0 and not (r == 0 or r % 2 == 0):
            bad.append(f"t={t}: even t with odd rho")
        depth, s = 0, t
        while s:
            s, depth = rho(s), depth + 1
        if depth > t.bit_length():  # bit_length = floor(log2 t) + 1
            bad.append(f"t={t}: depth {depth}")
        if len(bad) > 5:
            break
    spot = {(1, 0, 0), (12, 2, 8), (7, 0, 6), (1024, 10, 0)}
    for t, d, r in spot:
        if (delta(t), rho(t)) != (d, r):
            bad.append(f"t={t}: expected delta={d}, rho={r}")
    return LemmaResult("delta_rho_tables", not bad,
                       f"t = 1..{limit}" + ("" if not bad else ": " + "; ".join(bad[:5])))


def run_all(quick: bool = False) -> list[LemmaResult]:
    return [
        check_unbiasedness(),
        check_sd_exact(True),
        check_sd_exact(False),
        check_sd_monte_carlo(20_000 if quick else 100_000),
        check_switch_bound(500 if quick else 2_000),
        check_walk_tables(),
    ]


__all__: Sequence[str] = (
    "EXACT_TOL", "TV_TOL", "LemmaResult", "enumerated_mean_estimate", "check_unbiasedness",
    "exact_sd_marginals", "check_sd_exact", "mc_sd_tv", "check_sd_monte_carlo",
    "check_switch_bound", "check_walk_tables", "run_all",
)
