"""Batched exponential-weights learner with optional Shrinking Dartboard.

The learner plays one action per batch, observes a set of losses at one
uniformly sampled round of the batch, feeds an unbiased estimate of the
batch-average loss to a Hedge update, and then either keeps its action
(with probability exp(-eta * estimate[current])) or resamples from the new
weights.  Weights live in the log domain and are shifted so the largest
log-weight is zero after every update.

Three parameterizations are provided: full-information observations,
uniformly random M-subsets ("flex"), and bandit feedback (batched EXP3),
plus a router for the extra-observation setting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .core import AlgorithmSpec, FeedbackMode
from .errors import (
    BudgetTooSmallError,
    ConfigurationError,
    DomainError,
    EstimatorError,
    InternalInvariantError,
    ModeError,
    RangeError,
)

# Floor on sampling probabilities: keeps every entry strictly positive once
# log-weight gaps exceed the float64 exponent range.
PROB_FLOOR = np.finfo(float).tiny


@dataclass(frozen=True, eq=False)
class LearnerState:
    log_weights: np.ndarray
    distribution: np.ndarray
    current_action: int
    batch_index: int = 1

    @property
    def num_actions(self) -> int:
        return len(self.log_weights)


def normalize_log_weights(log_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shift so max is 0 and return (shifted log-weights, probabilities)."""
    lw = log_weights - log_weights.max()
    p = np.exp(lw)
    p /= p.sum()
    np.maximum(p, PROB_FLOOR, out=p)
    return lw, p


def initial_state(K: int, rng: np.random.Generator) -> LearnerState:
    """Uniform weights and a uniformly random first action."""
    if K < 2:
        raise DomainError(f"need K >= 2, got {K}")
    lw = np.zeros(K)
    return LearnerState(lw, np.full(K, 1.0 / K), int(rng.integers(K)), 1)


def _check_estimate(estimate: np.ndarray, K: int) -> np.ndarray:
    est = np.asarray(estimate, dtype=float)
    if est.shape != (K,):
        raise EstimatorError(f"estimate must have shape ({K},), got {est.shape}")
    if not np.all(np.isfinite(est)) or est.min() < 0.0:
        raise EstimatorError(f"estimate entries must be finite and >= 0, got {est}")
    return est


def _check_eta(eta: float) -> None:
    if not (eta > 0 and math.isfinite(eta)):
        raise DomainError(f"learning rate must be positive and finite, got {eta}")


def omd_update(state: LearnerState, estimate: np.ndarray, eta: float) -> LearnerState:
    """Multiply each weight by exp(-eta * estimate[k]) and renormalize."""
    est = _check_estimate(estimate, state.num_actions)
    _check_eta(eta)
    lw, p = normalize_log_weights(state.log_weights - eta * est)
    return replace(state, log_weights=lw, distribution=p)


def sd_keep_probability(state: LearnerState, estimate: np.ndarray, eta: float, sd_enabled: bool) -> float:
    est = _check_estimate(estimate, state.num_actions)
    _check_eta(eta)
    if not sd_enabled:
        return 0.0
    return math.exp(-eta * est[state.current_action])


def sample_index(distribution: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from ``distribution`` with a uniform ``u`` in [0, 1)."""
    cdf = np.cumsum(distribution)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(i, len(cdf) - 1)


def draw_next_action(state: LearnerState, keep_prob: float, u_keep: float, u_sample: float) -> int:
    """Deterministic core of :func:`next_action` given two uniforms in [0, 1)."""
    if not 0.0 <= keep_prob <= 1.0:
        raise DomainError(f"keep probability {keep_prob} outside [0, 1]")
    if u_keep < keep_prob:
        return state.current_action
    return sample_index(state.distribution, u_sample)


def next_action(state: LearnerState, keep_prob: float, rng: np.random.Generator) -> int:
    """Keep the current action with probability ``keep_prob``, else draw from the weights.

    ``state`` must already carry the post-update distribution.
    """
    return draw_next_action(state, keep_prob, rng.random(), rng.random())


def subset_from_keys(keys: np.ndarray, M: int) -> tuple[int, ...]:
    """The M positions with the smallest keys; uniform over M-subsets for i.i.d. keys."""
    return tuple(sorted(int(k) for k in np.argsort(keys, kind="stable")[:M]))


def choose_observation_set(
    mode: FeedbackMode, M: int, K: int, current_action: int, rng: np.random.Generator
) -> tuple[int, ...]:
    mode = FeedbackMode(mode)
    if not 1 <= M <= K:
        raise DomainError(f"M={M} outside [1, {K}]")
    if mode is FeedbackMode.FULL:
        return tuple(range(K))
    if mode is FeedbackMode.BANDIT:
        return (int(current_action),)
    return subset_from_keys(rng.random(K), M)


def estimate_loss(
    mode: FeedbackMode,
    observed: Mapping[int, float],
    obs_set: Sequence[int],
    M: int,
    K: int,
    distribution: np.ndarray,
    current_action: int,
) -> np.ndarray:
    """Unbiased estimate of the batch-average loss vector from one sampled round.

    FULL uses the observed row as is, FLEX rescales observed entries by K/M,
    and BANDIT importance-weights the played action by 1/w[current_action].
    """
    mode = FeedbackMode(mode)
    if set(observed) != set(obs_set):
        raise EstimatorError("observed entries must match the observation set")
    est = np.zeros(K)
    if mode is FeedbackMode.FULL:
        for k in obs_set:
            est[k] = observed[k]
    elif mode is FeedbackMode.FLEX:
        scale = K / M
        for k in obs_set:
            est[k] = observed[k] * scale
    else:
        a = int(current_action)
        w = float(distribution[a])
        if not w > 0.0:
            raise InternalInvariantError(f"sampling probability of played action {a} is {w}")
        if a in observed:
            est[a] = observed[a] / w
    return est


# ---------------------------------------------------------------------------
# Spec resolution


def resolve_integrality(T: int, N: float | Fraction, tau_real: float | Fraction) -> tuple[int, int, int]:
    """Round the batch size up and fit as many whole batches as the horizon allows.

    Returns (batch size, number of batches, rounds covered by batches).
    """
    tau_real = Fraction(tau_real)
    if tau_real < 1:
        raise ConfigurationError(f"batch size {float(tau_real)} is below 1")
    tau = math.ceil(tau_real)
    n1 = T // tau
    if n1 == 0:
        raise ConfigurationError(f"horizon T={T} is shorter than one batch of size {tau}")
    return tau, n1, n1 * tau


def _build(
    mode: FeedbackMode, T: int, K: int, B: int, M: int, eta: float, sd: bool,
) -> AlgorithmSpec:
    n_real = Fraction(B, M)
    tau_real = Fraction(T) / n_real
    tau, n1, _ = resolve_integrality(T, n_real, tau_real)
    return AlgorithmSpec(
        feedback_mode=mode,
        num_batches=n1,
        batch_size=tau,
        learning_rate=eta,
        sd_enabled=sd,
        obs_per_batch=M,
        horizon=T,
        num_actions=K,
        budget=B,
        nominal_batches=float(n_real),
        nominal_batch_size=float(tau_real),
    )


def _check_problem(T: int, K: int) -> None:
    if K < 2 or T < K:
        raise DomainError(f"need T >= K >= 2, got T={T}, K={K}")


def resolve_spec_full(T: int, K: int, B: int) -> AlgorithmSpec:
    """Full-information observations at one round per batch, N = B/K."""
    _check_problem(T, K)
    if B < K:
        raise BudgetTooSmallError(f"budget B={B} is below K={K}: requires K <= B")
    if B > K * T:
        raise RangeError(f"budget B={B} exceeds K*T={K * T}: requires B <= K*T")
    eta = math.sqrt(2 * K * math.log(K) / (3 * B))
    return _build(FeedbackMode.FULL, T, K, B, K, eta, True)


def flex_m_range(T: int, K: int, B: int) -> tuple[int, int]:
    lo = 1 if B < T else math.ceil(Fraction(B, T))
    return lo, K


def resolve_spec_flex(T: int, K: int, B: int, M: int) -> AlgorithmSpec:
    """Uniformly random M-subset observed at one round per batch, N = B/M."""
    _check_problem(T, K)
    if B < K:
        raise BudgetTooSmallError(f"budget B={B} is below K={K}: requires K <= B")
    if B > K * T:
        raise RangeError(f"budget B={B} exceeds K*T={K * T}: requires B <= K*T")
    lo, hi = flex_m_range(T, K, B)
    if not lo <= M <= hi:
        cond = "M in [1, K] when B < T" if B < T else "M in [ceil(B/T), K] when B >= T"
        raise RangeError(f"M={M} outside [{lo}, {hi}]: requires {cond}")
    eta = M * math.sqrt(2 * math.log(K) / (3 * K * B))
    return _build(FeedbackMode.FLEX, T, K, B, M, eta, True)


def resolve_spec_bandit(T: int, K: int, B: int) -> AlgorithmSpec:
    """Batched EXP3: N = B batches, bandit feedback, no Shrinking Dartboard."""
    _check_problem(T, K)
    if B < K:
        raise BudgetTooSmallError(f"budget B={B} is below K={K}: requires K <= B")
    if B > T:
        raise ModeError(f"budget B={B} exceeds T={T}: bandit feedback gives one observation per round")
    eta = math.sqrt(2 * math.log(K) / (B * K))
    return _build(FeedbackMode.BANDIT, T, K, B, 1, eta, False)


def _threshold_cubed(T: int, K: int, c: float) -> Fraction:
    # (c K^(1/3) T^(2/3))^3, kept exact so boundary budgets route deterministically
    return Fraction(c) ** 3 * K * T * T


def extra_budget_threshold(T: int, K: int, c_threshold: float = 1.0) -> float:
    return c_threshold * (K * T * T) ** (1 / 3)


def _floor_cbrt(x: Fraction) -> int:
    b = int(float(x) ** (1 / 3))
    while (b + 1) ** 3 <= x:
        b += 1
    while b > 0 and b ** 3 > x:
        b -= 1
    return b


def route_extra_budget(T: int, K: int, B_ex: int, c_threshold: float = 1.0) -> AlgorithmSpec:
    """Pick a learner for the bandit-plus-extra-observations setting.

    At or above c K^(1/3) T^(2/3) extras, bandit feedback is dropped and the
    full-information learner spends B = B_ex.  Below it, the extras are dropped
    and batched EXP3 uses min(T, floor(c K^(1/3) T^(2/3))) bandit observations.
    """
    _check_problem(T, K)
    if not 0 <= B_ex <= (K - 1) * T:
        raise DomainError(f"B_ex={B_ex} outside [0, (K-1)T] = [0, {(K - 1) * T}]")
    if c_threshold <= 0:
        raise DomainError(f"threshold constant must be positive, got {c_threshold}")
    cube = _threshold_cubed(T, K, c_threshold)
    if B_ex >= K and Fraction(B_ex) ** 3 >= cube:
        return resolve_spec_full(T, K, B_ex)
    B = max(K, min(T, _floor_cbrt(cube)))
    return resolve_spec_bandit(T, K, B)
