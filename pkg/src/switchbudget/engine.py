"""The repeated game and the Monte Carlo runner.

Seeds
-----
Repetition ``r`` of a Monte Carlo run uses ``seed = base_seed ^ r``.  Within a
run the learner draws from ``numpy.random.default_rng(seed)`` and, when the
adversary is a generator, the instance is drawn with
``derive_seed(seed, INSTANCE_STREAM)`` so the two streams never overlap.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .core import (
    AlgorithmSpec,
    BudgetLedger,
    FeedbackMode,
    LossMatrix,
    RunRecord,
    Trajectory,
    compute_regret,
    derive_seed,
)
from .errors import BudgetViolation, DomainError
from .learner import PROB_FLOOR, initial_state

INSTANCE_STREAM = 1
SEED_MASK = (1 << 64) - 1


class Setting(str, enum.Enum):
    TOTAL_BUDGET = "TOTAL_BUDGET"
    EXTRA_BUDGET = "EXTRA_BUDGET"


@dataclass(frozen=True)
class GameConfig:
    """``budget`` is B (TOTAL_BUDGET) or B_ex (EXTRA_BUDGET).

    In the extra setting the played action's own loss is free; only the
    other observed actions are charged, at most K-1 per round.
    """

    spec: AlgorithmSpec
    budget: int
    setting: Setting = Setting.TOTAL_BUDGET
    repetitions: int = 1
    base_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "setting", Setting(self.setting))
        if self.budget < 0:
            raise DomainError(f"budget must be non-negative, got {self.budget}")
        if self.repetitions < 1:
            raise DomainError(f"repetitions must be positive, got {self.repetitions}")
        if not 0 <= self.base_seed <= SEED_MASK:
            raise DomainError("base_seed must be a 64-bit unsigned integer")


class Adversary(Protocol):
    name: str

    def generate(self, seed: int) -> LossMatrix: ...

    def describe(self) -> dict[str, Any]: ...


def repetition_seed(base_seed: int, r: int) -> int:
    return (int(base_seed) ^ int(r)) & SEED_MASK


def _draw_streams(seed: int, K: int, N: int, tau: int, flex: bool):
    # Draw order is part of the reproducibility contract; do not reorder.
    rng = np.random.default_rng(seed)
    a1 = initial_state(K, rng).current_action
    offsets = rng.integers(0, tau, size=N)
    keep_u = rng.random(N)
    sample_u = rng.random(N)
    keys = rng.random((N, K)) if flex else None
    return a1, offsets, keep_u, sample_u, keys


def _row_sum(x: np.ndarray) -> np.ndarray:
    # column-by-column so each run's sum is independent of how many runs share the array
    s = x[:, 0].copy()
    for k in range(1, x.shape[1]):
        s += x[:, k]
    return s


@dataclass
class _Lockstep:
    actions: np.ndarray            # (R, T)
    used: np.ndarray               # (R,)
    obs_rounds: np.ndarray | None  # (R, N)
    obs_masks: np.ndarray | None   # (R, N, K)
    estimates: np.ndarray | None   # (R, N, K)
    weights: np.ndarray | None     # (R, N, K), w_b in force during batch b


def simulate(
    losses: LossMatrix | Sequence[LossMatrix],
    spec: AlgorithmSpec,
    config: GameConfig,
    seeds: Sequence[int],
    history: bool = False,
) -> _Lockstep:
    """Array-level core of :func:`play`: actions, charges and (optionally) per-batch history."""
    R = len(seeds)
    if R == 0:
        raise DomainError("need at least one seed")
    shared = isinstance(losses, LossMatrix)
    mats = [losses] if shared else list(losses)
    if not shared and len(mats) != R:
        raise DomainError(f"got {len(mats)} loss matrices for {R} seeds")
    T, K = mats[0].values.shape
    if any(m.values.shape != (T, K) for m in mats):
        raise DomainError("all loss matrices must share one shape")
    N, tau, M = spec.num_batches, spec.batch_size, spec.obs_per_batch
    if K != spec.num_actions:
        raise DomainError(f"spec is for K={spec.num_actions}, losses have K={K}")
    if T < N * tau:
        raise DomainError(f"loss matrix has {T} rounds, spec needs {N * tau}")
    mode, eta, sd = spec.feedback_mode, spec.learning_rate, spec.sd_enabled
    extra = config.setting is Setting.EXTRA_BUDGET
    flex = mode is FeedbackMode.FLEX
    values = mats[0].values if shared else np.stack([m.values for m in mats])

    streams = [_draw_streams(s, K, N, tau, flex) for s in seeds]
    a = np.array([st[0] for st in streams], dtype=np.int64)
    offsets = np.stack([st[1] for st in streams])
    keep_u = np.stack([st[2] for st in streams])
    sample_u = np.stack([st[3] for st in streams])
    keys = np.stack([st[4] for st in streams]) if flex else None

    ridx = np.arange(R)
    lw = np.zeros((R, K))
    dist = np.full((R, K), 1.0 / K)
    used = np.zeros(R, dtype=np.int64)
    actions = np.empty((R, T), dtype=np.int64)
    u_hist = mask_hist = est_hist = w_hist = None
    if history:
        u_hist = np.empty((R, N), dtype=np.int64)
        mask_hist = np.empty((R, N, K), dtype=bool)
        est_hist = np.empty((R, N, K))
        w_hist = np.empty((R, N, K))
    full_mask = np.ones((R, K), dtype=bool)

    for b in range(N):
        start = b * tau
        actions[:, start:start + tau] = a[:, None]
        u = start + offsets[:, b]
        row = values[u] if shared else values[ridx, u]
        if mode is FeedbackMode.FULL:
            mask = full_mask
            est = row.copy()
        elif mode is FeedbackMode.BANDIT:
            mask = np.zeros((R, K), dtype=bool)
            mask[ridx, a] = True
            est = np.zeros((R, K))
            est[ridx, a] = row[ridx, a] / dist[ridx, a]
        else:
            chosen = np.argsort(keys[:, b, :], axis=1, kind="stable")[:, :M]
            mask = np.zeros((R, K), dtype=bool)
            mask[ridx[:, None], chosen] = True
            est = np.where(mask, row * (K / M), 0.0)

        # ledger: charge this batch's observations before they are used
        charged = mask.sum(axis=1) - (mask[ridx, a] if extra else 0)
        used += charged
        over = used > config.budget
        if over.any():
            r = int(np.argmax(over))
            raise BudgetViolation(
                f"run with seed {seeds[r]}: observations at round {int(u[r])} bring the "
                f"total to {int(used[r])}, over the budget {config.budget}"
            )
        if history:
            u_hist[:, b] = u
            mask_hist[:, b] = mask
            est_hist[:, b] = est
            w_hist[:, b] = dist

        keep = np.exp(-eta * est[ridx, a]) if sd else np.zeros(R)
        lw = lw - eta * est
        lw -= lw.max(axis=1, keepdims=True)
        p = np.exp(lw)
        p /= _row_sum(p)[:, None]
        np.maximum(p, PROB_FLOOR, out=p)
        dist = p
        if b + 1 < N:
            resample = keep_u[:, b] >= keep
            if resample.any():
                cdf = np.cumsum(p[resample], axis=1)
                x = sample_u[resample, b] * cdf[:, -1]
                idx = np.count_nonzero(cdf <= x[:, None], axis=1)
                a[resample] = np.minimum(idx, K - 1)
    # leftover rounds keep the last batch's action
    actions[:, N * tau:] = actions[:, N * tau - 1:N * tau]
    return _Lockstep(actions, used, u_hist, mask_hist, est_hist, w_hist)


def play(
    losses: LossMatrix | Sequence[LossMatrix],
    spec: AlgorithmSpec,
    config: GameConfig,
    seeds: Sequence[int],
    trajectories: bool = False,
) -> list[tuple[RunRecord, Trajectory | None]]:
    """Play ``len(seeds)`` independent runs in lockstep, one per seed.

    ``losses`` is either one matrix shared by every run or one matrix per
    run.  Each run draws only from its own seeded stream, so a run's result
    does not depend on which other runs share the call.
    """
    if len(seeds) == 0:
        return []
    sim = simulate(losses, spec, config, seeds, history=trajectories)
    shared = isinstance(losses, LossMatrix)
    mats = [losses] if shared else list(losses)
    actions, used = sim.actions, sim.used
    out: list[tuple[RunRecord, Trajectory | None]] = []
    for r in range(len(seeds)):
        rec = compute_regret(
            mats[0] if shared else mats[r], actions[r], spec.switching_costs_enabled,
            observations_used=int(used[r]), seed=int(seeds[r]), spec=spec,
        )
        traj = None
        if trajectories:
            traj = Trajectory(
                actions=actions[r].copy(),
                batch_obs_rounds=sim.obs_rounds[r].copy(),
                batch_obs_sets=tuple(tuple(int(k) for k in np.flatnonzero(m)) for m in sim.obs_masks[r]),
                batch_estimates=sim.estimates[r].copy(),
                batch_weights=sim.weights[r].copy(),
            )
        out.append((rec, traj))
    return out


def run_game(
    losses: LossMatrix,
    spec: AlgorithmSpec,
    config: GameConfig | None = None,
    seed: int = 0,
) -> tuple[RunRecord, Trajectory]:
    """Play one learner against one loss matrix.

    Raises :class:`~switchbudget.errors.BudgetViolation` the moment an
    observation would overrun the budget.
    """
    if config is None:
        config = GameConfig(spec=spec, budget=spec.budget)
    record, traj = play(losses, spec, config, [seed], trajectories=True)[0]
    return record, traj


def replay_ledger(traj: Trajectory, budget: int, K: int, setting: Setting = Setting.TOTAL_BUDGET) -> BudgetLedger:
    """Rebuild the observation ledger of a finished run, re-checking every charge."""
    ledger = BudgetLedger(budget, K)
    extra = Setting(setting) is Setting.EXTRA_BUDGET
    for u, obs in zip(traj.batch_obs_rounds, traj.batch_obs_sets):
        played = int(traj.actions[u])
        ledger.charge(int(u), [k for k in obs if k != played] if extra else list(obs))
    return ledger


@dataclass(frozen=True)
class AggregateStats:
    mean_regret: float
    stderr_regret: float
    mean_switches: float
    stderr_switches: float
    max_regret: float
    mean_observations: float
    repetitions: int
    mean_loss_regret: float = 0.0
    stderr_loss_regret: float = 0.0
    max_observations: int = 0
    max_switches: int = 0


AGGREGATE_COLUMNS = (
    "repetitions", "mean_regret", "stderr_regret", "mean_loss_regret",
    "stderr_loss_regret", "mean_switches", "stderr_switches", "max_regret",
    "max_switches", "mean_observations", "max_observations",
)


def aggregate_row(stats: AggregateStats) -> list[str]:
    return [
        str(stats.repetitions), repr(stats.mean_regret), repr(stats.stderr_regret),
        repr(stats.mean_loss_regret), repr(stats.stderr_loss_regret),
        repr(stats.mean_switches), repr(stats.stderr_switches), repr(stats.max_regret),
        str(stats.max_switches), repr(stats.mean_observations), str(stats.max_observations),
    ]


def _mean_stderr(x: Sequence[float]) -> tuple[float, float]:
    n = len(x)
    mean = math.fsum(x) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in x) / (n - 1)
    return mean, math.sqrt(var / n)


def aggregate(records: Sequence[RunRecord]) -> AggregateStats:
    """Summaries that do not depend on the order of ``records``."""
    if not records:
        raise DomainError("cannot aggregate zero runs")
    recs = sorted(records, key=lambda r: (r.seed, r.total_regret, r.switch_count))
    regret = [r.total_regret for r in recs]
    loss = [r.loss_regret for r in recs]
    switches = [float(r.switch_count) for r in recs]
    obs = [float(r.observations_used) for r in recs]
    m_reg, se_reg = _mean_stderr(regret)
    m_loss, se_loss = _mean_stderr(loss)
    m_sw, se_sw = _mean_stderr(switches)
    return AggregateStats(
        mean_regret=m_reg,
        stderr_regret=se_reg,
        mean_switches=m_sw,
        stderr_switches=se_sw,
        max_regret=max(regret),
        mean_observations=math.fsum(obs) / len(obs),
        repetitions=len(recs),
        mean_loss_regret=m_loss,
        stderr_loss_regret=se_loss,
        max_observations=max(r.observations_used for r in recs),
        max_switches=max(r.switch_count for r in recs),
    )


# Upper bound on runs x rounds held in memory by one lockstep call.
CHUNK_CELLS = 1 << 22


def chunk_size(T: int, K: int, per_run_losses: bool) -> int:
    cells = T * (K + 1) if per_run_losses else T
    return max(1, min(1024, CHUNK_CELLS // cells))


def _run_chunk(
    source: LossMatrix | Adversary, spec: AlgorithmSpec, config: GameConfig, reps: list[int],
) -> list[tuple[int, RunRecord]]:
    seeds = [repetition_seed(config.base_seed, r) for r in reps]
    if isinstance(source, LossMatrix):
        losses: LossMatrix | list[LossMatrix] = source
    else:
        losses = [source.generate(derive_seed(s, INSTANCE_STREAM)) for s in seeds]
    results = play(losses, spec, config, seeds)
    return [(r, rec) for r, (rec, _) in zip(reps, results)]


def _run_chunk_star(args: tuple[Any, AlgorithmSpec, GameConfig, list[int]]) -> list[tuple[int, RunRecord]]:
    return _run_chunk(*args)


def run_repetitions(
    source: LossMatrix | Adversary,
    spec: AlgorithmSpec,
    config: GameConfig,
    workers: int = 1,
    reps: Iterable[int] | None = None,
) -> list[RunRecord]:
    """Every repetition's record, ordered by repetition index.

    ``workers > 1`` spreads chunks of repetitions over processes; the records
    are identical to a serial run.
    """
    rep_list = list(range(config.repetitions)) if reps is None else list(reps)
    size = chunk_size(spec.horizon, spec.num_actions, not isinstance(source, LossMatrix))
    chunks = [rep_list[i:i + size] for i in range(0, len(rep_list), size)]
    if workers <= 1 or len(chunks) < 2:
        out = [item for c in chunks for item in _run_chunk(source, spec, config, c)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk_star, [(source, spec, config, c) for c in chunks])
            out = [item for part in parts for item in part]
    out.sort(key=lambda item: item[0])
    return [rec for _, rec in out]


def run_monte_carlo(
    source: LossMatrix | Adversary,
    spec: AlgorithmSpec,
    config: GameConfig,
    workers: int = 1,
) -> AggregateStats:
    if config.repetitions < 2:
        raise DomainError("Monte Carlo aggregation needs at least 2 repetitions")
    return aggregate(run_repetitions(source, spec, config, workers))

