"""Domain types shared by every module, plus regret and budget arithmetic.

Actions and rounds are 0-based everywhere in the package.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    BudgetViolation,
    DomainError,
    InvalidTrajectoryError,
)

INSTANCE_COLUMNS = ("t", "k", "loss")
INSTANCE_COLUMNS_RAW = ("t", "k", "loss", "raw_loss")


class FeedbackMode(str, enum.Enum):
    FULL = "FULL"
    FLEX = "FLEX"
    BANDIT = "BANDIT"


def clip_unit(x: float) -> float:
    """Nearest point of [0, 1] to ``x``."""
    if not math.isfinite(x):
        raise DomainError(f"cannot clip non-finite value {x!r}")
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return float(x)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LossMatrix:
    """T x K losses in [0, 1], optionally with the unclipped losses they came from."""

    values: np.ndarray
    raw: np.ndarray | None = None
    optimal_action: int | None = None
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DomainError("loss matrix must be two-dimensional")
        T, K = values.shape
        if K < 2:
            raise DomainError(f"need at least 2 actions, got {K}")
        if T < K:
            raise DomainError(f"horizon T={T} must be at least K={K}")
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise DomainError("losses must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(values))
        if self.raw is not None:
            raw = np.asarray(self.raw, dtype=float)
            if raw.shape != values.shape:
                raise DomainError("raw losses must have the same shape as values")
            if not np.array_equal(np.clip(raw, 0.0, 1.0), values):
                raise DomainError("values must equal raw losses clipped to [0, 1]")
            object.__setattr__(self, "raw", _frozen(raw))
        if self.optimal_action is not None:
            k = int(self.optimal_action)
            if not 0 <= k < K:
                raise DomainError(f"optimal action {k} outside [0, {K})")
            object.__setattr__(self, "optimal_action", k)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def num_actions(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LossMatrix):
            return NotImplemented
        if not np.array_equal(self.values, other.values):
            return False
        if (self.raw is None) != (other.raw is None):
            return False
        if self.raw is not None and not np.array_equal(self.raw, other.raw):
            return False
        return self.optimal_action == other.optimal_action

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class AlgorithmSpec:
    """A fully resolved learner configuration (integer batching already applied).

    ``budget`` is the pool the observations are charged to: B in the
    total-budget setting, B_ex in the extra-observation setting.
    ``nominal_batches`` and ``nominal_batch_size`` keep the real-valued N and
    tau before rounding.
    """

    feedback_mode: FeedbackMode
    num_batches: int
    batch_size: int
    learning_rate: float
    sd_enabled: bool
    obs_per_batch: int
    horizon: int
    num_actions: int
    budget: int
    switching_costs_enabled: bool = True
    nominal_batches: float | None = None
    nominal_batch_size: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "feedback_mode", FeedbackMode(self.feedback_mode))
        T, K, N, tau, M = (
            self.horizon, self.num_actions, self.num_batches, self.batch_size,
            self.obs_per_batch,
        )
        if K < 2 or T < 1:
            raise DomainError(f"invalid problem size T={T}, K={K}")
        if N < 1 or tau < 1:
            raise DomainError(f"batch count and size must be positive, got N={N}, tau={tau}")
        if N * tau > T:
            raise DomainError(f"N*tau = {N * tau} exceeds T = {T}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise DomainError(f"learning rate must be positive, got {self.learning_rate}")
        if not 1 <= M <= K:
            raise DomainError(f"observations per batch M={M} outside [1, {K}]")
        if self.feedback_mode is FeedbackMode.FULL and M != K:
            raise DomainError("full-information feedback observes all K actions")
        if self.feedback_mode is FeedbackMode.BANDIT and M != 1:
            raise DomainError("bandit feedback observes exactly one action")
        if N * M > self.budget:
            raise DomainError(f"planned observations N*M = {N * M} exceed budget {self.budget}")

    @property
    def leftover_rounds(self) -> int:
        return self.horizon - self.num_batches * self.batch_size

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["feedback_mode"] = self.feedback_mode.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AlgorithmSpec:
        return cls(**dict(d))


class BudgetLedger:
    """Append-only record of (round, action) observation charges.

    Charging past ``budget`` raises :class:`BudgetViolation` and leaves the
    ledger unchanged.
    """

    def __init__(self, budget: int, num_actions: int):
        if budget < 0:
            raise DomainError(f"budget must be non-negative, got {budget}")
        self.budget = int(budget)
        self.num_actions = int(num_actions)
        self._entries: list[tuple[int, int]] = []
        self._per_round: dict[int, int] = {}

    def charge(self, t: int, actions: Sequence[int]) -> None:
        n = len(actions)
        if len(self._entries) + n > self.budget:
            raise BudgetViolation(
                f"charging {n} observation(s) at round {t} exceeds budget {self.budget} "
                f"({len(self._entries)} already used)"
            )
        used = self._per_round.get(t, 0) + n
        if used > self.num_actions:
            raise BudgetViolation(f"{used} observations at round {t} exceed K={self.num_actions}")
        self._per_round[t] = used
        self._entries.extend((t, int(k)) for k in actions)

    @property
    def entries(self) -> tuple[tuple[int, int], ...]:
        return tuple(self._entries)

    @property
    def used(self) -> int:
        return len(self._entries)

    def used_at(self, t: int) -> int:
        return self._per_round.get(t, 0)

    @property
    def remaining(self) -> int:
        return self.budget - len(self._entries)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """What one run did: the per-round actions and the per-batch observations.

    ``batch_weights[b]`` is the sampling distribution w_b in force during
    batch b; the other per-batch arrays are indexed the same way.
    """

    actions: np.ndarray
    batch_obs_rounds: np.ndarray
    batch_obs_sets: tuple[tuple[int, ...], ...]
    batch_estimates: np.ndarray
    batch_weights: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.actions, other.actions)
            and np.array_equal(self.batch_obs_rounds, other.batch_obs_rounds)
            and self.batch_obs_sets == other.batch_obs_sets
            and np.array_equal(self.batch_estimates, other.batch_estimates)
            and np.array_equal(self.batch_weights, other.batch_weights)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class RunRecord:
    loss_regret: float
    switch_count: int
    total_regret: float
    observations_used: int
    best_fixed_action: int
    seed: int
    switching_costs_enabled: bool = True
    spec: AlgorithmSpec | None = None

    def __post_init__(self) -> None:
        expected = self.loss_regret + (self.switch_count if self.switching_costs_enabled else 0)
        if self.total_regret != expected:
            raise DomainError("total regret must equal loss regret plus charged switches")


RUN_RECORD_COLUMNS = (
    "seed", "loss_regret", "switch_count", "total_regret",
    "observations_used", "best_fixed_action", "switching_costs_enabled",
)


def run_record_row(rec: RunRecord) -> list[str]:
    return [
        str(rec.seed), repr(rec.loss_regret), str(rec.switch_count), repr(rec.total_regret),
        str(rec.observations_used), str(rec.best_fixed_action),
        "1" if rec.switching_costs_enabled else "0",
    ]


def count_switches(actions: np.ndarray) -> int:
    """Number of t >= 1 with actions[t] != actions[t-1]; the first round is free."""
    a = np.asarray(actions)
    if a.size < 2:
        return 0
    return int(np.count_nonzero(a[1:] != a[:-1]))


def compute_regret(
    losses: LossMatrix,
    actions: Sequence[int] | np.ndarray,
    switching_costs_enabled: bool = True,
    *,
    observations_used: int = 0,
    seed: int = 0,
    spec: AlgorithmSpec | None = None,
) -> RunRecord:
    """Realized regret of ``actions`` against the best fixed action in hindsight.

    Ties for the best fixed action go to the lowest index.
    """
    a = np.asarray(actions)
    T, K = losses.values.shape
    if a.shape != (T,):
        raise InvalidTrajectoryError(f"expected {T} actions, got shape {a.shape}")
    if a.size and (not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() >= K):
        raise InvalidTrajectoryError(f"action index outside [0, {K})")
    # correctly rounded sums, so equal loss streams give exactly equal totals
    incurred = math.fsum(losses.values[np.arange(T), a])
    totals = [math.fsum(col) for col in losses.values.T]
    best = int(np.argmin(totals))
    loss_regret = incurred - totals[best]
    switches = count_switches(a)
    total = loss_regret + (switches if switching_costs_enabled else 0)
    return RunRecord(
        loss_regret=loss_regret,
        switch_count=switches,
        total_regret=total,
        observations_used=int(observations_used),
        best_fixed_action=best,
        seed=int(seed),
        switching_costs_enabled=bool(switching_costs_enabled),
        spec=spec,
    )


def derive_seed(*keys: int) -> int:
    """Mix integer keys into one 64-bit seed (numpy SeedSequence hashing)."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".meta.json")


def write_instance(losses: LossMatrix, path: str | Path, metadata: Mapping[str, Any] | None = None) -> Path:
    """Write the headered long-format CSV plus a JSON sidecar; return the sidecar path."""
    path = Path(path)
    with_raw = losses.raw is not None
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INSTANCE_COLUMNS_RAW if with_raw else INSTANCE_COLUMNS)
        T, K = losses.values.shape
        for t in range(T):
            for k in range(K):
                row = [t, k, repr(float(losses.values[t, k]))]
                if with_raw:
                    row.append(repr(float(losses.raw[t, k])))
                w.writerow(row)
    meta = {
        "T": losses.horizon,
        "K": losses.num_actions,
        "k_star": losses.optimal_action,
    }
    meta.update(losses.provenance)
    if metadata:
        meta.update(metadata)
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return side
