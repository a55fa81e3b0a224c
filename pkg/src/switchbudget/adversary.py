"""Loss-sequence generators.

The hard instance is a multi-scale Gaussian random walk shared by all
actions, plus independent per-action noise, with the optimal action shifted
down by a small gap and everything clipped to [0, 1].  Stochastic Bernoulli
instances and CSV files are provided for calibration runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .core import INSTANCE_COLUMNS, INSTANCE_COLUMNS_RAW, LossMatrix, sidecar_path
from .errors import DomainError, ParseError, RegimeError

DEFAULT_C1 = 0.1
DEFAULT_C2 = 0.1
DEFAULT_C3 = 0.1
MAX_REGIME_EPSILON = 1.0 / 6.0


def delta(t: int) -> int:
    """Exponent of the largest power of two dividing ``t``."""
    t = int(t)
    if t < 1:
        raise DomainError(f"delta is defined for t >= 1, got {t}")
    return (t & -t).bit_length() - 1


def rho(t: int) -> int:
    """Parent round of ``t`` in the random walk: ``t`` with its lowest set bit cleared."""
    t = int(t)
    if t < 1:
        raise DomainError(f"rho is defined for t >= 1, got {t}")
    return t - (t & -t)


def default_sigma(T: int) -> float:
    return 1.0 / (9.0 * math.log2(T))


def regime_epsilon(
    T: int,
    K: int,
    B_ex: float,
    c2: float = DEFAULT_C2,
    c3: float = DEFAULT_C3,
    c1: float = DEFAULT_C1,
) -> float:
    """Gap for the hard instance given the extra-observation budget.

    Below the threshold sqrt(B_ex) <= c1 K^(1/6) T^(1/3) the gap does not
    depend on B_ex; above it, it shrinks like 1/sqrt(B_ex).
    """
    if T < 2 or K < 2:
        raise DomainError(f"need T >= 2 and K >= 2, got T={T}, K={K}")
    if B_ex < 0:
        raise DomainError(f"B_ex must be non-negative, got {B_ex}")
    log_t = math.log2(T) ** 1.5
    if math.sqrt(B_ex) <= c1 * K ** (1 / 6) * T ** (1 / 3):
        eps = c2 * K ** (1 / 3) / (T ** (1 / 3) * log_t)
    else:
        eps = c3 * math.sqrt(K) / (log_t * math.sqrt(B_ex))
    if eps > MAX_REGIME_EPSILON:
        raise RegimeError(f"epsilon={eps:.4g} exceeds 1/6 for T={T}, K={K}, B_ex={B_ex}")
    return eps


@dataclass(frozen=True)
class HardInstanceParams:
    T: int
    K: int
    epsilon: float
    sigma: float
    k_star: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.K < 2 or self.T < self.K:
            raise DomainError(f"need T >= K >= 2, got T={self.T}, K={self.K}")
        if not self.epsilon >= 0 or not math.isfinite(self.epsilon):
            raise DomainError(f"epsilon must be non-negative, got {self.epsilon}")
        # sigma = 0 is accepted as a deterministic degenerate case.
        if not self.sigma >= 0 or not math.isfinite(self.sigma):
            raise DomainError(f"sigma must be non-negative, got {self.sigma}")
        if self.k_star is not None and not 0 <= self.k_star < self.K:
            raise DomainError(f"k_star={self.k_star} outside [0, {self.K})")

    @classmethod
    def for_regime(
        cls,
        T: int,
        K: int,
        B_ex: float,
        *,
        seed: int = 0,
        k_star: int | None = None,
        c1: float = DEFAULT_C1,
        c2: float = DEFAULT_C2,
        c3: float = DEFAULT_C3,
    ) -> HardInstanceParams:
        eps = regime_epsilon(T, K, B_ex, c2=c2, c3=c3, c1=c1)
        return cls(T=T, K=K, epsilon=eps, sigma=default_sigma(T), k_star=k_star, seed=seed)


def _philox(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seq))


def random_walk(xi: np.ndarray) -> np.ndarray:
    """G(0..T) with G(0) = 0 and G(t) = G(rho(t)) + xi[t-1].

    Rounds with the same number of set bits only depend on rounds with one
    fewer, so each popcount level is filled in one vectorized step.
    """
    T = len(xi)
    G = np.zeros(T + 1)
    t = np.arange(1, T + 1, dtype=np.int64)
    parent = t - (t & -t)
    level = np.bitwise_count(t)
    for p in range(1, int(level.max(initial=0)) + 1):
        idx = t[level == p]
        G[idx] = G[parent[idx - 1]] + xi[idx - 1]
    return G


def generate_hard_instance(params: HardInstanceParams) -> LossMatrix:
    T, K = params.T, params.K
    k_seq, xi_seq, gamma_seq = np.random.SeedSequence(params.seed).spawn(3)
    if params.k_star is None:
        k_star = int(_philox(k_seq).integers(K))
    else:
        k_star = int(params.k_star)
    xi = _philox(xi_seq).standard_normal(T) * params.sigma
    gamma = _philox(gamma_seq).standard_normal((T, K)) * params.sigma
    G = random_walk(xi)
    raw = G[1:, None] + gamma
    raw[:, k_star] -= params.epsilon
    return LossMatrix(
        values=np.clip(raw, 0.0, 1.0),
        raw=raw,
        optimal_action=k_star,
        provenance={
            "generator": "hard",
            "epsilon": params.epsilon,
            "sigma": params.sigma,
            "k_star_param": params.k_star,
            "seed": params.seed,
        },
    )


def generate_stochastic_gap(
    T: int,
    K: int,
    gap: float,
    base: float,
    k_star: int | None = None,
    seed: int = 0,
) -> LossMatrix:
    """I.i.d. Bernoulli losses: mean ``base`` for k*, ``base + gap`` for the rest."""
    if K < 2 or T < K:
        raise DomainError(f"need T >= K >= 2, got T={T}, K={K}")
    if not (0.0 <= gap < 1.0):
        raise DomainError(f"gap must lie in [0, 1), got {gap}")
    if not (0.0 <= base <= 1.0 and base + gap <= 1.0):
        raise DomainError(f"base={base} and base+gap={base + gap} must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    if k_star is None:
        k_star = int(rng.integers(K))
    elif not 0 <= k_star < K:
        raise DomainError(f"k_star={k_star} outside [0, {K})")
    means = np.full(K, base + gap)
    means[k_star] = base
    values = (rng.random((T, K)) < means).astype(float)
    return LossMatrix(
        values=values,
        optimal_action=int(k_star),
        provenance={"generator": "stochastic_gap", "gap": gap, "base": base,
                    "k_star_param": k_star, "seed": seed},
    )


@dataclass(frozen=True)
class HardInstanceGenerator:
    """Draws a fresh hard instance per seed; ``k_star=None`` samples it each time."""

    T: int
    K: int
    epsilon: float
    sigma: float
    k_star: int | None = None

    name = "hard"

    @classmethod
    def for_regime(cls, T: int, K: int, B_ex: float, **constants: float) -> HardInstanceGenerator:
        p = HardInstanceParams.for_regime(T, K, B_ex, **constants)
        return cls(T=T, K=K, epsilon=p.epsilon, sigma=p.sigma)

    def generate(self, seed: int) -> LossMatrix:
        return generate_hard_instance(
            HardInstanceParams(self.T, self.K, self.epsilon, self.sigma, self.k_star, seed)
        )

    def describe(self) -> dict[str, Any]:
        return {"generator": self.name, "T": self.T, "K": self.K, "epsilon": self.epsilon,
                "sigma": self.sigma, "k_star": self.k_star}


@dataclass(frozen=True)
class StochasticGapGenerator:
    T: int
    K: int
    gap: float
    base: float
    k_star: int | None = None

    name = "stochastic_gap"

    def generate(self, seed: int) -> LossMatrix:
        return generate_stochastic_gap(self.T, self.K, self.gap, self.base, self.k_star, seed)

    def describe(self) -> dict[str, Any]:
        return {"generator": self.name, "T": self.T, "K": self.K, "gap": self.gap,
                "base": self.base, "k_star": self.k_star}


def load_instance(path: str | Path) -> LossMatrix:
    """Read a loss matrix written by :func:`switchbudget.core.write_instance`.

    Rows must enumerate (t, k) in order, t-major.  Row numbers in errors are
    1-based file lines, header included.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(rows):
        raise ParseError("no rounds")
    header = tuple(c.strip() for c in rows[0])
    if header not in (INSTANCE_COLUMNS, INSTANCE_COLUMNS_RAW):
        raise ParseError(f"unexpected header {list(header)}", row=1)
    with_raw = header == INSTANCE_COLUMNS_RAW
    body = rows[1:]
    if not body:
        raise ParseError("no rounds")

    parsed: list[tuple[int, int, float, float]] = []
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=line)
        try:
            t, k = int(row[0]), int(row[1])
            loss = float(row[2])
            raw = float(row[3]) if with_raw else math.nan
        except ValueError as exc:
            raise ParseError(f"malformed field ({exc})", row=line) from None
        if not (0.0 <= loss <= 1.0):
            raise ParseError(f"loss {row[2]} outside [0, 1]", row=line)
        if with_raw and not math.isfinite(raw):
            raise ParseError(f"raw loss {row[3]} is not finite", row=line)
        parsed.append((t, k, loss, raw))

    K = 0
    while K < len(parsed) and parsed[K][0] == 0:
        K += 1
    if K < 2:
        raise ParseError(f"round 0 lists {K} action(s); need at least 2", row=2)
    for i, (t, k, _, _) in enumerate(parsed):
        if (t, k) != (i // K, i % K):
            raise ParseError(f"expected t={i // K}, k={i % K}, got t={t}, k={k}", row=i + 2)
    if len(parsed) % K:
        raise ParseError(f"last round is incomplete (K={K})", row=len(parsed) + 1)
    T = len(parsed) // K

    values = np.array([p[2] for p in parsed]).reshape(T, K)
    raw = np.array([p[3] for p in parsed]).reshape(T, K) if with_raw else None
    if raw is not None and not np.array_equal(np.clip(raw, 0.0, 1.0), values):
        bad = int(np.argmax((np.clip(raw, 0.0, 1.0) != values).ravel()))
        raise ParseError("loss does not equal clipped raw loss", row=bad + 2)

    k_star = None
    provenance: dict[str, Any] = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        if meta.get("T", T) != T or meta.get("K", K) != K:
            raise ParseError(f"sidecar says T={meta.get('T')}, K={meta.get('K')}; file has T={T}, K={K}")
        k_star = meta.get("k_star")
        provenance = {k: v for k, v in meta.items() if k not in ("T", "K", "k_star")}
    if T < K:
        raise ParseError(f"horizon T={T} shorter than K={K}")
    return LossMatrix(values=values, raw=raw, optimal_action=k_star, provenance=provenance)
