"""Acceptance-rate estimation and solvers for the per-rank proposal fractions.

The central object is the vector of rank fractions: entry i is the fraction
of students who ever propose to their rank-(i+1) school under
student-proposing deferred acceptance.  Consistency requires each entry to
equal the previous one minus the fraction of previous-rank proposals that
get accepted, which yields a fixed-point system.  With identically
distributed signals the system collapses to one scalar equation in the
total proposal mass, solved here by bisection; otherwise the acceptance
rates are estimated by Monte Carlo and the system is solved by damped
iteration.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from .market import MarketConfig, _rank_within_universities, make_rng

__all__ = [
    "RankVector",
    "AcceptanceEstimate",
    "SolverResult",
    "ConvergenceError",
    "estimate_acceptance",
    "expected_accepted_mass",
    "solve_iid",
    "solve_general",
]


@dataclass(frozen=True)
class RankVector:
    """Fractions of students proposing at each rank: starts at 1, nonincreasing."""

    fractions: tuple[float, ...]

    def __post_init__(self) -> None:
        f = self.fractions
        if not f:
            raise ValueError("rank vector must not be empty")
        if abs(f[0] - 1.0) > 1e-9:
            raise ValueError("the rank-1 fraction must be 1")
        if any(b > a + 1e-9 for a, b in zip(f, f[1:])):
            raise ValueError("rank fractions must be nonincreasing")
        if any(not 0.0 <= x <= 1.0 + 1e-12 for x in f):
            raise ValueError("rank fractions must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.fractions)

    def __getitem__(self, i: int) -> float:
        return self.fractions[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.fractions, dtype=np.float64)


@dataclass(frozen=True)
class AcceptanceEstimate:
    """Monte Carlo estimate of the accepted fraction per proposal rank."""

    fractions: tuple[float, ...]
    std_errors: tuple[float, ...]
    trials: int
    n_sim: int


class ConvergenceError(RuntimeError):
    """The damped iteration did not reach the residual tolerance."""

    def __init__(self, message: str, fractions: tuple[float, ...], residuals: tuple[float, ...]):
        super().__init__(message)
        self.fractions = fractions
        self.residuals = residuals


@dataclass(frozen=True)
class SolverResult:
    """Solution of the rank-fraction system.

    ``residuals[i]`` is the consistency gap at rank i+1; for the Monte
    Carlo method it includes sampling noise.  ``method`` is
    "closed-form-iid" or "damped-iteration".
    """

    rank_fractions: RankVector
    residuals: tuple[float, ...]
    iterations: int
    method: str
    proposals_per_student: float
    unmatched_fraction: float

    @property
    def max_residual(self) -> float:
        return max(abs(r) for r in self.residuals)

    def match_fractions(self) -> tuple[float, ...]:
        """Fraction of students matched at each rank."""
        f = self.rank_fractions.fractions
        tail = f[1:] + (self.unmatched_fraction,)
        return tuple(a - b for a, b in zip(f, tail))

    def matched_fraction(self) -> float:
        return 1.0 - self.unmatched_fraction

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "rank_fractions": list(self.rank_fractions.fractions),
            "residuals": list(self.residuals),
            "iterations": self.iterations,
            "method": self.method,
            "proposals_per_student": self.proposals_per_student,
            "unmatched_fraction": self.unmatched_fraction,
            "match_fractions": list(self.match_fractions()),
        }


def _one_shot_accepted(
    counts: np.ndarray,
    m_sim: int,
    config: MarketConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Throw the per-rank proposal counts once; return accepted counts per rank."""
    k = counts.size
    total = int(counts.sum())
    if total == 0:
        return np.zeros(k, dtype=np.int64)
    uni = rng.integers(0, m_sim, size=total, dtype=np.int64)
    types = np.repeat(np.arange(k, dtype=np.int64), counts)
    signals = config.signal.draw_batch(types == 0, rng)
    tiebreak = rng.random(total)
    ranks, _, _ = _rank_within_universities(uni, signals, tiebreak, m_sim)
    accepted = ranks < config.capacity
    return np.bincount(types[accepted], minlength=k)


def estimate_acceptance(
    rank_fractions: Sequence[float],
    config: MarketConfig,
    n_sim: int = 10_000,
    trials: int = 8,
    rng: np.random.Generator | None = None,
) -> AcceptanceEstimate:
    """Estimate the accepted fraction of each proposal rank by Monte Carlo.

    Each trial throws ``floor(fraction_i * n_sim)`` rank-i proposals at
    ``m_ratio * n_sim`` uniformly random universities, draws their signals
    (rank-1 proposals from the special distribution), and lets every
    university accept its top-``capacity`` proposals.  Fractions are
    normalized by ``n_sim``.

    Unlike a full rank vector, the input may be all-zero; it only has to
    be nonincreasing with entries in [0, 1].
    """
    fractions = np.asarray(rank_fractions, dtype=np.float64)
    if fractions.shape != (config.k,):
        raise ValueError(f"expected {config.k} rank fractions")
    if (fractions < -1e-12).any() or (fractions > 1 + 1e-12).any():
        raise ValueError("rank fractions must lie in [0, 1]")
    if (np.diff(fractions) > 1e-9).any():
        raise ValueError("rank fractions must be nonincreasing")
    if n_sim < 100:
        raise ValueError("n_sim must be at least 100")
    if trials < 1:
        raise ValueError("trials must be positive")
    if rng is None:
        rng = make_rng(config.seed)

    m_sim = max(1, round(config.m_ratio * n_sim))
    counts = np.floor(fractions * n_sim).astype(np.int64)
    samples = np.empty((trials, config.k), dtype=np.float64)
    for t in range(trials):
        samples[t] = _one_shot_accepted(counts, m_sim, config, rng) / n_sim
    mean = samples.mean(axis=0)
    if trials > 1:
        se = samples.std(axis=0, ddof=1) / math.sqrt(trials)
    else:
        se = np.zeros(config.k)
    return AcceptanceEstimate(
        fractions=tuple(float(v) for v in mean),
        std_errors=tuple(float(v) for v in se),
        trials=trials,
        n_sim=n_sim,
    )


def expected_accepted_mass(
    proposals_per_student: float, m_ratio: float, capacity: int
) -> float:
    """Expected accepted proposals per student with indistinguishable signals.

    With x proposals per student thrown uniformly at m_ratio * n
    universities, each university's proposal count is Poisson(x / m_ratio)
    in the large-market limit and it fills min(count, capacity) seats:

        accepted per student = m_ratio * E[min(Poisson(x / m_ratio), capacity)]

    For capacity 1 this is m_ratio * (1 - exp(-x / m_ratio)).  The value
    approaches m_ratio * capacity as x grows.
    """
    x = float(proposals_per_student)
    if x < 0:
        raise ValueError("proposal mass must be nonnegative")
    if x == 0.0:
        return 0.0
    lam = x / m_ratio
    # E[min(N, L)] = L - sum_{j<L} (L - j) P(N = j)
    pmf = math.exp(-lam)
    shortfall = 0.0
    for j in range(capacity):
        shortfall += (capacity - j) * pmf
        pmf *= lam / (j + 1)
    return m_ratio * (capacity - shortfall)


def _consistency_gap(x: float, m_ratio: float, capacity: int, k: int) -> float:
    """Accepted mass minus matched fraction implied by x total proposals.

    Zero exactly when x solves the scalar consistency equation; increasing
    in x on the left side and decreasing on the right, so the root is
    unique and bracketed by (0, k].
    """
    g = expected_accepted_mass(x, m_ratio, capacity)
    return g - (1.0 - (1.0 - g / x) ** k)


def solve_iid(config: MarketConfig, tol: float = 1e-10, max_iter: int = 200) -> SolverResult:
    """Closed-form solution of the rank-fraction system for identical signals.

    Bisects the scalar consistency equation for the total proposal mass x,
    then reads off the geometric rank fractions: with survival ratio
    a = 1 - accepted_mass(x)/x, rank j carries a**(j-1).
    """
    if not config.signal.is_iid_equivalent:
        raise ValueError("solve_iid requires identically distributed signals")
    k, m_ratio, L = config.k, config.m_ratio, config.capacity

    lo, hi = 1e-12, float(k)
    iterations = 0
    x = hi
    if abs(_consistency_gap(hi, m_ratio, L, k)) > 0.0:
        f_lo = _consistency_gap(lo, m_ratio, L, k)
        if f_lo > 0:
            raise RuntimeError("consistency equation lost its bracket")
        # run the bracket down to rounding so the reported residuals are
        # far below any practical tolerance
        for _ in range(max_iter):
            iterations += 1
            x = 0.5 * (lo + hi)
            fx = _consistency_gap(x, m_ratio, L, k)
            if fx == 0.0 or hi - lo <= 1e-14 * max(1.0, x):
                break
            if fx < 0:
                lo = x
            else:
                hi = x
        if abs(_consistency_gap(x, m_ratio, L, k)) > tol:
            raise RuntimeError("bisection did not reach tolerance")

    g = expected_accepted_mass(x, m_ratio, L)
    alpha = 1.0 - g / x
    fractions = tuple(alpha**j for j in range(k))
    # residuals re-derive the survival ratio from the solution's own total
    # mass, so they expose how well the bisection closed the equation
    total = sum(fractions)
    alpha_check = 1.0 - expected_accepted_mass(total, m_ratio, L) / total
    residuals = tuple(
        fractions[i] - fractions[i - 1] * alpha_check if i else 0.0
        for i in range(k)
    )
    return SolverResult(
        rank_fractions=RankVector(fractions),
        residuals=residuals,
        iterations=iterations,
        method="closed-form-iid",
        proposals_per_student=float(x),
        unmatched_fraction=float(alpha**k),
    )


def solve_general(
    config: MarketConfig,
    tol: float = 0.01,
    max_iter: int = 80,
    n_sim: int = 20_000,
    trials: int = 4,
    damping: float = 0.5,
    rng: np.random.Generator | None = None,
) -> SolverResult:
    """Solve the rank-fraction system by damped Monte Carlo iteration.

    Repeats y <- (1 - damping) * y + damping * T(y) where T(y) is the
    self-consistent chain of the acceptance rates estimated at y (each
    rank carrying the previous one minus its accepted fraction), projected
    onto [0, 1] and nonincreasing order.  Converges when the worst
    consistency gap falls below ``tol``; note the gap carries Monte Carlo
    noise of order the estimate's standard error, so ``tol`` should not be
    set far below it.

    Raises ConvergenceError with the last iterate when ``max_iter`` is
    exhausted.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must be in (0, 1]")
    if rng is None:
        rng = make_rng(config.seed)
    k = config.k

    y = np.ones(k, dtype=np.float64)
    residuals = np.zeros(k, dtype=np.float64)
    for iteration in range(1, max_iter + 1):
        estimate = estimate_acceptance(y, config, n_sim=n_sim, trials=trials, rng=rng)
        accepted = np.asarray(estimate.fractions)
        # Self-consistent chain for the current acceptance estimates: each
        # rank carries the previous target minus its accepted fraction, so a
        # correction at one rank propagates through all later ones at once.
        target = np.empty(k, dtype=np.float64)
        target[0] = 1.0
        for i in range(1, k):
            target[i] = target[i - 1] - accepted[i - 1]
        np.clip(target, 0.0, 1.0, out=target)
        np.minimum.accumulate(target, out=target)
        residuals = y - target
        if np.abs(residuals).max() <= tol:
            unmatched = max(0.0, float(y[-1] - accepted[-1]))
            return SolverResult(
                rank_fractions=RankVector(tuple(float(v) for v in y)),
                residuals=tuple(float(r) for r in residuals),
                iterations=iteration,
                method="damped-iteration",
                proposals_per_student=float(y.sum()),
                unmatched_fraction=unmatched,
            )
        y = (1.0 - damping) * y + damping * target
        y[0] = 1.0

    raise ConvergenceError(
        f"no convergence to {tol} within {max_iter} iterations "
        f"(last residual {np.abs(residuals).max():.3g})",
        fractions=tuple(float(v) for v in y),
        residuals=tuple(float(r) for r in residuals),
    )
