"""Shared helpers: random configurations and an independent stability oracle."""

from __future__ import annotations

import numpy as np
import pytest

from admitsim import MarketConfig, MarketInstance, Matching, SignalSpec


def random_mixed_config(rng: np.random.Generator, max_n: int = 50) -> MarketConfig:
    """Random config over mixed ratios, capacities, list lengths, and shifts."""
    m_ratio = float(rng.choice([0.5, 1.0, 2.0]))
    while True:
        n = int(rng.integers(1, max_n + 1))
        if (m_ratio * n) == int(m_ratio * n) and m_ratio * n >= 1:
            break
    m = round(m_ratio * n)
    k = int(rng.integers(1, min(5, m) + 1))
    capacity = int(rng.integers(1, 3))
    delta = float(rng.choice([0.0, 2.0]))
    signal = SignalSpec.gaussian(delta) if delta else SignalSpec.iid()
    return MarketConfig(
        n=n,
        m_ratio=m_ratio,
        capacity=capacity,
        k=k,
        signal=signal,
        seed=int(rng.integers(2**63)),
    )


def random_tiny_config(rng: np.random.Generator, max_side: int = 7, max_k: int = 3) -> MarketConfig:
    """Small config suitable for exhaustive enumeration."""
    n = int(rng.integers(1, max_side + 1))
    m = int(rng.integers(1, max_side + 1))
    k = int(rng.integers(1, min(max_k, m) + 1))
    capacity = int(rng.integers(1, 3))
    delta = float(rng.choice([0.0, 2.0]))
    signal = SignalSpec.gaussian(delta) if delta else SignalSpec.iid()
    return MarketConfig(
        n=n,
        m_ratio=m / n,
        capacity=capacity,
        k=k,
        signal=signal,
        seed=int(rng.integers(2**63)),
    )


def brute_force_blocking_pairs(
    instance: MarketInstance, matching: Matching
) -> list[tuple[int, int]]:
    """Plain-loop stability oracle, independent of the package's checker.

    A pair (s, u) blocks when s applied to u, prefers u to her partner, and
    u either has a free seat or likes s more than its worst admitted
    student (by signal, tiebreak as in the instance).
    """
    n, k, cap = instance.n, instance.k, instance.capacity
    partner = matching.partner

    def uni_prefers(u: int, s1: int, s2: int) -> bool:
        r1 = instance.student_rank_of(s1, u)
        r2 = instance.student_rank_of(s2, u)
        assert r1 is not None and r2 is not None
        key1 = (-instance.signals[s1, r1 - 1], instance.tiebreaks[s1, r1 - 1])
        key2 = (-instance.signals[s2, r2 - 1], instance.tiebreaks[s2, r2 - 1])
        return key1 < key2

    pairs = []
    for s in range(n):
        own = [int(u) for u in instance.prefs[s]]
        current = int(partner[s])
        current_rank = own.index(current) if current >= 0 else k
        for r in range(current_rank):
            u = own[r]
            admitted = [t for t in range(n) if partner[t] == u]
            if len(admitted) < cap or any(uni_prefers(u, s, t) for t in admitted):
                pairs.append((s, u))
    return pairs


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
