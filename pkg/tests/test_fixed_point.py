"""Acceptance-rate estimation and the rank-fraction solvers."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from admitsim import (
    ConvergenceError,
    MarketConfig,
    RankVector,
    SignalSpec,
    estimate_acceptance,
    expected_accepted_mass,
    make_rng,
    rank_profile,
    sample_market,
    solve_general,
    solve_iid,
    student_proposing_da,
)
from admitsim.fixed_point import _one_shot_accepted
from admitsim.market import _rank_within_universities


def simulated_rank_fractions(config: MarketConfig, seeds: range) -> np.ndarray:
    """Fraction of students proposing at each rank in full student-proposing runs."""
    totals = np.zeros(config.k)
    for seed in seeds:
        inst = sample_market(dataclasses.replace(config, seed=seed))
        profile = rank_profile(inst, student_proposing_da(inst))
        # a student matched at rank r proposed at ranks 1..r; an unmatched
        # student proposed everywhere
        proposing = np.zeros(config.k)
        for r, count in enumerate(profile.counts):
            proposing[: r + 1] += count
        proposing += profile.unmatched
        totals += proposing / config.n
    return totals / len(seeds)


class TestRankVector:
    def test_validation(self):
        with pytest.raises(ValueError):
            RankVector((0.9, 0.5))
        with pytest.raises(ValueError):
            RankVector((1.0, 0.5, 0.7))
        with pytest.raises(ValueError):
            RankVector(())
        assert len(RankVector((1.0, 0.4))) == 2


class TestEstimateAcceptance:
    def test_zero_plan_gives_zero(self):
        cfg = MarketConfig(n=100, k=3, seed=0)
        est = estimate_acceptance((0.0, 0.0, 0.0), cfg, n_sim=500, trials=2)
        assert est.fractions == (0.0, 0.0, 0.0)

    def test_single_rank_matches_occupancy_formula(self):
        # every university with at least one proposal accepts exactly one;
        # the chance a given slot is hit is 1 - (1 - 1/m)^n
        cfg = MarketConfig(n=100, k=2, seed=4)
        n_sim = 10_000
        exact = 1 - (1 - 1 / n_sim) ** n_sim
        est = estimate_acceptance((1.0, 0.0), cfg, n_sim=n_sim, trials=8)
        assert abs(est.fractions[0] - exact) < 0.01

    def test_strong_signal_wins_head_to_head(self):
        # universities receiving one favorite-school and one later-rank
        # proposal almost always admit the former when the shift is 10:
        # P(N(10,1) < N(0,1)) = Phi(-10/sqrt(2)) ~ 8e-13
        cfg = MarketConfig(
            n=100, m_ratio=1.0, capacity=1, k=2, signal=SignalSpec.gaussian(10.0), seed=7
        )
        rng = make_rng(7)
        n_sim = 20_000
        counts = np.array([n_sim, n_sim])
        uni = rng.integers(0, n_sim, size=2 * n_sim)
        types = np.repeat(np.arange(2), counts)
        signals = cfg.signal.draw_batch(types == 0, rng)
        ties = rng.random(2 * n_sim)
        ranks, _, _ = _rank_within_universities(uni, signals, ties, n_sim)
        wins = duels = 0
        for u in range(n_sim):
            members = np.flatnonzero(uni == u)
            if members.size == 2 and set(types[members]) == {0, 1}:
                duels += 1
                winner = members[ranks[members] == 0][0]
                wins += int(types[winner] == 0)
        assert duels > 1000
        assert wins / duels >= 0.999

    def test_accepted_never_exceeds_thrown(self, rng):
        for _ in range(10):
            k = int(rng.integers(1, 5))
            cfg = MarketConfig(
                n=100,
                m_ratio=float(rng.choice([0.5, 1.0, 2.0])),
                capacity=int(rng.integers(1, 3)),
                k=k,
                seed=int(rng.integers(2**63)),
            )
            tail = np.sort(rng.random(k - 1))[::-1] if k > 1 else np.array([])
            y = np.concatenate(([1.0], tail))
            est = estimate_acceptance(y, cfg, n_sim=2000, trials=3)
            assert all(f <= yi + 1e-12 for f, yi in zip(est.fractions, y))

    def test_input_validation(self):
        cfg = MarketConfig(n=100, k=2, seed=0)
        with pytest.raises(ValueError):
            estimate_acceptance((1.0, 0.5), cfg, n_sim=50)
        with pytest.raises(ValueError):
            estimate_acceptance((0.5, 1.0), cfg)
        with pytest.raises(ValueError):
            estimate_acceptance((1.0,), cfg)


class TestAcceptedMassClosedForm:
    def test_zero(self):
        assert expected_accepted_mass(0.0, 1.0, 1) == 0.0

    def test_capacity_one_unit_ratio(self):
        assert abs(expected_accepted_mass(1.0, 1.0, 1) - (1 - math.exp(-1))) < 1e-12

    @pytest.mark.parametrize("m_ratio,capacity", [(1.0, 1), (0.5, 2), (2.0, 3)])
    def test_saturates_at_total_capacity(self, m_ratio, capacity):
        assert abs(expected_accepted_mass(1e3, m_ratio, capacity) - m_ratio * capacity) < 1e-6

    def test_matches_monte_carlo_occupancy(self):
        # independent oracle: average min(count, L) over multinomial throws
        rng = make_rng(12)
        m, L = 500, 2
        x = 1.7
        total = int(x * m)
        filled = []
        for _ in range(400):
            counts = np.bincount(rng.integers(0, m, size=total), minlength=m)
            filled.append(np.minimum(counts, L).sum() / m)
        mc = float(np.mean(filled))
        # m_ratio = 1: proposals per student x, m = n
        assert abs(expected_accepted_mass(x, 1.0, L) - mc) < 0.01


class TestSolveIid:
    def test_k1_is_unit_mass(self):
        result = solve_iid(MarketConfig(n=100, k=1, seed=0))
        assert result.proposals_per_student == pytest.approx(1.0, abs=1e-9)
        assert result.rank_fractions.fractions == (1.0,)
        assert result.matched_fraction() == pytest.approx(1 - math.exp(-1), abs=1e-9)

    def test_k2_residual_and_simulation(self):
        cfg = MarketConfig(n=10_000, k=2, seed=0)
        result = solve_iid(cfg)
        assert result.max_residual <= 1e-10
        sim = simulated_rank_fractions(cfg, range(3)).sum()
        assert abs(sim - result.proposals_per_student) < 0.02

    def test_k5_ratio_two_shape(self):
        result = solve_iid(MarketConfig(n=100, m_ratio=2.0, k=5, seed=0))
        f = result.rank_fractions.fractions
        assert f[0] == 1.0
        assert all(a >= b for a, b in zip(f, f[1:]))
        g = expected_accepted_mass(result.proposals_per_student, 2.0, 1)
        first_choice = g / result.proposals_per_student
        assert result.match_fractions()[0] == pytest.approx(first_choice, abs=1e-9)

    def test_rejects_shifted_signals(self):
        cfg = MarketConfig(n=100, k=2, signal=SignalSpec.gaussian(1.0), seed=0)
        with pytest.raises(ValueError):
            solve_iid(cfg)

    def test_gaussian_zero_shift_accepted(self):
        cfg = MarketConfig(n=100, k=2, signal=SignalSpec.gaussian(0.0), seed=0)
        assert solve_iid(cfg).max_residual <= 1e-10

    def test_total_mass_increases_with_k(self):
        masses = [
            solve_iid(MarketConfig(n=100, k=k, seed=0)).proposals_per_student
            for k in range(1, 6)
        ]
        assert all(b > a for a, b in zip(masses, masses[1:]))


class TestEquationMonotonicity:
    @pytest.mark.parametrize("m_ratio", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("capacity", [1, 2])
    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_bracket_monotone(self, m_ratio, capacity, k):
        # the accepted-mass side rises with total proposals while the
        # matched-fraction side falls, so the crossing is unique
        xs = np.linspace(0.05, k, 60)
        lhs = [expected_accepted_mass(x, m_ratio, capacity) for x in xs]
        rhs = [
            1.0 - (1.0 - expected_accepted_mass(x, m_ratio, capacity) / x) ** k for x in xs
        ]
        assert all(b >= a - 1e-12 for a, b in zip(lhs, lhs[1:]))
        assert all(b <= a + 1e-12 for a, b in zip(rhs, rhs[1:]))


class TestSolveGeneral:
    def test_agrees_with_closed_form_on_iid(self):
        cfg = MarketConfig(n=100, k=3, seed=5)
        iid = solve_iid(cfg)
        general = solve_general(cfg, tol=0.005, n_sim=20_000, trials=6)
        est = estimate_acceptance(
            general.rank_fractions.fractions, cfg, n_sim=20_000, trials=6
        )
        bound = 2 * (max(est.std_errors) + 0.005)
        for a, b in zip(iid.rank_fractions.fractions, general.rank_fractions.fractions):
            assert abs(a - b) <= bound

    def test_zero_shift_same_as_iid_signal(self):
        base = MarketConfig(n=100, k=3, seed=9)
        shifted = dataclasses.replace(base, signal=SignalSpec.gaussian(0.0))
        a = solve_general(base, tol=0.005, n_sim=20_000, trials=6)
        b = solve_general(shifted, tol=0.005, n_sim=20_000, trials=6)
        for x, y in zip(a.rank_fractions.fractions, b.rank_fractions.fractions):
            assert abs(x - y) <= 0.02

    def test_shifted_signal_profile_matches_simulation(self):
        cfg = MarketConfig(n=10_000, k=3, signal=SignalSpec.gaussian(2.0), seed=2)
        result = solve_general(cfg, tol=0.005, n_sim=40_000, trials=6)
        predicted = result.match_fractions()
        profiles = []
        for seed in range(3):
            inst = sample_market(dataclasses.replace(cfg, seed=seed))
            profiles.append(rank_profile(inst, student_proposing_da(inst)).fractions())
        simulated = np.mean(profiles, axis=0)
        for p, s in zip(predicted, simulated):
            assert abs(p - s) < 0.02

    def test_conservation_at_solution(self):
        cfg = MarketConfig(n=100, k=4, seed=1)
        result = solve_general(cfg, tol=0.005, n_sim=20_000, trials=6)
        y = result.rank_fractions.fractions
        est = estimate_acceptance(y, cfg, n_sim=40_000, trials=8, rng=make_rng(77))
        for i in range(1, cfg.k):
            assert abs(y[i] - (y[i - 1] - est.fractions[i - 1])) < 0.01
        # accepted mass stays within feasibility bounds at the fixed point
        total = sum(est.fractions)
        assert total <= min(1.0, cfg.m_ratio * cfg.capacity) + 0.01

    def test_nonconvergence_raises_with_payload(self):
        cfg = MarketConfig(n=100, k=3, seed=0)
        with pytest.raises(ConvergenceError) as err:
            solve_general(cfg, tol=1e-9, max_iter=2, n_sim=500, trials=1)
        assert len(err.value.fractions) == 3
        assert len(err.value.residuals) == 3

    def test_json_round_trip_fields(self):
        result = solve_iid(MarketConfig(n=100, k=2, seed=0))
        doc = result.to_json_dict()
        assert set(doc) == {
            "rank_fractions",
            "residuals",
            "iterations",
            "method",
            "proposals_per_student",
            "unmatched_fraction",
            "match_fractions",
        }


class TestOneShotInternals:
    def test_counts_empty(self):
        cfg = MarketConfig(n=100, k=2, seed=0)
        out = _one_shot_accepted(np.array([0, 0]), 100, cfg, make_rng(0))
        assert out.tolist() == [0, 0]
