"""Market model: configuration, instance sampling, and seeded proposal plans.

A market has ``n`` students and ``m = m_ratio * n`` universities, each with
``capacity`` seats.  Every student applies to her ``k`` favorite universities,
chosen uniformly at random without replacement.  For each application the
university observes one scalar signal: applications from students whose
favorite school it is are drawn from the "special" distribution, all others
from the regular one.  Universities rank their applicants by decreasing
signal.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np

__all__ = [
    "ConfigurationError",
    "SignalSpec",
    "MarketConfig",
    "MarketInstance",
    "SeededProposalPlan",
    "child_seed",
    "make_rng",
    "draw_signal",
    "sample_market",
    "build_seeded_plan",
    "complete_instance",
]

SignalSampler = Callable[[np.random.Generator], float]

_MAX_SEED = 2**64

# Fixed stream index used when tiebreaks must be re-derived (JSON reload).
_TIEBREAK_STREAM = 0x7EB

# Max attempts to repair a proposal-to-student assignment whose target
# university already sits on the student's list.
_SWAP_ATTEMPTS = 200


class ConfigurationError(ValueError):
    """A market configuration violates its invariants."""


def child_seed(root: int, index: int) -> int:
    """Derive an independent 64-bit seed for replication ``index``.

    The split is a stated contract: replication seeds are hashes of
    (root, index), so replications may run in any order or in parallel
    without changing results.
    """
    seq = np.random.SeedSequence([int(root), int(index)])
    return int(seq.generate_state(1, np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))


@dataclass(frozen=True)
class SignalSpec:
    """Distribution of the signals universities observe per application.

    kind "iid": both branches are standard normal, so university
    preferences are uniformly random and applications carry no signal
    about fit.  kind "gaussian": favorite-school applications draw
    Normal(delta, 1), all others Normal(0, 1).  kind "custom": caller
    supplies both samplers; they must be deterministic functions of the
    generator state.
    """

    kind: str = "iid"
    delta: float = 0.0
    special_sampler: SignalSampler | None = None
    regular_sampler: SignalSampler | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("iid", "gaussian", "custom"):
            raise ConfigurationError(f"unknown signal kind: {self.kind!r}")
        if self.kind == "gaussian" and not self.delta >= 0.0:
            raise ConfigurationError("gaussian signal shift must be >= 0")
        if self.kind == "iid" and self.delta != 0.0:
            raise ConfigurationError("iid signals take no shift")
        if self.kind == "custom" and (
            self.special_sampler is None or self.regular_sampler is None
        ):
            raise ConfigurationError("custom signals need both samplers")

    @classmethod
    def iid(cls) -> "SignalSpec":
        return cls(kind="iid")

    @classmethod
    def gaussian(cls, delta: float) -> "SignalSpec":
        return cls(kind="gaussian", delta=float(delta))

    @classmethod
    def custom(cls, special: SignalSampler, regular: SignalSampler) -> "SignalSpec":
        return cls(kind="custom", special_sampler=special, regular_sampler=regular)

    @property
    def is_iid_equivalent(self) -> bool:
        """True when both branches are the same distribution."""
        return self.kind == "iid" or (self.kind == "gaussian" and self.delta == 0.0)

    @property
    def delta_tag(self) -> float | None:
        """Shift value for tabular output, or None for custom samplers."""
        if self.kind == "custom":
            return None
        return float(self.delta)

    def draw(self, is_special: bool, rng: np.random.Generator) -> float:
        if self.kind == "custom":
            sampler = self.special_sampler if is_special else self.regular_sampler
            assert sampler is not None
            return float(sampler(rng))
        value = float(rng.standard_normal())
        if is_special and self.kind == "gaussian":
            value += self.delta
        return value

    def draw_batch(self, special: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One signal per entry of the boolean mask ``special``."""
        special = np.asarray(special, dtype=bool)
        if self.kind == "custom":
            out = np.empty(special.shape, dtype=np.float64)
            flat_mask = special.ravel()
            flat_out = out.ravel()
            for i, is_special in enumerate(flat_mask):
                flat_out[i] = self.draw(bool(is_special), rng)
            return out
        out = rng.standard_normal(special.shape)
        if self.kind == "gaussian" and self.delta != 0.0:
            out = out + self.delta * special
        return out

    def to_json_dict(self) -> dict[str, Any]:
        if self.kind == "custom":
            raise ConfigurationError("custom signal specs are not serializable")
        return {"kind": self.kind, "delta": self.delta}

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "SignalSpec":
        return cls(kind=data["kind"], delta=float(data.get("delta", 0.0)))


def draw_signal(spec: SignalSpec, is_special: bool, rng: np.random.Generator) -> float:
    """Sample the signal a university observes for one application."""
    return spec.draw(is_special, rng)


@dataclass(frozen=True)
class MarketConfig:
    """Scalar parameters of one market.

    n: number of students.  m_ratio: universities per student; m_ratio * n
    must be integral.  capacity: seats per university.  k: applications per
    student, 1 <= k <= m.  seed: root RNG seed, 0 <= seed < 2**64.
    """

    n: int
    m_ratio: float = 1.0
    capacity: int = 1
    k: int = 1
    signal: SignalSpec = SignalSpec()
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigurationError("n must be a positive integer")
        m_exact = self.m_ratio * self.n
        m = round(m_exact)
        if self.m_ratio <= 0 or abs(m_exact - m) > 1e-9 or m < 1:
            raise ConfigurationError(
                f"m_ratio * n must be a positive integer, got {m_exact}"
            )
        if not isinstance(self.capacity, int) or self.capacity < 1:
            raise ConfigurationError("capacity must be a positive integer")
        if not isinstance(self.k, int) or not 1 <= self.k <= m:
            raise ConfigurationError(f"k must satisfy 1 <= k <= {m}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < _MAX_SEED:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def m(self) -> int:
        return round(self.m_ratio * self.n)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "m_ratio": self.m_ratio,
            "capacity": self.capacity,
            "k": self.k,
            "signal": self.signal.to_json_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "MarketConfig":
        return cls(
            n=int(data["n"]),
            m_ratio=float(data.get("m_ratio", 1.0)),
            capacity=int(data.get("capacity", 1)),
            k=int(data.get("k", 1)),
            signal=SignalSpec.from_json_dict(data.get("signal", {"kind": "iid"})),
            seed=int(data.get("seed", 0)),
        )


def _rank_within_universities(
    uni: np.ndarray, signals: np.ndarray, tiebreaks: np.ndarray, m: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank applications within each university: 0 = highest signal.

    Ties on signal fall back to the per-application tiebreak (lower wins),
    which realizes a uniformly random ordering among equal signals.
    Returns (ranks, order, offsets) where ``order`` lists application
    indices grouped by university in preference order and ``offsets``
    delimits the groups.
    """
    order = np.lexsort((tiebreaks, -signals, uni))
    counts = np.bincount(uni, minlength=m)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    ranks_sorted = np.arange(uni.size, dtype=np.int64) - offsets[uni[order]]
    ranks = np.empty(uni.size, dtype=np.int64)
    ranks[order] = ranks_sorted
    return ranks, order, offsets


def _sample_pref_lists(n: int, m: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """n ordered samples of k distinct universities, uniform over orderings."""
    if k * max(k - 1, 1) <= m:
        # Rejection sampling: redraw rows containing duplicates.  Conditioned
        # on distinctness the rows are exactly uniform ordered samples.
        prefs = rng.integers(0, m, size=(n, k), dtype=np.int64)
        while True:
            srt = np.sort(prefs, axis=1)
            bad = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
            if not bad.any():
                return prefs
            prefs[bad] = rng.integers(0, m, size=(int(bad.sum()), k), dtype=np.int64)
    out = np.empty((n, k), dtype=np.int64)
    for s in range(n):
        out[s] = rng.permutation(m)[:k]
    return out


class MarketInstance:
    """One realized market: preference lists plus per-application signals.

    Immutable after construction.  ``prefs[s, r]`` is student ``s``'s
    rank-(r+1) university; ``signals[s, r]`` is the signal that university
    observed for the application; ``tiebreaks[s, r]`` orders equal signals.
    """

    __slots__ = (
        "config",
        "prefs",
        "signals",
        "tiebreaks",
        "uni_rank",
        "_uni_order",
        "_uni_offsets",
        "_signal_table",
        "_special_of",
    )

    def __init__(
        self,
        config: MarketConfig,
        prefs: np.ndarray,
        signals: np.ndarray,
        tiebreaks: np.ndarray,
    ) -> None:
        prefs = np.ascontiguousarray(prefs, dtype=np.int64)
        signals = np.ascontiguousarray(signals, dtype=np.float64)
        tiebreaks = np.ascontiguousarray(tiebreaks, dtype=np.float64)
        n, m, k = config.n, config.m, config.k
        if prefs.shape != (n, k) or signals.shape != (n, k) or tiebreaks.shape != (n, k):
            raise ConfigurationError("preference/signal tables must be (n, k)")
        if prefs.min(initial=0) < 0 or prefs.max(initial=0) >= m:
            raise ConfigurationError("university ids out of range")
        srt = np.sort(prefs, axis=1)
        if k > 1 and (srt[:, 1:] == srt[:, :-1]).any():
            raise ConfigurationError("a student lists the same university twice")

        self.config = config
        self.prefs = prefs
        self.signals = signals
        self.tiebreaks = tiebreaks
        ranks, order, offsets = _rank_within_universities(
            prefs.ravel(), signals.ravel(), tiebreaks.ravel(), m
        )
        self.uni_rank = ranks.reshape(n, k)
        self._uni_order = order
        self._uni_offsets = offsets
        self._signal_table: dict[tuple[int, int], float] | None = None
        self._special_of: dict[int, frozenset[int]] | None = None
        for arr in (self.prefs, self.signals, self.tiebreaks, self.uni_rank):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def m(self) -> int:
        return self.config.m

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def capacity(self) -> int:
        return self.config.capacity

    def applicants_of(self, university: int) -> np.ndarray:
        """Students that applied to ``university``, best signal first."""
        lo, hi = self._uni_offsets[university], self._uni_offsets[university + 1]
        return self._uni_order[lo:hi] // self.k

    def applicant_count(self, university: int) -> int:
        return int(self._uni_offsets[university + 1] - self._uni_offsets[university])

    @property
    def special_of(self) -> dict[int, frozenset[int]]:
        """For each university, the students whose favorite it is."""
        if self._special_of is None:
            table: dict[int, set[int]] = {u: set() for u in range(self.m)}
            for s, u in enumerate(self.prefs[:, 0]):
                table[int(u)].add(s)
            self._special_of = {u: frozenset(v) for u, v in table.items()}
        return self._special_of

    def signal(self, university: int, student: int) -> float:
        """Signal observed by ``university`` for ``student``'s application."""
        if self._signal_table is None:
            flat_u = self.prefs.ravel()
            flat_s = np.repeat(np.arange(self.n), self.k)
            self._signal_table = {
                (int(u), int(s)): float(v)
                for u, s, v in zip(flat_u, flat_s, self.signals.ravel())
            }
        return self._signal_table[(university, student)]

    def student_rank_of(self, student: int, university: int) -> int | None:
        """1-based rank of ``university`` on the student's list, or None."""
        row = self.prefs[student]
        hits = np.nonzero(row == university)[0]
        return int(hits[0]) + 1 if hits.size else None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MarketInstance):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.prefs, other.prefs)
            and np.array_equal(self.signals, other.signals)
            and np.array_equal(self.tiebreaks, other.tiebreaks)
        )

    def __repr__(self) -> str:
        return f"MarketInstance(n={self.n}, m={self.m}, k={self.k}, L={self.capacity})"

    def to_json_dict(self) -> dict[str, Any]:
        """Schema: config object, preference lists, sparse signal triples."""
        triples = [
            [int(self.prefs[s, r]), s, float(self.signals[s, r])]
            for s in range(self.n)
            for r in range(self.k)
        ]
        return {
            "config": self.config.to_json_dict(),
            "preferences": self.prefs.tolist(),
            "signals": triples,
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "MarketInstance":
        """Rebuild an instance from its JSON document.

        Tiebreaks are not part of the schema; they are re-derived
        deterministically from the config seed.  With continuous signal
        distributions ties have probability zero, so reloaded instances
        behave identically.
        """
        config = MarketConfig.from_json_dict(data["config"])
        prefs = np.asarray(data["preferences"], dtype=np.int64)
        table = {(int(u), int(s)): float(v) for u, s, v in data["signals"]}
        signals = np.empty_like(prefs, dtype=np.float64)
        for s in range(config.n):
            for r in range(config.k):
                signals[s, r] = table[(int(prefs[s, r]), s)]
        rng = make_rng(child_seed(config.seed, _TIEBREAK_STREAM))
        tiebreaks = rng.random((config.n, config.k))
        return cls(config, prefs, signals, tiebreaks)


def sample_market(config: MarketConfig, rng: np.random.Generator | None = None) -> MarketInstance:
    """Sample one market instance.

    With ``rng=None`` the generator is seeded from ``config.seed``, so
    identical configurations produce bit-identical instances.
    """
    if rng is None:
        rng = make_rng(config.seed)
    n, m, k = config.n, config.m, config.k
    prefs = _sample_pref_lists(n, m, k, rng)
    special = np.zeros((n, k), dtype=bool)
    special[:, 0] = True
    signals = config.signal.draw_batch(special, rng)
    tiebreaks = rng.random((n, k))
    return MarketInstance(config, prefs, signals, tiebreaks)


@dataclass(frozen=True)
class SeededProposalPlan:
    """Pre-made proposals per rank, with acceptance labels and owners.

    ``proposal_student`` is -1 for proposals that could not be assigned to
    any eligible student.  ``inconsistent`` flags students whose proposal
    record has a gap: they lack a rank-1 proposal, or their last proposal
    was rejected before rank k without a follow-up.
    """

    config: MarketConfig
    rank_fractions: tuple[float, ...]
    slack: float
    proposal_uni: np.ndarray
    proposal_rank: np.ndarray  # 1-based proposal type
    proposal_signal: np.ndarray
    proposal_tiebreak: np.ndarray
    proposal_accepted: np.ndarray
    proposal_student: np.ndarray
    inconsistent: np.ndarray  # (n,) bool

    @property
    def counts_per_rank(self) -> tuple[int, ...]:
        k = self.config.k
        counts = np.bincount(self.proposal_rank, minlength=k + 1)
        return tuple(int(c) for c in counts[1:])

    @property
    def inconsistent_students(self) -> tuple[int, ...]:
        return tuple(int(s) for s in np.flatnonzero(self.inconsistent))

    def accepted_partner_array(self) -> np.ndarray:
        """Student -> university map following the accepted proposals."""
        partner = np.full(self.config.n, -1, dtype=np.int64)
        mask = self.proposal_accepted & (self.proposal_student >= 0)
        partner[self.proposal_student[mask]] = self.proposal_uni[mask]
        return partner

    def assigned_rank_counts(self) -> np.ndarray:
        """Number of proposals assigned to each student (a rank prefix)."""
        assigned = self.proposal_student >= 0
        return np.bincount(self.proposal_student[assigned], minlength=self.config.n)


def _validate_rank_fractions(fractions: np.ndarray, k: int) -> None:
    if fractions.shape != (k,):
        raise ValueError(f"expected {k} rank fractions, got {fractions.shape}")
    if abs(fractions[0] - 1.0) > 1e-9:
        raise ValueError("the rank-1 fraction must be 1")
    if (fractions < -1e-12).any() or (fractions > 1 + 1e-12).any():
        raise ValueError("rank fractions must lie in [0, 1]")
    if (np.diff(fractions) > 1e-9).any():
        raise ValueError("rank fractions must be nonincreasing")


def build_seeded_plan(
    rank_fractions: Any,
    config: MarketConfig,
    rng: np.random.Generator | None = None,
    slack: float | None = None,
) -> SeededProposalPlan:
    """Draw pre-made proposals per rank and label acceptances.

    For each rank i, ``floor(fraction_i * n - slack)`` proposals are thrown
    at uniformly random universities (slack defaults to n**0.6).  Each
    university labels its top-``capacity`` proposals by signal "accepted".
    Rank-1 proposals are assigned to random students; rank-i proposals go
    to students whose rank-(i-1) proposal was rejected.  Students left
    without a follow-up proposal are flagged inconsistent.

    When a rank has more proposals than eligible students, accepted
    proposals are assigned first and the surplus stays unassigned; this
    keeps the accepted labels binding for the students that do hold them.
    """
    if rng is None:
        rng = make_rng(config.seed)
    fractions = np.asarray(rank_fractions, dtype=np.float64)
    n, m, k, L = config.n, config.m, config.k, config.capacity
    _validate_rank_fractions(fractions, k)
    if slack is None:
        slack = float(n) ** 0.6
    if slack < 0:
        raise ValueError("slack must be nonnegative")

    counts = np.maximum(np.floor(fractions * n - slack), 0.0).astype(np.int64)
    total = int(counts.sum())
    prop_uni = rng.integers(0, m, size=total, dtype=np.int64)
    prop_rank = np.repeat(np.arange(1, k + 1, dtype=np.int64), counts)
    prop_signal = config.signal.draw_batch(prop_rank == 1, rng)
    prop_tiebreak = rng.random(total)
    ranks_within, _, _ = _rank_within_universities(prop_uni, prop_signal, prop_tiebreak, m)
    accepted = ranks_within < L

    prop_student = np.full(total, -1, dtype=np.int64)
    inconsistent = np.zeros(n, dtype=bool)
    listed: list[set[int]] = [set() for _ in range(n)]

    offsets = np.concatenate(([0], np.cumsum(counts)))
    eligible = np.arange(n, dtype=np.int64)
    for i in range(k):
        props = np.arange(offsets[i], offsets[i + 1], dtype=np.int64)
        if eligible.size >= props.size:
            perm = rng.permutation(eligible.size)
            chosen = eligible[perm[: props.size]]
            inconsistent[eligible[perm[props.size:]]] = True
        else:
            acc = props[accepted[props]]
            rej = props[~accepted[props]]
            ordered = np.concatenate((rng.permutation(acc), rng.permutation(rej)))
            props = ordered[: eligible.size]
            chosen = rng.permutation(eligible)

        pair_props = [int(p) for p in props]
        pair_students = [int(s) for s in chosen]
        for idx in range(len(pair_props)):
            p, s = pair_props[idx], pair_students[idx]
            if prop_uni[p] not in listed[s]:
                continue
            # The target university already sits on this student's list;
            # swap owners with another pair that stays valid both ways.
            for _ in range(_SWAP_ATTEMPTS):
                j = int(rng.integers(len(pair_props)))
                if j == idx:
                    continue
                p2, s2 = pair_props[j], pair_students[j]
                if prop_uni[p] not in listed[s2] and prop_uni[p2] not in listed[s]:
                    pair_students[idx], pair_students[j] = s2, s
                    break
            else:
                pair_students[idx] = -1
                inconsistent[s] = True

        next_eligible: list[int] = []
        for p, s in zip(pair_props, pair_students):
            if s < 0:
                continue
            prop_student[p] = s
            listed[s].add(int(prop_uni[p]))
            if not accepted[p]:
                next_eligible.append(s)
        eligible = np.asarray(sorted(next_eligible), dtype=np.int64)

    for arr in (prop_uni, prop_rank, prop_signal, prop_tiebreak, accepted, prop_student, inconsistent):
        arr.setflags(write=False)
    return SeededProposalPlan(
        config=config,
        rank_fractions=tuple(float(f) for f in fractions),
        slack=float(slack),
        proposal_uni=prop_uni,
        proposal_rank=prop_rank,
        proposal_signal=prop_signal,
        proposal_tiebreak=prop_tiebreak,
        proposal_accepted=accepted,
        proposal_student=prop_student,
        inconsistent=inconsistent,
    )


def complete_instance(
    plan: SeededProposalPlan, rng: np.random.Generator | None = None
) -> MarketInstance:
    """Fill a seeded plan out into a full market instance.

    Assigned proposals become the prefix of each student's list, keeping
    their signals and tiebreaks.  Remaining ranks are drawn uniformly among
    unlisted universities; their signals come from the regular distribution
    except for a fresh rank-1 slot, which is a favorite-school application.
    """
    config = plan.config
    if rng is None:
        rng = make_rng(child_seed(config.seed, 1))
    n, m, k = config.n, config.m, config.k
    prefs = np.full((n, k), -1, dtype=np.int64)
    signals = np.zeros((n, k), dtype=np.float64)
    tiebreaks = np.zeros((n, k), dtype=np.float64)

    assigned = plan.proposal_student >= 0
    students = plan.proposal_student[assigned]
    ranks = plan.proposal_rank[assigned] - 1
    prefs[students, ranks] = plan.proposal_uni[assigned]
    signals[students, ranks] = plan.proposal_signal[assigned]
    tiebreaks[students, ranks] = plan.proposal_tiebreak[assigned]

    prefix_len = plan.assigned_rank_counts()
    small_market = m <= 4 * k
    for s in range(n):
        start = int(prefix_len[s])
        if start == k:
            continue
        taken = set(int(u) for u in prefs[s, :start])
        if small_market:
            fresh = [int(u) for u in rng.permutation(m) if int(u) not in taken]
            picks = fresh[: k - start]
        else:
            picks = []
            while len(picks) < k - start:
                u = int(rng.integers(m))
                if u not in taken:
                    picks.append(u)
                    taken.add(u)
        for offset, u in enumerate(picks):
            r = start + offset
            prefs[s, r] = u
            signals[s, r] = config.signal.draw(r == 0, rng)
            tiebreaks[s, r] = rng.random()

    return MarketInstance(config, prefs, signals, tiebreaks)
