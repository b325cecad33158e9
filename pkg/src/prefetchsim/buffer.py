"""Scored persistent buffer of remote node features.

The buffer outlives minibatches and epochs. Each entry carries a score that
rewards recent access and decays geometrically while idle; entries whose
score drops below the staleness threshold become eviction candidates. The
policy deliberately penalizes stasis rather than raw infrequency: a node
accessed long ago but often is no safer than one accessed rarely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "ScoringPolicy",
    "PrefetchBuffer",
    "ReplacementOutcome",
]


@dataclass(frozen=True)
class ScoringPolicy:
    """Score bookkeeping knobs.

    access_increment: added to an entry's score on every access.
    decay_factor: multiplier applied to entries unaccessed in a round.
    stale_threshold: entries strictly below this are stale.
    """

    access_increment: float = 1.0
    decay_factor: float = 0.95
    stale_threshold: float = 0.95

    def __post_init__(self) -> None:
        if self.access_increment <= 0:
            raise ValueError("access_increment must be > 0")
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must be in (0, 1)")
        if self.stale_threshold <= 0:
            raise ValueError("stale_threshold must be > 0")


@dataclass
class ReplacementOutcome:
    """What one replacement attempt did."""

    skipped: bool
    evicted: list[int] = field(default_factory=list)
    inserted: list[int] = field(default_factory=list)
    replaced_pct: float = 0.0


class PrefetchBuffer:
    """Fixed-capacity score-tracked set of remote node ids.

    Entries iterate in insertion order (dict semantics), which fixes the
    floating-point operation order and keeps runs byte-reproducible.
    """

    def __init__(self, capacity: int, policy: ScoringPolicy | None = None) -> None:
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.policy = policy or ScoringPolicy()
        self.scores: dict[int, float] = {}

    def __len__(self) -> int:
        return len(self.scores)

    def __contains__(self, node: int) -> bool:
        return node in self.scores

    def keys(self) -> set[int]:
        return set(self.scores)

    def record_access(self, nodes: set[int]) -> None:
        """Bump scores of accessed entries. Every node must be buffered."""
        inc = self.policy.access_increment
        for v in nodes:
            if v not in self.scores:
                raise ValueError(f"node {v} not in buffer")
            self.scores[v] += inc

    def decay_unaccessed(self, accessed: set[int]) -> None:
        """Multiply scores of entries outside ``accessed`` by the decay factor."""
        decay = self.policy.decay_factor
        for v in self.scores:
            if v not in accessed:
                self.scores[v] *= decay

    def stale_set(self) -> set[int]:
        """Entries with score strictly below the staleness threshold."""
        thr = self.policy.stale_threshold
        return {v for v, s in self.scores.items() if s < thr}

    def hit_rate(self, sampled_remote: set[int]) -> tuple[float, bool]:
        """Percent of sampled remote nodes found in the buffer.

        Returns ``(pct, no_sample)``; an empty remote sample yields
        ``(0.0, True)`` so callers can tell "no demand" from "all missed".
        """
        if not sampled_remote:
            return 0.0, True
        hits = len(sampled_remote & self.scores.keys())
        return 100.0 * hits / len(sampled_remote), False

    def apply_replacement(self, incoming: list[int]) -> ReplacementOutcome:
        """Evict all stale entries, then admit ``incoming`` (caller-ranked,
        best first) into the freed plus any spare capacity.

        Skips outright when the buffer is full and nothing is stale: churn
        without a stale victim would only destroy still-useful entries.
        Already-buffered candidates are ignored. New entries start at the
        access increment (fresh this round, exempt from this round's decay).
        """
        stale = self.stale_set()
        if not stale and len(self.scores) >= self.capacity:
            return ReplacementOutcome(skipped=True)

        evicted = sorted(stale)
        for v in evicted:
            del self.scores[v]

        inserted: list[int] = []
        spare = self.capacity - len(self.scores)
        for v in incoming:
            if spare <= 0:
                break
            if v in self.scores:
                continue
            self.scores[v] = self.policy.access_increment
            inserted.append(v)
            spare -= 1

        replaced_pct = 100.0 * len(evicted) / self.capacity if self.capacity else 0.0
        return ReplacementOutcome(
            skipped=False,
            evicted=evicted,
            inserted=inserted,
            replaced_pct=replaced_pct,
        )
