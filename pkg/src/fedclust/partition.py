"""Device-to-group partitions: random generation, random search ranked by the
balance score, and exhaustive enumeration as a ground-truth oracle.

A partition of ``device_count`` devices is a set of disjoint, non-empty groups
of device indices covering ``range(device_count)``. The random search draws a
configured number of partitions, scores each by pooling the member devices'
label counts, and keeps the lowest- and highest-scoring realizations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterator, Sequence

import numpy as np

from .statcore import pooled_distribution, similarity_score

DEFAULT_REALIZATIONS = 1000
DEFAULT_ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class Partition:
    """Disjoint groups of device indices covering ``range(device_count)``."""

    groups: tuple[tuple[int, ...], ...]
    device_count: int

    def __post_init__(self):
        seen: set[int] = set()
        for group in self.groups:
            if len(group) == 0:
                raise ValueError("partition contains an empty group")
            seen.update(group)
        total = sum(len(g) for g in self.groups)
        if total != len(seen) or seen != set(range(self.device_count)):
            raise ValueError(
                "groups must be disjoint and cover every device index exactly once"
            )

    @property
    def group_count(self) -> int:
        return len(self.groups)

    def canonical(self) -> "Partition":
        """Order-normalized copy: members sorted within groups, groups sorted
        by their smallest member. Two partitions are the same grouping iff
        their canonical forms are equal."""
        groups = tuple(sorted((tuple(sorted(g)) for g in self.groups), key=lambda g: g[0]))
        return Partition(groups, self.device_count)


@dataclass(frozen=True)
class ScoredRealization:
    partition: Partition
    score: float
    realization_index: int


@dataclass(frozen=True)
class SearchConfig:
    """Parameters of the random partition search.

    ``realizations`` random partitions are drawn (with repeats unless
    ``dedup`` is set, in which case sampling continues until that many
    distinct groupings have been seen, or the space is exhausted).
    """

    realizations: int = DEFAULT_REALIZATIONS
    group_count: int = 2
    seed: int = 0
    equal_sizes: bool = True
    dedup: bool = False

    def __post_init__(self):
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.group_count < 1:
            raise ValueError("group_count must be >= 1")


def _check_equal_sizes(device_count: int, group_count: int) -> int:
    if group_count < 1 or device_count < 1:
        raise ValueError("need at least one device and one group")
    if device_count % group_count != 0:
        raise ValueError(
            f"{group_count} equal-size groups do not divide {device_count} devices"
        )
    return device_count // group_count


def equal_partition_count(device_count: int, group_count: int) -> int:
    """Number of ways to split ``device_count`` devices into ``group_count``
    unordered groups of equal size: M! / ((M/N)!^N * N!)."""
    size = _check_equal_sizes(device_count, group_count)
    return math.factorial(device_count) // (
        math.factorial(size) ** group_count * math.factorial(group_count)
    )


def random_equal_partition(
    device_count: int, group_count: int, rng: np.random.Generator
) -> Partition:
    """Uniformly random split into equal-size groups: shuffle, then chunk."""
    size = _check_equal_sizes(device_count, group_count)
    order = rng.permutation(device_count)
    groups = tuple(
        tuple(int(i) for i in order[g * size : (g + 1) * size])
        for g in range(group_count)
    )
    return Partition(groups, device_count)


def enumerate_equal_partitions(device_count: int, group_count: int) -> Iterator[Partition]:
    """Yield every equal-size partition exactly once (groups unordered).

    Each group is anchored on the smallest index it contains, which avoids
    generating the same grouping in multiple group orders.
    """
    size = _check_equal_sizes(device_count, group_count)

    def recurse(remaining: tuple[int, ...], acc: tuple[tuple[int, ...], ...]):
        if not remaining:
            yield Partition(acc, device_count)
            return
        anchor, rest = remaining[0], remaining[1:]
        for others in combinations(rest, size - 1):
            group = (anchor,) + others
            left = tuple(i for i in rest if i not in others)
            yield from recurse(left, acc + (group,))

    yield from recurse(tuple(range(device_count)), ())


def score_partition(
    partition: Partition,
    device_counts: Sequence[Sequence[int]],
    realization_index: int = 0,
) -> ScoredRealization:
    """Score a partition: pool each group's member label counts, then apply
    the balance score over the pooled distributions."""
    if len(device_counts) != partition.device_count:
        raise ValueError(
            f"got {len(device_counts)} count vectors for "
            f"{partition.device_count} devices"
        )
    alphabet_size = len(device_counts[0])
    pooled = [
        pooled_distribution([device_counts[i] for i in group])
        for group in partition.groups
    ]
    score = similarity_score(pooled, alphabet_size)
    return ScoredRealization(partition, score, realization_index)


def _sample_partitions(
    device_count: int, config: SearchConfig, rng: np.random.Generator
) -> list[Partition]:
    if not config.dedup:
        return [
            random_equal_partition(device_count, config.group_count, rng)
            for _ in range(config.realizations)
        ]
    # Distinct groupings only: resample until the target is met. The target
    # is capped by the size of the partition space so full coverage always
    # terminates; the attempt cap guards against pathological streaks.
    total = equal_partition_count(device_count, config.group_count)
    target = min(config.realizations, total)
    seen: set[tuple[tuple[int, ...], ...]] = set()
    out: list[Partition] = []
    attempts = 0
    max_attempts = 1000 * target * max(1, math.ceil(math.log(total + 1)))
    while len(out) < target and attempts < max_attempts:
        attempts += 1
        candidate = random_equal_partition(device_count, config.group_count, rng).canonical()
        if candidate.groups not in seen:
            seen.add(candidate.groups)
            out.append(candidate)
    return out


def select_clusters(
    device_counts: Sequence[Sequence[int]], config: SearchConfig
) -> tuple[ScoredRealization, ScoredRealization]:
    """Random search over partitions: draw, score, rank.

    Returns the (best, worst) = (lowest, highest) scoring realizations.
    Ties at either end resolve to the lower realization index, so results
    are fully reproducible for a given seed.
    """
    if not config.equal_sizes:
        raise ValueError("random search currently requires equal-size groups")
    device_count = len(device_counts)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    sampled = _sample_partitions(device_count, config, rng)
    scored = [
        score_partition(partition, device_counts, realization_index=index)
        for index, partition in enumerate(sampled)
    ]
    best = min(scored, key=lambda r: (r.score, r.realization_index))
    worst_score = max(r.score for r in scored)
    worst = min(
        (r for r in scored if r.score == worst_score),
        key=lambda r: r.realization_index,
    )
    return best, worst


def exhaustive_best(
    device_counts: Sequence[Sequence[int]],
    group_count: int,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> ScoredRealization:
    """Globally minimal-score equal-size partition, by full enumeration.

    Intended as a brute-force oracle for the random search at small scale;
    refuses instances whose partition count exceeds ``cap``. Ties keep the
    first partition in enumeration order.
    """
    device_count = len(device_counts)
    total = equal_partition_count(device_count, group_count)
    if total > cap:
        raise ValueError(
            f"{total} partitions exceed the enumeration cap of {cap}"
        )
    best: ScoredRealization | None = None
    for index, partition in enumerate(enumerate_equal_partitions(device_count, group_count)):
        scored = score_partition(partition, device_counts, realization_index=index)
        if best is None or scored.score < best.score:
            best = scored
    assert best is not None
    return best
