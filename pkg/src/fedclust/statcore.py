"""Label-distribution statistics: normalized entropy, Hellinger distance and
the composite balance score used to rank device groupings.

Conventions used throughout:

- a *count vector* is a length-K sequence of non-negative integers, one entry
  per class of the experiment's alphabet;
- a *distribution* is a length-K vector of floats in [0, 1] summing to 1
  (within ``SUM_TOLERANCE``);
- a *score* is a plain float: finite scores are >= 1, and ``math.inf`` marks
  configurations containing a zero-entropy (single-class) group.

All reductions go through ``math.fsum`` so results do not depend on the
order of groups or classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ClassAlphabet:
    """Fixed, ordered list of class names shared by every distribution in an
    experiment."""

    labels: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("class labels must be unique")
        if len(self.labels) < 2:
            raise ValueError("alphabet needs at least 2 classes")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.labels)})

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"label {label!r} not in alphabet") from None

    def indices(self, labels: Iterable[str]) -> np.ndarray:
        return np.array([self.index(c) for c in labels], dtype=np.int64)


def _as_counts(counts: Sequence[int]) -> np.ndarray:
    arr = np.asarray(counts)
    if arr.ndim != 1:
        raise ValueError("count vector must be one-dimensional")
    if np.any(arr < 0):
        raise ValueError("counts must be non-negative")
    return arr.astype(np.int64)


def _as_distribution(probs: Sequence[float]) -> np.ndarray:
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("distribution must be one-dimensional")
    if np.any(arr < 0.0):
        raise ValueError("probabilities must be non-negative")
    total = math.fsum(arr.tolist())
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise ValueError(f"probabilities sum to {total!r}, expected 1")
    return arr


def distribution_from_counts(counts: Sequence[int]) -> np.ndarray:
    """Turn a per-class count vector into a probability vector (count / total)."""
    arr = _as_counts(counts)
    total = int(arr.sum())
    if total < 1:
        raise ValueError("empty dataset: all class counts are zero")
    return arr / float(total)


def pooled_distribution(members: Sequence[Sequence[int]]) -> np.ndarray:
    """Distribution of the samples pooled from several count vectors.

    Equivalent to summing the member counts element-wise and normalizing.
    """
    if len(members) == 0:
        raise ValueError("cannot pool an empty member list")
    stacked = [_as_counts(m) for m in members]
    sizes = {len(m) for m in stacked}
    if len(sizes) != 1:
        raise ValueError("member count vectors have mismatched lengths")
    return distribution_from_counts(np.sum(stacked, axis=0))


def normalized_entropy(probs: Sequence[float], alphabet_size: int) -> float:
    """Shannon entropy of ``probs`` divided by ln(alphabet_size).

    Uses the convention 0*ln(0) = 0, so absent classes contribute nothing.
    Returns a value in [0, 1]: 1 for the uniform distribution, 0 for a
    single-class (one-hot) distribution.
    """
    if alphabet_size < 2:
        raise ValueError("entropy normalization needs an alphabet of size >= 2")
    p = _as_distribution(probs)
    if len(p) != alphabet_size:
        raise ValueError(
            f"distribution has {len(p)} entries, alphabet has {alphabet_size}"
        )
    positive = p[p > 0.0]
    if len(positive) == 1:
        return 0.0
    if positive.min() == positive.max() and len(positive) == alphabet_size:
        # Exactly uniform: entropy is ln(K)/ln(K) by definition. Short-circuit
        # so the minimum-score identities hold exactly in floating point.
        return 1.0
    raw = -math.fsum((positive * np.log(positive)).tolist())
    return min(raw / math.log(alphabet_size), 1.0)


def hellinger(p: Sequence[float], q: Sequence[float]) -> float:
    """Hellinger distance between two discrete distributions.

    sqrt(sum_i (sqrt(p_i) - sqrt(q_i))^2 / 2); symmetric, in [0, 1], and 1
    exactly when the supports are disjoint.
    """
    pa = _as_distribution(p)
    qa = _as_distribution(q)
    if len(pa) != len(qa):
        raise ValueError("distributions must share one alphabet")
    sq = (np.sqrt(pa) - np.sqrt(qa)) ** 2
    return min(math.sqrt(math.fsum(sq.tolist()) / 2.0), 1.0)


def similarity_score(groups: Sequence[Sequence[float]], alphabet_size: int) -> float:
    """Balance score of a grouping, given each group's label distribution.

    The score is the mean inverse normalized entropy of the groups plus the
    mean Hellinger distance over all group pairs (defined as 0 for a single
    group, which has no pairs). Lower is better; the minimum is 1, reached
    exactly when every group is uniform. If any group has zero entropy the
    score is ``math.inf``, which ranks such configurations worst.
    """
    if len(groups) == 0:
        raise ValueError("cannot score an empty group list")
    dists = [_as_distribution(g) for g in groups]
    entropies = [normalized_entropy(g, alphabet_size) for g in dists]
    if any(h == 0.0 for h in entropies):
        return math.inf
    count = len(dists)
    first = math.fsum(1.0 / h for h in entropies) / count
    if count == 1:
        return first
    pair_dists = [
        hellinger(dists[i], dists[j])
        for i in range(count)
        for j in range(i + 1, count)
    ]
    second = math.fsum(pair_dists) / math.comb(count, 2)
    return first + second
