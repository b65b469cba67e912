import math

import numpy as np
import pytest

from fedclust.partition import (
    Partition,
    SearchConfig,
    enumerate_equal_partitions,
    equal_partition_count,
    exhaustive_best,
    random_equal_partition,
    score_partition,
    select_clusters,
)

# four devices holding a single class each: two of class A, two of class B
ONE_HOT_AABB = [[10, 0], [10, 0], [0, 10], [0, 10]]


def random_counts(rng, devices, classes):
    counts = rng.integers(0, 50, size=(devices, classes))
    counts[:, 0] += 1  # no empty devices
    return counts


class TestPartitionType:
    def test_validates_coverage(self):
        with pytest.raises(ValueError):
            Partition(((0, 1), (1, 2)), 3)  # overlap
        with pytest.raises(ValueError):
            Partition(((0, 1),), 3)  # missing index
        with pytest.raises(ValueError):
            Partition(((0, 1), ()), 2)  # empty group

    def test_canonical_form(self):
        a = Partition(((3, 1), (0, 2)), 4).canonical()
        b = Partition(((2, 0), (1, 3)), 4).canonical()
        assert a.groups == b.groups == ((0, 2), (1, 3))


class TestRandomEqualPartition:
    def test_two_devices_two_groups_is_forced(self):
        rng = np.random.default_rng(0)
        partition = random_equal_partition(2, 2, rng)
        assert partition.canonical().groups == ((0,), (1,))

    def test_single_group(self):
        rng = np.random.default_rng(1)
        assert random_equal_partition(4, 1, rng).groups == ((0, 1, 2, 3),)

    def test_sixteen_devices_four_groups(self):
        rng = np.random.default_rng(2)
        partition = random_equal_partition(16, 4, rng)
        assert all(len(g) == 4 for g in partition.groups)
        assert sorted(i for g in partition.groups for i in g) == list(range(16))

    def test_rejects_nondividing_group_count(self):
        with pytest.raises(ValueError):
            random_equal_partition(10, 3, np.random.default_rng(0))

    def test_deterministic_for_a_seed(self):
        a = random_equal_partition(12, 3, np.random.default_rng(99))
        b = random_equal_partition(12, 3, np.random.default_rng(99))
        assert a.groups == b.groups


class TestEnumeration:
    @pytest.mark.parametrize(
        "devices,groups,expected", [(4, 2, 3), (2, 2, 1), (6, 3, 15), (6, 2, 10), (8, 4, 105)]
    )
    def test_counts(self, devices, groups, expected):
        partitions = list(enumerate_equal_partitions(devices, groups))
        assert len(partitions) == expected
        assert equal_partition_count(devices, groups) == expected
        # all distinct after canonicalization and all valid
        assert len({p.canonical().groups for p in partitions}) == expected

    def test_rejects_invalid_shape(self):
        with pytest.raises(ValueError):
            list(enumerate_equal_partitions(5, 2))


class TestScorePartition:
    def test_balanced_grouping_reaches_minimum(self):
        scored = score_partition(Partition(((0, 2), (1, 3)), 4), ONE_HOT_AABB)
        assert scored.score == 1.0

    def test_single_class_groups_are_infinite(self):
        scored = score_partition(Partition(((0, 1), (2, 3)), 4), ONE_HOT_AABB)
        assert scored.score == math.inf

    def test_single_group_is_finite_without_pairwise_term(self):
        scored = score_partition(Partition(((0, 1, 2, 3),), 4), ONE_HOT_AABB)
        assert scored.score == 1.0  # pooled to uniform, no pairs

    def test_rejects_count_mismatch(self):
        with pytest.raises(ValueError):
            score_partition(Partition(((0, 1),), 2), ONE_HOT_AABB)

    def test_group_relabeling_invariance(self):
        rng = np.random.default_rng(53)
        counts = random_counts(rng, 6, 4)
        partition = Partition(((0, 5), (1, 3), (2, 4)), 6)
        reordered = Partition(((2, 4), (0, 5), (1, 3)), 6)
        assert score_partition(partition, counts).score == score_partition(reordered, counts).score

    def test_device_reordering_invariance(self):
        rng = np.random.default_rng(59)
        counts = random_counts(rng, 6, 3)
        perm = rng.permutation(6)
        remapped_counts = counts[perm]
        inverse = np.argsort(perm)
        partition = Partition(((0, 1, 2), (3, 4, 5)), 6)
        remapped = Partition(
            tuple(tuple(int(inverse[i]) for i in g) for g in partition.groups), 6
        )
        assert (
            score_partition(partition, counts).score
            == score_partition(remapped, remapped_counts).score
        )


class TestSelectClusters:
    def test_covers_best_and_worst_on_tiny_space(self):
        config = SearchConfig(realizations=60, group_count=2, seed=0, dedup=True)
        best, worst = select_clusters(ONE_HOT_AABB, config)
        assert best.score == 1.0
        assert worst.score == math.inf

    def test_identical_devices_make_every_partition_equal(self):
        counts = [[4, 4, 2]] * 6
        best, worst = select_clusters(counts, SearchConfig(realizations=40, group_count=3, seed=1))
        assert best.score == worst.score

    def test_deterministic(self):
        rng = np.random.default_rng(61)
        counts = random_counts(rng, 8, 4)
        config = SearchConfig(realizations=100, group_count=4, seed=42)
        first = select_clusters(counts, config)
        second = select_clusters(counts, config)
        assert first[0].partition.groups == second[0].partition.groups
        assert first[0].score == second[0].score
        assert first[1].partition.groups == second[1].partition.groups
        assert first[1].score == second[1].score

    def test_best_not_worse_than_worst(self):
        rng = np.random.default_rng(67)
        for _ in range(10):
            counts = random_counts(rng, 8, 3)
            best, worst = select_clusters(
                counts, SearchConfig(realizations=50, group_count=2, seed=int(rng.integers(1000)))
            )
            assert best.score <= worst.score

    def test_tie_break_prefers_lower_realization_index(self):
        counts = [[4, 4, 2]] * 4  # every partition ties
        best, worst = select_clusters(counts, SearchConfig(realizations=30, group_count=2, seed=3))
        assert best.realization_index == 0
        assert worst.realization_index == 0


class TestExhaustiveBest:
    def test_one_hot_instance(self):
        scored = exhaustive_best(ONE_HOT_AABB, 2)
        assert scored.score == 1.0
        assert scored.partition.canonical().groups == ((0, 2), (1, 3))

    def test_unique_partition(self):
        scored = exhaustive_best([[3, 1], [2, 2]], 2)
        assert scored.partition.canonical().groups == ((0,), (1,))

    def test_rejects_instances_over_cap(self):
        with pytest.raises(ValueError):
            exhaustive_best(ONE_HOT_AABB, 2, cap=2)

    @pytest.mark.parametrize("devices,groups", [(4, 2), (6, 3), (8, 2), (8, 4)])
    def test_random_search_with_full_coverage_matches_oracle(self, devices, groups):
        rng = np.random.default_rng(1000 + devices * 10 + groups)
        for trial in range(3):
            counts = random_counts(rng, devices, int(rng.integers(2, 6)))
            total = equal_partition_count(devices, groups)
            config = SearchConfig(
                realizations=total, group_count=groups, seed=trial, dedup=True
            )
            best, _ = select_clusters(counts, config)
            oracle = exhaustive_best(counts, groups)
            assert best.score == oracle.score

    def test_matches_search_on_synthetic_eight_devices(self):
        rng = np.random.default_rng(71)
        counts = random_counts(rng, 8, 4)
        best, _ = select_clusters(
            counts, SearchConfig(realizations=105, group_count=4, seed=5, dedup=True)
        )
        assert best.score == exhaustive_best(counts, 4).score
