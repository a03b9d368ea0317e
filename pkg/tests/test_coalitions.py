"""Coalitions, permutations, ordering specs, and consistent-permutation machinery."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from asymshap import (
    Coalition,
    CyclicOrderingError,
    EnumerationCapError,
    OrderingSpec,
    Permutation,
    SamplingBudgetError,
    ValidationError,
    WeightedOrdering,
    count_consistent,
    enumerate_consistent,
    is_consistent,
    random_ordering_spec,
    sample_consistent,
    sample_consistent_batch,
    spec_from_json,
    spec_to_json,
)


def oracle_consistent(order, spec):
    """Straight restatement of the consistency definition, independent of the library."""
    pos = {f: k for k, f in enumerate(order)}
    if spec.groups is not None:
        for a in range(len(spec.groups)):
            for b in range(a + 1, len(spec.groups)):
                for i in spec.groups[a]:
                    for j in spec.groups[b]:
                        if pos[i] > pos[j]:
                            return False
    return all(pos[i] < pos[j] for i, j in spec.edges)


def brute_force_consistent(spec):
    return {
        p for p in itertools.permutations(range(spec.n)) if oracle_consistent(p, spec)
    }


@st.composite
def ordering_specs(draw, max_n=5):
    n = draw(st.integers(min_value=2, max_value=max_n))
    kind = draw(st.sampled_from(["empty", "groups", "edges"]))
    if kind == "empty":
        return OrderingSpec(n)
    shuffled = draw(st.permutations(list(range(n))))
    if kind == "groups":
        n_cuts = draw(st.integers(min_value=0, max_value=n - 1))
        cuts = sorted(draw(st.permutations(list(range(1, n))))[:n_cuts])
        groups, start = [], 0
        for c in cuts + [n]:
            groups.append(tuple(shuffled[start:c]))
            start = c
        return OrderingSpec(n, groups=tuple(groups))
    # Edges oriented along a hidden base order are acyclic by construction.
    pos = {f: k for k, f in enumerate(shuffled)}
    pairs = draw(
        st.lists(
            st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(
                lambda e: e[0] != e[1]
            ),
            max_size=n,
        )
    )
    edges = frozenset(
        (i, j) if pos[i] < pos[j] else (j, i) for i, j in pairs
    )
    return OrderingSpec(n, edges=edges)


# ---------------------------------------------------------------- Coalition


class TestCoalition:
    def test_mask_round_trip_all_subsets(self):
        n = 6
        for mask in range(1 << n):
            c = Coalition.from_mask(mask, n)
            assert c.mask == mask
            assert c.members == frozenset(i for i in range(n) if mask >> i & 1)

    def test_complement_partitions_the_full_set(self):
        c = Coalition.of([0, 2], 4)
        comp = c.complement()
        assert c.members | comp.members == frozenset(range(4))
        assert c.members & comp.members == frozenset()
        assert comp.complement() == c

    def test_empty_and_full(self):
        assert Coalition.empty(3).mask == 0
        assert Coalition.full(3).mask == 0b111
        assert len(Coalition.full(3)) == 3

    def test_add_and_contains(self):
        c = Coalition.empty(4).add(2).add(0)
        assert 2 in c and 0 in c and 1 not in c
        assert c.mask == 0b101

    def test_set_semantics(self):
        assert Coalition.of([1, 1, 2], 4) == Coalition.of([2, 1], 4)

    def test_out_of_range_member_rejected(self):
        with pytest.raises(ValidationError):
            Coalition.of([3], 3)
        with pytest.raises(ValidationError):
            Coalition.of([-1], 3)


class TestPermutation:
    def test_positions_inverts_order(self):
        p = Permutation((2, 0, 1))
        assert p.positions() == (1, 2, 0)
        assert p.n == 3

    def test_non_bijection_rejected(self):
        with pytest.raises(ValidationError):
            Permutation((0, 0, 1))
        with pytest.raises(ValidationError):
            Permutation((0, 2))


# ---------------------------------------------------------------- OrderingSpec


class TestOrderingSpec:
    def test_groups_must_partition(self):
        with pytest.raises(ValidationError):
            OrderingSpec(3, groups=((0,), (1,)))  # feature 2 missing
        with pytest.raises(ValidationError):
            OrderingSpec(3, groups=((0, 1), (1, 2)))  # overlap
        with pytest.raises(ValidationError):
            OrderingSpec(3, groups=((0, 1, 2), ()))  # empty group
        with pytest.raises(ValidationError):
            OrderingSpec(2, groups=((0, 1, 2),))  # out of range

    def test_edges_validated(self):
        with pytest.raises(ValidationError):
            OrderingSpec(3, edges=frozenset({(0, 3)}))
        with pytest.raises(ValidationError):
            OrderingSpec(3, edges=frozenset({(1, 1)}))

    def test_edge_cycle_fails_at_construction(self):
        with pytest.raises(CyclicOrderingError):
            OrderingSpec(3, edges=frozenset({(0, 1), (1, 2), (2, 0)}))

    def test_group_edge_contradiction_is_a_cycle(self):
        # Groups put 1 before 0; the edge demands the opposite.
        with pytest.raises(CyclicOrderingError):
            OrderingSpec(2, groups=((1,), (0,)), edges=frozenset({(0, 1)}))

    def test_empty_spec_flag(self):
        assert OrderingSpec(4).is_empty
        assert not OrderingSpec(4, edges=frozenset({(0, 1)})).is_empty

    def test_reversed_flips_everything(self):
        spec = OrderingSpec(4, groups=((0, 1), (2, 3)), edges=frozenset({(0, 1)}))
        rev = spec.reversed()
        assert rev.groups == ((2, 3), (0, 1))
        assert rev.edges == frozenset({(1, 0)})
        assert rev.reversed() == spec

    def test_direction_round_trip(self):
        spec = OrderingSpec(3, edges=frozenset({(2, 0)}))
        w = WeightedOrdering(spec, "proximate")
        assert w.effective() == spec.reversed()
        assert w.flipped().direction == "distal"
        assert w.flipped().flipped() == w
        with pytest.raises(ValidationError):
            WeightedOrdering(spec, "sideways")

    def test_reversal_maps_consistent_set_bijectively(self):
        # Reversing the constraints maps each consistent permutation to its
        # mirror image; the two consistent sets have equal size.
        spec = OrderingSpec(4, groups=((0, 2), (1, 3)))
        forward = {p.order for p in enumerate_consistent(spec)}
        backward = {p.order for p in enumerate_consistent(spec.reversed())}
        assert backward == {tuple(reversed(o)) for o in forward}
        assert len(backward) == len(forward)


class TestSerialization:
    def test_round_trip(self):
        spec = OrderingSpec(4, groups=((0, 1), (2, 3)), edges=frozenset({(0, 2)}))
        again = spec_from_json(spec_to_json(WeightedOrdering(spec, "proximate")))
        assert again.spec == spec
        assert again.direction == "proximate"

    def test_direction_defaults_to_distal(self):
        w = spec_from_json('{"n": 2, "edges": [[0, 1]]}')
        assert w.direction == "distal"
        assert w.spec.edges == frozenset({(0, 1)})

    def test_malformed_json_rejected(self):
        with pytest.raises(ValidationError):
            spec_from_json("{not json")
        with pytest.raises(ValidationError):
            spec_from_json('{"groups": null}')  # n missing

    @given(ordering_specs())
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, spec):
        assert spec_from_json(spec_to_json(spec)).spec == spec


# ---------------------------------------------------------------- consistency


class TestIsConsistent:
    def test_single_edge_cases(self):
        spec = OrderingSpec(2, edges=frozenset({(0, 1)}))
        assert is_consistent(Permutation((0, 1)), spec)
        assert not is_consistent(Permutation((1, 0)), spec)

    def test_group_violation(self):
        spec = OrderingSpec(3, groups=((0,), (1, 2)))
        assert not is_consistent(Permutation((1, 0, 2)), spec)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            is_consistent(Permutation((0, 1)), OrderingSpec(3))

    @given(ordering_specs())
    @settings(max_examples=80, deadline=None)
    def test_matches_definition_on_every_permutation(self, spec):
        for order in itertools.permutations(range(spec.n)):
            assert is_consistent(Permutation(order), spec) == oracle_consistent(
                order, spec
            )


class TestEnumerate:
    def test_empty_spec_gives_all_permutations(self):
        got = {p.order for p in enumerate_consistent(OrderingSpec(2))}
        assert got == {(0, 1), (1, 0)}
        for n in range(1, 6):
            assert len(enumerate_consistent(OrderingSpec(n))) == math.factorial(n)

    def test_leading_singleton_group(self):
        spec = OrderingSpec(3, groups=((0,), (1, 2)))
        got = {p.order for p in enumerate_consistent(spec)}
        assert got == {(0, 1, 2), (0, 2, 1)}

    def test_two_group_partition_count(self):
        spec = OrderingSpec(4, groups=((0, 1), (2, 3)))
        assert len(enumerate_consistent(spec)) == 4

    def test_cap_enforced_and_configurable(self):
        with pytest.raises(EnumerationCapError):
            enumerate_consistent(OrderingSpec(11))
        with pytest.raises(EnumerationCapError):
            enumerate_consistent(OrderingSpec(5), cap=4)
        assert len(enumerate_consistent(OrderingSpec(3), cap=3)) == 6

    @given(ordering_specs())
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, spec):
        got = {p.order for p in enumerate_consistent(spec)}
        assert got == brute_force_consistent(spec)


class TestCount:
    def test_matches_enumeration(self):
        spec = OrderingSpec(4, edges=frozenset({(2, 0), (1, 3)}))
        assert count_consistent(spec) == len(enumerate_consistent(spec))

    def test_empty_spec(self):
        assert count_consistent(OrderingSpec(5)) == 120

    def test_total_order_chain(self):
        n = 6
        edges = frozenset((i, i + 1) for i in range(n - 1))
        assert count_consistent(OrderingSpec(n, edges=edges)) == 1

    def test_groups_only_closed_form(self):
        spec = OrderingSpec(5, groups=((0, 1), (2, 3, 4)))
        assert count_consistent(spec) == math.factorial(2) * math.factorial(3)

    def test_groups_only_closed_form_beats_the_cap(self):
        # 12 features is over the enumeration cap, but the ordered-partition
        # count is a product of factorials and needs no enumeration.
        spec = OrderingSpec(
            12, groups=(tuple(range(4)), tuple(range(4, 12)))
        )
        assert count_consistent(spec) == math.factorial(4) * math.factorial(8)
        assert count_consistent(spec) == 967680

    def test_edges_still_capped(self):
        with pytest.raises(EnumerationCapError):
            count_consistent(OrderingSpec(11, edges=frozenset({(0, 1)})))

    @given(ordering_specs())
    @settings(max_examples=40, deadline=None)
    def test_count_property(self, spec):
        assert count_consistent(spec) == len(brute_force_consistent(spec))


# ---------------------------------------------------------------- sampling


class TestSampling:
    def test_every_draw_is_consistent(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            spec = random_ordering_spec(int(rng.integers(2, 7)), rng)
            perm = sample_consistent(spec, rng)
            assert is_consistent(perm, spec)

    def test_batch_shape_and_consistency(self):
        spec = OrderingSpec(5, groups=((0, 4), (1, 2, 3)))
        rows = sample_consistent_batch(spec, 64, np.random.default_rng(0))
        assert rows.shape == (64, 5)
        for row in rows:
            assert is_consistent(Permutation(tuple(int(i) for i in row)), spec)

    def test_two_extension_spec_is_balanced(self):
        spec = OrderingSpec(3, groups=((0,), (1, 2)))
        rows = sample_consistent_batch(spec, 10_000, np.random.default_rng(5))
        n_first = int(np.sum(rows[:, 1] == 1))
        counts = [n_first, rows.shape[0] - n_first]
        assert stats.chisquare(counts).pvalue > 0.001

    def test_empty_spec_uniform_over_all_permutations(self):
        n = 4
        rows = sample_consistent_batch(OrderingSpec(n), 100_000, np.random.default_rng(11))
        keys = rows @ (n ** np.arange(n))
        counts = np.bincount(keys, minlength=n**n)
        observed = counts[counts > 0]
        assert observed.size == 24
        assert stats.chisquare(observed).pvalue > 0.001

    def test_edge_spec_uniform_over_consistent_set(self):
        spec = OrderingSpec(4, edges=frozenset({(2, 0), (2, 3)}))
        allowed = brute_force_consistent(spec)
        rows = sample_consistent_batch(spec, 40_000, np.random.default_rng(7))
        seen = {}
        for row in rows:
            seen[tuple(int(i) for i in row)] = seen.get(tuple(int(i) for i in row), 0) + 1
        assert set(seen) == allowed
        assert stats.chisquare(list(seen.values())).pvalue > 0.001

    def test_sample_size_must_be_positive(self):
        with pytest.raises(ValidationError):
            sample_consistent_batch(OrderingSpec(3), 0, np.random.default_rng(0))

    def test_rejection_budget_guard(self):
        # A full chain accepts 1 in n! uniform draws; a tiny budget trips the guard.
        n = 6
        edges = frozenset((i, i + 1) for i in range(n - 1))
        spec = OrderingSpec(n, edges=edges)
        with pytest.raises(SamplingBudgetError):
            sample_consistent_batch(spec, 50, np.random.default_rng(0), budget=1)

    def test_random_spec_generator_validates(self):
        with pytest.raises(ValidationError):
            random_ordering_spec(1, np.random.default_rng(0))
