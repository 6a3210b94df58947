import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fairrobust.dataset import GROUPS, GroupKey
from fairrobust.selection import (
    KNAPSACK,
    ORIGINAL,
    SelectionProblem,
    SelectionResult,
    all_masks,
    check_feasible,
    dump,
    exact_select,
    feasible_mask,
    greedy_select,
    knapsack_feasible_mask,
    load_dump,
    selected_loss,
    selected_profit,
    to_knapsack,
    trimmed_select,
)


def lam(l11=0.5, l01=0.5):
    return {GroupKey(1, 1): l11, GroupKey(1, 0): 1 - l11, GroupKey(0, 1): l01, GroupKey(0, 0): 1 - l01}


def problem_from_groups(losses, groups, tau, lambdas):
    y, z = np.array(groups).T
    return SelectionProblem(losses, y, z, tau, lambdas)


@st.composite
def problems(draw, n_min=1, n_max=12):
    n = draw(st.integers(n_min, n_max))
    losses = draw(st.lists(st.floats(0, 5, allow_nan=False), min_size=n, max_size=n))
    y = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    z = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    k = draw(st.integers(1, n))
    tau = k / n if draw(st.booleans()) else draw(st.floats(k / n, 1.0))
    # caps on a coarse grid keep instances clear of the 1e-9 slack tolerance
    l11 = draw(st.integers(0, 10_000)) / 10_000
    l01 = draw(st.integers(0, 10_000)) / 10_000
    return SelectionProblem(losses, y, z, tau, lam(l11, l01))


SIX = problem_from_groups(
    [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
    [(1, 1), (1, 0), (1, 1), (1, 0), (0, 0), (0, 1)],
    4 / 6,
    lam(0.5, 0.5),
)


class TestProblem:
    def test_budget_floor_guard(self):
        p = SelectionProblem(np.zeros(2000), np.zeros(2000), np.zeros(2000), 0.9, lam())
        assert p.budget == 1800

    def test_validation(self):
        with pytest.raises(ValueError):
            SelectionProblem([0.1, np.nan], [0, 1], [0, 1], 1.0, lam())
        with pytest.raises(ValueError):
            SelectionProblem([0.1, 0.2], [0, 1], [0, 1], 0.2, lam())
        with pytest.raises(ValueError):
            SelectionProblem([0.1, 0.2], [0, 1], [0], 1.0, lam())


class TestKnapsack:
    def test_equal_losses_zero_profit(self):
        ks = to_knapsack(SelectionProblem([0.3] * 5, [0, 1, 0, 1, 1], [1, 1, 0, 0, 1], 1.0, lam()))
        assert np.all(ks.profits == 0)

    def test_weights_case_split(self):
        p = SelectionProblem([0.1, 0.2, 0.3], [1, 1, 0], [1, 0, 1], 1.0, lam(l11=0.3))
        ks = to_knapsack(p)
        assert ks.constraint_weights[GroupKey(1, 1)].tolist() == pytest.approx([1.7, 0.7, 1.0])
        assert ks.constraint_weights[GroupKey(0, 1)][0] == 1.0
        assert ks.constraint_weights[GroupKey(0, 0)][0] == 1.0
        assert all(c == pytest.approx(3.0) for c in ks.capacities.values())

    @settings(max_examples=100, deadline=None)
    @given(problems())
    def test_weights_in_allowed_set(self, p):
        ks = to_knapsack(p)
        assert np.all(ks.profits >= 0)
        for g in GROUPS:
            allowed = np.array([1.0, 1 - p.lambdas[g], 2 - p.lambdas[g]])
            w = ks.constraint_weights[g]
            assert np.all(np.min(np.abs(w[:, None] - allowed[None, :]), axis=1) < 1e-12)

    @settings(max_examples=100, deadline=None)
    @given(problems(n_max=10))
    def test_weights_encode_slack(self, p):
        # vectorized slack bookkeeping and the raw weights agree on every subset
        masks = all_masks(p.n)
        np.testing.assert_array_equal(
            feasible_mask(masks, p, KNAPSACK) | (masks.sum(axis=1) > p.budget),
            knapsack_feasible_mask(masks, to_knapsack(p)) | (masks.sum(axis=1) > p.budget),
        )

    @settings(max_examples=100, deadline=None)
    @given(problems(n_max=10))
    def test_systems_agree_at_full_capacity(self, p):
        # the rearranged constraints are exact whenever |S| = tau*n
        masks = all_masks(p.n)
        full = np.abs(masks.sum(axis=1) - p.capacity) < 1e-9
        np.testing.assert_array_equal(feasible_mask(masks[full], p, ORIGINAL), feasible_mask(masks[full], p, KNAPSACK))

    @settings(max_examples=100, deadline=None)
    @given(problems(n_max=10))
    def test_original_inside_knapsack(self, p):
        masks = all_masks(p.n)
        orig = feasible_mask(masks, p, ORIGINAL)
        assert not np.any(orig & ~feasible_mask(masks, p, KNAPSACK))

    @settings(max_examples=50, deadline=None)
    @given(problems(n_max=10), st.lists(st.integers(0, 1), min_size=10, max_size=10))
    def test_objective_transform(self, p, bits):
        sel = SelectionResult.from_indices(np.flatnonzero(bits[: p.n]), p)
        total = selected_profit(sel, p) + selected_loss(sel, p)
        assert total == pytest.approx(sel.budget_used * p.losses.max(), abs=1e-9)


class TestGreedy:
    def test_six_sample_instance(self):
        sel = greedy_select(SIX)
        assert sel.selected.tolist() == [0, 1, 2, 3]
        assert check_feasible(sel, SIX)
        ex = exact_select(SIX)
        assert ex.selected.tolist() == [0, 1, 2, 3]
        assert selected_loss(sel, SIX) == pytest.approx(selected_loss(ex, SIX))

    def test_all_selected_at_proportions(self):
        rng = np.random.default_rng(0)
        y = np.array([0, 0, 0, 1, 1, 1, 1, 0])
        z = np.array([0, 1, 1, 0, 1, 1, 1, 0])
        lambdas = lam(l11=3 / 4, l01=2 / 4)
        p = SelectionProblem(rng.random(8), y, z, 1.0, lambdas)
        assert greedy_select(p).budget_used == 8
        ex = exact_select(p)
        assert ex.budget_used == 8 and selected_loss(ex, p) == pytest.approx(p.losses.sum())

    def test_candidate_counted_at_boundary(self):
        # after ids 0 and 1 the (1,1) knapsack load sits exactly at capacity 2;
        # the third (1,1) sample would push it to 3.5
        p = problem_from_groups([0.1, 0.2, 0.3, 0.9], [(1, 1), (1, 0), (1, 1), (1, 0)], 0.5, lam(l11=0.5))
        sel = greedy_select(p)
        assert sel.selected.tolist() == [0, 1]
        assert check_feasible(sel, p, KNAPSACK).slacks["y1z1"] == pytest.approx(0.0)

    def test_budget_blocks(self):
        p = SelectionProblem([0.5, 0.1, 0.3], [0, 0, 0], [0, 0, 0], 2 / 3, lam(l01=0.0))
        assert greedy_select(p).selected.tolist() == [1, 2]

    def test_ties_by_index(self):
        p = SelectionProblem([0.2] * 6, [0] * 6, [0] * 6, 0.5, lam(l01=0.0))
        assert greedy_select(p).selected.tolist() == [0, 1, 2]

    @settings(max_examples=200, deadline=None)
    @given(problems(n_max=30))
    def test_knapsack_feasible_and_within_budget(self, p):
        sel = greedy_select(p)
        assert sel.budget_used <= p.budget
        assert check_feasible(sel, p, KNAPSACK)
        assert sum(sel.class_counts.values()) == sel.budget_used
        assert np.all(np.diff(sel.selected) > 0)

    @settings(max_examples=100, deadline=None)
    @given(problems(n_max=30))
    def test_full_budget_meets_original_caps(self, p):
        sel = greedy_select(p)
        assume(abs(sel.budget_used - p.capacity) < 1e-9)
        assert check_feasible(sel, p, ORIGINAL)

    @settings(max_examples=100, deadline=None)
    @given(problems(n_max=10))
    def test_never_beats_exact(self, p):
        ex = exact_select(p, system=KNAPSACK)
        assert selected_profit(greedy_select(p), p) <= selected_profit(ex, p) + 1e-9

    @settings(max_examples=100, deadline=None)
    @given(problems(n_max=30), st.floats(0, 1))
    def test_budget_monotone_in_tau(self, p, t):
        bigger = SelectionProblem(p.losses, p.labels, p.sensitive, p.tau + t * (1 - p.tau), p.lambdas)
        assert bigger.budget >= p.budget and bigger.capacity >= p.capacity

    def test_size_not_monotone_in_tau(self):
        # a larger capacity admits the 1.34-loss (0,0) sample earlier in the pass,
        # which then crowds out both (0,1) samples
        groups = [(0, 0), (1, 1), (0, 0), (0, 1), (0, 1), (0, 0), (0, 0), (0, 0)]
        losses = [0.07, 1.73, 0.03, 3.72, 1.55, 1.34, 0.03, 0.86]
        lambdas = lam(l11=0.148, l01=0.427)
        small = greedy_select(problem_from_groups(losses, groups, 0.87, lambdas))
        large = greedy_select(problem_from_groups(losses, groups, 0.915, lambdas))
        assert small.selected.tolist() == [0, 2, 3, 4, 6, 7]
        assert large.selected.tolist() == [0, 2, 5, 6, 7]

    @settings(max_examples=50, deadline=None)
    @given(problems(n_max=20))
    def test_deterministic(self, p):
        assert greedy_select(p).selected.tolist() == greedy_select(p).selected.tolist()

    def test_loglinear_scaling(self):
        import time

        rng = np.random.default_rng(0)

        def clock(n):
            p = SelectionProblem(rng.random(n), rng.integers(0, 2, n), rng.integers(0, 2, n), 0.9, lam(0.6, 0.4))
            t = time.perf_counter()
            greedy_select(p)
            return time.perf_counter() - t

        clock(1000)
        small, big = min(clock(20_000) for _ in range(3)), min(clock(200_000) for _ in range(3))
        assert big / small < 30


class TestTrimmed:
    def test_lowest_losses(self):
        p = SelectionProblem([0.4, 0.1, 0.3, 0.2, 0.5], [0, 1, 0, 1, 0], [0, 0, 1, 1, 0], 0.6, lam())
        assert trimmed_select(p).selected.tolist() == [1, 2, 3]


class TestFeasibility:
    def test_over_budget(self):
        p = SelectionProblem([0.1] * 4, [0, 0, 1, 1], [0, 1, 0, 1], 0.5, lam())
        rep = check_feasible(SelectionResult.from_indices([0, 1, 2], p), p)
        assert not rep
        assert any(v.constraint == "budget" and v.slack == -1 for v in rep.violations)

    def test_cap_violation_slack(self):
        p = problem_from_groups([0.1] * 4, [(1, 1), (1, 1), (1, 1), (1, 0)], 1.0, lam(l11=0.5))
        rep = check_feasible(SelectionResult.from_indices([0, 1, 2, 3], p), p)
        assert not rep.feasible
        assert [(v.constraint, v.slack) for v in rep.violations] == [("y1z1", pytest.approx(-1.0))]

    def test_out_of_range(self):
        p = SelectionProblem([0.1, 0.2], [0, 1], [0, 1], 1.0, lam())
        with pytest.raises(IndexError):
            check_feasible(SelectionResult(np.array([5]), {}, {}, 1), p)


class TestExact:
    def test_cap(self):
        p = SelectionProblem(np.zeros(17), np.zeros(17), np.zeros(17), 1.0, lam())
        with pytest.raises(ValueError):
            exact_select(p)

    def test_unconstrained_selects_all(self):
        p = SelectionProblem([0.3, 0.1, 0.2], [0, 0, 0], [0, 0, 0], 1.0, lam(l01=0.0))
        assert exact_select(p).selected.tolist() == [0, 1, 2]


def test_dump_round_trip():
    sel = greedy_select(SIX)
    problem, selected = load_dump(dump(SIX, sel))
    assert selected.tolist() == sel.selected.tolist()
    assert greedy_select(problem).selected.tolist() == sel.selected.tolist()
