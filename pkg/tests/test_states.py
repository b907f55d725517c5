"""State-space enumeration, ranking, and legal driver moves."""

from math import comb

import numpy as np
import pytest

from dispatchlab.errors import InfeasibleInstanceError, InfeasibleMoveError, SizeLimitError
from dispatchlab.grid import build_grid
from dispatchlab.states import (
    StateSpace,
    enumerate_states,
    format_state,
    move,
    neighbor_pairs,
    parse_state,
)


def brute_force_states(n, m, c):
    """All occupancy vectors by direct product filtering; oracle for small n."""
    out = []

    def rec(prefix, left):
        if len(prefix) == n:
            if left == 0:
                out.append(tuple(prefix))
            return
        for x in range(min(c, left) + 1):
            rec(prefix + [x], left - x)

    rec([], m)
    return out


def test_enumeration_matches_brute_force():
    for rows, cols in ((1, 2), (2, 2), (1, 3)):
        g = build_grid(rows, cols)
        for m in range(1, 5):
            for c in range(1, 4):
                if m > g.n * c:
                    continue
                space = StateSpace(g, m, c)
                expect = brute_force_states(g.n, m, c)
                got = [space.unrank(i) for i in range(space.size)]
                assert got == sorted(expect), (rows, cols, m, c)


def test_unconstrained_size_is_binomial():
    # with c >= m the capacity never binds: compositions of m into n parts
    g = build_grid(2, 3)
    space = StateSpace(g, 4, 4)
    assert space.size == comb(4 + g.n - 1, g.n - 1)


def test_known_instance_size():
    # two drivers, capacity two, four locations: all pairs plus doubles
    space = StateSpace(build_grid(2, 2), 2, 2)
    assert space.size == 10


def test_rank_unrank_bijection():
    space = StateSpace(build_grid(2, 3), 4, 2)
    for i in range(space.size):
        assert space.rank(space.unrank(i)) == i


def test_rank_rejects_illegal_counts():
    space = StateSpace(build_grid(1, 2), 2, 2)
    with pytest.raises(ValueError):
        space.rank((2, 1))  # wrong total
    with pytest.raises(ValueError):
        space.rank((3, -1))  # capacity and sign
    with pytest.raises(ValueError):
        space.rank((1, 1, 0))  # wrong length


def test_infeasible_instances_rejected():
    g = build_grid(1, 2)
    with pytest.raises(InfeasibleInstanceError):
        StateSpace(g, 5, 2)  # m > n*c
    with pytest.raises(InfeasibleInstanceError):
        StateSpace(g, 0, 2)
    with pytest.raises(InfeasibleInstanceError):
        StateSpace(g, 1, 0)


def test_state_cap_enforced():
    g = build_grid(3, 3)
    with pytest.raises(SizeLimitError):
        enumerate_states(g, 4, 4, cap=10)


def test_move_semantics():
    assert move((1, 0), 0, 1, 1) == (0, 1)
    assert move((1, 1), 0, 0, 1) == (1, 1)  # self-move keeps the state
    with pytest.raises(InfeasibleMoveError):
        move((0, 1), 0, 1, 1)  # origin empty
    with pytest.raises(InfeasibleMoveError):
        move((1, 1), 0, 1, 1)  # destination full
    # origin-empty is reported even when the destination is also full
    with pytest.raises(InfeasibleMoveError, match="no driver"):
        move((0, 1), 0, 1, 1)


def test_move_rank_matches_move():
    space = StateSpace(build_grid(2, 2), 2, 2)
    x = (1, 1, 0, 0)
    assert space.unrank(space.move_rank(x, 1, 3)) == (1, 0, 0, 1)


def test_format_parse_roundtrip():
    assert parse_state("1,0,2,0") == (1, 0, 2, 0)
    assert format_state((1, 0, 2, 0)) == "1,0,2,0"
    rng = np.random.default_rng(3)
    for _ in range(20):
        counts = tuple(int(v) for v in rng.integers(0, 4, size=5))
        assert parse_state(format_state(counts)) == counts


def test_as_array_matches_unrank():
    space = StateSpace(build_grid(2, 2), 3, 2)
    arr = space.as_array()
    assert arr.shape == (space.size, 4)
    for i in range(space.size):
        assert tuple(arr[i]) == space.unrank(i)


def test_neighbor_pairs_differ_by_one_move():
    space = StateSpace(build_grid(2, 2), 2, 2)
    pairs = list(neighbor_pairs(space))
    for pair in pairs:
        x = np.array(space.unrank(pair.x))
        y = np.array(space.unrank(pair.y))
        diff = y - x
        assert diff.sum() == 0
        assert np.abs(diff).sum() == 2
        assert diff[pair.v] == 1 and diff[pair.u] == -1
    # every ordered pair at count-distance 2 appears exactly once
    seen = {(p.x, p.y) for p in pairs}
    assert len(seen) == len(pairs)
    states = [np.array(space.unrank(i)) for i in range(space.size)]
    expect = sum(
        1
        for i, xi in enumerate(states)
        for j, xj in enumerate(states)
        if i != j and np.abs(xi - xj).sum() == 2
    )
    assert len(pairs) == expect
