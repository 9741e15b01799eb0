import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eht_lab.belief_space import (
    CapacityError,
    DiscretizedSimplex,
    StateSpace,
    belief_distance,
    br_image,
    dedupe_rows,
    enumerate_simplex,
    nearest_grid_belief,
    nearest_grid_point,
    simplex_size,
)
from eht_lab.game_core import Game, product_of_marginals, smooth_best_response


@pytest.mark.parametrize("dim,M", [(1, 5), (2, 4), (3, 4), (4, 3), (3, 10), (5, 6)])
def test_simplex_counts(dim, M):
    pts = enumerate_simplex(dim, M)
    assert len(pts) == math.comb(M + dim - 1, dim - 1) == simplex_size(dim, M)
    assert np.all(pts.sum(axis=1) == M)
    assert len({tuple(p) for p in pts}) == len(pts)
    # lexicographic order
    assert [tuple(p) for p in pts] == sorted(tuple(p) for p in pts)


def test_simplex_index_round_trip():
    s = DiscretizedSimplex(3, 4)
    for k, c in enumerate(s.counts):
        assert s.index_of(c) == k
    assert (1, 1, 2) in s
    assert (1, 1, 1) not in s
    np.testing.assert_allclose(s.points.sum(axis=1), 1)


def test_capacity_error():
    with pytest.raises(CapacityError):
        enumerate_simplex(6, 30, cap=1000)


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 4), st.integers(1, 8), st.data())
def test_nearest_grid_point_is_optimal(dim, M, data):
    w = np.array(data.draw(st.lists(st.floats(0, 1), min_size=dim, max_size=dim)))
    if w.sum() == 0:
        w[0] = 1.0
    x = w / w.sum()
    got = nearest_grid_point(x, M)
    pts = enumerate_simplex(dim, M)
    d = np.linalg.norm(pts / M - x, axis=1)
    assert got.sum() == M
    assert np.linalg.norm(got / M - x) <= d.min() + 1e-12


def test_nearest_grid_tie_break_is_lexicographically_smallest():
    got = nearest_grid_point(np.array([0.5, 0.5]), 1)
    assert tuple(got) == (0, 1)


def test_nearest_grid_belief_marginals():
    b = nearest_grid_belief([np.array([0.3, 0.7]), np.array([0.1, 0.2, 0.7])], 10, owner=0)
    assert b.counts == ((3, 7), (1, 2, 7))
    np.testing.assert_allclose(b.product(), product_of_marginals(b.marginals))


def test_distance_modes_agree_for_single_opponent():
    a, b = np.array([0.2, 0.8]), np.array([0.5, 0.5])
    d1 = belief_distance(a, b, [a], [b], "joint_product")
    d2 = belief_distance(a, b, [a], [b], "concatenated_marginals")
    assert math.isclose(d1, d2)
    with pytest.raises(ValueError):
        belief_distance(a, b, [a], [b], "sup_norm")


def test_stag_hunt_state_space(stag_hunt):
    cfg, sp = stag_hunt
    assert len(sp) == 25
    assert sp.belief_sizes == (5, 5)
    # state 24 = both believe the other plays S
    s = sp[24]
    assert s.beliefs[0].counts == ((4, 0),)
    assert s.strategies[0][0] > 0.98
    for z in (0, 7, 24):
        assert sp.index_of(sp[z].belief_indices) == z
    np.testing.assert_allclose(sum(sp.strategy_table[0].T), 1)
    # cached responses equal a fresh computation
    g = sp.game
    for z in (3, 11, 19):
        st_ = sp[z]
        br = smooth_best_response(g, 1, st_.beliefs[1], sp.sigma)
        np.testing.assert_allclose(br, st_.strategies[1], atol=1e-14)


def test_state_space_cap():
    g = Game.from_profile_table(np.zeros((3, 3, 3, 3)))
    with pytest.raises(CapacityError):
        StateSpace(g, 6, 0.5, cap=1000)


def test_br_image_and_dedupe():
    g = Game.from_profile_table(np.ones((2, 2, 2)))
    assert len(br_image(g, 0, 4, 0.5)) == 1
    rows = np.array([[0.1, 0.9], [0.1, 0.9 + 1e-15], [0.2, 0.8]])
    assert len(dedupe_rows(rows)) == 2


def test_three_player_space_sizes():
    table = np.random.default_rng(0).random((2, 2, 2, 3))
    sp = StateSpace(Game.from_profile_table(table), 2, 0.5)
    # each player believes about two binary opponents: 3 * 3 beliefs
    assert sp.belief_sizes == (9, 9, 9)
    assert sp.players[0].products.shape == (9, 4)
    assert sp.distances.shape == (729, 3)
