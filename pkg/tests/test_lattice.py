import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grassnorm.lattice import MultiIndex, Polymer, Torus, multiindices, unit_directions


def test_torus_counts():
    T = Torus(2, 3, 2)
    assert T.period == 6 and T.volume == 36 and T.n_blocks == 4 and T.block_volume == 9
    for x in T.sites():
        nbrs = [T.neighbour(x, e) for e in unit_directions(2)]
        assert len(set(nbrs)) == 4


@pytest.mark.parametrize("d,R,m", [(0, 2, 1), (1, 1, 1), (1, 2, 0)])
def test_torus_rejects_bad_shape(d, R, m):
    with pytest.raises(ValueError):
        Torus(d, R, m)


def test_blocks_partition_sites():
    T = Torus(2, 2, 3)
    seen = []
    for b in range(T.n_blocks):
        seen.extend(T.block_sites(b))
        assert all(T.block_of(x) == b for x in T.block_sites(b))
    assert sorted(seen) == list(T.sites())


def test_difference_of_constant_vanishes():
    T = Torus(2, 2, 2)
    for e in unit_directions(2):
        assert np.all(T.forward_difference(np.full(T.volume, 3 + 1j), e) == 0)


def test_forward_difference_wraps():
    T = Torus(1, 2, 2)
    f = np.array([0, 1, 0, 1])
    assert list(T.forward_difference(f, (0, 1))) == [1, -1, 1, -1]


def test_opposite_differences_compose_to_minus_the_second_difference():
    # nabla^{-e} g_x = g_{x-e} - g_x, so nabla^{-e} nabla^{+e} f = -(f_{x+e} - 2 f_x + f_{x-e})
    T = Torus(1, 3, 2)
    f = np.arange(T.volume) ** 2
    lap = T.apply_multiindex(f, MultiIndex.from_directions(1, [(0, 1), (0, -1)]))
    assert np.array_equal(lap, -(np.roll(f, -1) - 2 * f + np.roll(f, 1)))


def test_second_difference_of_linear_vanishes_away_from_wrap():
    T = Torus(1, 4, 2)
    f = np.arange(T.volume)
    lap = T.apply_multiindex(f, MultiIndex.from_directions(1, [(0, 1), (0, -1)]))
    assert np.all(lap[1:-1] == 0)


def test_empty_multiindex_is_identity():
    T = Torus(2, 2, 1)
    f = np.arange(T.volume) * 1.5
    assert np.array_equal(T.apply_multiindex(f, MultiIndex.empty(2)), f)


def test_multiindex_order_independent():
    T = Torus(2, 2, 2)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(T.volume)
    dirs = [(0, 1), (1, -1), (0, 1)]
    a = T.apply_multiindex(f, MultiIndex.from_directions(2, dirs))
    b = f
    for e in reversed(dirs):
        b = T.forward_difference(b, e)
    assert np.allclose(a, b)


def test_difference_matrix_matches_operator():
    T = Torus(2, 2, 1)
    f = np.arange(T.volume, dtype=float)
    for alpha in multiindices(2, 2):
        assert np.allclose(T.difference_matrix(alpha) @ f, T.apply_multiindex(f, alpha))


def test_multiindex_census():
    # number of multisets of size <= k from 2d directions
    assert len(multiindices(1, 2)) == 1 + 2 + 3
    assert len(multiindices(2, 1)) == 1 + 4


def test_small_set_neighbourhood_empty():
    assert Torus(1, 2, 4).small_set_neighbourhood(set()) == frozenset()


def test_small_set_neighbourhood_of_one_block():
    T = Torus(1, 2, 4)
    box = T.small_set_neighbourhood(T.block_sites(1))
    assert box == T.polymer_sites({0, 1, 2})


def test_small_sets_in_two_dimensions_include_corner_touching_pairs():
    T = Torus(2, 2, 3)
    assert frozenset({0, 4}) in T.small_sets  # blocks (0,0) and (1,1)
    assert all(len(s) <= 4 for s in T.small_sets)


def test_polymer_basics():
    T = Torus(1, 2, 4)
    X = Polymer.from_sites(T, T.polymer_sites({0, 1}))
    assert X.size == 2 and X.is_small()
    assert X.sites <= X.neighbourhood().sites
    with pytest.raises(ValueError):
        Polymer.from_sites(T, {0})


site_sets = st.sets(st.integers(0, 35), max_size=8)


@settings(max_examples=60, deadline=None)
@given(site_sets, site_sets)
def test_neighbourhood_is_a_union_homomorphism(X, Y):
    T = Torus(2, 2, 3)
    assert T.small_set_neighbourhood(X | Y) == T.small_set_neighbourhood(X) | T.small_set_neighbourhood(Y)
    assert set(X) <= T.small_set_neighbourhood(X)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 15), st.sampled_from(unit_directions(2)))
def test_neighbour_round_trip(x, e):
    T = Torus(2, 2, 2)
    back = (e[0], -e[1])
    assert T.neighbour(T.neighbour(x, e), back) == x
