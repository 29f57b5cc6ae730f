import numpy as np
import pytest
from hypothesis import given, strategies as st

from obstacle_walk.domain import LatticeDomain, ball_domain, outer_boundary
from obstacle_walk.lattice import euclidean_ball, label_clusters, sample_environment

from conftest import flood_fill_labels, same_partition

site_sets = st.sets(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), min_size=1, max_size=40)


def brute_kernel(sites):
    sites = [tuple(s) for s in sites]
    idx = {s: i for i, s in enumerate(sites)}
    K = np.zeros((len(sites), len(sites)))
    for s, i in idx.items():
        for axis in range(len(s)):
            for step in (-1, 1):
                nb = list(s)
                nb[axis] += step
                j = idx.get(tuple(nb))
                if j is not None:
                    K[i, j] += 1 / (2 * len(s))
    return K


@given(site_sets)
def test_kernel_matches_brute_force(sites):
    dom = LatticeDomain(sorted(sites))
    K = brute_kernel(dom.sites.tolist())
    assert np.array_equal(dom.dense(), K)
    assert np.array_equal(dom.dense(), dom.dense().T)


@given(site_sets)
def test_kill_weight_complements_row_sums(sites):
    dom = LatticeDomain(sorted(sites))
    assert np.allclose(dom.dense().sum(axis=1) + dom.kill_weight, 1.0, atol=1e-15)


def test_duplicates_rejected_and_lookup():
    with pytest.raises(ValueError):
        LatticeDomain([(1, 0), (0, 0), (1, 0)])
    dom = LatticeDomain([(1, 0), (0, 0)])
    assert dom.N == 2
    assert dom.index_of((1, 0)) == 1 and (0, 0) in dom and (5, 5) not in dom
    assert dom.indices_of([(0, 0), (7, 7)]).tolist() == [0, -1]
    with pytest.raises(KeyError):
        dom.index_of((9, 9))


@given(site_sets)
def test_outer_boundary_by_enumeration(sites):
    sset = set(sites)
    expect = set()
    for x, y in sset:
        for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if nb not in sset:
                expect.add(nb)
    assert {tuple(s) for s in outer_boundary(np.array(sorted(sites))).tolist()} == expect


@given(seed=st.integers(0, 2**32))
def test_components_match_flood_fill(seed):
    env = sample_environment(2, [(0, 14), (0, 14)], 0.6, seed)
    dom = LatticeDomain.from_env(env)
    n, labels = dom.components()
    grid = np.zeros(env.shape, dtype=np.int64)
    for s, l in zip(dom.sites, labels):
        grid[tuple(s)] = l + 1
    assert same_partition(grid, flood_fill_labels(env.open_mask))
    assert n == label_clusters(env).n_clusters


def test_two_step_is_parity_block_of_square():
    dom = ball_domain(4, 2)
    full = dom.dense() @ dom.dense()
    for cls in (0, 1):
        Q2, ic, _ = dom.two_step(cls)
        assert np.allclose(Q2.toarray(), full[np.ix_(ic, ic)], atol=1e-15)


def test_ball_domain_matches_euclidean_ball():
    assert {tuple(s) for s in ball_domain(3.5, 3, (1, 2, 3)).sites.tolist()} == \
        {tuple(s) for s in euclidean_ball((1, 2, 3), 3.5).tolist()}


def test_minus_and_union():
    dom = ball_domain(2, 2)
    smaller = dom.minus([(0, 0)])
    assert smaller.N == dom.N - 1 and (0, 0) not in smaller
    assert smaller.union([(0, 0)]).N == dom.N


def test_env_exit_kinds_split():
    env = sample_environment(2, [(0, 5), (0, 5)], 0.7, 4)
    dom = LatticeDomain.from_env(env)
    total = sum(dom.exit_weights.values())
    assert np.allclose(total, dom.kill_weight)
    edge = (dom.sites == 0).any(axis=1) | (dom.sites == 5).any(axis=1)
    assert np.all(dom.exit_weights["outside"][~edge] == 0)
