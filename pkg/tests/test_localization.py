import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from obstacle_walk.lattice import (
    empty_environment, euclidean_ball, plant_vacant_ball, sample_environment,
)
from obstacle_walk.localization import (
    LocalizationConfig, ball_sym_diff, detect_truly_open, fit_ball_center, localize,
    low_density_region, obstacle_count_in_ball, shell_index, stay_probabilities, sym_diff_map,
    tile_anchor,
)

STEPS = [(1, 0), (-1, 0), (0, 1), (0, -1)]


def window_open(env, anchor, ell):
    big = 4 * ell
    return {(anchor[0] + i, anchor[1] + j)
            for i in range(-big, big + 1) for j in range(-big, big + 1)
            if env.is_open((anchor[0] + i, anchor[1] + j))}


def stay_by_enumeration(open_set, start, steps):
    if start not in open_set:
        return Fraction(0)
    good = 0
    for path in itertools.product(range(4), repeat=steps):
        pos = start
        for k in path:
            pos = (pos[0] + STEPS[k][0], pos[1] + STEPS[k][1])
            if pos not in open_set:
                break
        else:
            good += 1
    return Fraction(good, 4**steps)


def stay_by_rational_dp(open_set, start, steps):
    if start not in open_set:
        return Fraction(0)
    u = {start: Fraction(1)}
    for _ in range(steps):
        nxt = {}
        for (x, y), m in u.items():
            for dx, dy in STEPS:
                z = (x + dx, y + dy)
                if z in open_set:
                    nxt[z] = nxt.get(z, 0) + m / 4
        u = nxt
    return sum(u.values(), Fraction(0))


def best_stay(env, anchor, ell, method):
    open_set = window_open(env, anchor, ell)
    return max(method(open_set, (anchor[0] + i, anchor[1] + j), ell * ell)
               for i in range(-ell, ell + 1) for j in range(-ell, ell + 1))


# -- tiles and low-density region --------------------------------------------------

@given(s=st.integers(1, 6), pts=st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=1, max_size=50))
def test_every_site_in_exactly_one_tile(s, pts):
    sites = np.array(pts)
    anchors = tile_anchor(sites, s)
    side = 2 * s + 1
    assert np.all(np.abs(sites - anchors) <= s)
    assert np.all(anchors % side == 0)


def test_obstacle_free_region_selects_every_tile():
    env = empty_environment([(0, 29), (0, 29)])
    inner = [(x, y) for x in range(5, 25) for y in range(5, 25)]
    reg = low_density_region(env, region=inner, epsilon=0.2, rho=10)
    assert len(reg.selected) == len(reg.coarse.anchors) == 25


def test_box_edge_tiles_see_closed_padding():
    # outside the box counts as closed, so tiles poking out are not low density
    env = empty_environment([(0, 29), (0, 29)])
    reg = low_density_region(env, epsilon=0.2, rho=10)
    assert 0 < len(reg.selected) < len(reg.coarse.anchors)


def test_fully_closed_region_is_empty():
    env = empty_environment([(0, 29), (0, 29)], closed=True)
    assert low_density_region(env, epsilon=0.2, rho=10).size == 0


def test_degenerate_tiles_rejected():
    env = empty_environment([(0, 9), (0, 9)])
    with pytest.raises(ValueError):
        low_density_region(env, epsilon=0.05, rho=10)


def test_density_matches_direct_count():
    env = sample_environment(2, [(-20, 20), (-20, 20)], 0.6, 3)
    reg = low_density_region(env, epsilon=0.3, rho=10)
    s = reg.coarse.box_radius
    for a, frac in zip(reg.coarse.anchors, reg.coarse.density):
        tile = [(a[0] + i, a[1] + j) for i in range(-s, s + 1) for j in range(-s, s + 1)]
        closed = sum(env.is_closed(t) for t in tile)
        assert frac == closed / len(tile)


def test_planted_ball_tiles_are_low_density():
    rho = 12
    env = plant_vacant_ball(sample_environment(2, [(-60, 60), (-60, 60)], 0.6, 4), (3, -5), rho)
    reg = low_density_region(env, epsilon=0.2, rho=rho)
    s = reg.coarse.box_radius
    inside = [a for a in reg.coarse.anchors
              if all(np.hypot(a[0] + i - 3, a[1] + j + 5) <= rho for i in (-s, s) for j in (-s, s))]
    chosen = {tuple(a) for a in reg.selected.tolist()}
    assert inside
    assert sum(tuple(a) in chosen for a in inside) >= 0.95 * len(inside)


@given(seed=st.integers(0, 2**32), site=st.tuples(st.integers(-15, 15), st.integers(-15, 15)))
def test_adding_obstacle_never_enlarges(seed, site):
    env = sample_environment(2, [(-15, 15), (-15, 15)], 0.8, seed)
    more = env.close_sites([site])
    a = low_density_region(env, epsilon=0.25, rho=8)
    b = low_density_region(more, epsilon=0.25, rho=8)
    assert not (b.mask & ~a.mask).any()
    ta = detect_truly_open(env, 2)
    tb = detect_truly_open(more, 2)
    assert np.all(tb.stay_probability <= ta.stay_probability)
    assert {tuple(x) for x in tb.passed.tolist()} <= {tuple(x) for x in ta.passed.tolist()}


# -- truly open boxes ------------------------------------------------------------------

def test_closed_box_not_truly_open():
    env = empty_environment([(-20, 20), (-20, 20)], closed=True)
    res = detect_truly_open(env, 2, anchors=[(0, 0)])
    assert res.stay_probability[0] == 0.0 and len(res.passed) == 0


def test_open_window_truly_open_with_dp_value():
    env = empty_environment([(-30, 30), (-30, 30)])
    res = detect_truly_open(env, 5, anchors=[(0, 0)])
    centre = stay_by_rational_dp(window_open(env, (0, 0), 5), (0, 0), 25)
    assert centre >= Fraction(1, 10)
    assert res.stay_probability[0] >= float(centre)
    assert len(res.passed) == 1


@pytest.mark.parametrize("ell,method", [(1, stay_by_enumeration), (2, stay_by_enumeration),
                                        (3, stay_by_rational_dp)])
def test_truly_open_matches_brute_force(ell, method):
    env = sample_environment(2, [(-25, 25), (-25, 25)], 0.8, 10 + ell)
    anchors = [(0, 0), (7, -7), (-14, 7)]
    res = detect_truly_open(env, ell, anchors=anchors)
    for a, got in zip(anchors, res.stay_probability):
        assert Fraction(got) == best_stay(env, a, ell, method)


def test_threshold_is_inclusive():
    # ell = 1: one step; best start has exactly one open neighbour of four
    env = empty_environment([(-8, 8), (-8, 8)], closed=True).open_sites_at([(0, 0), (1, 0)])
    res = detect_truly_open(env, 1, anchors=[(0, 0)], threshold=0.25)
    assert res.stay_probability[0] == 0.25
    assert len(res.passed) == 1
    assert len(detect_truly_open(env, 1, anchors=[(0, 0)], threshold=0.2500001).passed) == 0


def test_threshold_sharpness_fixture():
    """Close sites one at a time until the best stay probability crosses 1/10."""
    ell = 3
    rng = np.random.default_rng(0)
    env = empty_environment([(-20, 20), (-20, 20)])
    order = rng.permutation([(i, j) for i in range(-12, 13) for j in range(-12, 13)])
    lo, hi = 0, len(order)
    prob = lambda k: detect_truly_open(env.close_sites(order[:k]), ell, anchors=[(0, 0)]).stay_probability[0]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if prob(mid) >= 0.1:
            lo = mid
        else:
            hi = mid
    above, below = prob(lo), prob(hi)
    assert above >= 0.1 > below
    res = detect_truly_open(env.close_sites(order[:lo]), ell, anchors=[(0, 0)])
    assert 0.09 < res.stay_probability[0] < 0.11 or above - below > 0.01
    assert len(res.passed) == 1


def test_stay_probabilities_matches_explicit_loop():
    window = np.ones((1, 5, 5), dtype=bool)
    window[0, 2, 3] = False
    h = stay_probabilities(window, 2)[0]
    open_set = {(i, j) for i in range(5) for j in range(5) if window[0, i, j]}
    for i in range(5):
        for j in range(5):
            assert Fraction(h[i, j]) == stay_by_enumeration(open_set, (i, j), 2)


# -- ball fit --------------------------------------------------------------------------

def ball_grid(shape, center, rho):
    g = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij", sparse=True)
    return sum((a - c) ** 2 for a, c in zip(g, center)) <= rho * rho + 1e-9


def test_exact_ball_recovered():
    e = ball_grid((60, 60), (27, 31), 10)
    assert fit_ball_center(e, 10) == ((27, 31), 0)


def test_ball_with_holes_recovered():
    rng = np.random.default_rng(1)
    e = ball_grid((80, 80), (40, 35), 15)
    idx = np.argwhere(e)
    drop = idx[rng.choice(len(idx), size=int(0.05 * len(idx)), replace=False)]
    e[tuple(drop.T)] = False
    c, sd = fit_ball_center(e, 15)
    assert max(abs(c[0] - 40), abs(c[1] - 35)) <= 2
    assert sd == pytest.approx(0.05 * len(idx), rel=0.2)


def test_two_equal_balls_tie_to_lexicographic_first():
    e = ball_grid((80, 80), (20, 50), 8) | ball_grid((80, 80), (60, 20), 8)
    assert fit_ball_center(e, 8)[0] == (20, 50)


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        fit_ball_center(np.zeros((10, 10), bool), 3)
    with pytest.raises(ValueError):
        fit_ball_center(np.ones((10, 10), bool), 3, search_region=np.zeros((10, 10), bool))


@given(seed=st.integers(0, 2**32), rho=st.integers(1, 6))
def test_sym_diff_map_is_set_exact(seed, rho):
    rng = np.random.default_rng(seed)
    e = rng.random((20, 20)) < 0.4
    sd = sym_diff_map(e, rho)
    for c in rng.integers(0, 20, size=(5, 2)):
        assert sd[tuple(c)] == ball_sym_diff(e, (0, 0), tuple(c), rho)


# -- shells ------------------------------------------------------------------------------

def test_single_obstacle_at_centre():
    env = empty_environment([(-20, 20), (-20, 20)]).close_sites([(0, 0)])
    res = shell_index(env, (0, 0), 10, 0.3, 0.5)
    assert res.counts == [1, 1] and res.J == 1 and not res.clear


def test_annulus_only_obstacles():
    rho, delta = 20, 0.3
    outer = (1 - delta + delta) * rho
    r1 = (1 - delta + delta / 2) * rho
    sites = [s for s in euclidean_ball((0, 0), outer).tolist() if math.hypot(*s) > r1][:7]
    env = empty_environment([(-30, 30), (-30, 30)]).close_sites(sites)
    res = shell_index(env, (0, 0), rho, delta, 0.5)
    assert res.counts == [7, 0, 0] and res.J == 2 and res.clear


def test_uniform_density_shells():
    rho, delta = 30, 0.4
    env = sample_environment(2, [(-40, 40), (-40, 40)], 0.7, 6)
    c5 = ((1 - delta / 2) / 1.0) ** 2 * 0.9
    res = shell_index(env, (0, 0), rho, delta, c5)
    assert res.J <= 2


def test_shell_defining_minimality():
    env = sample_environment(2, [(-40, 40), (-40, 40)], 0.95, 7)
    res = shell_index(env, (0, 0), 30, 0.3, 0.8)
    counts = res.counts
    assert counts[res.J] >= 0.8 * counts[res.J - 1]
    assert all(counts[k] < 0.8 * counts[k - 1] for k in range(1, res.J))


@given(delta=st.floats(0.01, 0.49), rho=st.floats(2, 25), k=st.integers(0, 8))
def test_shell_nesting(delta, rho, k):
    def ball(r):
        return {tuple(s) for s in euclidean_ball((0, 0), r).tolist()}
    r = lambda j: (1 - delta + 2.0**-j * delta) * rho
    inner, a, b, outer = ball((1 - delta) * rho), ball(r(k + 1)), ball(r(k)), ball(rho)
    assert inner <= a <= b <= outer


def test_shell_rejects_bad_delta():
    env = empty_environment([(-5, 5), (-5, 5)])
    with pytest.raises(ValueError):
        shell_index(env, (0, 0), 3, 0.5)


def test_obstacle_count_counts_outside_box_as_closed():
    env = empty_environment([(0, 4), (0, 4)])
    assert obstacle_count_in_ball(env, (0, 0), 1) == 2


# -- pipeline ------------------------------------------------------------------------------

def test_planted_ball_in_sparse_noise_located():
    # epsilon must sit below the noise density 1 - p for E to single out the ball
    hits = 0
    for seed in range(20):
        c = tuple(int(v) for v in np.random.default_rng(seed).integers(-50, 50, 2))
        env = plant_vacant_ball(sample_environment(2, [(-80, 80), (-80, 80)], 0.85, seed), c, 16)
        rep = localize(env, config=LocalizationConfig(rho=16, epsilon=0.1))
        assert rep.outcome == "located" and rep.bound_chain_ok
        if max(abs(rep.center[0] - c[0]), abs(rep.center[1] - c[1])) <= 2:
            hits += 1
            assert rep.obstacle_count_in_ball == 0 and rep.clear
    assert hits >= 18


def test_larger_of_two_balls_wins():
    env = sample_environment(2, [(-80, 80), (-80, 80)], 0.6, 9)
    env = plant_vacant_ball(plant_vacant_ball(env, (-40, -40), 12), (40, 40), 6)
    rep = localize(env, config=LocalizationConfig(rho=12, epsilon=0.2))
    assert max(abs(rep.center[0] + 40), abs(rep.center[1] + 40)) <= 2


def test_all_closed_gives_empty_outcome():
    env = empty_environment([(-30, 30), (-30, 30)], closed=True)
    rep = localize(env, config=LocalizationConfig(rho=10, epsilon=0.2))
    assert rep.outcome == "empty" and rep.center is None


@given(seed=st.integers(0, 2**16))
def test_bound_chain_holds(seed):
    env = sample_environment(2, [(-40, 40), (-40, 40)], 0.7, seed)
    rep = localize(env, config=LocalizationConfig(rho=8, epsilon=0.3, truly_open_scope=None))
    if rep.outcome == "located":
        assert rep.obstacle_count_in_ball <= rep.sym_diff + rep.epsilon * rep.e_size


def test_schedule_defaults_from_n_and_p():
    env = plant_vacant_ball(sample_environment(2, [(-60, 60), (-60, 60)], 0.5, 2), (0, 0), 12)
    rep = localize(env, n=10**60, p=0.5)
    assert rep.rho == 11
    assert [e["which"] for e in rep.schedule] == ["sqrt", "eps_n", "square"]
    assert rep.epsilon == pytest.approx(11 ** -0.1)
    assert any("clamped" in f for f in rep.flags)
    assert '"outcome": "located"' in rep.to_json()
