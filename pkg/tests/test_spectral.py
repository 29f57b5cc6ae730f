import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from obstacle_walk.continuum import ball_spectrum, mu_ball
from obstacle_walk.domain import LatticeDomain, ball_domain
from obstacle_walk.spectral import (
    ConvergenceError, dense_spectrum, eigenfunction_value_identity_check, expansion_law,
    lambda_star_lower_bound, parity_structure_residuals, principal_pair, rayleigh_check,
    spectral_gap, sup_norm_bound_check, verify_pair,
)
from obstacle_walk.verify import nested_pair, random_domain
from obstacle_walk.walk import bridge_law, conditional_law

SQUARE = LatticeDomain([(0, 0), (1, 0), (0, 1), (1, 1)])
TWO = LatticeDomain([(0, 0), (1, 0)])
ONE = LatticeDomain([(0, 0)])


def test_single_site():
    pair = principal_pair(ONE)
    assert pair.lambda1 == 0.0 and pair.phi1.tolist() == [1.0]


def test_two_sites():
    pair = principal_pair(TWO)
    assert pair.lambda1 == pytest.approx(0.25, abs=1e-15)
    assert np.allclose(pair.phi1, 0.5, atol=1e-15)


def test_square():
    pair = principal_pair(SQUARE)
    assert pair.lambda1 == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(pair.phi1, 0.25, atol=1e-15)


def test_empty_domain_rejected():
    with pytest.raises(ValueError):
        principal_pair(LatticeDomain(np.zeros((0, 2), dtype=int), d=2))


def test_ball_forty_near_continuum():
    R = 40
    lam = principal_pair(ball_domain(R, 2)).lambda1
    assert abs(lam - (1 - mu_ball(2) / R**2)) <= 2 * R**-3


@pytest.mark.parametrize("method", ["dense", "lanczos", "power"])
def test_solvers_agree(method):
    dom = random_domain(5, 2, 0.7, 400)
    ref = np.linalg.eigvalsh(dom.dense()).max()
    pair = principal_pair(dom, method=method)
    assert pair.lambda1 == pytest.approx(ref, abs=1e-11)
    assert not verify_pair(pair)


def test_power_iteration_budget_reported():
    with pytest.raises(ConvergenceError):
        principal_pair(ball_domain(30, 2), method="power", maxiter=5)


def test_reducible_domain_takes_larger_component():
    dom = LatticeDomain([(0, 0), (10, 10), (11, 10), (10, 11), (11, 11)])
    pair = principal_pair(dom)
    assert pair.lambda1 == pytest.approx(0.5, abs=1e-15)
    assert pair.value((0, 0)) == 0.0


@given(seed=st.integers(0, 2**32), d=st.sampled_from([2, 3]))
def test_pair_invariants_on_random_domains(seed, d):
    dom = random_domain(seed, d, 0.7, 300)
    pair = principal_pair(dom)
    assert not verify_pair(pair)
    assert rayleigh_check(dom, pair.lambda1) >= -1e-12


def test_corrupted_pair_detected():
    pair = principal_pair(ball_domain(5, 2))
    phi = pair.phi1.copy()
    phi[3] *= 1.1
    phi /= phi.sum()
    assert "residual" in verify_pair(replace(pair, phi1=phi))


@given(seed=st.integers(0, 10**6))
def test_domain_monotonicity(seed):
    big, small, _ = nested_pair(seed, 300)
    if small.N == 0:
        return
    assert principal_pair(small).lambda1 <= principal_pair(big).lambda1 + 1e-12


@given(seed=st.integers(0, 2**32), d=st.sampled_from([2, 3]))
def test_parity_structure(seed, d):
    dom = random_domain(seed, d, 0.75, 150)
    res = parity_structure_residuals(dom)
    assert res["l1_sandwich"] <= 1e-12
    assert max(v for k, v in res.items() if k != "l1_sandwich") <= 1e-10


def test_square_gap():
    g = spectral_gap(SQUARE)
    assert g.gap == pytest.approx(0.25, abs=1e-15)
    w, _ = dense_spectrum(SQUARE)
    assert np.allclose(np.sort(w), [-0.5, 0, 0, 0.5], atol=1e-15)


def test_two_site_gap_flagged():
    g = spectral_gap(TWO)
    assert g.single_mode and g.gap == pytest.approx(1 / 16, abs=1e-16)


@pytest.mark.parametrize("R", [10, 20, 40])
def test_ball_gap_scaling(R):
    spectrum = ball_spectrum(2)
    g = spectral_gap(ball_domain(R, 2))
    # gap of Q^2 is about 2 (mu2 - mu1) / R^2
    assert g.gap * R**2 / 2 == pytest.approx(spectrum.mu2 - spectrum.mu1, rel=0.2)


def test_value_identity_small_cases():
    assert eigenfunction_value_identity_check(TWO, 1) == 0.0
    assert eigenfunction_value_identity_check(ONE, 1) == 0.0
    with pytest.raises(ValueError):
        eigenfunction_value_identity_check(TWO, 0)


def test_value_identity_random_cluster():
    dom = random_domain(17, 2, 0.7, 500)
    assert dom.N > 150
    assert eigenfunction_value_identity_check(dom, 10) <= 1e-8


def test_sup_norm_ratios():
    assert sup_norm_bound_check(ONE) == 1.0
    r20 = sup_norm_bound_check(ball_domain(20, 2))
    r40 = sup_norm_bound_check(ball_domain(40, 2))
    assert 1 / 3 <= r20 / r40 <= 3


def test_sup_norm_family_bounded():
    ratios = [sup_norm_bound_check(random_domain(s, 2, 0.7, 1000)) for s in range(15)]
    assert max(ratios) < 10


def test_lambda_star_bound_below_ball_eigenvalue():
    rho = 20
    lam = principal_pair(ball_domain(rho, 2)).lambda1
    assert lambda_star_lower_bound(rho, 2, 2.0) < lam


def test_expansion_two_site():
    law = expansion_law(TWO, (0, 0), 6)
    assert law.value((0, 0)) == pytest.approx(1.0, abs=1e-15)


def test_expansion_matches_direct_endpoint():
    dom = ball_domain(10, 2)
    a = expansion_law(dom, (0, 0), 800)
    b = conditional_law(dom, (0, 0), 800)
    assert 0.5 * np.abs(a.u - b.u).sum() <= 1e-6


@given(seed=st.integers(0, 2**32))
def test_expansion_matches_direct_on_random_domains(seed):
    dom = random_domain(seed, 2, 0.75, 600)
    start = tuple(dom.sites[0])
    a = expansion_law(dom, start, 30, t=10, end=start)
    b = bridge_law(dom, start, 30, 10, start)
    assert 0.5 * np.abs(a.u - b.u).sum() <= 1e-6


def test_expansion_wrong_parity_rejected():
    with pytest.raises(ValueError):
        expansion_law(ball_domain(4, 2), (0, 0), 4, t=3, end=(0, 0))


def test_truncated_expansion_within_bound():
    R = 25
    dom = ball_domain(R, 2)
    m = 8 * R * R
    full = expansion_law(dom, (0, 0), m)
    one = expansion_law(dom, (0, 0), m, n_modes=1)
    dev = np.max(np.abs(full.u - one.u))
    assert dev <= one.absorbed["truncation_bound"]
