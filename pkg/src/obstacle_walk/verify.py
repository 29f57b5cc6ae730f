"""Invariant suites with machine-readable pass/fail per case."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .domain import LatticeDomain, ball_domain
from .lattice import label_clusters, sample_environment

SUITES = ("identities", "parity", "monotonicity", "surgery-bounds", "iso", "profiles")


@dataclass(frozen=True)
class Case:
    suite: str
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def random_domain(seed: int, d: int, p_open: float, max_sites: int) -> LatticeDomain:
    """Largest open cluster of an i.i.d. environment whose box holds at most ``max_sites`` sites."""
    side = max(2, int(math.floor(max_sites ** (1 / d))))
    lo = -(side // 2)
    env = sample_environment(d, [(lo, lo + side - 1)] * d, p_open, seed)
    lab = label_clusters(env)
    if lab.n_clusters == 0:
        return LatticeDomain([(0,) * d])
    return LatticeDomain(lab.sites(lab.largest()))


def random_domains(n: int, max_sites: int, seed: int = 0, ps=(0.6, 0.7, 0.8), ds=(2, 3)):
    """Deterministic family of random connected domains cycling through ``ps`` and ``ds``."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        d = ds[k % len(ds)]
        p = ps[(k // len(ds)) % len(ps)]
        size = int(rng.integers(max(8, max_sites // 10), max_sites + 1))
        out.append((d, p, random_domain(int(rng.integers(2**31)), d, p, size)))
    return out


def _suite_identities(n: int, seed: int, corrupt: bool) -> list[Case]:
    from .spectral import eigenfunction_value_identity_check, principal_pair, verify_pair
    from .surgery import resolvent_residual
    cases = []
    for k, (d, p, dom) in enumerate(random_domains(n, 5000, seed)):
        pair = principal_pair(dom)
        worst = max(eigenfunction_value_identity_check(dom, t, pair) for t in (1, 5, 50))
        cases.append(Case("identities", f"value_identity[{k}] d={d} p={p} N={dom.N}", worst <= 1e-8, worst, 1e-8))
        if dom.N <= 2000:
            res = resolvent_residual(dom, pair)
            cases.append(Case("identities", f"resolvent[{k}] N={dom.N}", res <= 1e-8, res, 1e-8))
        bad = verify_pair(pair)
        cases.append(Case("identities", f"pair_invariants[{k}]", not bad, float(len(bad)), 0.0, ",".join(bad)))
    if corrupt:
        cases.append(corrupted_pair_case())
    return cases


def corrupted_pair_case() -> Case:
    """Negative control: a deliberately wrong eigenfunction must be rejected."""
    from .spectral import principal_pair, verify_pair
    pair = principal_pair(ball_domain(5, 2))
    phi = pair.phi1.copy()
    phi[0] += 0.05
    phi /= phi.sum()
    bad = verify_pair(replace(pair, phi1=phi))
    return Case("identities", "corrupted_pair (negative control)", not bad, float(len(bad)), 0.0,
                "violated: " + ",".join(bad) if bad else "")


def _suite_parity(n: int, seed: int) -> list[Case]:
    from .spectral import parity_structure_residuals
    cases = []
    for k, (d, p, dom) in enumerate(random_domains(n, 200, seed)):
        res = parity_structure_residuals(dom)
        worst = max(v for key, v in res.items() if key != "l1_sandwich")
        ok = worst <= 1e-10 and res["l1_sandwich"] <= 1e-12
        cases.append(Case("parity", f"parity[{k}] d={d} N={dom.N}", ok, worst, 1e-10))
    return cases


def nested_pair(seed: int, max_sites: int = 400) -> tuple[LatticeDomain, LatticeDomain, np.ndarray]:
    """``(B, A, removed)`` with ``A = B minus removed``; B a random cluster."""
    rng = np.random.default_rng(seed)
    d = 2 if seed % 2 == 0 else 3
    big = random_domain(seed, d, float(rng.choice([0.6, 0.7, 0.8])), max_sites)
    k = int(rng.integers(1, max(2, big.N // 4)))
    removed = big.sites[rng.choice(big.N, size=min(k, big.N - 1), replace=False)] if big.N > 1 else big.sites[:0]
    return big, big.minus(removed), removed


def _suite_monotonicity(n: int, seed: int) -> list[Case]:
    from .spectral import principal_pair
    cases = []
    for k in range(n):
        big, small, _ = nested_pair(seed * 100003 + k)
        lb = principal_pair(big).lambda1
        ls = principal_pair(small).lambda1 if small.N else 0.0
        cases.append(Case("monotonicity", f"nested[{k}]", ls <= lb + 1e-12, ls - lb, 1e-12))
    return cases


def _suite_surgery(n: int, seed: int) -> list[Case]:
    from .surgery import drop_upper_bound_check
    cases = []
    for k in range(n):
        d1, _, removed = nested_pair(seed * 7919 + k)
        chk = drop_upper_bound_check(d1, removed)
        ok = chk.vacuous or chk.margin >= -1e-9
        cases.append(Case("surgery-bounds", f"drop_bound[{k}] q={chk.q:.3g}", ok, chk.margin, -1e-9,
                          "vacuous" if chk.vacuous else ""))
    return cases


def _suite_iso(seed: int, radii=(5, 10, 20), n_random: int = 1000) -> list[Case]:
    from .surgery import exhaustive_iso_constant, iso_suite
    c0, _ = exhaustive_iso_constant(2, 2)
    cases = [Case("iso", "exhaustive R=2", c0 > 0, c0, 0.0)]
    for R in radii:
        for name, ratio in iso_suite(R, 2, n_random=n_random, seed=seed).items():
            cases.append(Case("iso", f"{name} R={R}", ratio >= 0.5 * c0, ratio, 0.5 * c0))
    return cases


def profile_deviation(R: int, kind: str = "endpoint") -> tuple[float, float]:
    """Sup deviation of the rescaled clean-ball law from its continuum profile.

    ``endpoint``: ``R^2 P(S_m = x | tau > m)`` against ``2 phi1``;
    ``bulk``: ``R^2 P(S_m = x | S_{m+t} = 0, tau > m + t)``, ``t = m/2``,
    against ``2 phi2^2``; ``m = 8 R^2``. Returns (deviation, profile peak).
    """
    from .continuum import profile, profile_values
    from .spectral import expansion_law, parity_basis
    dom = ball_domain(R, 2)
    m = 8 * R * R
    basis = parity_basis(dom, 0)
    if kind == "endpoint":
        law = expansion_law(dom, (0, 0), m, basis=basis)
        target = profile("phi1_L1", 2)
    elif kind == "bulk":
        law = expansion_law(dom, (0, 0), m, t=m // 2, end=(0, 0), basis=basis)
        target = profile("phi2_squared", 2)
    else:
        raise ValueError("kind must be endpoint or bulk")
    ref = profile_values(target, dom.sites, (0, 0), R, parity=0)
    dev = float(np.max(np.abs(R * R * (law.u - ref))))
    return dev, 2.0 * target.peak


def _suite_profiles(radii=(15, 25)) -> list[Case]:
    cases = []
    for kind in ("endpoint", "bulk"):
        devs = []
        for R in radii:
            dev, peak = profile_deviation(R, kind)
            devs.append(dev)
            cases.append(Case("profiles", f"{kind} R={R}", dev <= 0.25 * peak, dev, 0.25 * peak))
        mono = all(b <= a for a, b in zip(devs, devs[1:]))
        cases.append(Case("profiles", f"{kind} nonincreasing", mono, devs[-1] - devs[0], 0.0))
    return cases


def run_suite(name: str, n: int | None = None, seed: int = 0, corrupt: bool = False) -> list[Case]:
    """Run one named suite; ``n`` overrides the number of random cases."""
    if name == "identities":
        return _suite_identities(n or 50, seed, corrupt)
    if name == "parity":
        return _suite_parity(n or 30, seed)
    if name == "monotonicity":
        return _suite_monotonicity(n or 200, seed)
    if name == "surgery-bounds":
        return _suite_surgery(n or 200, seed)
    if name == "iso":
        return _suite_iso(seed)
    if name == "profiles":
        return _suite_profiles()
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
