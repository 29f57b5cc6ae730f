"""Obstacle surgery and the potential theory behind it.

Eigenvalue shifts under removing or adding obstacles, the drop bound in terms
of eigenfunction mass, Green's functions, capacities and escape
probabilities, Harnack-type ratios, and the discrete isoperimetric check on
lattice balls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import LatticeDomain, outer_boundary
from .lattice import EnvironmentField, euclidean_ball
from .localization import detect_truly_open, shell_index
from .spectral import principal_pair

SURGERY_KINDS = ("remove_obstacles_in", "close_box")


def _lam(domain: LatticeDomain, tol: float = 1e-12) -> float:
    """Principal eigenvalue, with 0 for the empty domain."""
    return 0.0 if domain.N == 0 else principal_pair(domain, tol=tol).lambda1


# -- surgery ops -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SurgeryOp:
    kind: str
    region: np.ndarray
    before: EnvironmentField
    after: EnvironmentField


def make_op(env: EnvironmentField, kind: str, region) -> SurgeryOp:
    """Build ``remove_obstacles_in`` (open the region) or ``close_box`` (close it)."""
    region = np.asarray(region, dtype=np.int64).reshape(-1, env.d)
    if kind == "remove_obstacles_in":
        after = env.open_sites_at(region)
    elif kind == "close_box":
        after = env.close_sites(region)
    else:
        raise ValueError(f"kind must be one of {SURGERY_KINDS}")
    return SurgeryOp(kind, region, env, after)


def box_sites(center, radius: int) -> np.ndarray:
    """Sites of the cube ``K(center, radius)`` in the sup norm."""
    c = np.asarray(center, dtype=np.int64)
    axes = np.meshgrid(*[np.arange(v - radius, v + radius + 1) for v in c], indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=1)


@dataclass(frozen=True)
class ShiftResult:
    lambda_before: float
    lambda_after: float
    delta: float


def eig_shift(op: SurgeryOp, region_mask=None, tol: float = 1e-12) -> ShiftResult:
    """Principal eigenvalue of the open sites (inside ``region_mask``) before and after ``op``.

    Removal can only raise the eigenvalue and closing can only lower it; a
    violation beyond solver tolerance raises AssertionError.
    """
    before = _lam(LatticeDomain.from_env(op.before, region=region_mask), tol)
    after = _lam(LatticeDomain.from_env(op.after, region=region_mask), tol)
    delta = after - before
    slack = 1e-10
    if op.kind == "remove_obstacles_in" and delta < -slack:
        raise AssertionError(f"removal lowered the eigenvalue by {-delta}")
    if op.kind == "close_box" and delta > slack:
        raise AssertionError(f"closing raised the eigenvalue by {delta}")
    return ShiftResult(before, after, delta)


# -- drop bound ----------------------------------------------------------------------

@dataclass(frozen=True)
class DropCheck:
    actual_drop: float
    bound: float
    margin: float
    q: float
    vacuous: bool = False


def drop_upper_bound_check(d1: LatticeDomain, d2_sites, tol: float = 1e-12) -> DropCheck:
    """Compare ``lambda_D1 - lambda_{D1 \\ D2}`` with ``2q / (1 - q)``.

    ``q`` is the share of ``|phi_D1|_2^2`` carried by ``D2`` and its outer
    boundary. When ``q >= 1`` the bound is vacuous and reported as such.
    """
    d2 = np.asarray(d2_sites, dtype=np.int64).reshape(-1, d1.d)
    if len(d2) and np.any(d1.indices_of(d2) < 0):
        raise ValueError("D2 must be a subset of D1")
    if len(d2) == 0:
        return DropCheck(0.0, 0.0, 0.0, 0.0)
    pair = principal_pair(d1, tol=tol)
    phi = pair.phi1
    zone = np.unique(np.concatenate([d2, outer_boundary(d2)]), axis=0)
    idx = d1.indices_of(zone)
    q = float(np.sum(phi[idx[idx >= 0]] ** 2) / pair.l2_norm_sq)
    actual = pair.lambda1 - _lam(d1.minus(d2), tol)
    if q >= 1.0:
        return DropCheck(actual, math.inf, math.inf, q, True)
    bound = 2 * q / (1 - q)
    return DropCheck(actual, bound, bound - actual, q)


# -- Green's function and resolvent ------------------------------------------------

@dataclass(frozen=True, eq=False)
class PotentialData:
    """Green's function block ``G[sources, targets]`` and optional extras."""

    sources: np.ndarray
    targets: np.ndarray
    green: np.ndarray
    symmetry_error: float = 0.0
    capacity: float | None = None
    escape_prob: float | None = None
    harnack_ratio: float | None = None
    extra: dict = field(default_factory=dict)


def _resolvent_solver(domain: LatticeDomain):
    A = (sp.identity(domain.N, format="csc") - domain.P.tocsc())
    return spla.splu(A)


def greens_function(domain: LatticeDomain, sources=None, targets=None) -> PotentialData:
    """``G(u, v) = sum_t P^u(S_t = v, t < tau)`` via a sparse LU solve of ``(I - P) G = I``.

    Symmetry ``G(u, v) = G(v, u)`` is checked on the requested block.
    """
    if domain.N == 0:
        raise ValueError("empty domain")
    src = domain.sites if sources is None else np.asarray(sources, dtype=np.int64).reshape(-1, domain.d)
    tgt = domain.sites if targets is None else np.asarray(targets, dtype=np.int64).reshape(-1, domain.d)
    si, ti = domain.indices_of(src), domain.indices_of(tgt)
    if np.any(si < 0) or np.any(ti < 0):
        raise ValueError("sources and targets must lie in the domain")
    lu = _resolvent_solver(domain)
    cols = np.unique(np.concatenate([si, ti]))
    rhs = np.zeros((domain.N, len(cols)))
    rhs[cols, np.arange(len(cols))] = 1.0
    sol = lu.solve(rhs)  # sol[:, k] = G(., cols[k])
    pos = {c: k for k, c in enumerate(cols)}
    g = np.array([[sol[s, pos[t]] for t in ti] for s in si])
    gt = np.array([[sol[t, pos[s]] for t in ti] for s in si])
    sym = float(np.max(np.abs(g - gt))) if g.size else 0.0
    if sym > 1e-10:
        raise AssertionError(f"Green's function asymmetric by {sym}")
    if np.any(g < -1e-14):
        raise AssertionError("negative Green's function value")
    return PotentialData(src, tgt, g, sym)


def green_series(domain: LatticeDomain, source, rtol: float = 1e-12, max_terms: int = 10**7) -> np.ndarray:
    """``G(source, .)`` by summing ``P^t e_source`` until the terms are negligible."""
    v = np.zeros(domain.N)
    v[domain.index_of(source)] = 1.0
    total = v.copy()
    for _ in range(max_terms):
        v = domain.P @ v
        total += v
        if v.sum() <= rtol * total.sum():
            return total
    raise AssertionError("geometric series did not converge")


def resolvent_residual(domain: LatticeDomain, pair=None) -> float:
    """``max_x |phi(x) - (1 - lambda) sum_v phi(v) G(v, x)|`` relative to ``max phi``."""
    pair = pair or principal_pair(domain)
    lu = _resolvent_solver(domain)
    g_phi = lu.solve(pair.phi1)  # G symmetric, so this is sum_v phi(v) G(v, .)
    res = pair.phi1 - (1.0 - pair.lambda1) * g_phi
    return float(np.max(np.abs(res)) / pair.phi1.max())


# -- capacity and escape -------------------------------------------------------------

def _escape_in_box(A: np.ndarray, L: int, tol: float) -> np.ndarray:
    """Per-site probability of leaving ``[-L, L]^d`` (around A) before returning to A."""
    d = A.shape[1]
    mid = (A.min(axis=0) + A.max(axis=0)) // 2
    box = LatticeDomain.box([(int(m) - L, int(m) + L) for m in mid])
    rest = box.minus(A)
    # h(y) = P^y(hit A before leaving the box), harmonic off A
    tgt = LatticeDomain(A)
    off = LatticeDomain.step_offsets(d)
    b = np.zeros(rest.N)
    for k in range(2 * d):
        b += (tgt.indices_of(rest.sites + off[k]) >= 0) / (2 * d)
    M = sp.identity(rest.N, format="csr") - rest.P
    h, info = spla.cg(M, b, rtol=tol, atol=0.0, maxiter=100000)
    if info != 0:
        raise RuntimeError("capacity solve did not converge")
    esc = np.ones(len(A))
    for i, x in enumerate(A):
        for k in range(2 * d):
            y = x + off[k]
            j = rest.indices_of(y)[0]
            if j >= 0:
                esc[i] -= h[j] / (2 * d)
            elif tgt.indices_of(y)[0] >= 0:
                esc[i] -= 1.0 / (2 * d)
    return esc


@dataclass(frozen=True)
class CapacityResult:
    capacity: float
    box_sizes: tuple
    box_values: tuple
    truncation_error: float


def capacity(A, box_sizes=(8, 16, 32), tol: float = 1e-12) -> CapacityResult:
    """Capacity ``sum_{x in A} P^x(never return to A)`` of a finite set in ``d >= 3``.

    Solved on nested boxes and extrapolated in the box size assuming the
    error expands in powers of ``1 / L`` (the leading term ``L^-(d-2)``);
    ``truncation_error`` is the distance from the extrapolation to the
    largest box.
    """
    A = np.unique(np.asarray(A, dtype=np.int64).reshape(len(A), -1), axis=0)
    if len(A) == 0:
        raise ValueError("A must be nonempty")
    d = A.shape[1]
    if d < 3:
        raise ValueError("capacity is infinite-volume only for d >= 3; use escape_probability")
    vals = [float(_escape_in_box(A, L, tol).sum()) for L in box_sizes]
    Ls = np.asarray(box_sizes, dtype=float)
    powers = [0] + [d - 2 + k for k in range(len(Ls) - 1)]
    V = np.stack([Ls ** (-p) for p in powers], axis=1)
    coef = np.linalg.solve(V, np.asarray(vals)) if len(Ls) == V.shape[1] else \
        np.linalg.lstsq(V, np.asarray(vals), rcond=None)[0]
    cap = float(coef[0])
    return CapacityResult(cap, tuple(box_sizes), tuple(vals), abs(cap - vals[-1]))


def escape_probability(R: float, d: int = 2, point=None) -> float:
    """``P^z(return to z after exiting B(z, R))`` complement: escape before return.

    Equals ``1 / G_B(z, z)`` for the walk killed on leaving the ball.
    """
    z = (0,) * d if point is None else tuple(point)
    ball = LatticeDomain(euclidean_ball(z, R))
    lu = _resolvent_solver(ball)
    e = np.zeros(ball.N)
    e[ball.index_of(z)] = 1.0
    return 1.0 / float(lu.solve(e)[ball.index_of(z)])


# -- Harnack ratio ----------------------------------------------------------------

@dataclass(frozen=True)
class HarnackResult:
    ratio: float
    one_minus_ratio: float
    n_sources: int
    worst_source: tuple


def harnack_ratio(R1: float, R2: float, d: int = 2, max_sources: int | None = None) -> HarnackResult:
    """``max_v max_{y in B_R2} G(y, v) / G(0, v)`` over sources v in the middle annulus.

    The domain is the ball ``B(0, R1)``; sources lie between radii
    ``R1 - 2(R1 - R2)/3`` and ``R1 - (R1 - R2)/3``.
    """
    if not 0 <= R2 < R1:
        raise ValueError("need 0 <= R2 < R1")
    ball = LatticeDomain(euclidean_ball((0,) * d, R1))
    r = np.linalg.norm(ball.sites, axis=1)
    lo, hi = R1 - 2 * (R1 - R2) / 3, R1 - (R1 - R2) / 3
    src = np.nonzero((r >= lo) & (r <= hi))[0]
    if len(src) == 0:
        raise ValueError("source annulus is empty")
    if max_sources is not None and len(src) > max_sources:
        src = src[np.linspace(0, len(src) - 1, max_sources).astype(int)]
    lu = _resolvent_solver(ball)
    rhs = np.zeros((ball.N, len(src)))
    rhs[src, np.arange(len(src))] = 1.0
    G = lu.solve(rhs)
    inner = r <= R2 + 1e-9
    ref = ball.index_of((0,) * d)
    ratios = G[inner].max(axis=0) / G[ref]
    k = int(np.argmax(ratios))
    return HarnackResult(float(ratios[k]), 1 - R2 / R1, len(src),
                         tuple(int(v) for v in ball.sites[src[k]]))


# -- removal gain ---------------------------------------------------------------------

@dataclass(frozen=True)
class RemovalGain:
    gain: float
    floor_shape: float
    fitted_constant: float
    m: int
    J: int
    lambda_partial: float
    lambda_full: float


def removal_gain_check(env: EnvironmentField, center, rho: float, delta: float, c5: float = 0.5,
                       region_radius: float | None = None, tol: float = 1e-12) -> RemovalGain:
    """Two-stage obstacle removal inside the shell ``B_{delta, J-1}``.

    Stage one opens the annulus ``B_{delta,J-1} \\ B_{delta,J}``, stage two the
    core ``B_{delta,J}``. The stage-two eigenvalue gain is returned next to
    the shape ``(m / rho^d)^(1 - 1/d) rho^-2`` with ``m`` the obstacle count in
    ``B_{delta,J-1}``; their ratio is the fitted constant. The working domain
    is the open part of ``B(center, region_radius)`` (default ``rho``).
    """
    shells = shell_index(env, center, rho, delta, c5)
    if shells.clear:
        raise ValueError("inner ball is obstacle-free; nothing to remove")
    J = shells.J
    r_outer, r_inner = shells.radii[J - 1], shells.radii[J]
    m = shells.counts[J - 1]
    outer = euclidean_ball(center, r_outer)
    inner = euclidean_ball(center, r_inner)
    region = env.mask_of(euclidean_ball(center, region_radius or rho))
    core_set = {tuple(s) for s in inner.tolist()}
    annulus = np.array([s for s in outer.tolist() if tuple(s) not in core_set], dtype=np.int64)
    stage1 = env.open_sites_at(annulus) if len(annulus) else env
    stage2 = stage1.open_sites_at(inner)
    lam1 = _lam(LatticeDomain.from_env(stage1, region=region), tol)
    lam2 = _lam(LatticeDomain.from_env(stage2, region=region), tol)
    d = env.d
    floor = (m / rho**d) ** (1 - 1 / d) * rho**-2.0
    gain = lam2 - lam1
    return RemovalGain(gain, floor, gain / floor if floor > 0 else math.nan, m, J, lam1, lam2)


# -- low-impact box selection ----------------------------------------------------------

@dataclass(frozen=True)
class BoxSelection:
    anchor: tuple | None
    predicted_bound: float
    actual_drop: float
    mass_share: float
    lambda_before: float
    lambda_after: float
    n_candidates: int
    env_after: EnvironmentField | None = None


def low_impact_box_selection(env: EnvironmentField, ell: int, region=None, close_factor: int = 10,
                             sum_factor: int = 11, reach_factor: int = 100,
                             tol: float = 1e-12) -> BoxSelection:
    """Close the truly-open box that carries the least eigenfunction mass.

    Candidates are truly-open anchors within sup-distance ``reach_factor * ell``
    of a box that is not truly open. The winner minimises the share of
    ``|phi_V|_2^2`` in ``K(x, sum_factor * ell)``; closing
    ``K(x, close_factor * ell)`` drops the eigenvalue by at most four times that
    share (checked). Ties go to the lexicographically smallest anchor.
    """
    region_mask = None if region is None else np.asarray(region, bool)
    V = LatticeDomain.from_env(env, region=region_mask)
    if V.N == 0:
        raise ValueError("empty domain")
    pair = principal_pair(V, tol=tol)
    tiles = detect_truly_open(env, ell, region=region_mask)
    good = tiles.stay_probability >= tiles.threshold
    bad_anchors = tiles.anchors[~good]
    cand = tiles.anchors[good]
    if len(bad_anchors):
        # sup distance from anchor to the nearest site of a bad tile
        dist = np.min(np.max(np.abs(cand[:, None, :] - bad_anchors[None, :, :]), axis=2), axis=1) - ell \
            if len(cand) else np.zeros(0)
        cand = cand[dist <= reach_factor * ell]
    else:
        cand = cand[:0]
    if len(cand) == 0:
        return BoxSelection(None, math.nan, math.nan, math.nan, pair.lambda1, pair.lambda1, 0)
    phi2 = pair.phi1**2 / pair.l2_norm_sq
    R = sum_factor * ell
    shares = np.array([
        phi2[np.all(np.abs(V.sites - a) <= R, axis=1)].sum() for a in cand
    ])
    best = np.flatnonzero(shares == shares.min())
    order = np.lexsort(cand[best].T[::-1])
    k = best[order[0]]
    anchor = tuple(int(v) for v in cand[k])
    after_env = env.close_sites(box_sites(anchor, close_factor * ell))
    lam_after = _lam(LatticeDomain.from_env(after_env, region=region_mask), tol)
    drop = pair.lambda1 - lam_after
    bound = 4 * float(shares[k])
    if shares[k] <= 0.5 and drop > bound + 1e-12:
        raise AssertionError(f"drop {drop} exceeds the bound {bound}")
    return BoxSelection(anchor, bound, drop, float(shares[k]), pair.lambda1, lam_after,
                        len(cand), after_env)


def iterated_box_selection(env: EnvironmentField, ell: int, rounds: int, region=None,
                           **kwargs) -> list[BoxSelection]:
    """Repeat :func:`low_impact_box_selection`, feeding each closed environment forward."""
    out = []
    for _ in range(rounds):
        sel = low_impact_box_selection(env, ell, region=region, **kwargs)
        out.append(sel)
        if sel.env_after is None:
            break
        env = sel.env_after
    return out


# -- isoperimetry -------------------------------------------------------------------

@dataclass(frozen=True)
class IsoResult:
    min_interface: int
    floor: float
    ratio: float


def isoperimetric_check(R: float, d: int, part_a, sites=None) -> IsoResult:
    """``min(|dA1 cap A2|, |dA2 cap A1|)`` against ``min(|A1|, |A2|)^(1 - 1/d)``.

    ``part_a`` is a boolean mask over the ball sites (lexicographic order) or a
    site array for A1; A2 is the rest of the ball. ``dA`` is the outer vertex
    boundary.
    """
    if sites is None:
        sites = euclidean_ball((0,) * d, R)
    dom = LatticeDomain(sites)
    arr = np.asarray(part_a)
    if arr.dtype == bool:
        if arr.shape != (dom.N,):
            raise ValueError("mask must cover the ball sites")
        a1 = arr
    else:
        idx = dom.indices_of(arr.reshape(-1, d))
        if np.any(idx < 0):
            raise ValueError("A1 is not a subset of the ball: not a partition")
        a1 = np.zeros(dom.N, bool)
        a1[idx] = True
    return _iso_from_masks(dom.neighbours, a1[None, :], d)[0]


def _iso_from_masks(nbrs: np.ndarray, masks: np.ndarray, d: int) -> list[IsoResult]:
    """Vectorised interface counts for a batch of A1 masks over one ball."""
    valid = nbrs >= 0
    safe = np.where(valid, nbrs, 0)
    nb_in_a1 = masks[:, safe] & valid[None]  # (batch, N, 2d)
    nb_in_a2 = (~masks)[:, safe] & valid[None]
    touches_a1 = nb_in_a1.any(axis=2)
    touches_a2 = nb_in_a2.any(axis=2)
    bd_a1_in_a2 = (~masks & touches_a1).sum(axis=1)
    bd_a2_in_a1 = (masks & touches_a2).sum(axis=1)
    inter = np.minimum(bd_a1_in_a2, bd_a2_in_a1)
    size = np.minimum(masks.sum(axis=1), (~masks).sum(axis=1))
    floor = size.astype(float) ** (1 - 1 / d)
    out = []
    for i, f, s in zip(inter, floor, size):
        out.append(IsoResult(int(i), float(f), float(i / f) if s > 0 else math.inf))
    return out


def exhaustive_iso_constant(R: float = 2, d: int = 2, max_sites: int = 16) -> tuple[float, np.ndarray]:
    """Minimum ratio over every partition of the ball into two nonempty parts.

    Returns the constant and one minimising A1 mask.
    """
    sites = euclidean_ball((0,) * d, R)
    n = len(sites)
    if n > max_sites:
        raise ValueError(f"exhaustive enumeration capped at {max_sites} sites")
    dom = LatticeDomain(sites)
    codes = np.arange(1, 2**n - 1, dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    res = _iso_from_masks(dom.neighbours, masks, d)
    ratios = np.array([r.ratio for r in res])
    k = int(np.argmin(ratios))
    return float(ratios[k]), masks[k]


def iso_suite(R: float, d: int, suites=("halfspace", "annulus", "singleton", "random"),
              n_random: int = 1000, seed: int = 0) -> dict:
    """Minimum isoperimetric ratio per structured partition family."""
    sites = euclidean_ball((0,) * d, R)
    dom = LatticeDomain(sites)
    r = np.linalg.norm(sites, axis=1)
    masks = {}
    if "halfspace" in suites:
        ms = [sites[:, ax] < k for ax in range(d) for k in range(-int(R) + 1, int(R) + 1)]
        masks["halfspace"] = np.array(ms)
    if "annulus" in suites:
        radii = np.unique(r)
        masks["annulus"] = np.array([r <= rr for rr in radii[:-1]])
    if "singleton" in suites:
        ms = []
        for i in (dom.index_of((0,) * d), 0):
            m = np.zeros(dom.N, bool)
            m[i] = True
            ms.append(m)
        masks["singleton"] = np.array(ms)
    if "random" in suites:
        rng = np.random.default_rng(seed)
        ms = []
        for k in range(n_random):
            if k % 2 == 0:
                ms.append(rng.random(dom.N) < rng.uniform(0.05, 0.95))
            else:
                # random blob: ball around a random site with random radius
                c = sites[rng.integers(dom.N)]
                ms.append(np.linalg.norm(sites - c, axis=1) <= rng.uniform(0.5, R))
        ms = np.array(ms)
        keep = ms.any(axis=1) & ~ms.all(axis=1)
        masks["random"] = ms[keep]
    out = {}
    for name, ms in masks.items():
        ratios = []
        for b0 in range(0, len(ms), 64):
            ratios += [x.ratio for x in _iso_from_masks(dom.neighbours, ms[b0:b0 + 64], d)]
        out[name] = float(np.min(ratios))
    return out
