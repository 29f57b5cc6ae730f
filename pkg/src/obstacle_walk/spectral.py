"""Dirichlet eigenpairs of the killed walk via the two-step parity reduction.

The killed kernel ``Q`` on a bipartite lattice domain has spectrum symmetric
about zero, so power-type solvers on ``Q`` oscillate. Everything here works
with ``Q^2`` restricted to one parity class, whose eigenvalues are the squares
of the eigenvalues of ``Q``, and maps eigenvectors back through ``Q``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .domain import LatticeDomain
from .walk import MassProfile, survival_vector

DENSE_LIMIT = 512


class ConvergenceError(RuntimeError):
    """Raised when an iterative eigensolver exhausts its budget."""


@dataclass(frozen=True, eq=False)
class SpectralPair:
    """Principal eigenpair ``(lambda1, phi1)`` of the killed kernel.

    ``phi1`` is indexed like ``domain.sites`` and sums to one. ``parity_split``
    is ``(|phi_even|_1, |phi_odd|_1, |phi_even|_2, |phi_odd|_2)``.
    """

    domain: LatticeDomain
    lambda1: float
    phi1: np.ndarray
    l2_norm_sq: float
    parity_split: tuple[float, float, float, float]
    solver_stats: dict
    component: int = 0
    lambda2: float | None = None
    gap: float | None = None

    def value(self, site) -> float:
        try:
            return float(self.phi1[self.domain.index_of(site)])
        except KeyError:
            return 0.0

    @property
    def sup_norm(self) -> float:
        return float(self.phi1.max())


def _solve_top(Q2: "spla.LinearOperator", n: int, k: int, tol: float, method: str,
               maxiter: int) -> tuple[np.ndarray, np.ndarray, dict]:
    """Top ``k`` eigenpairs of a symmetric PSD operator; returns descending order."""
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if n <= k:
        method = "dense"
    if method == "dense":
        mat = Q2.toarray() if hasattr(Q2, "toarray") else np.asarray(Q2)
        w, v = sla.eigh(mat)
        order = np.argsort(w)[::-1][:k]
        return w[order], v[:, order], {"method": "dense", "iterations": 0}
    if method == "lanczos":
        v0 = np.ones(n)
        w, v = spla.eigsh(Q2, k=k, which="LA", tol=0.0, v0=v0, maxiter=maxiter,
                          ncv=min(n, max(2 * k + 1, 40)))
        order = np.argsort(w)[::-1]
        return w[order], v[:, order], {"method": "lanczos", "iterations": None}
    if method == "power":
        if k != 1:
            raise ValueError("power iteration only computes the top eigenpair")
        v = np.ones(n) / math.sqrt(n)
        mu = 0.0
        for it in range(1, maxiter + 1):
            w = Q2 @ v
            mu_new = float(v @ w)
            nrm = float(np.linalg.norm(w))
            if nrm == 0.0:
                return np.array([0.0]), v[:, None], {"method": "power", "iterations": it}
            resid = float(np.max(np.abs(w - mu_new * v)))
            v = w / nrm
            if abs(mu_new - mu) <= tol * max(mu_new, 1e-300) and resid <= tol * max(mu_new, 1e-300):
                return np.array([mu_new]), v[:, None], {"method": "power", "iterations": it}
            mu = mu_new
        raise ConvergenceError(f"power iteration did not converge in {maxiter} steps")
    raise ValueError(f"unknown method {method!r}")


def _component_pair(dom: LatticeDomain, tol: float, method: str, maxiter: int):
    """(lambda, phi) for a connected domain, phi >= 0 with unit l1 norm."""
    if dom.N == 1:
        return 0.0, np.ones(1), {"method": "trivial", "iterations": 0}
    cls = 0 if np.any(dom.parity == 0) else 1
    Q2, ic, io = dom.two_step(cls)
    mu, vec, stats = _solve_top(Q2, len(ic), 1, tol, method, maxiter)
    lam = math.sqrt(max(float(mu[0]), 0.0))
    psi = np.abs(vec[:, 0])
    phi = np.zeros(dom.N)
    phi[ic] = psi
    if lam > 0:
        phi[io] = (dom.P[io][:, ic] @ psi) / lam
    phi /= math.fsum(phi)
    return lam, phi, stats


def principal_pair(domain: LatticeDomain, tol: float = 1e-12, method: str = "auto",
                   maxiter: int = 10**6, second: bool = False) -> SpectralPair:
    """Principal eigenvalue and l1-normalised eigenfunction of ``P|_A``.

    Parameters
    ----------
    domain : LatticeDomain
    tol : float
        Target relative residual ``|P phi - lambda phi|_inf / lambda``.
    method : {"auto", "dense", "lanczos", "power"}
        ``auto`` uses a dense solve up to 512 sites per parity class.
    second : bool
        Also compute ``lambda2`` and the squared gap (see :func:`spectral_gap`).

    Notes
    -----
    Reducible domains are solved per connected component; the largest
    eigenvalue wins and ties go to the component containing the
    lexicographically smallest site.
    """
    if domain.N == 0:
        raise ValueError("empty domain")
    n_comp, labels = domain.components()
    best = None
    for c in range(n_comp):
        idx = np.nonzero(labels == c)[0]
        sub = domain if n_comp == 1 else domain.subdomain(idx)
        lam, phi, stats = _component_pair(sub, tol, method, maxiter)
        if best is None or lam > best[0]:
            best = (lam, phi, stats, c, idx)
    lam, phi_c, stats, comp, idx = best
    phi = np.zeros(domain.N)
    phi[idx] = phi_c
    resid = float(np.max(np.abs(domain.P @ phi - lam * phi)))
    stats = dict(stats, residual=resid, n_components=n_comp)
    if lam > 0 and resid > max(tol, 1e-14) * lam * 10:
        stats["warning"] = "residual above tolerance"
    even = domain.parity == 0
    split = (math.fsum(phi[even]), math.fsum(phi[~even]),
             float(np.linalg.norm(phi[even])), float(np.linalg.norm(phi[~even])))
    lam2 = gap = None
    if second:
        g = spectral_gap(domain, tol=tol, method=method)
        lam2, gap = g.lambda2, g.gap
        stats["single_mode"] = g.single_mode
    return SpectralPair(domain, lam, phi, float(phi @ phi), split, stats, comp, lam2, gap)


@dataclass(frozen=True)
class GapResult:
    lambda1: float
    lambda2: float
    gap: float
    single_mode: bool = False


def spectral_gap(domain: LatticeDomain, tol: float = 1e-12, method: str = "auto") -> GapResult:
    """Two largest eigenvalues of the even two-step operator.

    ``lambda1`` and ``lambda2`` are reported on the scale of ``Q`` (square
    roots); ``gap = lambda1**2 - lambda2**2``. When the even class holds a
    single site there is no second eigenvalue: ``lambda2 = 0`` and
    ``single_mode`` is set.
    """
    if domain.N == 0:
        raise ValueError("empty domain")
    cls = 0 if np.any(domain.parity == 0) else 1
    Q2, ic, _ = domain.two_step(cls)
    if len(ic) == 1:
        mu1 = float(Q2.toarray()[0, 0])
        return GapResult(math.sqrt(max(mu1, 0.0)), 0.0, mu1, True)
    mu, _, _ = _solve_top(Q2, len(ic), 2, tol, "dense" if method == "power" else method, 10**6)
    mu = np.maximum(mu, 0.0)
    return GapResult(math.sqrt(mu[0]), math.sqrt(mu[1]), float(mu[0] - mu[1]))


def eigenfunction_value_identity_check(domain: LatticeDomain, t: int,
                                       pair: SpectralPair | None = None) -> float:
    """``|sum_v phi(v) P^v(exit by t) - (1 - lambda^t)|``.

    The exit probabilities come from iterating the killed kernel on the
    constant function, independently of the eigensolver.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    pair = pair or principal_pair(domain)
    exit_prob = 1.0 - survival_vector(domain, t)
    lhs = math.fsum(pair.phi1 * exit_prob)
    rhs = 1.0 - pair.lambda1 ** t
    return abs(lhs - rhs)


def sup_norm_bound_check(domain: LatticeDomain, pair: SpectralPair | None = None) -> float:
    """Ratio ``|phi|_inf / (1 - lambda)^(d/2)``."""
    pair = pair or principal_pair(domain)
    if not pair.lambda1 < 1.0:
        raise AssertionError("lambda = 1 cannot occur on a finite domain")
    return pair.sup_norm / (1.0 - pair.lambda1) ** (domain.d / 2)


def lambda_star_lower_bound(rho: float, d: int, c_star: float) -> float:
    """Configurable threshold ``1 - mu_B / rho^2 - c_star / rho^3``."""
    from .continuum import mu_ball
    return 1.0 - mu_ball(d) / rho**2 - c_star / rho**3


# -- eigen-expansion of transition probabilities -------------------------------

@dataclass(frozen=True, eq=False)
class ParityBasis:
    """Eigenbasis of ``Q^2`` on class ``cls`` with the images ``chi = Q psi``.

    ``mu`` is sorted in decreasing order; ``psi`` columns are orthonormal.
    """

    domain: LatticeDomain
    cls: int
    idx_c: np.ndarray
    idx_o: np.ndarray
    mu: np.ndarray
    psi: np.ndarray
    chi: np.ndarray

    def apply_power(self, k: int, vec: np.ndarray, n_modes: int | None = None,
                    log_scale: float = 0.0) -> np.ndarray:
        """``Q^k vec`` from the expansion, times ``exp(-log_scale)``.

        ``Q`` is symmetric, so ``apply_power(k, e_x)`` is the row ``Q^k(x, .)``.
        """
        vec = np.asarray(vec, dtype=float)
        if k == 0:
            return vec * math.exp(-log_scale)
        r = len(self.mu) if n_modes is None else min(n_modes, len(self.mu))
        with np.errstate(divide="ignore"):
            logmu = np.log(np.maximum(self.mu[:r], 0.0))
        psi, chi = self.psi[:, :r], self.chi[:, :r]
        ic, io = self.idx_c, self.idx_o
        j = k // 2
        w_j = np.exp(j * logmu - log_scale)
        out = np.zeros_like(vec)
        if k % 2 == 0:
            out[ic] = psi @ (w_j * (psi.T @ vec[ic]))
            if len(io):
                w_prev = np.exp((j - 1) * logmu - log_scale)
                out[io] = chi @ (w_prev * (chi.T @ vec[io]))
        else:
            out[ic] = psi @ (w_j * (chi.T @ vec[io]))
            out[io] = chi @ (w_j * (psi.T @ vec[ic]))
        return out


def parity_basis(domain: LatticeDomain, cls: int = 0) -> ParityBasis:
    """Full dense eigenbasis of ``Q^2`` on one parity class."""
    Q2, ic, io = domain.two_step(cls)
    if len(ic) == 0:
        raise ValueError("parity class is empty")
    mu, psi = sla.eigh(Q2.toarray())
    order = np.argsort(mu)[::-1]
    mu, psi = mu[order], psi[:, order]
    chi = domain.P[io][:, ic] @ psi
    return ParityBasis(domain, cls, ic, io, mu, psi, np.asarray(chi))


def expansion_law(domain: LatticeDomain, start, m: int, t: int | None = None, end=None,
                  n_modes: int | None = None, basis: ParityBasis | None = None) -> MassProfile:
    """Conditioned law of ``S_m`` from the eigen-expansion of ``Q^2``.

    * ``t is None``: ``P(S_m = x | tau > m)``.
    * ``t`` given, ``end is None``: ``P(S_m = x | tau > m + t)``.
    * ``t`` and ``end`` given: ``P(S_m = x | S_{m+t} = end, tau > m + t)``.

    ``n_modes`` truncates the expansion to the leading modes. ``meta`` carries
    the truncation bound ``N^2 (lambda_{r+1} / lambda_1)^m`` with
    ``r = n_modes``.
    """
    i0 = domain.index_of(start)
    if basis is None:
        basis = parity_basis(domain, int(domain.parity[i0]))
    mu1 = max(float(basis.mu[0]), 1e-300)
    scale = 0.5 * m * math.log(mu1)
    unit = np.zeros(domain.N)
    unit[i0] = 1.0
    fwd = basis.apply_power(m, unit, n_modes, log_scale=scale)
    if t is None:
        w = fwd
    elif end is None:
        back = basis.apply_power(t, np.ones(domain.N), n_modes, log_scale=0.5 * t * math.log(mu1))
        w = fwd * back
    else:
        ie = domain.index_of(end)
        parity_gap = int(domain.parity[i0]) + m + t + int(domain.parity[ie])
        if parity_gap % 2:
            raise ValueError("bridge endpoint has the wrong parity")
        unit_end = np.zeros(domain.N)
        unit_end[ie] = 1.0
        back = basis.apply_power(t, unit_end, n_modes, log_scale=0.5 * t * math.log(mu1))
        w = fwd * back
    w = np.where(w > 0, w, 0.0)
    z = math.fsum(w)
    if z <= 0:
        raise ValueError("conditioning event has probability zero")
    r = len(basis.mu) if n_modes is None else n_modes
    bound = 0.0
    if r < len(basis.mu):
        ratio = math.sqrt(max(basis.mu[r], 0.0) / mu1)
        bound = domain.N**2 * ratio**m
    return MassProfile(domain, m, w / z, 1.0, tuple(int(c) for c in start), "even",
                       {"truncation_bound": bound})


# -- oracles and invariant checks ---------------------------------------------

def dense_spectrum(domain: LatticeDomain) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors of the dense kernel."""
    w, v = sla.eigh(domain.dense())
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def parity_structure_residuals(domain: LatticeDomain) -> dict:
    """Dense checks of the two-step reduction on a connected domain.

    Returns the worst deviations for: the nonzero spectra of ``Q^2`` on each
    class versus the squared positive eigenvalues of ``Q``; the even
    restriction of the principal eigenvector versus the top eigenvector of
    ``Q^2_even``; equality of the parity l2 norms; and the l1 ratio sandwich
    (negative means satisfied).
    """
    w, v = dense_spectrum(domain)
    cut = 1e-6
    pos = w[w > cut] ** 2
    out = {}
    for cls in (0, 1):
        Q2, ic, _ = domain.two_step(cls)
        if len(ic) == 0:
            continue
        s = np.sort(sla.eigvalsh(Q2.toarray()))[::-1]
        head, tail = s[:len(pos)], s[len(pos):]
        if len(head) < len(pos):
            out[f"spectrum_{cls}"] = math.inf
            continue
        dev = float(np.max(np.abs(head - pos))) if len(pos) else 0.0
        # whatever is left must be the kernel (up to rounding)
        if len(tail):
            dev = max(dev, float(np.max(np.abs(tail))) if np.max(np.abs(tail)) > cut**2 else 0.0)
        out[f"spectrum_{cls}"] = dev
    phi = np.abs(v[:, 0])
    even = domain.parity == 0
    Q2e, ie, _ = domain.two_step(0)
    mu, psi = sla.eigh(Q2e.toarray())
    top = np.abs(psi[:, np.argmax(mu)])
    a = phi[even] / phi[even].sum()
    b = top / top.sum()
    out["eigvec"] = float(np.max(np.abs(a - b)))
    phi = phi / phi.sum()
    lam = float(w[0])
    out["l2_split"] = abs(float(np.linalg.norm(phi[even]) - np.linalg.norm(phi[~even])))
    e1, o1 = phi[even].sum(), phi[~even].sum()
    out["l1_sandwich"] = float(max(lam * o1 - e1, e1 - o1 / lam)) if lam > 0 else 0.0
    return out


def rayleigh_check(domain: LatticeDomain, lambda1: float, n_vectors: int = 100,
                   seed: int = 0) -> float:
    """Smallest ``lambda1 - v.Pv / v.v`` over random nonnegative ``v``."""
    rng = np.random.default_rng(seed)
    V = rng.random((domain.N, n_vectors))
    rq = np.einsum("ij,ij->j", V, domain.P @ V) / np.einsum("ij,ij->j", V, V)
    return float(np.min(lambda1 - rq))


def verify_pair(pair: SpectralPair, tol: float = 1e-10) -> list[str]:
    """Names of the eigenpair invariants that ``pair`` violates."""
    dom, lam, phi = pair.domain, pair.lambda1, pair.phi1
    bad = []
    if np.any(phi < -tol):
        bad.append("nonnegative")
    if abs(phi.sum() - 1.0) > tol:
        bad.append("l1_normalised")
    resid = float(np.max(np.abs(dom.P @ phi - lam * phi)))
    if resid > tol * max(lam, 1e-300) + 1e-15:
        bad.append("residual")
    e1, o1, e2, o2 = pair.parity_split
    n_comp, labels = dom.components()
    comp = labels == pair.component
    if lam > 0 and np.any(dom.parity[comp] == 0) and np.any(dom.parity[comp] == 1):
        if abs(e2 - o2) > tol:
            bad.append("l2_parity_split")
        if lam * o1 > e1 + tol or e1 > o1 / lam + tol:
            bad.append("l1_parity_sandwich")
    return bad
