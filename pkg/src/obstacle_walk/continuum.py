"""Continuum reference quantities for the unit ball.

Dirichlet eigenvalues of ``-(1/2d) Laplacian`` on the unit ball, its radial
principal eigenfunction with L1 or L2 normalisation, and the localisation
radius used for vacant-ball comparisons. Bessel functions are evaluated here
directly; scipy is only used for adaptive quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from functools import lru_cache

import numpy as np
from scipy import integrate

from .lattice import euclidean_ball

PROFILE_KINDS = ("phi1_L1", "phi2_L2", "phi2_squared")


# -- Bessel functions of the first kind --------------------------------------

def _bessel_series(nu: float, x: float, digits: int = 40) -> float:
    """Power series for ``J_nu(x)`` summed in ``digits``-digit decimal arithmetic."""
    with localcontext() as ctx:
        ctx.prec = digits
        half = Decimal(repr(x)) / 2
        h2 = half * half
        lead = Decimal(repr(math.gamma(nu + 1)))
        term = Decimal(1) / lead
        total = term
        k = 0
        nu_d = Decimal(repr(nu))
        while True:
            k += 1
            term = -term * h2 / (Decimal(k) * (Decimal(k) + nu_d))
            total += term
            if abs(term) < Decimal(10) ** (-digits + 2) * max(abs(total), Decimal(1)) and k > half:
                break
        return float(total) * (x / 2.0) ** nu


def _bessel_asymptotic(nu: float, x: float) -> float:
    """Hankel expansion of ``J_nu(x)`` for large ``x``."""
    mu = 4.0 * nu * nu
    p, q = 1.0, 0.0
    term = 1.0
    k = 1
    while k < 60:
        term *= (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(term) < 1e-17:
            break
        if k % 2 == 1:
            q += term if (k // 2) % 2 == 0 else -term
        else:
            p += -term if (k // 2) % 2 == 1 else term
        k += 1
    w = x - (0.5 * nu + 0.25) * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(w) - q * math.sin(w))


def bessel_j(nu: float, x: float) -> float:
    """Bessel function ``J_nu(x)`` for ``nu >= 0`` and ``x >= 0``."""
    if nu < 0 or x < 0:
        raise ValueError("bessel_j needs nu >= 0 and x >= 0")
    if x == 0.0:
        return 1.0 if nu == 0 else 0.0
    if x <= 30.0:
        return _bessel_series(nu, x)
    return _bessel_asymptotic(nu, x)


def reduced_bessel(nu: float, z) -> np.ndarray:
    """``Gamma(nu + 1) (2 / z)^nu J_nu(z)``, equal to 1 at ``z = 0``.

    Float series, accurate for ``z`` up to about 12.
    """
    z = np.asarray(z, dtype=float)
    h2 = (z / 2.0) ** 2
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, 80):
        term = -term * h2 / (k * (k + nu))
        total = total + term
        if np.all(np.abs(term) < 1e-18 * np.maximum(np.abs(total), 1e-300)):
            break
    return total


@lru_cache(maxsize=None)
def bessel_zero(nu: float, k: int = 1) -> float:
    """``k``-th positive zero of ``J_nu`` by sign-change scan plus 60 bisections."""
    step = 0.05
    a = max(nu, 1e-3)
    fa = bessel_j(nu, a)
    found = 0
    while True:
        b = a + step
        fb = bessel_j(nu, b)
        if fa == 0.0 or fa * fb < 0:
            found += 1
            if found == k:
                break
        a, fa = b, fb
    lo, hi = a, b
    flo = fa
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        fm = bessel_j(nu, mid)
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


# -- ball spectrum and radius ---------------------------------------------------

@dataclass(frozen=True)
class ContinuumBallSpectrum:
    d: int
    mu1: float
    mu2: float
    bessel_order: float
    j_nu_1: float


def ball_spectrum(d: int) -> ContinuumBallSpectrum:
    """First two Dirichlet eigenvalues of ``-(1/2d) Laplacian`` on the unit ball.

    The second one comes from the first angular mode, i.e. order ``nu + 1``.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    nu = d / 2 - 1
    j1 = bessel_zero(nu, 1)
    j2 = bessel_zero(nu + 1, 1)
    return ContinuumBallSpectrum(d, j1 * j1 / (2 * d), j2 * j2 / (2 * d), nu, j1)


def mu_ball(d: int) -> float:
    """Principal Dirichlet eigenvalue of ``-(1/2d) Laplacian`` on the unit ball."""
    return ball_spectrum(d).mu1


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _decimal_pi() -> Decimal:
    return Decimal("3.14159265358979323846264338327950288419716939937510582097494459")


def _decimal_ball_volume(d: int) -> Decimal:
    pi = _decimal_pi()
    if d % 2 == 0:
        return pi ** (d // 2) / math.factorial(d // 2)
    # Gamma(d/2 + 1) = d!! sqrt(pi) / 2^((d+1)/2)
    dfact = math.prod(range(d, 0, -2))
    return pi.sqrt() ** (d - 1) * Decimal(2) ** ((d + 1) // 2) / Decimal(dfact)


def rho_n(n: int, d: int, p: float) -> int:
    """Radius ``floor((d log_{1/p} n / omega_d)^(1/d))`` in 60-digit arithmetic."""
    if n < 2 or d < 2 or not 0 < p < 1:
        raise ValueError("need n >= 2, d >= 2 and 0 < p < 1")
    with localcontext() as ctx:
        ctx.prec = 60
        log_n = Decimal(int(n)).ln()
        log_inv_p = -Decimal(repr(float(p))).ln()
        arg = Decimal(d) * log_n / log_inv_p / _decimal_ball_volume(d)
        if arg < 1:
            return 0
        root = (arg.ln() / d).exp()
        r = int(root)
        # guard the floor against the last-digit rounding of exp/ln
        if Decimal(r + 1) ** d <= arg:
            r += 1
        elif Decimal(r) ** d > arg:
            r -= 1
        return r


# -- radial profiles ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProfileTarget:
    """Radial profile ``phi(r)`` on the unit ball.

    ``phi1_L1`` integrates to one, ``phi2_L2`` has unit L2 norm and
    ``phi2_squared`` is its square. ``table`` samples the profile on ``radii``.
    """

    kind: str
    d: int
    nu: float
    j: float
    constant: float
    constant_check: float
    radii: np.ndarray
    table: np.ndarray

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        shape = reduced_bessel(self.nu, self.j * np.minimum(r, 1.0))
        vals = self.constant * shape
        if self.kind == "phi2_squared":
            vals = vals * vals
        return np.where(r < 1.0, np.maximum(vals, 0.0), 0.0)

    def interp(self, r) -> np.ndarray:
        return np.interp(r, self.radii, self.table, right=0.0)

    @property
    def peak(self) -> float:
        return float(self(0.0))


def _radial_moment(nu: float, j: float, d: int, power: int) -> tuple[float, float]:
    """``int_0^1 shape(r)^power r^(d-1) dr`` by adaptive quadrature and Gauss-Legendre."""
    def f(r):
        return reduced_bessel(nu, j * r) ** power * r ** (d - 1)

    adaptive, _ = integrate.quad(lambda r: float(f(r)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    x, w = np.polynomial.legendre.leggauss(80)
    r = 0.5 * (x + 1.0)
    gauss = 0.5 * float(np.sum(w * f(r)))
    return adaptive, gauss


def profile(kind: str, d: int, n_table: int = 2001) -> ProfileTarget:
    """Normalised principal eigenfunction profile of the unit ball."""
    if kind not in PROFILE_KINDS:
        raise ValueError(f"kind must be one of {PROFILE_KINDS}")
    spectrum = ball_spectrum(d)
    nu, j = spectrum.bessel_order, spectrum.j_nu_1
    sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    power = 1 if kind == "phi1_L1" else 2
    adaptive, gauss = _radial_moment(nu, j, d, power)
    if power == 1:
        c, c_check = 1.0 / (sphere * adaptive), 1.0 / (sphere * gauss)
    else:
        c, c_check = 1.0 / math.sqrt(sphere * adaptive), 1.0 / math.sqrt(sphere * gauss)
    radii = np.linspace(0.0, 1.0, n_table)
    target = ProfileTarget(kind, d, nu, j, c, c_check, radii, np.zeros(0))
    object.__setattr__(target, "table", target(radii))
    return target


def profile_values(target: ProfileTarget, sites: np.ndarray, center, radius: float,
                   parity: int | str | None = None) -> np.ndarray:
    """``2 radius^-d phi(|x - center| / radius)`` on ``sites`` of the given parity.

    ``parity`` is the class of ``|x|_1`` (``0``/``"even"`` or ``1``/``"odd"``);
    ``None`` keeps every site.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    sites = np.asarray(sites, dtype=np.int64)
    r = np.linalg.norm(sites - np.asarray(center), axis=1) / radius
    vals = 2.0 * radius ** (-target.d) * target(r)
    if parity is not None:
        cls = {"even": 0, "odd": 1}.get(parity, parity)
        vals = np.where(sites.sum(axis=1) % 2 == int(cls), vals, 0.0)
    return vals


def discretize_profile(target: ProfileTarget, center, radius: float,
                       parity: int | str = "even") -> dict:
    """Site map of :func:`profile_values` over the closed ball ``B(center, radius)``."""
    sites = euclidean_ball(center, radius)
    vals = profile_values(target, sites, center, radius, parity)
    return {tuple(int(c) for c in s): float(v) for s, v in zip(sites, vals)}
