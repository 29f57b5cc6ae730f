"""Exact and Monte Carlo dynamics of the simple random walk killed on obstacles."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .domain import EXIT_KINDS, LatticeDomain
from .lattice import EnvironmentField

CHUNK = 4096


@dataclass(frozen=True, eq=False)
class MassProfile:
    """Killed-walk mass ``u(t, x) = P(S_t = x, tau > t)`` on a domain.

    ``u`` is indexed like ``domain.sites``. ``absorbed`` holds the cumulative
    mass that left the domain up to time ``t``, split by exit kind
    (``outside`` is truncation at the environment box).
    """

    domain: LatticeDomain
    t: int
    u: np.ndarray
    total_mass: float
    start: tuple | str
    parity_class: str
    absorbed: dict = field(default_factory=dict)

    @property
    def escaped(self) -> float:
        return self.absorbed.get("outside", 0.0)

    @property
    def killed(self) -> float:
        return self.absorbed.get("obstacle", 0.0)

    def value(self, site) -> float:
        try:
            return float(self.u[self.domain.index_of(site)])
        except KeyError:
            return 0.0

    def as_dict(self, nonzero: bool = True) -> dict:
        idx = np.nonzero(self.u)[0] if nonzero else range(self.domain.N)
        return {tuple(int(c) for c in self.domain.sites[i]): float(self.u[i]) for i in idx}

    def normalized(self) -> "MassProfile":
        if self.total_mass <= 0:
            raise ValueError("cannot normalise a zero mass profile")
        return MassProfile(self.domain, self.t, self.u / self.total_mass, 1.0,
                           self.start, self.parity_class, dict(self.absorbed))


def _as_domain(where, region=None, absorbing=None) -> LatticeDomain:
    if isinstance(where, LatticeDomain):
        if region is not None or absorbing is not None:
            raise ValueError("region/absorbing only apply to environments")
        return where
    if isinstance(where, EnvironmentField):
        return LatticeDomain.from_env(where, region=_mask(where, region),
                                      absorbing=_mask(where, absorbing))
    raise TypeError(f"expected EnvironmentField or LatticeDomain, got {type(where).__name__}")


def _mask(env: EnvironmentField, sites):
    if sites is None:
        return None
    arr = np.asarray(sites)
    if arr.dtype == bool and arr.shape == env.shape:
        return arr
    return env.mask_of(arr)


def _start_index(domain: LatticeDomain, start) -> int:
    try:
        return domain.index_of(start)
    except KeyError:
        raise ValueError(f"start {tuple(start)} is not an open site of the domain") from None


def evolve_mass(where, start, t_max: int, absorbing=None, times: Sequence[int] | None = None,
                two_step: bool = False, region=None) -> list[MassProfile]:
    """Evolve the killed-walk mass from a point mass at ``start``.

    Parameters
    ----------
    where : EnvironmentField or LatticeDomain
        For an environment, the walk lives on its open sites; leaving the box
        counts as an ``outside`` exit and is reported.
    start : site
    t_max : int
    absorbing : site array or box mask, optional
        Extra sites where the walk is absorbed (reported separately).
    times : sequence of int, optional
        Snapshot times; defaults to every step ``0..t_max``.
    two_step : bool
        Evolve with ``P^2`` on the start's parity class; only even times allowed.
    region : site array or box mask, optional
        Restrict the walk to these sites (exits reported as ``region``).

    Returns
    -------
    list of MassProfile
    """
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    domain = _as_domain(where, region, absorbing)
    i0 = _start_index(domain, start)
    times = list(range(t_max + 1)) if times is None else sorted(set(int(t) for t in times))
    if times and (times[0] < 0 or times[-1] > t_max):
        raise ValueError("snapshot times must lie in [0, t_max]")
    if two_step and any(t % 2 for t in times):
        raise ValueError("two-step evolution only yields even times")
    start_t = tuple(int(c) for c in start)
    start_parity = int(domain.parity[i0])
    wanted = set(times)
    out = []

    if two_step:
        Q2, ic, _ = domain.two_step(start_parity)
        v = np.zeros(len(ic))
        v[np.searchsorted(ic, i0)] = 1.0
        for t in range(0, t_max + 1, 2):
            if t > 0:
                v = Q2 @ v
            if t in wanted:
                u = np.zeros(domain.N)
                u[ic] = v
                total = math.fsum(v)
                out.append(MassProfile(domain, t, u, total, start_t, "even",
                                       {"lost": 1.0 - total}))
        return out

    u = np.zeros(domain.N)
    u[i0] = 1.0
    absorbed = {k: 0.0 for k in EXIT_KINDS}
    P = domain.P
    weights = [(k, w) for k, w in domain.exit_weights.items() if w.any()]
    for t in range(t_max + 1):
        if t > 0:
            for k, w in weights:
                absorbed[k] += math.fsum(w * u)
            u = P @ u
        if t in wanted:
            out.append(MassProfile(domain, t, u.copy(), math.fsum(u), start_t,
                                   "even", dict(absorbed)))
    return out


def survival_probability(where, start, n: int, absorbing=None, region=None) -> float:
    """``P(tau > n)``; the total mass at time ``n``."""
    return evolve_mass(where, start, n, absorbing=absorbing, times=[n], region=region)[0].total_mass


def survival_vector(domain: LatticeDomain, steps: int) -> np.ndarray:
    """``P^x(tau > steps)`` for every site x of the domain (i.e. ``P^steps 1``)."""
    v = np.ones(domain.N)
    for _ in range(steps):
        v = domain.P @ v
    return v


def conditional_law(where, start, n: int, horizon: int | None = None, region=None) -> MassProfile:
    """Law of ``S_n`` given survival.

    Without ``horizon`` this is ``P(S_n = x | tau > n)``. With ``horizon = m``
    it is ``P(S_n = x | walk stays in the domain up to time m)``, computed as the
    forward mass at ``n`` times the backward survival probability for ``m - n``
    steps.
    """
    prof = evolve_mass(where, start, n, times=[n], region=region)[0]
    w = prof.u
    if horizon is not None:
        if horizon < n:
            raise ValueError("horizon must be >= n")
        w = w * survival_vector(prof.domain, horizon - n)
    z = math.fsum(w)
    if z <= 0:
        raise ValueError("conditioning event has probability zero")
    return MassProfile(prof.domain, n, w / z, 1.0, prof.start, prof.parity_class)


def bridge_law(where, start, m: int, t: int, end, region=None) -> MassProfile:
    """``P(S_m = x | S_{m+t} = end, tau > m + t)``.

    Uses reversibility: the backward factor is the forward mass from ``end``.
    """
    domain = _as_domain(where, region)
    fwd = evolve_mass(domain, start, m, times=[m])[0].u
    bwd = evolve_mass(domain, end, t, times=[t])[0].u
    w = fwd * bwd
    z = math.fsum(w)
    if z <= 0:
        raise ValueError("conditioning event has probability zero")
    return MassProfile(domain, m, w / z, 1.0, tuple(int(c) for c in start), "even")


def hitting_time_distribution(where, start, target, horizon: int) -> np.ndarray:
    """``F[t] = P(tau_target <= t, not killed before)`` for ``t = 0..horizon``."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    target = np.asarray(target, dtype=np.int64)
    if target.size == 0:
        raise ValueError("target set is empty")
    start_t = tuple(int(c) for c in start)
    target = target.reshape(-1, len(start_t))
    if any(np.array_equal(row, start_t) for row in target):
        return np.ones(horizon + 1)
    if isinstance(where, LatticeDomain):
        domain = where.minus(target)
        hit = np.zeros(domain.N)
        # each missing neighbour that lies in the target counts as a hit
        off = LatticeDomain.step_offsets(domain.d)
        tgt = LatticeDomain(target)
        for k in range(2 * domain.d):
            hit += (tgt.indices_of(domain.sites + off[k]) >= 0) / (2 * domain.d)
        weights = hit
    else:
        domain = _as_domain(where, absorbing=target)
        weights = domain.exit_weights["absorbing"]
    i0 = _start_index(domain, start)
    u = np.zeros(domain.N)
    u[i0] = 1.0
    out = np.zeros(horizon + 1)
    acc = 0.0
    for t in range(1, horizon + 1):
        acc += math.fsum(weights * u)
        u = domain.P @ u
        out[t] = acc
    return out


def hitting_time(path, target) -> int | None:
    """First index ``t`` with ``path[t]`` in ``target``; None means never."""
    target = {tuple(int(c) for c in s) for s in target}
    if not target:
        raise ValueError("target set is empty")
    for t, site in enumerate(path):
        if tuple(int(c) for c in site) in target:
            return t
    return None


# -- Monte Carlo --------------------------------------------------------------

@dataclass(frozen=True)
class WalkPathSample:
    path: np.ndarray
    killed_at: int | None
    seed: int
    escaped: bool = False


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Outcome of :func:`sample_paths`.

    ``killed_at[i] == -1`` means the i-th walk survived to time ``n``.
    """

    start: tuple
    n: int
    seed: int
    killed_at: np.ndarray
    escaped: np.ndarray
    steps: np.ndarray | None
    offsets: np.ndarray

    @property
    def n_samples(self) -> int:
        return len(self.killed_at)

    @property
    def survival_estimate(self) -> float:
        return float(np.mean(self.killed_at < 0))

    @property
    def stderr(self) -> float:
        p = self.survival_estimate
        return math.sqrt(max(p * (1 - p), 0.0) / self.n_samples)

    def path(self, i: int) -> np.ndarray:
        if self.steps is None:
            raise ValueError("paths were not kept; pass keep_paths=True")
        k = self.killed_at[i]
        length = self.n if k < 0 else int(k)
        moves = self.offsets[self.steps[i, :length]]
        return np.vstack([np.asarray(self.start)[None], np.asarray(self.start) + np.cumsum(moves, axis=0)])

    def samples(self) -> Iterator[WalkPathSample]:
        for i in range(self.n_samples):
            k = int(self.killed_at[i])
            yield WalkPathSample(self.path(i), None if k < 0 else k, self.seed, bool(self.escaped[i]))


def _run_chunk(domain: LatticeDomain, i0: int, n: int, size: int, seed: int, chunk: int,
               keep: bool):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk,))))
    twod = 2 * domain.d
    pos = np.full(size, i0, dtype=np.int64)
    killed_at = np.full(size, -1, dtype=np.int64)
    escaped = np.zeros(size, dtype=bool)
    steps = np.zeros((size, n), dtype=np.int8) if keep else None
    alive = np.arange(size)
    outside = EXIT_KINDS.index("outside")
    for t in range(1, n + 1):
        if alive.size == 0:
            break
        dirs = rng.integers(0, twod, size=size)[alive]
        if keep:
            steps[alive, t - 1] = dirs
        nxt = domain.neighbours[pos[alive], dirs]
        dead = nxt < 0
        if dead.any():
            gone = alive[dead]
            killed_at[gone] = t
            escaped[gone] = domain.exit_code[pos[gone], dirs[dead]] == outside
        pos[alive[~dead]] = nxt[~dead]
        alive = alive[~dead]
    return killed_at, escaped, steps


def sample_paths(where, start, n: int, n_samples: int, seed: int, workers: int | None = None,
                 keep_paths: bool = False, region=None) -> PathBatch:
    """Sample killed-walk trajectories.

    Samples are produced in fixed chunks of 4096, chunk ``k`` drawing from the
    stream ``SeedSequence(seed, spawn_key=(k,))``; the result does not depend on
    ``workers``. Leaving the environment box kills the walk and sets the
    ``escaped`` flag.
    """
    domain = _as_domain(where, region)
    i0 = _start_index(domain, start)
    if n < 0 or n_samples < 1:
        raise ValueError("need n >= 0 and n_samples >= 1")
    workers = workers or int(os.environ.get("OBSTACLE_WALK_THREADS", "1"))
    sizes = [min(CHUNK, n_samples - s) for s in range(0, n_samples, CHUNK)]
    jobs = [(domain, i0, n, size, seed, k, keep_paths) for k, size in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _run_chunk(*a), jobs))
    else:
        parts = [_run_chunk(*a) for a in jobs]
    killed = np.concatenate([p[0] for p in parts])
    esc = np.concatenate([p[1] for p in parts])
    steps = np.concatenate([p[2] for p in parts]) if keep_paths else None
    return PathBatch(tuple(int(c) for c in start), n, seed, killed, esc, steps,
                     LatticeDomain.step_offsets(domain.d))
