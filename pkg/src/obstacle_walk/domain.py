"""Finite lattice domains and the killed transition operator P|_A."""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .lattice import EnvironmentField, _box_sites

EXIT_KINDS = ("outside", "obstacle", "absorbing", "region")


def _lexsort_rows(sites: np.ndarray) -> np.ndarray:
    if len(sites) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.lexsort(sites.T[::-1])


class LatticeDomain:
    """A finite set of lattice sites with the sub-stochastic walk kernel.

    Sites are stored in lexicographic order, which fixes the site <-> index
    bijection. The walk jumps to each of the 2d neighbours with probability
    1/(2d) and is killed when it lands outside the domain. ``exit_weights``
    splits that killing probability by the reason the neighbour is missing
    (outside the environment box, obstacle, absorbing target, or outside a
    sub-region).

    Parameters
    ----------
    sites : (N, d) integer array
        Distinct sites; order is irrelevant.
    exit_kinds : dict, optional
        Maps an exit kind to a predicate ``f(neighbour_sites) -> bool array``
        used to classify missing neighbours. Unclassified ones count as
        ``"obstacle"``.
    """

    def __init__(self, sites, exit_kinds=None, d: int | None = None):
        sites = np.asarray(sites, dtype=np.int64)
        if sites.ndim != 2:
            if d is None or sites.size:
                raise ValueError("sites must be an (N, d) array")
            sites = sites.reshape(0, d)
        order = _lexsort_rows(sites)
        sites = sites[order]
        if len(sites) > 1 and np.any(np.all(sites[1:] == sites[:-1], axis=1)):
            raise ValueError("duplicate sites")
        self.sites = sites
        self.sites.flags.writeable = False
        self.d = sites.shape[1]
        self.N = len(sites)
        if self.N:
            self._lo = sites.min(axis=0) - 1
            shape = tuple(sites.max(axis=0) - self._lo + 2)
        else:
            self._lo = np.zeros(self.d, dtype=np.int64)
            shape = (1,) * self.d
        self._grid = np.full(shape, -1, dtype=np.int64)
        self._grid[tuple((sites - self._lo).T)] = np.arange(self.N)

        nbrs = []
        for axis in range(self.d):
            for sign in (-1, 1):
                step = np.zeros(self.d, dtype=np.int64)
                step[axis] = sign
                nbrs.append(self._grid[tuple((sites + step - self._lo).T)])
        self._nbrs = np.stack(nbrs, axis=1) if self.N else np.zeros((0, 2 * self.d), np.int64)

        self.exit_weights = {k: np.zeros(self.N) for k in EXIT_KINDS}
        # -1 where the neighbour is inside, else the index into EXIT_KINDS
        self.exit_code = np.full(self._nbrs.shape, -1, dtype=np.int8)
        missing = self._nbrs < 0
        if missing.any():
            rows, cols = np.nonzero(missing)
            offsets = np.zeros((2 * self.d, self.d), dtype=np.int64)
            for k in range(2 * self.d):
                offsets[k, k // 2] = -1 if k % 2 == 0 else 1
            targets = sites[rows] + offsets[cols]
            kind = np.full(len(rows), "obstacle", dtype=object)
            for name, pred in (exit_kinds or {}).items():
                hit = np.asarray(pred(targets), dtype=bool) & (kind == "obstacle")
                kind[hit] = name
            for code, name in enumerate(EXIT_KINDS):
                sel = kind == name
                np.add.at(self.exit_weights[name], rows[sel], 1.0)
                self.exit_code[rows[sel], cols[sel]] = code
        for k in EXIT_KINDS:
            self.exit_weights[k] /= 2 * self.d

    # -- constructors ---------------------------------------------------------
    @classmethod
    def from_sites(cls, sites, d: int | None = None) -> "LatticeDomain":
        return cls(sites, d=d)

    @classmethod
    def from_env(cls, env: EnvironmentField, region=None, absorbing=None) -> "LatticeDomain":
        """Open sites of ``env`` inside an optional region mask, minus absorbing sites.

        ``region`` and ``absorbing`` are box-shaped boolean masks.
        """
        keep = env.open_mask.copy()
        absorbing_mask = np.zeros(env.shape, bool) if absorbing is None else np.asarray(absorbing, bool)
        region_mask = np.ones(env.shape, bool) if region is None else np.asarray(region, bool)
        keep &= region_mask & ~absorbing_mask
        sites = np.argwhere(keep) + np.asarray(env.lo)
        lo = np.asarray(env.lo)
        hi = np.asarray(env.hi)

        def _inbox(t):
            return np.all((t >= lo) & (t <= hi), axis=1)

        def _lookup(mask):
            def pred(t):
                ok = _inbox(t)
                out = np.zeros(len(t), bool)
                out[ok] = mask[tuple((t[ok] - lo).T)]
                return out
            return pred

        kinds = {
            "outside": lambda t: ~_inbox(t),
            "absorbing": _lookup(absorbing_mask & env.open_mask),
            "region": _lookup(env.open_mask & ~absorbing_mask & ~region_mask),
        }
        return cls(sites, exit_kinds=kinds, d=env.d)

    @classmethod
    def box(cls, bounds) -> "LatticeDomain":
        return cls(_box_sites(bounds))

    # -- lookup ---------------------------------------------------------------
    def index_of(self, site) -> int:
        """Index of ``site``; raises KeyError when the site is not in the domain."""
        idx = np.asarray(site, dtype=np.int64) - self._lo
        if idx.shape != (self.d,) or np.any(idx < 0) or np.any(idx >= self._grid.shape):
            raise KeyError(tuple(site))
        i = int(self._grid[tuple(idx)])
        if i < 0:
            raise KeyError(tuple(site))
        return i

    def indices_of(self, sites) -> np.ndarray:
        """Vectorised lookup; -1 for sites not in the domain."""
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, self.d)
        idx = sites - self._lo
        ok = np.all((idx >= 0) & (idx < np.asarray(self._grid.shape)), axis=1)
        out = np.full(len(sites), -1, dtype=np.int64)
        out[ok] = self._grid[tuple(idx[ok].T)]
        return out

    def __contains__(self, site) -> bool:
        try:
            self.index_of(site)
        except KeyError:
            return False
        return True

    def __len__(self) -> int:
        return self.N

    @cached_property
    def parity(self) -> np.ndarray:
        """0 for even sites (|x|_1 even), 1 for odd sites."""
        return (self.sites.sum(axis=1) % 2).astype(np.int8)

    @staticmethod
    def step_offsets(d: int) -> np.ndarray:
        """(2d, d) unit steps in the column order used by ``neighbours``."""
        off = np.zeros((2 * d, d), dtype=np.int64)
        for k in range(2 * d):
            off[k, k // 2] = -1 if k % 2 == 0 else 1
        return off

    @property
    def neighbours(self) -> np.ndarray:
        """(N, 2d) neighbour indices, -1 where the neighbour is outside."""
        return self._nbrs

    @property
    def kill_weight(self) -> np.ndarray:
        """Probability of being killed in one step from each site."""
        return sum(self.exit_weights.values())

    # -- operator ---------------------------------------------------------------
    @cached_property
    def P(self) -> sp.csr_matrix:
        rows, cols = np.nonzero(self._nbrs >= 0)
        data = np.full(len(rows), 1.0 / (2 * self.d))
        return sp.csr_matrix((data, (rows, self._nbrs[rows, cols])), shape=(self.N, self.N))

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.P @ v

    def dense(self) -> np.ndarray:
        return self.P.toarray()

    def parity_indices(self, cls: int) -> np.ndarray:
        return np.nonzero(self.parity == cls)[0]

    def two_step(self, cls: int) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        """Two-step operator restricted to one parity class.

        Returns ``(Q2c, idx_c, idx_other)`` with ``Q2c = Q[c, o] @ Q[o, c]``.
        """
        ic = self.parity_indices(cls)
        io = self.parity_indices(1 - cls)
        P = self.P
        Qco = P[ic][:, io]
        Qoc = P[io][:, ic]
        return (Qco @ Qoc).tocsr(), ic, io

    def components(self) -> tuple[int, np.ndarray]:
        if self.N == 0:
            return 0, np.zeros(0, dtype=np.int64)
        n, labels = connected_components(self.P, directed=False)
        # renumber by lexicographically first site (= first index)
        first = np.full(n, self.N, dtype=np.int64)
        np.minimum.at(first, labels, np.arange(self.N))
        rank = np.empty(n, dtype=np.int64)
        rank[np.argsort(first)] = np.arange(n)
        return n, rank[labels]

    def subdomain(self, idx) -> "LatticeDomain":
        return LatticeDomain(self.sites[np.asarray(idx)], d=self.d)

    def outer_boundary(self) -> np.ndarray:
        """Sites outside the domain adjacent to it, lexicographically sorted."""
        return outer_boundary(self.sites)

    def minus(self, sites) -> "LatticeDomain":
        drop = self.indices_of(sites)
        keep = np.ones(self.N, bool)
        keep[drop[drop >= 0]] = False
        return LatticeDomain(self.sites[keep], d=self.d)

    def union(self, sites) -> "LatticeDomain":
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, self.d)
        allsites = np.unique(np.concatenate([self.sites, sites]), axis=0)
        return LatticeDomain(allsites, d=self.d)

    def __repr__(self):
        return f"LatticeDomain(N={self.N}, d={self.d})"


def outer_boundary(sites: np.ndarray) -> np.ndarray:
    """Outer vertex boundary {x not in D : |x - y|_1 = 1 for some y in D}."""
    sites = np.asarray(sites, dtype=np.int64)
    if len(sites) == 0:
        return sites.reshape(0, sites.shape[1] if sites.ndim == 2 else 0)
    d = sites.shape[1]
    cand = []
    for axis in range(d):
        for sign in (-1, 1):
            s = sites.copy()
            s[:, axis] += sign
            cand.append(s)
    cand = np.unique(np.concatenate(cand), axis=0)
    dom = LatticeDomain(sites)
    return cand[dom.indices_of(cand) < 0]


def ball_domain(radius: float, d: int, center=None) -> LatticeDomain:
    """Discrete Euclidean ball B(center, radius) as a domain."""
    from .lattice import euclidean_ball
    center = (0,) * d if center is None else center
    return LatticeDomain(euclidean_ball(center, radius))
