"""Coarse-graining and vacant-island detection.

Everything works on a padded copy of the environment in which sites outside
the box count as obstacles, so set sizes (tiles, balls, symmetric
differences) are exact even where a tile or a ball pokes out of the box.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .continuum import rho_n
from .lattice import EnvironmentField


def _ball_kernel(d: int, radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    axes = np.meshgrid(*[np.arange(-r, r + 1)] * d, indexing="ij", sparse=True)
    return sum(a * a for a in axes) <= radius * radius + 1e-9


def _correlate_count(mask: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Integer counts ``sum_{k} mask[c + k] kernel[k]`` for every centre ``c``.

    FFT convolution rounded to integers; the kernel is symmetric, so this is a
    correlation. Values are small integers, so the rounding is exact.
    """
    out = fftconvolve(mask.astype(np.float64), kernel.astype(np.float64), mode="same")
    return np.rint(out).astype(np.int64)


@dataclass(frozen=True, eq=False)
class PaddedGrid:
    """Closed-site mask on a box ``[lo, lo + shape)`` that contains the environment.

    Sites outside the environment box are closed.
    """

    lo: np.ndarray
    closed: np.ndarray
    inside: np.ndarray

    @classmethod
    def around(cls, env: EnvironmentField, margin: int, align: int = 1) -> "PaddedGrid":
        lo_env = np.asarray(env.lo)
        hi_env = np.asarray(env.hi)
        lo = lo_env - margin
        hi = hi_env + margin
        if align > 1:
            # make both ends fall on tile boundaries of the grid align * Z^d - (align - 1) / 2
            s = (align - 1) // 2
            lo = np.floor_divide(lo + s, align) * align - s
            hi = np.floor_divide(hi + s, align) * align + s
        shape = tuple(hi - lo + 1)
        closed = np.ones(shape, dtype=bool)
        inside = np.zeros(shape, dtype=bool)
        sl = tuple(slice(a, a + n) for a, n in zip(lo_env - lo, env.shape))
        closed[sl] = env.closed
        inside[sl] = True
        return cls(lo, closed, inside)

    def index(self, site) -> tuple:
        return tuple(np.asarray(site, dtype=np.int64) - self.lo)

    def site(self, idx) -> tuple:
        return tuple(int(v) for v in np.asarray(idx) + self.lo)


# -- low-density region ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoarseGrid:
    """Tiles ``K(x, s)`` with anchors ``x`` on ``(2s + 1) Z^d``.

    ``anchors`` lists the tiles meeting the working region and ``density`` the
    obstacle fraction of each such tile.
    """

    box_radius: int
    anchors: np.ndarray
    density: np.ndarray
    closed_count: np.ndarray

    @property
    def tile_volume(self) -> int:
        return (2 * self.box_radius + 1) ** self.anchors.shape[1]


def tile_anchor(sites: np.ndarray, s: int) -> np.ndarray:
    """Anchor of the tile ``K(x, s)`` holding each site."""
    side = 2 * s + 1
    return np.floor_divide(np.asarray(sites) + s, side) * side


@dataclass(frozen=True, eq=False)
class LowDensityRegion:
    """Union ``E`` of low-density tiles, as a mask on ``grid``."""

    epsilon: float
    rho: float
    grid: PaddedGrid
    mask: np.ndarray
    coarse: CoarseGrid
    selected: np.ndarray

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def sites(self) -> np.ndarray:
        return np.argwhere(self.mask) + self.grid.lo


def _region_mask(env: EnvironmentField, grid: PaddedGrid, region) -> np.ndarray:
    """Mask of the working region on the padded grid (default: the environment box)."""
    if region is None:
        return grid.inside.copy()
    from .domain import LatticeDomain
    if isinstance(region, LatticeDomain):
        sites = region.sites
    else:
        arr = np.asarray(region)
        if arr.dtype == bool and arr.shape == env.shape:
            sites = np.argwhere(arr) + np.asarray(env.lo)
        else:
            sites = arr.reshape(-1, env.d)
    mask = np.zeros(grid.closed.shape, dtype=bool)
    idx = np.asarray(sites, dtype=np.int64) - grid.lo
    ok = np.all((idx >= 0) & (idx < np.asarray(mask.shape)), axis=1)
    mask[tuple(idx[ok].T)] = True
    return mask


def low_density_region(env: EnvironmentField, region=None, epsilon: float = 0.2,
                       rho: float = 10.0, margin: int = 0) -> LowDensityRegion:
    """Union of tiles ``K(x, floor(eps rho))`` meeting ``region`` with obstacle fraction <= eps.

    Parameters
    ----------
    env : EnvironmentField
    region : LatticeDomain, site array or box mask, optional
        Working region V; defaults to the whole box.
    epsilon : float in (0, 1)
    rho : float >= 1
    margin : int
        Extra closed padding around the box (for later ball fits).
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if rho < 1:
        raise ValueError("rho must be >= 1")
    s = int(math.floor(epsilon * rho))
    if s == 0:
        raise ValueError("floor(epsilon * rho) = 0 gives degenerate tiles")
    side = 2 * s + 1
    grid = PaddedGrid.around(env, margin, align=side)
    d = env.d
    tiles_shape = tuple(n // side for n in grid.closed.shape)
    # view the padded grid as (tiles, tile-cells) blocks
    blocks = grid.closed.reshape(sum(((t, side) for t in tiles_shape), ()))
    reduce_axes = tuple(range(1, 2 * d, 2))
    closed_count = blocks.sum(axis=reduce_axes)
    vmask = _region_mask(env, grid, region)
    meets = vmask.reshape(blocks.shape).any(axis=reduce_axes)
    volume = side**d
    low = meets & (closed_count <= epsilon * volume)
    tile_lo = grid.lo + s  # anchor of the first tile
    anchors_idx = np.argwhere(meets)
    anchors = anchors_idx * side + tile_lo
    coarse = CoarseGrid(s, anchors, closed_count[meets] / volume, closed_count[meets])
    mask = np.repeat(low, side, axis=0)
    for ax in range(1, d):
        mask = np.repeat(mask, side, axis=ax)
    selected = np.argwhere(low) * side + tile_lo
    return LowDensityRegion(epsilon, rho, grid, mask, coarse, selected)


# -- truly open boxes ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrulyOpenResult:
    ell: int
    anchors: np.ndarray
    stay_probability: np.ndarray
    threshold: float = 0.1

    @property
    def passed(self) -> np.ndarray:
        """Anchors whose best stay probability is at least the threshold (inclusive)."""
        return self.anchors[self.stay_probability >= self.threshold]


def stay_probabilities(open_window: np.ndarray, steps: int) -> np.ndarray:
    """``P^u(S_[0, steps]`` stays in the open part of each window``)`` for all u.

    ``open_window`` has shape ``(batch, *window)``; one backward evolution of the
    indicator gives every starting site at once.
    """
    h = open_window.astype(np.float64)
    keep = h.copy()
    d = open_window.ndim - 1
    for _ in range(steps):
        acc = np.zeros_like(h)
        for ax in range(1, d + 1):
            acc[(slice(None),) * ax + (slice(1, None),)] += h[(slice(None),) * ax + (slice(None, -1),)]
            acc[(slice(None),) * ax + (slice(None, -1),)] += h[(slice(None),) * ax + (slice(1, None),)]
        h = keep * acc / (2 * d)
    return h


def detect_truly_open(env: EnvironmentField, ell: int, region=None, anchors=None,
                      threshold: float = 0.1, batch: int = 256) -> TrulyOpenResult:
    """Best ``ell^2``-step stay probability in ``K(x, 4 ell)`` from ``K(x, ell)``.

    Anchors default to the tiles of ``(2 ell + 1) Z^d`` meeting ``region``.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    d = env.d
    big = 4 * ell
    grid = PaddedGrid.around(env, big + 2 * ell + 1)
    if anchors is None:
        side = 2 * ell + 1
        vmask = _region_mask(env, grid, region)
        sites = np.argwhere(vmask) + grid.lo
        anchors = np.unique(tile_anchor(sites, ell), axis=0)
    anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, d)
    probs = np.zeros(len(anchors))
    open_ = ~grid.closed
    width = 2 * big + 1
    offs = np.arange(width) - big
    inner = slice(big - ell, big + ell + 1)
    for b0 in range(0, len(anchors), batch):
        chunk = anchors[b0:b0 + batch] - grid.lo
        idx = [chunk[:, a][:, None] + offs[None, :] for a in range(d)]
        # gather (batch, width, ..., width) windows
        gather = tuple(idx[a].reshape((len(chunk),) + (1,) * a + (width,) + (1,) * (d - a - 1))
                       for a in range(d))
        windows = open_[gather]
        h = stay_probabilities(windows, ell * ell)
        core = h[(slice(None),) + (inner,) * d]
        probs[b0:b0 + batch] = core.reshape(len(chunk), -1).max(axis=1)
    return TrulyOpenResult(ell, anchors, probs, threshold)


# -- ball fit ----------------------------------------------------------------------

def sym_diff_map(e_mask: np.ndarray, rho: float) -> np.ndarray:
    """``|B(c, rho) symmetric-difference E|`` for every centre ``c`` of the grid."""
    kernel = _ball_kernel(e_mask.ndim, rho)
    inter = _correlate_count(e_mask, kernel)
    return int(kernel.sum()) + int(e_mask.sum()) - 2 * inter


def _lex_argmin(values: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Index of the smallest value among ``candidates`` (a mask), lexicographic ties."""
    best = values[candidates].min()
    hits = np.argwhere(candidates & (values == best))
    return hits[0]  # argwhere is in C (lexicographic) order


def fit_ball_center(e_mask: np.ndarray, rho: float, lo=None, search_region=None
                    ) -> tuple[tuple[int, ...], int]:
    """Centre minimising ``|B(c, rho) symmetric-difference E|``.

    Exhaustive over ``search_region`` (a mask on the same grid, default every
    site); ties go to the lexicographically smallest centre.

    Returns
    -------
    center : site
    sym_diff : int
    """
    if not e_mask.any():
        raise ValueError("E is empty")
    lo = np.zeros(e_mask.ndim, dtype=np.int64) if lo is None else np.asarray(lo)
    cand = np.ones(e_mask.shape, bool) if search_region is None else np.asarray(search_region, bool)
    if not cand.any():
        raise ValueError("empty search region")
    sd = sym_diff_map(e_mask, rho)
    idx = _lex_argmin(sd, cand)
    return tuple(int(v) for v in idx + lo), int(sd[tuple(idx)])


def ball_sym_diff(e_mask: np.ndarray, lo, center, rho: float) -> int:
    """Set-exact ``|B(center, rho) symmetric-difference E|`` (ball may leave the grid)."""
    d = e_mask.ndim
    grids = np.meshgrid(*[np.arange(n) + l for n, l in zip(e_mask.shape, lo)], indexing="ij", sparse=True)
    ball = sum((g - c) ** 2 for g, c in zip(grids, center)) <= rho * rho + 1e-9
    total_ball = int(_ball_kernel(d, rho).sum())
    inter = int((ball & e_mask).sum())
    return total_ball + int(e_mask.sum()) - 2 * inter


# -- shells --------------------------------------------------------------------------

@dataclass(frozen=True)
class ShellResult:
    delta: float
    radii: list
    counts: list
    J: int
    clear: bool


def obstacle_count_in_ball(env: EnvironmentField, center, radius: float) -> int:
    """``|B(center, radius) intersect O|``, sites outside the box counting as closed."""
    from .lattice import euclidean_ball
    sites = euclidean_ball(center, radius)
    lo, hi = np.asarray(env.lo), np.asarray(env.hi)
    inside = np.all((sites >= lo) & (sites <= hi), axis=1)
    closed = np.ones(len(sites), dtype=bool)
    closed[inside] = env.closed[tuple((sites[inside] - lo).T)]
    return int(closed.sum())


def shell_index(env: EnvironmentField, center, rho: float, delta: float, c5: float = 0.5,
                k_max: int = 200) -> ShellResult:
    """Obstacle counts in ``B(c, (1 - delta + 2^-k delta) rho)`` and the index J.

    ``J`` is the smallest ``k >= 1`` with ``count[k] >= c5 * count[k - 1]``;
    counts are listed for ``k = 0..J``. ``clear`` flags an obstacle-free inner
    ball ``B(c, (1 - delta) rho)``.
    """
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    radii = [rho]
    counts = [obstacle_count_in_ball(env, center, rho)]
    J = None
    for k in range(1, k_max + 1):
        r = (1 - delta + 2.0**-k * delta) * rho
        radii.append(r)
        counts.append(obstacle_count_in_ball(env, center, r))
        if counts[k] >= c5 * counts[k - 1]:
            J = k
            break
    if J is None:
        raise RuntimeError("shell index did not settle within k_max shells")
    clear = obstacle_count_in_ball(env, center, (1 - delta) * rho) == 0
    return ShellResult(delta, radii, counts, J, clear)


# -- pipeline --------------------------------------------------------------------------

@dataclass
class LocalizationConfig:
    """Constants of the localisation pipeline.

    ``epsilon``, ``delta`` and ``rho`` override the schedule values
    ``rho^-c2``, ``rho^-kappa`` and the radius computed from ``(n, d, p)``.
    """

    c2: float = 0.1
    c5: float = 0.5
    kappa: float = 0.1
    ell: int = 5
    epsilon: float | None = None
    delta: float | None = None
    rho: int | None = None
    refine: bool = True
    truly_open_scope: float | None = 2.0


@dataclass
class LocalizationReport:
    outcome: str
    rho: int
    epsilon: float
    center: tuple | None = None
    e_size: int = 0
    sym_diff: int | None = None
    obstacle_count_in_ball: int | None = None
    fit_center: tuple | None = None
    fit_sym_diff: int | None = None
    truly_open: list = field(default_factory=list)
    ell: int = 0
    shells: dict = field(default_factory=dict)
    J: int | None = None
    clear: bool | None = None
    schedule: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    bound_chain_ok: bool | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def refine_center(env: EnvironmentField, region: LowDensityRegion, center, rho: float,
                  radius: int) -> tuple[tuple[int, ...], int]:
    """Search ``|c - center|_inf <= radius`` for the fewest obstacles in ``B(c, rho)``.

    Ties fall back to the smaller symmetric difference, then lexicographic order.
    """
    grid = region.grid
    kernel = _ball_kernel(env.d, rho)
    obstacles = _correlate_count(grid.closed, kernel)
    sd = sym_diff_map(region.mask, rho)
    c = np.asarray(grid.index(center))
    sl = tuple(slice(max(ci - radius, 0), ci + radius + 1) for ci in c)
    window_obs = obstacles[sl]
    window_sd = sd[sl]
    key = window_obs.astype(np.int64) * (window_sd.max() + 1) + window_sd
    idx = np.argwhere(key == key.min())[0]
    best = idx + np.array([s.start for s in sl])
    return grid.site(best), int(sd[tuple(best)])


def localize(env: EnvironmentField, n: int | None = None, p: float | None = None,
             config: LocalizationConfig | None = None, region=None) -> LocalizationReport:
    """Run coarse-graining, ball fit, truly-open inventory and shell analysis.

    The ball is fitted on the low-density region at ``epsilon_n``; the other
    two schedule values are reported for comparison. With ``config.refine``
    the fitted centre is moved by at most one tile width to the position with the fewest
    obstacles in the ball (the fit only resolves the centre up to the tile
    size).
    """
    cfg = config or LocalizationConfig()
    if cfg.rho is not None:
        rho = int(cfg.rho)
    else:
        if n is None or p is None:
            raise ValueError("need (n, p) or an explicit rho")
        rho = rho_n(n, env.d, p)
    if rho < 1:
        raise ValueError("radius rho is zero for these parameters")
    flags = []
    eps_n = cfg.epsilon if cfg.epsilon is not None else rho ** (-cfg.c2)
    schedule = []
    primary = None
    for tag, eps in (("sqrt", math.sqrt(eps_n)), ("eps_n", eps_n), ("square", eps_n**2)):
        s = int(math.floor(eps * rho))
        if s == 0:
            schedule.append({"which": tag, "epsilon": eps, "tile_radius": 0, "skipped": True})
            continue
        reg = low_density_region(env, region, eps, rho, margin=int(math.ceil(rho)) + 1)
        schedule.append({"which": tag, "epsilon": eps, "tile_radius": s, "skipped": False,
                         "e_size": reg.size})
        if tag == "eps_n":
            primary = reg
    if primary is None:
        valid = [e for e in schedule if not e["skipped"]]
        if not valid:
            raise ValueError("every schedule value gives degenerate tiles")
        flags.append("eps_n tiles degenerate; fitted at epsilon_n^(1/2)")
        primary = low_density_region(env, region, valid[0]["epsilon"], rho,
                                     margin=int(math.ceil(rho)) + 1)
    eps = primary.epsilon
    if primary.size == 0:
        return LocalizationReport("empty", rho, eps, schedule=schedule, flags=flags)

    search = primary.grid.inside
    fit_c, fit_sd = fit_ball_center(primary.mask, rho, primary.grid.lo, search)
    center, sd = fit_c, fit_sd
    if cfg.refine:
        center, sd = refine_center(env, primary, fit_c, rho, 2 * primary.coarse.box_radius + 1)
    n_obs = obstacle_count_in_ball(env, center, rho)
    # |B cap O| <= |B \ E| + |E cap O| <= sym_diff + eps |E|
    bound_ok = n_obs <= sd + eps * primary.size

    delta = cfg.delta if cfg.delta is not None else rho ** (-cfg.kappa)
    if delta >= 0.5:
        flags.append(f"delta={delta:.4g} >= 1/2 clamped to 0.49")
        delta = 0.49
    shells = shell_index(env, center, rho, delta, cfg.c5)

    to_region = None
    if cfg.truly_open_scope is not None:
        from .lattice import euclidean_ball
        to_region = euclidean_ball(center, cfg.truly_open_scope * rho)
    truly = detect_truly_open(env, cfg.ell, region=to_region)
    return LocalizationReport(
        outcome="located", rho=rho, epsilon=eps, center=center, e_size=primary.size,
        sym_diff=sd, obstacle_count_in_ball=n_obs, fit_center=fit_c, fit_sym_diff=fit_sd,
        truly_open=[tuple(int(v) for v in a) for a in truly.passed], ell=cfg.ell,
        shells={"delta": delta, "radii": shells.radii, "counts": shells.counts},
        J=shells.J, clear=shells.clear, schedule=schedule, flags=flags, bound_chain_ok=bool(bound_ok),
    )
