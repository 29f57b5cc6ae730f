"""Bernoulli obstacle environments on finite boxes of Z^d.

An environment stores the obstacle set as a dense boolean array over an
inclusive box ``[lo_i, hi_i]``. Sites outside the box are treated as closed by
every consumer in this package.

Random environments use a counter-style construction: the uniform variate of a
site is a pure function of ``(seed, site)`` obtained by chaining the splitmix64
finaliser over the seed and the site coordinates. Regenerating a sub-box or a
shifted box therefore reproduces the same obstacles site by site, on any
machine and with any worker count.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

FORMAT_VERSION = 1
RNG_TAG = "splitmix64-site-hash/v1"
_MAGIC = b"OBSWALK-ENV\n"
GENERATOR_TAGS = ("iid_bernoulli", "planted", "loaded")

Site = tuple


# ----------------------------------------------------------------------------
# site hashing
# ----------------------------------------------------------------------------
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, coords: Sequence[np.ndarray]) -> np.ndarray:
    """Uniform variates in [0, 1) attached to lattice sites.

    Parameters
    ----------
    seed : int
        64-bit seed (taken modulo 2**64).
    coords : sequence of integer arrays
        One broadcastable array per axis.

    Returns
    -------
    ndarray of float64 with the broadcast shape of ``coords``.
    """
    shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
    key = _splitmix64(np.full(shape, np.uint64(seed % 2**64), dtype=np.uint64))
    for c in coords:
        c64 = np.broadcast_to(np.asarray(c, dtype=np.int64), shape).view(np.uint64)
        key = _splitmix64(key ^ c64)
    return (key >> np.uint64(11)).astype(np.float64) * 2.0**-53


# ----------------------------------------------------------------------------
# data types
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class BoxSpec:
    """The l-infinity box K(v, r) = {x : |x - v|_inf <= r}."""

    center: Site
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("box radius must be >= 0")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    def contains(self, site) -> bool:
        return max(abs(int(a) - b) for a, b in zip(site, self.center)) <= self.radius

    def cardinality(self) -> int:
        return (2 * self.radius + 1) ** self.d

    def bounds(self) -> tuple[tuple[int, int], ...]:
        return tuple((c - self.radius, c + self.radius) for c in self.center)

    def sites(self) -> np.ndarray:
        return _box_sites(self.bounds())


@dataclass(frozen=True)
class PlantedBall:
    center: Site
    radius: float


@dataclass(frozen=True, eq=False)
class EnvironmentField:
    """Obstacle configuration on an inclusive box of Z^d.

    ``closed[i_1, ..., i_d]`` refers to the site ``lo + i``. The array is
    read-only; every modifying operation returns a new environment.
    """

    lo: tuple[int, ...]
    hi: tuple[int, ...]
    closed: np.ndarray
    p_open: float | None = None
    seed: int | None = None
    generator_tag: str = "loaded"
    planted: tuple[PlantedBall, ...] = field(default=())

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != len(hi) or len(lo) < 1:
            raise ValueError("lo and hi must have the same positive length")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"degenerate box: lo={lo}, hi={hi}")
        closed = np.array(self.closed, dtype=bool, copy=True)
        if closed.shape != tuple(h - l + 1 for l, h in zip(lo, hi)):
            raise ValueError("closed array shape does not match the box")
        if self.generator_tag not in GENERATOR_TAGS:
            raise ValueError(f"unknown generator tag {self.generator_tag!r}")
        closed.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "closed", closed)

    # -- geometry -----------------------------------------------------------
    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.closed.shape

    @property
    def box(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.lo, self.hi))

    @property
    def open_mask(self) -> np.ndarray:
        return ~self.closed

    @property
    def n_sites(self) -> int:
        return int(self.closed.size)

    @property
    def n_closed(self) -> int:
        return int(self.closed.sum())

    def in_box(self, site) -> bool:
        return all(l <= int(x) <= h for x, l, h in zip(site, self.lo, self.hi))

    def index_of(self, site) -> tuple[int, ...]:
        return tuple(int(x) - l for x, l in zip(site, self.lo))

    def is_closed(self, site) -> bool:
        """Closed status; sites outside the box count as closed."""
        if not self.in_box(site):
            return True
        return bool(self.closed[self.index_of(site)])

    def is_open(self, site) -> bool:
        return not self.is_closed(site)

    def closed_sites(self) -> np.ndarray:
        return np.argwhere(self.closed) + np.asarray(self.lo)

    def open_sites(self) -> np.ndarray:
        return np.argwhere(~self.closed) + np.asarray(self.lo)

    def coordinate_grids(self) -> list[np.ndarray]:
        return np.meshgrid(*[np.arange(l, h + 1) for l, h in self.box], indexing="ij", sparse=True)

    def mask_of(self, sites: np.ndarray) -> np.ndarray:
        """Boolean box mask of the given sites (sites outside the box ignored)."""
        mask = np.zeros(self.shape, dtype=bool)
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, self.d)
        idx = sites - np.asarray(self.lo)
        keep = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=1)
        mask[tuple(idx[keep].T)] = True
        return mask

    # -- modification ---------------------------------------------------------
    def with_closed(self, closed: np.ndarray, generator_tag: str | None = None,
                    planted: tuple[PlantedBall, ...] | None = None) -> "EnvironmentField":
        return EnvironmentField(
            self.lo, self.hi, closed, self.p_open, self.seed,
            generator_tag or self.generator_tag,
            self.planted if planted is None else planted,
        )

    def close_sites(self, sites) -> "EnvironmentField":
        closed = self.closed.copy()
        closed |= self.mask_of(np.asarray(sites).reshape(-1, self.d))
        return self.with_closed(closed)

    def open_sites_at(self, sites) -> "EnvironmentField":
        closed = self.closed.copy()
        closed &= ~self.mask_of(np.asarray(sites).reshape(-1, self.d))
        return self.with_closed(closed)

    def __eq__(self, other):
        if not isinstance(other, EnvironmentField):
            return NotImplemented
        return (self.lo == other.lo and self.hi == other.hi
                and np.array_equal(self.closed, other.closed)
                and self.p_open == other.p_open and self.seed == other.seed
                and self.generator_tag == other.generator_tag
                and self.planted == other.planted)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """Nearest-neighbour connected components of the open sites.

    ``labels`` has the box shape; 0 marks closed sites and clusters are
    numbered 1..n_clusters in order of their lexicographically first site.
    """

    lo: tuple[int, ...]
    labels: np.ndarray
    sizes: np.ndarray
    spanning: np.ndarray
    origin_cluster: int | None

    @property
    def n_clusters(self) -> int:
        return len(self.sizes) - 1

    def label(self, site) -> int:
        idx = tuple(int(x) - l for x, l in zip(site, self.lo))
        if any(i < 0 or i >= n for i, n in zip(idx, self.labels.shape)):
            return 0
        return int(self.labels[idx])

    def largest(self) -> int:
        if self.n_clusters == 0:
            raise ValueError("no open sites")
        return int(np.argmax(self.sizes[1:]) + 1)

    def mask(self, cluster_id: int) -> np.ndarray:
        return self.labels == cluster_id

    def sites(self, cluster_id: int) -> np.ndarray:
        return np.argwhere(self.labels == cluster_id) + np.asarray(self.lo)


# ----------------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------------
def _normalise_box(box) -> tuple[tuple[int, int], ...]:
    out = tuple((int(l), int(h)) for l, h in box)
    for l, h in out:
        if h < l:
            raise ValueError(f"degenerate box bound [{l}, {h}]")
    return out


def _box_sites(box) -> np.ndarray:
    axes = [np.arange(l, h + 1) for l, h in box]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def sample_environment(d: int, box, p_open: float, seed: int) -> EnvironmentField:
    """Sample i.i.d. Bernoulli obstacles; each site is closed w.p. ``1 - p_open``."""
    if d < 2:
        raise ValueError("dimension must be >= 2")
    if not 0.0 < p_open < 1.0:
        raise ValueError("p_open must lie in (0, 1)")
    box = _normalise_box(box)
    if len(box) != d:
        raise ValueError("box must have one bound pair per dimension")
    coords = np.meshgrid(*[np.arange(l, h + 1) for l, h in box], indexing="ij", sparse=True)
    closed = site_uniforms(seed, coords) >= p_open
    lo, hi = zip(*box)
    return EnvironmentField(lo, hi, closed, float(p_open), int(seed), "iid_bernoulli")


def empty_environment(box, closed: bool = False) -> EnvironmentField:
    """All-open (or all-closed) environment, tagged as loaded."""
    box = _normalise_box(box)
    lo, hi = zip(*box)
    shape = tuple(h - l + 1 for l, h in box)
    return EnvironmentField(lo, hi, np.full(shape, closed, dtype=bool))


def euclidean_ball(center, radius: float) -> np.ndarray:
    """Sites x with |x - center|_2 <= radius, in lexicographic order."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    center = np.asarray(center, dtype=np.int64)
    r = int(math.floor(radius))
    box = [(int(c) - r, int(c) + r) for c in center]
    sites = _box_sites(box)
    dist2 = np.sum((sites - center) ** 2, axis=1)
    return sites[dist2 <= radius * radius + 1e-9]


def ball_mask(env: EnvironmentField, center, radius: float) -> np.ndarray:
    """Box mask of the Euclidean ball (sites outside the box dropped)."""
    grids = env.coordinate_grids()
    dist2 = sum((g - int(c)) ** 2 for g, c in zip(grids, center))
    return dist2 <= radius * radius + 1e-9


def plant_vacant_ball(env: EnvironmentField, center, radius: float) -> EnvironmentField:
    """Remove every obstacle from the Euclidean ball B(center, radius)."""
    center = tuple(int(c) for c in center)
    if len(center) != env.d:
        raise ValueError("center dimension mismatch")
    r = int(math.floor(radius))
    if any(c - r < l or c + r > h for c, l, h in zip(center, env.lo, env.hi)):
        raise ValueError("ball escapes the environment box")
    closed = env.closed & ~ball_mask(env, center, radius)
    planted = env.planted
    ball = PlantedBall(center, float(radius))
    if ball not in planted:
        planted = planted + (ball,)
    return env.with_closed(closed, generator_tag="planted", planted=planted)


def label_clusters(env: EnvironmentField) -> ClusterLabeling:
    """Label open clusters under nearest-neighbour adjacency."""
    structure = ndimage.generate_binary_structure(env.d, 1)
    labels, n = ndimage.label(env.open_mask, structure=structure)
    labels = labels.astype(np.int64)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    spanning = np.zeros(n + 1, dtype=bool)
    for axis in range(env.d):
        first = np.unique(np.take(labels, 0, axis=axis))
        last = np.unique(np.take(labels, -1, axis=axis))
        both = np.intersect1d(first, last)
        spanning[both[both > 0]] = True
    origin = tuple(0 for _ in range(env.d))
    origin_cluster = None
    if env.in_box(origin) and env.is_open(origin):
        origin_cluster = int(labels[env.index_of(origin)])
    return ClusterLabeling(env.lo, labels, sizes, spanning, origin_cluster)


def origin_spans(env: EnvironmentField) -> bool:
    """Finite-box surrogate of the infinite-cluster conditioning."""
    lab = label_clusters(env)
    return lab.origin_cluster is not None and bool(lab.spanning[lab.origin_cluster])


# ----------------------------------------------------------------------------
# environment files
# ----------------------------------------------------------------------------
def _header(env: EnvironmentField, payload: bytes) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d": env.d,
        "box": [list(b) for b in env.box],
        "p_open": env.p_open,
        "seed": env.seed,
        "generator_tag": env.generator_tag,
        "planted_region": [{"center": list(b.center), "radius": b.radius} for b in env.planted],
        "rng": RNG_TAG,
        "order": "row-major, last axis fastest; bit 1 = closed; numpy packbits big-endian",
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }


def dumps_environment(env: EnvironmentField) -> bytes:
    payload = np.packbits(env.closed.ravel(order="C")).tobytes()
    header = json.dumps(_header(env, payload), sort_keys=True).encode()
    return _MAGIC + header + b"\n" + payload


def loads_environment(blob: bytes) -> EnvironmentField:
    if not blob.startswith(_MAGIC):
        raise ValueError("not an environment file")
    rest = blob[len(_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    payload = rest[nl + 1:]
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {header.get('format_version')}")
    if len(payload) != header["payload_bytes"]:
        raise ValueError("payload length mismatch")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError("payload checksum mismatch")
    box = [tuple(b) for b in header["box"]]
    shape = tuple(h - l + 1 for l, h in box)
    n = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n)
    closed = bits.astype(bool).reshape(shape)
    lo, hi = zip(*box)
    planted = tuple(PlantedBall(tuple(b["center"]), float(b["radius"]))
                    for b in header.get("planted_region", []))
    return EnvironmentField(lo, hi, closed, header["p_open"], header["seed"],
                            header["generator_tag"], planted)


def save_environment(env: EnvironmentField, path) -> None:
    Path(path).write_bytes(dumps_environment(env))


def load_environment(path) -> EnvironmentField:
    return loads_environment(Path(path).read_bytes())


def parse_sites(text: str | Iterable) -> np.ndarray:
    """Parse ``"x,y;x,y"`` or an iterable of coordinate tuples into an array."""
    if isinstance(text, str):
        rows = [tuple(int(v) for v in part.split(",")) for part in text.split(";") if part.strip()]
    else:
        rows = [tuple(int(v) for v in s) for s in text]
    return np.asarray(rows, dtype=np.int64)
