"""Lattice and space-time geometry: balls, interiors, cylinders, parity classes.

Point sets are returned as integer arrays; sites are rows of shape ``(n, d)``
and space-time points rows of shape ``(n, d + 1)`` with time in the last
column.  All sets are sorted lexicographically (time first for space-time
sets) so that they are reproducible and cheap to compare.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

ODD, EVEN = "odd", "even"


def _as_center(center, d: int) -> np.ndarray:
    if center is None:
        return np.zeros(d, dtype=np.int64)
    c = np.asarray(center, dtype=np.int64).reshape(-1)
    if c.size != d:
        raise ValueError(f"center has length {c.size}, expected d={d}")
    return c


def _sort_rows(pts: np.ndarray) -> np.ndarray:
    if pts.shape[0] == 0:
        return pts
    order = np.lexsort(pts.T[::-1])
    return pts[order]


def _box_grid(lo, hi) -> np.ndarray:
    axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def unique_rows(pts: np.ndarray) -> np.ndarray:
    if pts.shape[0] == 0:
        return pts
    return np.unique(pts, axis=0)


def linf_offsets(d: int, k: int = 1, include_zero: bool = False) -> np.ndarray:
    offs = np.array(list(itertools.product(range(-k, k + 1), repeat=d)), dtype=np.int64)
    if not include_zero:
        offs = offs[np.any(offs != 0, axis=1)]
    return offs


def axis_offsets(d: int) -> np.ndarray:
    """Directions e_1..e_d, -e_1..-e_d as rows."""
    eye = np.eye(d, dtype=np.int64)
    return np.concatenate([eye, -eye])


# --- sites -----------------------------------------------------------------

def ball_points(R: float, center=None, d: int = 2) -> np.ndarray:
    """Lattice points at Euclidean distance strictly below ``R`` from ``center``."""
    if R <= 0:
        raise ValueError("R must be positive")
    c = _as_center(center, d)
    r = int(math.ceil(R))
    pts = _box_grid([-r] * d, [r] * d)
    inside = (pts * pts).sum(axis=1) < R * R
    return _sort_rows(pts[inside] + c)


def in_ball(pts: np.ndarray, R: float, center=None) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
    c = _as_center(center, pts.shape[1])
    diff = pts - c
    return (diff * diff).sum(axis=1) < R * R


def outer_boundary(sites: np.ndarray, k: int = 1) -> np.ndarray:
    """Sites outside ``sites`` within l-infinity distance ``k`` of it."""
    sites = np.asarray(sites, dtype=np.int64)
    d = sites.shape[1]
    cand = (sites[:, None, :] + linf_offsets(d, k)[None, :, :]).reshape(-1, d)
    cand = unique_rows(cand)
    return _sort_rows(cand[~contains_rows(sites, cand)])


def contains_rows(table: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Membership of each row of ``query`` in ``table`` (both integer)."""
    table = np.asarray(table, dtype=np.int64)
    query = np.atleast_2d(np.asarray(query, dtype=np.int64))
    if table.shape[0] == 0 or query.shape[0] == 0:
        return np.zeros(query.shape[0], dtype=bool)
    lo = np.minimum(table.min(axis=0), query.min(axis=0))
    span = np.maximum(table.max(axis=0), query.max(axis=0)) - lo + 1
    strides = np.cumprod(np.concatenate([[1], span[::-1][:-1]]))[::-1]
    tk = ((table - lo) * strides).sum(axis=1)
    qk = ((query - lo) * strides).sum(axis=1)
    return np.isin(qk, tk)


def interior_points(R: float, d: int = 2, center=None) -> np.ndarray:
    """O_R: points of B_R all of whose l-infinity neighbours lie in B_R."""
    if R <= 1:
        raise ValueError("interior requires R > 1")
    c = _as_center(center, d)
    ball = ball_points(R, None, d)
    nb = ball[:, None, :] + linf_offsets(d)[None, :, :]
    ok = ((nb * nb).sum(axis=2) < R * R).all(axis=1)
    return ball[ok] + c


def interior_boundary(R: float, d: int = 2, k: int = 1, center=None) -> np.ndarray:
    """The k-thick boundary of O_R (for k = 1 this is B_R minus O_R)."""
    return outer_boundary(interior_points(R, d, center), k)


# --- space-time ------------------------------------------------------------

def product(sites: np.ndarray, times) -> np.ndarray:
    sites = np.asarray(sites, dtype=np.int64)
    times = np.asarray(list(times), dtype=np.int64)
    if sites.shape[0] == 0 or times.size == 0:
        return np.zeros((0, sites.shape[1] + 1), dtype=np.int64)
    s = np.repeat(sites, times.size, axis=0)
    t = np.tile(times, sites.shape[0])
    return np.concatenate([s, t[:, None]], axis=1)


def sort_spacetime(pts: np.ndarray) -> np.ndarray:
    """Sort by time, then lexicographically by site."""
    if pts.shape[0] == 0:
        return pts
    keys = [pts[:, i] for i in range(pts.shape[1] - 2, -1, -1)] + [pts[:, -1]]
    return pts[np.lexsort(keys)]


def parity_of(pts: np.ndarray) -> np.ndarray:
    """0 for even, 1 for odd: (|x|_1 + t) mod 2."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
    return np.abs(pts).sum(axis=1) % 2


def parity_filter(pts: np.ndarray, parity: str) -> np.ndarray:
    if parity not in (ODD, EVEN):
        raise ValueError(f"parity must be 'odd' or 'even', got {parity!r}")
    pts = np.asarray(pts, dtype=np.int64).reshape(-1, np.shape(pts)[-1])
    want = 1 if parity == ODD else 0
    return pts[parity_of(pts) == want] if pts.shape[0] else pts


@dataclass(frozen=True)
class SpaceTimeDomain:
    """S x {t0, ..., t0+N-1} together with its parabolic boundary.

    The parabolic boundary is (dS x {t0..t0+N}) u (S x {t0+N}) where dS is the
    l-infinity outer boundary of the site set S.
    """

    sites: np.ndarray
    t0: int
    n_steps: int

    def __post_init__(self):
        s = _sort_rows(unique_rows(np.asarray(self.sites, dtype=np.int64)))
        object.__setattr__(self, "sites", s)
        if s.shape[0] == 0:
            raise ValueError("domain has no interior sites")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def t_end(self) -> int:
        return self.t0 + self.n_steps

    @cached_property
    def boundary_sites(self) -> np.ndarray:
        return outer_boundary(self.sites, 1)

    @cached_property
    def closure_sites(self) -> np.ndarray:
        return _sort_rows(np.concatenate([self.sites, self.boundary_sites]))

    # grid layout: bounding box of the closure, padded by one cell
    @cached_property
    def grid_lo(self) -> np.ndarray:
        return self.closure_sites.min(axis=0) - 1

    @cached_property
    def grid_shape(self) -> tuple:
        return tuple(int(v) for v in self.closure_sites.max(axis=0) + 2 - self.grid_lo)

    def grid_index(self, sites: np.ndarray) -> tuple:
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        rel = sites - self.grid_lo
        return tuple(rel[:, i] for i in range(self.d))

    @cached_property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.grid_shape, dtype=bool)
        m[self.grid_index(self.sites)] = True
        return m

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.grid_shape, dtype=bool)
        m[self.grid_index(self.boundary_sites)] = True
        return m

    @property
    def closure_mask(self) -> np.ndarray:
        return self.interior_mask | self.boundary_mask

    def interior_points(self) -> np.ndarray:
        return product(self.sites, range(self.t0, self.t_end))

    def boundary_points(self) -> np.ndarray:
        """Parabolic boundary, sorted by time then site."""
        lat = product(self.boundary_sites, range(self.t0, self.t_end + 1))
        top = product(self.sites, [self.t_end])
        return sort_spacetime(np.concatenate([lat, top]))

    def closure_points(self) -> np.ndarray:
        return sort_spacetime(np.concatenate([self.interior_points(), self.boundary_points()]))

    def contains_interior(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        t = pts[:, -1]
        return contains_rows(self.sites, pts[:, :-1]) & (t >= self.t0) & (t < self.t_end)

    def contains_closure(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        t = pts[:, -1]
        return contains_rows(self.closure_sites, pts[:, :-1]) & (t >= self.t0) & (t <= self.t_end)


@dataclass(frozen=True)
class Cylinder:
    """K_R(x, t): the ball B_R(x) over times t, ..., t + ceil(R^2) - 1."""

    radius: float
    center: tuple = field(default=(0, 0))
    time: int = 0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.time < 0:
            raise ValueError("time must be non-negative")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def height(self) -> int:
        return int(math.ceil(self.radius ** 2))

    def domain(self) -> SpaceTimeDomain:
        return SpaceTimeDomain(ball_points(self.radius, self.center, self.d), self.time, self.height)


def q_domain(R: float, d: int = 2, center=None) -> SpaceTimeDomain:
    """Q_R = O_R x {0, ..., floor(R^2) - 1}."""
    return SpaceTimeDomain(interior_points(R, d, center), 0, int(math.floor(R * R)))


def q_extended(R: float, d: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Q^k_R split into (Q_R points, k-thick parabolic boundary points)."""
    o = interior_points(R, d)
    top = int(math.floor(R * R))
    ring = outer_boundary(o, k)
    inner = product(o, range(top))
    bdry = np.concatenate([product(ring, range(top + k + 1)), product(o, range(top, top + k + 1))])
    return sort_spacetime(inner), sort_spacetime(bdry)


class CylinderSets(NamedTuple):
    K: np.ndarray
    K_boundary: np.ndarray
    Q: np.ndarray
    Q_boundary: np.ndarray
    K_plus: np.ndarray
    K_minus: np.ndarray


def strict_times(lo: float, hi: float) -> range:
    """Integers t >= 0 with lo < t < hi."""
    a = max(int(math.floor(lo)) + 1, 0)
    b = int(math.ceil(hi)) - 1
    return range(a, b + 1)


def k_plus(R: float, center=None, time: int = 0, d: int = 2) -> np.ndarray:
    ball = ball_points(R, center, d)
    return sort_spacetime(product(ball, [time + t for t in strict_times(2 * R * R, 3 * R * R)]))


def k_minus(R: float, center=None, time: int = 0, d: int = 2) -> np.ndarray:
    ball = ball_points(R, center, d)
    return sort_spacetime(product(ball, [time + t for t in strict_times(0, R * R)]))


def cylinder_sets(c: Cylinder) -> CylinderSets:
    dom = c.domain()
    R, d = c.radius, c.d
    inner = interior_points(R, d, c.center) if R > 1 else np.zeros((0, d), dtype=np.int64)
    if inner.shape[0]:
        q = SpaceTimeDomain(inner, c.time, int(math.floor(R * R)))
        qi, qb = q.interior_points(), q.boundary_points()
    else:
        qi = qb = np.zeros((0, d + 1), dtype=np.int64)
    return CylinderSets(
        K=sort_spacetime(dom.interior_points()),
        K_boundary=dom.boundary_points(),
        Q=sort_spacetime(qi),
        Q_boundary=qb,
        K_plus=k_plus(R, c.center, c.time, d),
        K_minus=k_minus(R, c.center, c.time, d),
    )


def closed_cylinder_points(c: Cylinder) -> np.ndarray:
    dom = c.domain()
    return dom.closure_points()
