"""Exact discrete caloric functions and the quantities built on them.

A field u on the closure of a space-time domain is caloric when
u(x, m) = sum_k w(x, e_k) u(x + e_k, m + 1) at every interior point.  The
solver walks backwards in time over a padded bounding-box grid, so each step
is a handful of shifted array products.  Boundary data may carry leading batch
axes; the recursion is linear, so a batch of data is solved in one pass.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .environment import Environment, KernelError
from .lattice import Cylinder, SpaceTimeDomain, axis_offsets, contains_rows, k_minus, k_plus, parity_filter

FIELD_MAGIC = b"RWCF"


# --- boundary data --------------------------------------------------------------

@dataclass
class BoundaryData:
    """Values on ``domain.boundary_points()`` (same order); shape ``batch + (m,)``."""

    domain: SpaceTimeDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        m = self.domain.boundary_points().shape[0]
        if self.values.shape[-1:] != (m,):
            raise ValueError(f"boundary data must have {m} values on the last axis, got {self.values.shape}")

    @property
    def batch_shape(self) -> tuple:
        return self.values.shape[:-1]

    @classmethod
    def from_function(cls, domain: SpaceTimeDomain, fn: Callable) -> "BoundaryData":
        """``fn(points)`` gets an ``(m, d + 1)`` integer array; returns ``(..., m)``."""
        pts = domain.boundary_points()
        return cls(domain, np.asarray(fn(pts), dtype=np.float64))

    @classmethod
    def constant(cls, domain: SpaceTimeDomain, c: float) -> "BoundaryData":
        return cls(domain, np.full(domain.boundary_points().shape[0], float(c)))


def _coerce_data(domain: SpaceTimeDomain, g) -> BoundaryData:
    if isinstance(g, BoundaryData):
        if g.domain is not domain and not (np.array_equal(g.domain.sites, domain.sites)
                                           and g.domain.t0 == domain.t0
                                           and g.domain.n_steps == domain.n_steps):
            raise ValueError("boundary data belongs to a different domain")
        return g
    if callable(g):
        return BoundaryData.from_function(domain, g)
    return BoundaryData(domain, g)


# --- solver ---------------------------------------------------------------------

def domain_weights(env: Environment, domain: SpaceTimeDomain) -> np.ndarray:
    """Kernel weights on the domain grid, shape ``(2d,) + grid``; zero off the interior."""
    d = domain.d
    if env.d != d:
        raise ValueError("environment and domain dimensions differ")
    inside = env.contains(domain.sites)
    if not np.all(inside):
        bad = tuple(int(v) for v in domain.sites[~inside][0])
        raise KernelError(f"domain site {bad} has no kernel in the environment box", bad)
    w = np.zeros((2 * d,) + domain.grid_shape, dtype=np.float64)
    idx = domain.grid_index(domain.sites)
    k = env.kernels_at(domain.sites)
    for j in range(2 * d):
        w[(j,) + idx] = k[:, j]
    return w


def _shift_views(d: int, shape: tuple):
    """Core slice and, per direction, the slice of the neighbour values."""
    core = tuple(slice(1, n - 1) for n in shape)
    views = []
    for off in axis_offsets(d):
        views.append(tuple(slice(1 + int(o), n - 1 + int(o)) for o, n in zip(off, shape)))
    return core, views


def _boundary_layout(domain: SpaceTimeDomain):
    """Boundary points grouped by time as (start, stop, grid index) per time."""
    pts = domain.boundary_points()
    t = pts[:, -1]
    out = {}
    for tt in range(domain.t0, domain.t_end + 1):
        a, b = np.searchsorted(t, [tt, tt + 1])
        out[tt] = (int(a), int(b), domain.grid_index(pts[a:b, :-1]))
    return out


def solve_backward_iter(env: Environment, domain: SpaceTimeDomain, g, t_stop: int | None = None,
                        weights: np.ndarray | None = None) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(t, slice)`` for t = t_end, t_end - 1, ..., t_stop (default t0).

    Each slice has shape ``batch + grid_shape``; entries off the closure are
    zero.  Only two slices are alive at a time.
    """
    data = _coerce_data(domain, g)
    w = domain_weights(env, domain) if weights is None else weights
    d = domain.d
    shape = domain.grid_shape
    batch = data.batch_shape
    layout = _boundary_layout(domain)
    core, views = _shift_views(d, shape)
    interior = domain.interior_mask[core]
    t_stop = domain.t0 if t_stop is None else max(t_stop, domain.t0)

    cur = np.zeros(batch + shape, dtype=np.float64)
    a, b, gi = layout[domain.t_end]
    cur[(Ellipsis,) + gi] = data.values[..., a:b]
    yield domain.t_end, cur
    wc = [w[(j,) + core] for j in range(2 * d)]
    for t in range(domain.t_end - 1, t_stop - 1, -1):
        nxt = np.zeros(batch + shape, dtype=np.float64)
        acc = wc[0] * cur[(Ellipsis,) + views[0]]
        for j in range(1, 2 * d):
            acc = acc + wc[j] * cur[(Ellipsis,) + views[j]]
        nxt[(Ellipsis,) + core] = np.where(interior, acc, 0.0)
        a, b, gi = layout[t]
        nxt[(Ellipsis,) + gi] = data.values[..., a:b]
        cur = nxt
        yield t, cur


class CaloricField:
    """Solved field over the closure; ``values`` has shape ``batch + (N+1,) + grid``."""

    def __init__(self, domain: SpaceTimeDomain, values: np.ndarray, env_id: str = ""):
        self.domain = domain
        self.values = values
        self.env_id = env_id

    @property
    def batch_shape(self) -> tuple:
        return self.values.shape[:-(self.domain.d + 1)]

    def at(self, points) -> np.ndarray:
        """Values at space-time points ``(m, d + 1)``; shape ``batch + (m,)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        dom = self.domain
        ok = dom.contains_closure(pts)
        if not np.all(ok):
            bad = tuple(int(v) for v in pts[~ok][0])
            raise KeyError(f"point {bad} is outside the closed domain")
        ti = pts[:, -1] - dom.t0
        gi = dom.grid_index(pts[:, :-1])
        return self.values[(Ellipsis, ti) + gi]

    def value(self, x, t) -> float:
        return self.at(np.array([tuple(x) + (t,)]))[..., 0]

    def closure_points(self) -> np.ndarray:
        return self.domain.closure_points()

    def interior_residual(self, env: Environment) -> float:
        """Max relative violation of the caloric identity over the interior."""
        pts = self.domain.interior_points()
        offs = axis_offsets(self.domain.d)
        k = env.kernels_at(pts[:, :-1])
        lhs = self.at(pts)
        rhs = 0.0
        for j, off in enumerate(offs):
            nb = pts.copy()
            nb[:, :-1] += off
            nb[:, -1] += 1
            rhs = rhs + k[:, j] * self.at(nb)
        scale = np.maximum(1.0, np.abs(lhs))
        return float(np.max(np.abs(lhs - rhs) / scale)) if pts.shape[0] else 0.0


def solve_backward(env: Environment, domain: SpaceTimeDomain, g) -> CaloricField:
    """The unique field equal to ``g`` on the parabolic boundary and caloric inside."""
    data = _coerce_data(domain, g)
    vals = np.zeros(data.batch_shape + (domain.n_steps + 1,) + domain.grid_shape)
    for t, sl in solve_backward_iter(env, domain, data):
        vals[(Ellipsis, t - domain.t0) + (slice(None),) * domain.d] = sl
    return CaloricField(domain, vals, f"{env.law_id}:{env.seed}")


def apply_generator(env: Environment, u, point) -> float:
    """(L u)(y, s) = sum_i w(y, e_i) u(y + e_i, s + 1) - u(y, s).

    ``u`` is a ``CaloricField`` or a callable taking ``(m, d + 1)`` points.
    """
    p = np.asarray(point, dtype=np.int64).reshape(1, -1)
    d = p.shape[1] - 1
    ev = u.at if isinstance(u, CaloricField) else (lambda q: np.asarray(u(q), dtype=np.float64))
    nb = np.repeat(p, 2 * d, axis=0)
    nb[:, :-1] += axis_offsets(d)
    nb[:, -1] += 1
    k = env.kernel(p[0, :-1])
    return float(np.dot(k, ev(nb)) - ev(p)[..., 0])


# --- exit measures ---------------------------------------------------------------

@dataclass
class BoundaryPartition:
    """Labeled partition of a parabolic boundary.

    ``assign(points, center, R, height)`` returns an integer label per boundary
    point of a cylinder; labels must lie in ``range(len(names))``.
    """

    names: list
    assign: Callable

    def labels_for(self, domain: SpaceTimeDomain, center, R: float) -> np.ndarray:
        pts = domain.boundary_points()
        lab = np.asarray(self.assign(pts, np.asarray(center, dtype=np.int64), R, domain), dtype=np.int64)
        if lab.shape != (pts.shape[0],) or np.any(lab < 0) or np.any(lab >= len(self.names)):
            raise ValueError("partition does not cover the parabolic boundary")
        return lab


def whole_partition() -> BoundaryPartition:
    return BoundaryPartition(["all"], lambda pts, c, R, dom: np.zeros(pts.shape[0], dtype=np.int64))


def sector_partition(n_sectors: int = 4, n_time_bins: int = 1, top_sectors: bool = False) -> BoundaryPartition:
    """Lateral cells (angular sector x time bin) plus the top face.

    In d = 1 sectors are the two sides; in d >= 2 the angle is taken in the
    (x_1, x_2) plane.  Times are binned relative to the cylinder height.
    """
    names = [f"lat-s{i}-t{j}" for i in range(n_sectors) for j in range(n_time_bins)]
    names += [f"top-s{i}" for i in range(n_sectors)] if top_sectors else ["top"]

    def assign(pts, center, R, dom):
        rel = pts[:, :-1] - center
        t_rel = pts[:, -1] - dom.t0
        sec = sector_of(rel, n_sectors)
        tb = np.minimum((t_rel * n_time_bins) // max(dom.n_steps, 1), n_time_bins - 1)
        is_top = (pts[:, -1] == dom.t_end) & contains_rows(dom.sites, pts[:, :-1])
        lat = sec * n_time_bins + tb
        top = n_sectors * n_time_bins + (sec if top_sectors else 0)
        return np.where(is_top, top, lat)

    return BoundaryPartition(names, assign)


def sector_of(rel: np.ndarray, n_sectors: int) -> np.ndarray:
    rel = np.asarray(rel, dtype=np.float64)
    if rel.shape[1] == 1:
        if n_sectors != 2:
            return np.where(rel[:, 0] >= 0, 0, min(1, n_sectors - 1)).astype(np.int64)
        return np.where(rel[:, 0] >= 0, 0, 1).astype(np.int64)
    ang = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), 2 * np.pi)
    return np.minimum((ang * n_sectors / (2 * np.pi)).astype(np.int64), n_sectors - 1)


@dataclass
class ExitMeasure:
    labels: list
    masses: np.ndarray

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in zip(self.labels, self.masses)}


def _cyl(c) -> tuple[SpaceTimeDomain, tuple, float]:
    if isinstance(c, Cylinder):
        return c.domain(), c.center, c.radius
    return c, tuple([0] * c.d), float("nan")


def exit_distribution_field(env: Environment, c, partition: BoundaryPartition) -> CaloricField:
    """Batched solve with one indicator datum per label: Phi_i on the closure."""
    dom, center, R = _cyl(c)
    lab = partition.labels_for(dom, center, R)
    ind = (lab[None, :] == np.arange(len(partition.names))[:, None]).astype(np.float64)
    return solve_backward(env, dom, BoundaryData(dom, ind))


def exit_distribution_exact(env: Environment, start, c, partition: BoundaryPartition | None = None) -> ExitMeasure:
    partition = whole_partition() if partition is None else partition
    dom, center, R = _cyl(c)
    start = np.asarray(start, dtype=np.int64).reshape(1, -1)
    if not dom.contains_closure(start)[0]:
        raise ValueError("start must lie in the closed cylinder")
    lab = partition.labels_for(dom, center, R)
    ind = (lab[None, :] == np.arange(len(partition.names))[:, None]).astype(np.float64)
    t_s = int(start[0, -1])
    sl = None
    for t, sl in solve_backward_iter(env, dom, BoundaryData(dom, ind), t_stop=t_s):
        pass
    masses = sl[(slice(None),) + dom.grid_index(start[:, :-1])][:, 0]
    return ExitMeasure(list(partition.names), masses)


def exit_measure_points(env: Environment, c, start) -> tuple[np.ndarray, np.ndarray]:
    """Point-level exit law by forward mass propagation.

    Returns ``domain.boundary_points()`` and the exit probability of each.
    """
    dom, _, _ = _cyl(c)
    start = np.asarray(start, dtype=np.int64).reshape(-1)
    bpts = dom.boundary_points()
    masses = np.zeros(bpts.shape[0])
    if not dom.contains_closure(start[None, :])[0]:
        raise ValueError("start must lie in the closed cylinder")
    if not dom.contains_interior(start[None, :])[0]:
        masses[_point_rows(bpts, start[None, :])] = 1.0
        return bpts, masses
    d = dom.d
    w = domain_weights(env, dom)
    shape = dom.grid_shape
    core, views = _shift_views(d, shape)
    interior = dom.interior_mask
    bmask = dom.boundary_mask
    layout = _boundary_layout(dom)
    cur = np.zeros(shape)
    cur[dom.grid_index(start[None, :-1])] = 1.0
    # mass flows from x to x + e_k: the receiver slice is the neighbour view
    for t in range(int(start[-1]), dom.t_end):
        moving = np.where(interior, cur, 0.0)
        nxt = np.zeros(shape)
        for j in range(2 * d):
            nxt[views[j]] += (w[j] * moving)[core]
        a, b, gi = layout[t + 1]
        if t + 1 < dom.t_end:
            masses[a:b] = nxt[gi]
            nxt = np.where(bmask, 0.0, nxt)
        else:
            masses[a:b] = nxt[gi]
        cur = nxt
    return bpts, masses


def _point_rows(table: np.ndarray, pts: np.ndarray) -> np.ndarray:
    hit = contains_rows(pts, table)
    return np.flatnonzero(hit)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# --- Harnack ratio, oscillation, growth condition -------------------------------

def _reduce(values: np.ndarray, fn) -> np.ndarray | float:
    out = fn(values, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def harnack_ratio(u: CaloricField, R: float, parity: str, center=None, time: int = 0):
    """(max over the parity slice of K^+_R, min over that of K^-_R, ratio).

    ratio is +inf when the minimum is zero (and the maximum positive).
    """
    d = u.domain.d
    kp = parity_filter(k_plus(R, center, time, d), parity)
    km = parity_filter(k_minus(R, center, time, d), parity)
    if kp.shape[0] == 0:
        raise ValueError(f"parity slice {parity} of K^+_R is empty for R={R}")
    if km.shape[0] == 0:
        raise ValueError(f"parity slice {parity} of K^-_R is empty for R={R}")
    hi = _reduce(u.at(kp), np.max)
    lo = _reduce(u.at(km), np.min)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.asarray(lo) > 0, np.asarray(hi) / np.where(np.asarray(lo) > 0, lo, 1.0),
                         np.where(np.asarray(hi) > 0, np.inf, 1.0))
    ratio = float(ratio) if np.ndim(ratio) == 0 else ratio
    return hi, lo, ratio


def oscillation(u, G) -> float | np.ndarray:
    """max_G u - min_G u; ``u`` is a field or a callable on points."""
    G = np.atleast_2d(np.asarray(G, dtype=np.int64))
    if G.shape[0] == 0 or G.size == 0:
        raise ValueError("oscillation over an empty set")
    vals = u.at(G) if isinstance(u, CaloricField) else np.asarray(u(G), dtype=np.float64)
    out = vals.max(axis=-1) - vals.min(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def closed_cylinder(R: float, d: int, center=None, time: int = 0) -> np.ndarray:
    c = Cylinder(R, tuple(np.zeros(d, dtype=int)) if center is None else tuple(center), time)
    return c.domain().closure_points()


def growth_bound_log(R: float, w: float, xi: float) -> float:
    """log of w^(R^(2 - xi))."""
    return (R ** (2.0 - xi)) * math.log(w)


def growth_condition_check(u: CaloricField, R: float, w: float, xi: float, parity: str,
                           center=None, time: int = 0):
    """max over the parity slice of the closed 2R-cylinder <= w^(R^(2-xi)) min."""
    if not w > 1:
        raise ValueError("w must exceed 1")
    if not 0 < xi < 0.2:
        raise ValueError("xi must lie in (0, 1/5)")
    pts = parity_filter(closed_cylinder(2 * R, u.domain.d, center, time), parity)
    vals = u.at(pts)
    hi = np.max(vals, axis=-1)
    lo = np.min(vals, axis=-1)
    expo = R ** (2.0 - xi)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        bound = w ** expo
        if np.isfinite(bound):
            ok = hi <= bound * lo
        else:
            ok = np.where(lo > 0, np.log(np.maximum(hi, 1e-300)) - np.log(np.where(lo > 0, lo, 1.0))
                          <= growth_bound_log(R, w, xi), hi <= 0)
    ok = np.where((lo <= 0) & (hi > 0), False, ok)
    return bool(ok) if np.ndim(ok) == 0 else ok


# --- import / export ---------------------------------------------------------------

def field_to_csv(u: CaloricField, path_or_buf=None, batch_index=None) -> str | None:
    """CSV with columns x1..xd, t, value over the closure (value via repr)."""
    pts = u.closure_points()
    vals = u.at(pts)
    if vals.ndim > 1:
        vals = vals[batch_index if batch_index is not None else 0]
    d = u.domain.d
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"x{i + 1}" for i in range(d)] + ["t", "value"])
    for p, v in zip(pts.tolist(), vals.tolist()):
        wr.writerow(p + [repr(float(v))])
    text = buf.getvalue()
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)
    return None


def read_point_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty CSV")
    head = rows[0]
    if head[-2:] != ["t", "value"] or not all(h == f"x{i + 1}" for i, h in enumerate(head[:-2])):
        raise ValueError(f"unexpected CSV header {head}")
    pts = np.array([[int(v) for v in r[:-1]] for r in rows[1:]], dtype=np.int64).reshape(-1, len(head) - 1)
    vals = np.array([float(r[-1]) for r in rows[1:]], dtype=np.float64)
    return pts, vals


def boundary_from_csv(domain: SpaceTimeDomain, text: str) -> BoundaryData:
    """Boundary data from the field CSV schema; extra rows are ignored."""
    pts, vals = read_point_csv(text)
    bpts = domain.boundary_points()
    lut = {tuple(p): v for p, v in zip(pts.tolist(), vals.tolist())}
    out = np.empty(bpts.shape[0])
    for i, p in enumerate(bpts.tolist()):
        try:
            out[i] = lut[tuple(p)]
        except KeyError:
            raise ValueError(f"boundary data missing at point {tuple(p)}") from None
    return BoundaryData(domain, out)


def field_to_bytes(u: CaloricField, batch_index: int = 0) -> bytes:
    """Binary twin: magic, d, n points, int64 points, f64 values (little endian)."""
    pts = u.closure_points()
    vals = u.at(pts)
    if vals.ndim > 1:
        vals = vals[batch_index]
    head = FIELD_MAGIC + struct.pack("<HBQ", 1, u.domain.d, pts.shape[0])
    return head + pts.astype("<i8").tobytes() + vals.astype("<f8").tobytes()


def field_from_bytes(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if data[:4] != FIELD_MAGIC:
        raise ValueError("not a field file")
    _, d, n = struct.unpack_from("<HBQ", data, 4)
    off = 4 + 11
    pts = np.frombuffer(data, "<i8", n * (d + 1), off).reshape(n, d + 1).astype(np.int64)
    vals = np.frombuffer(data, "<f8", n, off + 8 * n * (d + 1)).astype(np.float64)
    return pts, vals


__all__ = [
    "BoundaryData", "CaloricField", "solve_backward", "solve_backward_iter", "apply_generator",
    "exit_distribution_exact", "exit_distribution_field", "exit_measure_points", "ExitMeasure",
    "BoundaryPartition", "sector_partition", "whole_partition", "harnack_ratio", "oscillation",
    "growth_condition_check", "total_variation", "field_to_csv", "boundary_from_csv",
    "field_to_bytes", "field_from_bytes", "domain_weights", "closed_cylinder",
]
