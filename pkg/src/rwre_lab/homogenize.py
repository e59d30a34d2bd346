"""Continuum references and quantitative homogenization.

Discrete fields are exact solves; the continuum side is either closed form
(exponential, quadratic, coordinate) or a backward-Euler finite-difference
solution of the Brownian exit problem on the unit cylinder B_1 x [0, 1].
Curved boundaries use Shortley-Weller differences, with boundary data taken
at the true intersection point of each grid line with the sphere.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .caloric import BoundaryData, BoundaryPartition, exit_distribution_field, sector_of, solve_backward_iter
from .environment import Environment
from .lattice import Cylinder, ball_points, q_domain
from .walk import StopRule, run_batch


# --- covariance ---------------------------------------------------------------------

@dataclass
class CovarianceEstimate:
    matrix: np.ndarray
    n0: int
    standard_errors: np.ndarray
    exact: bool

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))


def position_law(env: Environment, x, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact law of X_n from x as (sites, probabilities), by forward propagation."""
    d = env.d
    x = np.asarray(x, dtype=np.int64)
    lo = x - n
    shape = (2 * n + 1,) * d
    if not (np.all(env.contains(lo[None, :])) and np.all(env.contains((x + n)[None, :]))):
        raise ValueError("box exhausted: the environment does not cover n steps from x")
    probs = env.kernels_at(np.stack(np.meshgrid(*[np.arange(l, l + 2 * n + 1) for l in lo], indexing="ij"),
                                    axis=-1).reshape(-1, d)).reshape(shape + (2 * d,))
    mass = np.zeros(shape)
    mass[(n,) * d] = 1.0
    for _ in range(n):
        new = np.zeros(shape)
        for j in range(2 * d):
            a = j % d
            s = 1 if j < d else -1
            contrib = mass * probs[..., j]
            new += np.roll(contrib, s, axis=a)
        mass = new
    idx = np.argwhere(mass > 0)
    return idx + lo, mass[tuple(idx.T)]


def estimate_covariance(env: Environment, x=None, n0: int = 4, exact_if_small: bool = True,
                        samples: int = 100_000, seed: int = 0, workers: int | None = None) -> CovarianceEstimate:
    """(1/n0) E^x[(X_n0 - x)(X_n0 - x)^T], exact for n0 <= 6 and d <= 2."""
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    d = env.d
    x = np.zeros(d, dtype=np.int64) if x is None else np.asarray(x, dtype=np.int64)
    if exact_if_small and n0 <= 6 and d <= 2:
        sites, p = position_law(env, x, n0)
        disp = (sites - x).astype(np.float64)
        m = np.einsum("n,ni,nj->ij", p, disp, disp) / n0
        m = 0.5 * (m + m.T)
        return CovarianceEstimate(m, n0, np.zeros((d, d)), True)
    res = run_batch(env, x, StopRule.step_cap(n0), seed, samples, workers=workers)
    disp = (res.end[:, :d] - x).astype(np.float64)
    prod = disp[:, :, None] * disp[:, None, :] / n0
    m = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(samples)
    return CovarianceEstimate(0.5 * (m + m.T), n0, se, False)


# --- continuum fields -----------------------------------------------------------

@dataclass
class ContinuumField:
    """F(x, t) on the closed unit cylinder; ``evaluator(x (m,d), t (m,)) -> (m,)``."""

    kind: str
    a: np.ndarray
    params: dict
    evaluator: Callable
    derivatives: Callable | None = None   # (x, t) -> (dF/dt, [d^2F/dx_i^2]) for closed forms

    def __call__(self, x, t) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return np.asarray(self.evaluator(x, t), dtype=np.float64)

    def rescaled(self, R: float) -> Callable:
        """F_R(x, t) = F(x / R, t / R^2) on integer space-time points (m, d+1)."""
        def fr(pts):
            pts = np.asarray(pts, dtype=np.float64)
            return self(pts[:, :-1] / R, pts[:, -1] / (R * R))
        return fr

    def residual(self, x, t, h: float = 1e-3) -> np.ndarray:
        """dF/dt + 1/2 sum a_ii d^2F/dx_i^2; analytic for closed forms, else central differences."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        if self.derivatives is not None:
            ft, fxx = self.derivatives(x, t)
            return ft + 0.5 * sum(self.a[i, i] * fxx[i] for i in range(x.shape[1]))
        r = (self(x, t + h) - self(x, t - h)) / (2 * h)
        for i in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[i] = h
            r = r + 0.5 * self.a[i, i] * (self(x + e, t) - 2 * self(x, t) + self(x - e, t)) / (h * h)
        return r


def _diag_a(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.shape[0] != a.shape[1] or np.any(np.abs(a - np.diag(np.diag(a))) > 0):
        raise ValueError("a must be a diagonal matrix")
    if np.any(np.diag(a) <= 0):
        raise ValueError("a must be positive on the diagonal")
    return a


def reference_caloric(kind: str, a, **params) -> ContinuumField:
    """Closed-form solutions of dF/dt + 1/2 sum a_ij d_ij F = 0.

    exponential(lam): exp(<lam, x> - t <lam, a lam> / 2)
    quadratic(i):     x_i^2 - a_ii t
    coordinate(i):    x_i
    """
    a = _diag_a(a)
    if kind == "exponential":
        lam = np.asarray(params.get("lam", np.zeros(a.shape[0])), dtype=np.float64)
        rate = float(lam @ a @ lam) / 2.0
        ev = lambda x, t: np.exp(x @ lam - rate * t)
        der = lambda x, t: (-rate * ev(x, t), [lam[i] ** 2 * ev(x, t) for i in range(x.shape[1])])
        return ContinuumField(kind, a, {"lam": lam.tolist()}, ev, der)
    if kind == "quadratic":
        i = int(params.get("i", 0))
        aii = a[i, i]
        der = lambda x, t: (np.full(x.shape[0], -aii), [np.full(x.shape[0], 2.0 if j == i else 0.0)
                                                         for j in range(x.shape[1])])
        return ContinuumField(kind, a, {"i": i}, lambda x, t: x[:, i] ** 2 - aii * t, der)
    if kind == "coordinate":
        i = int(params.get("i", 0))
        der = lambda x, t: (np.zeros(x.shape[0]), [np.zeros(x.shape[0])] * x.shape[1])
        return ContinuumField(kind, a, {"i": i}, lambda x, t: x[:, i].copy(), der)
    raise ValueError(f"unknown continuum field kind {kind!r}")


# --- discrete vs continuum on Q_R --------------------------------------------------------

def homogenization_error(env: Environment, R: float, F: ContinuumField) -> tuple[float, tuple]:
    """sup over Q_R of |F_R - G| where G is caloric on Q_R with G = F_R on its parabolic boundary."""
    if R < 2:
        raise ValueError("R must be >= 2")
    dom = q_domain(R, env.d)
    fr = F.rescaled(R)
    g = BoundaryData(dom, fr(dom.boundary_points()))
    sites = dom.sites
    gi = dom.grid_index(sites)
    best, arg = -1.0, None
    for t, sl in solve_backward_iter(env, dom, g):
        if t == dom.t_end:
            continue
        pts = np.concatenate([sites, np.full((sites.shape[0], 1), t)], axis=1)
        err = np.abs(sl[gi] - fr(pts))
        j = int(np.argmax(err))
        if err[j] > best:
            best, arg = float(err[j]), tuple(int(v) for v in pts[j])
    return best, arg


# --- Brownian exit problem on the unit cylinder ------------------------------------------

@dataclass
class CellSpec:
    """Boundary cells of the unit cylinder matched to a discrete sector partition.

    Lateral cells are (angular sector) x (time bin); top cells are angular
    sectors times radial rings (one ring and one sector give a single top
    cell).  Labels follow ``caloric.sector_partition`` when ``top_rings`` is 1.
    """

    n_sectors: int = 4
    n_time_bins: int = 1
    top_sectors: int = 1
    top_rings: int = 1

    @property
    def n_lateral(self) -> int:
        return self.n_sectors * self.n_time_bins

    @property
    def n_cells(self) -> int:
        return self.n_lateral + self.top_sectors * self.top_rings

    def names(self) -> list:
        lat = [f"lat-s{i}-t{j}" for i in range(self.n_sectors) for j in range(self.n_time_bins)]
        if self.top_sectors * self.top_rings == 1:
            return lat + ["top"]
        return lat + [f"top-s{i}-r{j}" for i in range(self.top_sectors) for j in range(self.top_rings)]

    def lateral_label(self, x: np.ndarray, tau: np.ndarray) -> np.ndarray:
        sec = sector_of(x, self.n_sectors)
        tb = np.clip((np.asarray(tau) * self.n_time_bins).astype(np.int64), 0, self.n_time_bins - 1)
        return sec * self.n_time_bins + tb

    def top_label(self, x: np.ndarray) -> np.ndarray:
        sec = sector_of(x, self.top_sectors)
        r = np.sqrt((np.asarray(x) ** 2).sum(axis=1))
        ring = np.clip((r * self.top_rings).astype(np.int64), 0, self.top_rings - 1)
        return self.n_lateral + sec * self.top_rings + ring

    def discrete(self) -> BoundaryPartition:
        """The same cells on the parabolic boundary of a lattice cylinder."""
        spec = self

        def assign(pts, center, R, dom):
            rel = (pts[:, :-1] - center).astype(np.float64)
            tau = (pts[:, -1] - dom.t0) / max(dom.n_steps, 1)
            top = (pts[:, -1] == dom.t_end) & dom.contains_interior(
                np.concatenate([pts[:, :-1], np.full((pts.shape[0], 1), dom.t0)], axis=1))
            return np.where(top, spec.top_label(rel / R), spec.lateral_label(rel, np.minimum(tau, 1 - 1e-12)))

        return BoundaryPartition(self.names(), assign)

    def refined(self) -> "CellSpec":
        return CellSpec(2 * self.n_sectors, 2 * self.n_time_bins, 2 * self.top_sectors, 2 * self.top_rings)


@dataclass
class _Mesh:
    h: float
    nodes: np.ndarray        # (m, d) coordinates of unknowns
    index: np.ndarray        # grid -> unknown number, -1 outside
    A: sp.csc_matrix         # interior part of 1/2 sum a_ii D_ii
    Bb: sp.csr_matrix        # couples boundary intersection points into rows
    bpts: np.ndarray         # (q, d) boundary intersection points


def _build_mesh(a: np.ndarray, grid_n: int) -> _Mesh:
    d = a.shape[0]
    h = 2.0 / grid_n
    coords = -1.0 + h * np.arange(grid_n + 1)
    mesh = np.stack(np.meshgrid(*([coords] * d), indexing="ij"), axis=-1).reshape(-1, d)
    inside = (mesh ** 2).sum(axis=1) < 1.0 - 1e-12
    index = np.full(mesh.shape[0], -1, dtype=np.int64)
    index[inside] = np.arange(int(inside.sum()))
    nodes = mesh[inside]
    shape = (grid_n + 1,) * d
    strides = np.array([(grid_n + 1) ** (d - 1 - i) for i in range(d)], dtype=np.int64)
    flat_inside = np.flatnonzero(inside)
    rows, cols, vals = [], [], []
    brows, bcols, bvals, bpts = [], [], [], []
    m = nodes.shape[0]
    diag = np.zeros(m)
    for i in range(d):
        c = 0.5 * a[i, i]
        gpos = (flat_inside // strides[i]) % (grid_n + 1)
        hs = {}
        nb = {}
        for s in (1, -1):
            ok = (gpos + s >= 0) & (gpos + s <= grid_n)
            nbr = np.where(ok, flat_inside + s * strides[i], 0)
            nidx = np.where(ok, index[nbr], -1)
            other = (nodes ** 2).sum(axis=1) - nodes[:, i] ** 2
            dist = np.sqrt(np.maximum(1.0 - other, 0.0)) - s * nodes[:, i]
            dist = np.where(nidx >= 0, h, np.minimum(dist, h))
            hs[s], nb[s] = dist, nidx
        hl, hr = hs[-1], hs[1]
        for s, hh in ((1, hr), (-1, hl)):
            coef = c * 2.0 / (hh * (hl + hr))
            ins = nb[s] >= 0
            r = np.arange(m)
            rows.append(r[ins])
            cols.append(nb[s][ins])
            vals.append(coef[ins])
            out = ~ins
            q0 = sum(len(b) for b in bpts)
            p = nodes[out].copy()
            p[:, i] += s * hh[out]
            bpts.append(p)
            brows.append(r[out])
            bcols.append(q0 + np.arange(int(out.sum())))
            bvals.append(coef[out])
        diag -= c * 2.0 / (hl * hr)
    rows.append(np.arange(m))
    cols.append(np.arange(m))
    vals.append(diag)
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    bp = np.concatenate(bpts) if bpts else np.zeros((0, d))
    Bb = sp.csr_matrix((np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))),
                       shape=(m, bp.shape[0]))
    return _Mesh(h, nodes, index.reshape(shape), A, Bb, bp)


@dataclass
class GridSolution:
    """chi_i on the unit cylinder, stored on every ``stride``-th time level."""

    a: np.ndarray
    cells: CellSpec
    grid_n: int
    mesh: _Mesh
    times: np.ndarray                  # stored time levels
    values: np.ndarray                 # (levels, cells, unknowns)
    dt: float

    def _full_grid(self, level: int) -> np.ndarray:
        """Values on the whole [-1,1]^d grid; outside nodes get the radial boundary datum."""
        d = self.a.shape[0]
        n = self.grid_n
        coords = -1.0 + self.mesh.h * np.arange(n + 1)
        pts = np.stack(np.meshgrid(*([coords] * d), indexing="ij"), axis=-1).reshape(-1, d)
        idx = self.mesh.index.reshape(-1)
        out = np.zeros((self.values.shape[1], pts.shape[0]))
        ins = idx >= 0
        out[:, ins] = self.values[level][:, idx[ins]]
        ext = pts[~ins]
        r = np.sqrt((ext ** 2).sum(axis=1))
        proj = ext / np.maximum(r, 1e-300)[:, None]
        lab = self.cells.lateral_label(proj, np.full(ext.shape[0], self.times[level]))
        out[:, ~ins] = (lab[None, :] == np.arange(self.values.shape[1])[:, None])
        return out.reshape((self.values.shape[1],) + (n + 1,) * d)

    def __call__(self, x, tau) -> np.ndarray:
        """Multilinear interpolation in (x, tau); returns (cells, m)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (x.shape[0],))
        d = x.shape[1]
        n = self.grid_n
        g = (x + 1.0) / self.mesh.h
        i0 = np.clip(np.floor(g).astype(np.int64), 0, n - 1)
        f = g - i0
        tl = np.clip(np.searchsorted(self.times, tau, side="right") - 1, 0, len(self.times) - 2)
        ft = np.clip((tau - self.times[tl]) / (self.times[tl + 1] - self.times[tl]), 0.0, 1.0)
        out = np.zeros((self.values.shape[1], x.shape[0]))
        cache: dict = {}
        for lvl_off, wt in ((0, 1.0 - ft), (1, ft)):
            for m_i in range(x.shape[0]):
                lvl = int(tl[m_i] + lvl_off)
                if lvl not in cache:
                    cache[lvl] = self._full_grid(lvl)
                grid = cache[lvl]
                acc = 0.0
                for corner in np.ndindex(*([2] * d)):
                    w = 1.0
                    ix = []
                    for k in range(d):
                        w *= f[m_i, k] if corner[k] else 1.0 - f[m_i, k]
                        ix.append(i0[m_i, k] + corner[k])
                    acc = acc + w * grid[(slice(None),) + tuple(ix)]
                out[:, m_i] += wt[m_i] * acc
        return out


def _exit_sweep(a: np.ndarray, cells: CellSpec, grid_n: int, n_steps: int | None = None):
    """Yield (mesh, level, tau, values (cells, unknowns)) from tau = 1 down to 0."""
    if grid_n < 4:
        raise ValueError("grid_n too small")
    mesh = _build_mesh(a, grid_n)
    nt = max(1, grid_n * grid_n // 4) if n_steps is None else int(n_steps)
    dt = 1.0 / nt
    m = mesh.nodes.shape[0]
    lu = splu((sp.identity(m, format="csc") - dt * mesh.A).tocsc())
    nc = cells.n_cells
    top = cells.top_label(mesh.nodes)
    cur = (top[None, :] == np.arange(nc)[:, None]).astype(np.float64)
    yield mesh, nt, 1.0, cur, dt
    for n in range(nt - 1, -1, -1):
        tau = n * dt
        blab = cells.lateral_label(mesh.bpts, np.full(mesh.bpts.shape[0], tau))
        G = (blab[:, None] == np.arange(nc)[None, :]).astype(np.float64)
        rhs = cur.T + dt * (mesh.Bb @ G)
        cur = lu.solve(np.ascontiguousarray(rhs)).T
        yield mesh, n, tau, cur, dt


def bm_exit_probability(a, cells: CellSpec | None = None, grid_n: int = 64, max_levels: int = 129,
                        n_steps: int | None = None) -> GridSolution:
    """chi_i(x, s) = P(Brownian motion with covariance a, started at x at time s, exits B_1 x [0,1] in cell i)."""
    a = _diag_a(a)
    if grid_n < 32:
        raise ValueError("grid_n must be >= 32")
    cells = CellSpec() if cells is None else cells
    levels, vals = [], []
    mesh = None
    nt = None
    dt = None
    for mesh, n, tau, cur, dt in _exit_sweep(a, cells, grid_n, n_steps):
        if nt is None:
            nt = n
            stride = max(1, -(-nt // (max_levels - 1)))
        if n % stride == 0 or n == nt:
            levels.append(tau)
            vals.append(cur.copy())
    order = np.argsort(levels)
    return GridSolution(a, cells, grid_n, mesh, np.asarray(levels)[order], np.asarray(vals)[order], dt)


@dataclass
class ExitComparison:
    sup: float
    per_cell: dict
    rows: list = field(default_factory=list)   # (point, cell, phi, chi, delta)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "cell", "phi", "chi", "delta"])
        for p, c, ph, ch, de in self.rows:
            w.writerow([" ".join(str(v) for v in p), c, repr(ph), repr(ch), repr(de)])
        return buf.getvalue()


def exit_compare(env: Environment, R: float, theta: float, cells: CellSpec, a, grid_n: int = 64,
                 chi: GridSolution | None = None) -> ExitComparison:
    """sup over K_{theta R} of max_i |Phi_{R,i} - chi_{R,i}| with Phi exact and chi interpolated."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    d = env.d
    cyl = Cylinder(R, (0,) * d, 0)
    phi = exit_distribution_field(env, cyl, cells.discrete())
    chi = bm_exit_probability(a, cells, grid_n) if chi is None else chi
    sites = ball_points(theta * R, None, d)
    times = np.arange(int(math.ceil((theta * R) ** 2)))
    pts = np.array([tuple(s) + (int(t),) for t in times for s in sites], dtype=np.int64)
    pv = phi.at(pts)
    cv = chi(pts[:, :-1] / R, pts[:, -1] / (R * R))
    diff = np.abs(pv - cv)
    names = cells.names()
    per_cell = {names[i]: float(diff[i].max()) for i in range(len(names))}
    rows = [(tuple(int(v) for v in pts[j]), names[i], float(pv[i, j]), float(cv[i, j]), float(diff[i, j]))
            for j in range(pts.shape[0]) for i in range(len(names))]
    return ExitComparison(float(diff.max()), per_cell, rows)


# --- Brownian Harnack constant -------------------------------------------------------

@dataclass
class HarnackEstimate:
    value: float                 # max over cells of sup_U chi_i / inf_L chi_i
    cell: str
    per_cell: dict
    grid_n: int
    cells: CellSpec
    refinement_delta: float = math.nan


def _rim_interpolator(mesh: _Mesh, r: float, grid_n: int) -> sp.csr_matrix:
    """Multilinear interpolation from unknowns to points on the sphere of radius r."""
    d = mesh.nodes.shape[1]
    if d == 1:
        pts = np.array([[-r], [r]])
    elif d == 2:
        ang = 2 * np.pi * np.arange(8 * grid_n) / (8 * grid_n)
        pts = r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        return sp.csr_matrix((0, mesh.nodes.shape[0]))
    g = (pts + 1.0) / mesh.h
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    rows, cols, vals = [], [], []
    for corner in np.ndindex(*([2] * d)):
        w = np.ones(pts.shape[0])
        for k in range(d):
            w = w * (f[:, k] if corner[k] else 1.0 - f[:, k])
        idx = mesh.index[tuple(i0[:, k] + corner[k] for k in range(d))]
        if np.any(idx < 0):
            raise ValueError("grid too coarse for the inner ball")
        rows.append(np.arange(pts.shape[0]))
        cols.append(idx)
        vals.append(w)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(pts.shape[0], mesh.nodes.shape[0]))


def _harnack_ratios(a, scale: float, cells: CellSpec, grid_n: int) -> np.ndarray:
    """Per cell sup over the closure of U over inf over the closure of L (nodes plus rim points)."""
    r = 1.0 / scale
    up_lo, up_hi = 2.0 * r * r, 3.0 * r * r
    lo_hi = r * r
    sup_u = None
    inf_l = None
    sel = P = None
    for mesh, n, tau, cur, dt in _exit_sweep(a, cells, grid_n):
        if sel is None:
            sel = (mesh.nodes ** 2).sum(axis=1) <= r * r
            P = _rim_interpolator(mesh, r, grid_n)
        tol = 0.5 * dt
        in_u = up_lo - tol <= tau <= up_hi + tol
        in_l = tau <= lo_hi + tol
        if not (in_u or in_l):
            continue
        vals = np.concatenate([cur[:, sel], (P @ cur.T).T], axis=1)
        if in_u:
            v = vals.max(axis=1)
            sup_u = v if sup_u is None else np.maximum(sup_u, v)
        if in_l:
            v = vals.min(axis=1)
            inf_l = v if inf_l is None else np.minimum(inf_l, v)
    # a cell invisible from U satisfies the inequality for any constant
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sup_u <= 1e-300, 0.0, np.where(inf_l > 0, sup_u / inf_l, np.inf))


def bm_harnack_constant(a, scale: float = 2.0, grid_n: int = 64, cells: CellSpec | None = None,
                        refine: bool = False) -> HarnackEstimate:
    """Lower-bound estimate of H_a from indicator data on a boundary mesh.

    Scaled to the unit cylinder, u is caloric in B_1 x (0, 1) and compared
    on U = B_{1/a} x (2/a^2, 3/a^2) against L = B_{1/a} x (0, 1/a^2).  For
    non-negative data sum c_i 1_{cell i} the ratio sup_U / inf_L is at most
    the largest single-cell ratio, so the search over cells is exact within
    the mesh family.
    """
    a_m = _diag_a(a)
    if not math.sqrt(3) < scale <= 2:
        raise ValueError("scale must lie in (sqrt 3, 2]")
    cells = CellSpec(4, 4, 4, 1) if cells is None else cells
    ratios = _harnack_ratios(a_m, scale, cells, grid_n)
    names = cells.names()
    j = int(np.argmax(ratios))
    est = HarnackEstimate(float(ratios[j]), names[j], dict(zip(names, map(float, ratios))), grid_n, cells)
    if refine:
        fine = bm_harnack_constant(a_m, scale, grid_n, cells.refined())
        est.refinement_delta = fine.value - est.value
    return est
