"""Computable geometry of the parabolic ABP maximum principle.

A field u lives on Q^k_R: every site of O_R and of its k-thick boundary, at
times 0, ..., floor(R^2) + k.  For (y, s) in Q_R the slope set I_u(y, s) is
cut out by one half-space per site x,

    <p, y - x> <= u(y, s) - max_{t > s} u(x, t),

because only the largest later value at x binds.  In d = 2 feasibility is a
two-variable LP and the area an exact polygon clip; for d >= 3 feasibility
falls back to a generic LP and volumes are not computed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import rng
from .backend import kernels as _kern
from .environment import Environment
from .lattice import axis_offsets, interior_points, outer_boundary

EPS = 1e-9


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def theta_volume(M: float, R: float, d: int) -> float:
    """Lebesgue measure of {(y, s): (2 + sqrt d) R |y| < s < M/2}."""
    if R <= 0:
        raise ValueError("R must be positive")
    if M <= 0:
        return 0.0
    c = (2.0 + math.sqrt(d)) * R
    return unit_ball_volume(d) * (M / 2.0) ** (d + 1) / ((d + 1) * c ** d)


def polygon_area(vertices: np.ndarray) -> float:
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


# --- fields on Q^k_R ---------------------------------------------------------------

@dataclass
class ExtendedField:
    """u on Q^k_R as a dense (site, time) table."""

    R: float
    k: int
    sites: np.ndarray     # O_R first, then the k-thick boundary
    n_inner: int          # number of O_R sites
    values: np.ndarray    # (n_sites, floor(R^2) + k + 1)

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def top(self) -> int:
        return int(math.floor(self.R * self.R))

    @classmethod
    def layout(cls, R: float, k: int, d: int = 2) -> tuple[np.ndarray, int]:
        inner = interior_points(R, d)
        ring = outer_boundary(inner, k)
        return np.concatenate([inner, ring]), inner.shape[0]

    @classmethod
    def from_function(cls, R: float, k: int, fn, d: int = 2) -> "ExtendedField":
        sites, n_inner = cls.layout(R, k, d)
        top = int(math.floor(R * R))
        t = np.arange(top + k + 1)
        vals = np.array([[fn(tuple(int(v) for v in x), int(tt)) for tt in t] for x in sites], dtype=np.float64)
        return cls(R, k, sites, n_inner, vals)

    def boundary_mask(self) -> np.ndarray:
        """True on the extended boundary points of the (site, time) table."""
        m = np.zeros(self.values.shape, dtype=bool)
        m[self.n_inner:, :] = True
        m[:self.n_inner, self.top:] = True
        return m

    def sup_q(self) -> float:
        return float(self.values[:self.n_inner, :self.top].max())

    def site_index(self) -> dict:
        return {tuple(int(v) for v in x): i for i, x in enumerate(self.sites)}

    def value(self, x, t) -> float:
        return float(self.values[self.site_index()[tuple(int(v) for v in x)], t])

    def suffix_max(self) -> np.ndarray:
        """S[i, s] = max_{t > s} u(x_i, t) for s = 0 .. top - 1."""
        v = self.values
        rev = np.maximum.accumulate(v[:, ::-1], axis=1)[:, ::-1]
        return rev[:, 1:self.top + 1]


def random_admissible_field(R: float, k: int, seed: int, d: int = 2, family: str | None = None,
                            negative_boundary: bool = False) -> ExtendedField:
    """Positive interior structure on Q_R, zero (or random non-positive) on the extended boundary."""
    sites, n_inner = ExtendedField.layout(R, k, d)
    top = int(math.floor(R * R))
    T = top + k + 1
    key = rng.stream_key(seed, 0)
    ctr = [0]

    def draw(n=1):
        out = rng.uniforms(np.full(n, key, dtype=np.uint64), np.arange(ctr[0], ctr[0] + n, dtype=np.int64))
        ctr[0] += n
        return out

    fams = ["bumps", "noisy", "rough"]
    if family is None:
        family = fams[int(draw()[0] * 3)]
    t = np.arange(T, dtype=np.float64)
    vals = np.zeros((sites.shape[0], T))
    if family in ("bumps", "noisy"):
        nb = 1 + int(draw()[0] * 3)
        for _ in range(nb):
            a = 1.0 + 4.0 * draw()[0]
            c = (draw(d) * 2 - 1) * R * 0.6
            tau = draw()[0] * top
            sx = 0.5 + R * 0.5 * draw()[0]
            st = 1.0 + top * 0.4 * draw()[0]
            r2 = ((sites - c) ** 2).sum(axis=1)
            vals += a * np.exp(-r2[:, None] / (2 * sx * sx) - (t[None, :] - tau) ** 2 / (2 * st * st))
        if family == "noisy":
            vals += 0.5 * draw(vals.size).reshape(vals.shape)
    else:
        vals = 3.0 * draw(vals.size).reshape(vals.shape)
    f = ExtendedField(R, k, sites, n_inner, vals)
    bm = f.boundary_mask()
    vals[bm] = 0.0
    if negative_boundary:
        nb = int(bm.sum())
        vals[bm] = np.where(draw(nb) < 0.5, 0.0, -0.5 * draw(nb))
    return f


# --- contact set -----------------------------------------------------------------

@dataclass
class ContactPoint:
    y: tuple
    s: int
    A: np.ndarray          # rows y - x
    b: np.ndarray          # u(y, s) - max_{t>s} u(x, t)
    feasible: bool
    witness: tuple
    vertices: np.ndarray
    volume: float

    @property
    def point(self) -> tuple:
        return self.y + (self.s,)

    def contains(self, p, eps: float = EPS) -> bool:
        return bool(np.all(self.A @ np.asarray(p, dtype=np.float64) <= self.b + eps))

    def halfplanes(self) -> list:
        return [(a.tolist(), float(bb)) for a, bb in zip(self.A, self.b)]


def _point_key(y, s) -> int:
    return rng.derive_seed(0x5EED, s, *[int(v) & rng.MASK64 for v in y])


def constraints(field: ExtendedField, sm: np.ndarray, i: int, s: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Half-spaces for (y_i, s) with x != y; also the self slack u(y,s) - max_{t>s} u(y,t)."""
    y = field.sites[i]
    uy = field.values[i, s]
    A = (y[None, :] - field.sites).astype(np.float64)
    b = uy - sm[:, s]
    self_slack = float(b[i])
    keep = np.ones(field.sites.shape[0], dtype=bool)
    keep[i] = False
    return A[keep], b[keep], self_slack


def feasible_point(A: np.ndarray, b: np.ndarray, box, key: int, eps: float = EPS, kern=None):
    """(feasible, point) for {p : A p <= b + eps} within ``box``."""
    kern = _kern if kern is None else kern
    d = A.shape[1]
    if d == 2:
        ok, p = kern.seidel_lp2(np.ascontiguousarray(A), np.ascontiguousarray(b), tuple(box), key, eps)
        return bool(ok), tuple(p)
    lo, hi = box[0], box[1]
    res = linprog(np.zeros(d), A_ub=A, b_ub=b + eps, bounds=[(lo, hi)] * d, method="highs")
    return res.status == 0, tuple(res.x) if res.status == 0 else ()


def upper_contact_set(field: ExtendedField, eps: float = EPS, with_volume: bool = True, kern=None) -> list:
    """All (y, s) in Q_R with I_u(y, s) non-empty, with their slope polytopes."""
    kern = _kern if kern is None else kern
    d = field.d
    sm = field.suffix_max()
    span = float(field.values.max() - field.values.min())
    B = span + 1.0
    box = (-B, B, -B, B) if d == 2 else (-B, B)
    out = []
    for s in range(field.top):
        for i in range(field.n_inner):
            A, b, self_slack = constraints(field, sm, i, s)
            if self_slack < -eps:
                continue
            y = tuple(int(v) for v in field.sites[i])
            ok, p = feasible_point(A, b, box, _point_key(y, s), eps, kern)
            if not ok:
                continue
            verts = np.zeros((0, d))
            vol = math.nan
            if d == 2 and with_volume:
                # vertices carry the eps slack for the interval checks; the area is
                # that of the exact polytope, so degenerate sets measure 0
                verts = kern.clip_polygon(A, b, box, eps)
                vol = polygon_area(kern.clip_polygon(A, b, box, 0.0))
            out.append(ContactPoint(y, s, A, b, True, p, verts, vol))
    return out


def slope_polytope_volume(cp: ContactPoint) -> float:
    if cp.vertices.shape[1] != 2:
        raise ValueError("volumes are computed in d = 2 only")
    if cp.vertices.size and np.any(np.abs(cp.vertices) >= 1e300):
        return math.inf
    return cp.volume if not math.isnan(cp.volume) else polygon_area(cp.vertices)


# --- T^(k) path statistics -----------------------------------------------------------

@dataclass
class CoverOutcome:
    """Law of (X_{T^(k)}, T^(k), sign of the first move on each axis; 0 if none)."""

    x: np.ndarray
    T: np.ndarray
    signs: np.ndarray
    prob: np.ndarray


def cover_outcomes(env: Environment, y, k: int) -> CoverOutcome:
    """Exact forward DP over (position, first-move signs) up to k steps."""
    d = env.d
    offs = axis_offsets(d)
    y = tuple(int(v) for v in y)
    live = {(y, (0,) * d): 1.0}
    xs, Ts, sg, pr = [], [], [], []
    for n in range(1, k + 1):
        nxt: dict = {}
        for (pos, signs), p in sorted(live.items()):
            ker = env.kernel(pos)
            for j in range(2 * d):
                w = ker[j]
                if w <= 0:
                    continue
                a = j % d
                new = tuple(pos[i] + int(offs[j][i]) for i in range(d))
                ns = signs
                if ns[a] == 0:
                    ns = ns[:a] + ((1 if j < d else -1),) + ns[a + 1:]
                q = p * w
                if all(v != 0 for v in ns):
                    xs.append(new)
                    Ts.append(n)
                    sg.append(ns)
                    pr.append(q)
                else:
                    nxt[(new, ns)] = nxt.get((new, ns), 0.0) + q
        live = nxt
    for (pos, signs), p in sorted(live.items()):
        xs.append(pos)
        Ts.append(k)
        sg.append(signs)
        pr.append(p)
    return CoverOutcome(np.array(xs, dtype=np.int64).reshape(-1, d), np.array(Ts, dtype=np.int64),
                        np.array(sg, dtype=np.int64).reshape(-1, d), np.array(pr))


def cover_outcomes_bruteforce(env: Environment, y, k: int) -> CoverOutcome:
    """Same law by enumerating every path of length <= k (oracle)."""
    d = env.d
    offs = axis_offsets(d)
    xs, Ts, sg, pr = [], [], [], []

    def rec(pos, signs, n, p):
        if n > 0 and all(v != 0 for v in signs) or n == k:
            xs.append(pos)
            Ts.append(n)
            sg.append(signs)
            pr.append(p)
            return
        ker = env.kernel(pos)
        for j in range(2 * d):
            if ker[j] <= 0:
                continue
            a = j % d
            ns = list(signs)
            if ns[a] == 0:
                ns[a] = 1 if j < d else -1
            rec(tuple(pos[i] + int(offs[j][i]) for i in range(d)), tuple(ns), n + 1, p * ker[j])

    rec(tuple(int(v) for v in y), (0,) * d, 0, 1.0)
    return CoverOutcome(np.array(xs, dtype=np.int64).reshape(-1, d), np.array(Ts, dtype=np.int64),
                        np.array(sg, dtype=np.int64).reshape(-1, d), np.array(pr))


@dataclass
class PointStats:
    EuT: float              # E[u(X_T, s + 1 + T)] with T = T^(k)
    L: float                # u(y, s) - EuT
    O: np.ndarray           # columns O_i = E[X_T | B+_i] - y
    lo: np.ndarray          # E[u | B+_i] - u(y, s)
    hi: np.ndarray          # u(y, s) - E[u | B-_i]
    det: float


def point_stats(env: Environment, field: ExtendedField, y, s: int, outcomes: CoverOutcome | None = None) -> PointStats:
    d = env.d
    oc = cover_outcomes(env, y, field.k) if outcomes is None else outcomes
    idx = field.site_index()
    rows = np.array([idx[tuple(int(v) for v in x)] for x in oc.x], dtype=np.int64)
    uval = field.values[rows, s + 1 + oc.T]
    uy = float(field.values[idx[tuple(int(v) for v in y)], s])
    EuT = float(np.dot(oc.prob, uval))
    yv = np.asarray(y, dtype=np.float64)
    disp = oc.x - yv
    O = np.zeros((d, d))
    lo = np.zeros(d)
    hi = np.zeros(d)
    for i in range(d):
        plus = np.where(oc.signs[:, i] > 0, 1.0, np.where(oc.signs[:, i] == 0, 0.5, 0.0)) * oc.prob
        minus = np.where(oc.signs[:, i] < 0, 1.0, np.where(oc.signs[:, i] == 0, 0.5, 0.0)) * oc.prob
        pp, pm = plus.sum(), minus.sum()
        O[:, i] = (plus @ disp) / pp
        lo[i] = float(plus @ uval) / pp - uy
        hi[i] = uy - float(minus @ uval) / pm
    return PointStats(EuT, uy - EuT, O, lo, hi, float(np.linalg.det(O)))


# --- the chain ----------------------------------------------------------------------

@dataclass
class AbpReport:
    sup_u: float
    theta_volume: float
    contact_points: list
    volume_bound_lhs: float
    volume_bound_rhs: float
    slope_bound_checks: list = field(default_factory=list)
    rhs_sum: float = 0.0
    theorem_ratio: float = math.nan

    @property
    def volume_bound_slack(self) -> float:
        return self.volume_bound_rhs - self.volume_bound_lhs

    @property
    def slope_bound_min_slack(self) -> float:
        return min((c["slack_stated"] for c in self.slope_bound_checks), default=math.inf)

    @property
    def slope_bound_exact_min_slack(self) -> float:
        return min((c["slack_exact"] for c in self.slope_bound_checks), default=math.inf)

    @property
    def slope_bound_interval_min_slack(self) -> float:
        return min((c["slack_interval"] for c in self.slope_bound_checks), default=math.inf)

    def summary(self) -> dict:
        return {
            "sup_u": self.sup_u,
            "theta_volume": self.theta_volume,
            "n_contact": len(self.contact_points),
            "volume_bound_lhs": self.volume_bound_lhs,
            "volume_bound_rhs": self.volume_bound_rhs,
            "volume_bound_slack": self.volume_bound_slack,
            "slope_bound_min_slack": self.slope_bound_min_slack,
            "slope_bound_exact_min_slack": self.slope_bound_exact_min_slack,
            "slope_bound_interval_min_slack": self.slope_bound_interval_min_slack,
            "rhs_sum": self.rhs_sum,
            "theorem_ratio": self.theorem_ratio,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True)


def contact_csv(report: AbpReport) -> str:
    lines = ["y1,y2,s,feasible,volume"]
    for cp in sorted(report.contact_points, key=lambda c: (c.s,) + c.y):
        lines.append(",".join(str(v) for v in cp.y) + f",{cp.s},1,{cp.volume!r}")
    return "\n".join(lines) + "\n"


def verify_abp_chain(env: Environment, field: ExtendedField, eps: float = EPS, kern=None) -> AbpReport:
    """Check both geometric lemmas exactly on one field and log the end-to-end ratio.

    Volume bound: lambda(Theta) <= sum over the contact set of
        (u(y,s) - u(y,s+1)) lambda(I(y,s)).
    The slope bound is checked in three forms per contact point, with
    L = u(y,s) - E[u(X_T, s+1+T)], T = T^(k):
      interval: every vertex p of I(y,s) has <p, O_i> in [lo_i, hi_i];
      exact:    lambda(I) <= (2L)^d / |det O|;
      stated:   lambda(I) <= 4^d L_+^d.
    """
    d = field.d
    if d != 2:
        raise ValueError("the chain is verified in d = 2")
    if field.k >= field.R:
        raise ValueError("need k < R")
    bm = field.boundary_mask()
    if np.any(field.values[bm] > 0):
        raise ValueError("hypothesis violated: u > 0 on the extended boundary")
    M = field.sup_q()
    theta = theta_volume(M, field.R, d)
    cps = upper_contact_set(field, eps, kern=kern)
    idx = field.site_index()
    b1 = 0.0
    checks = []
    defect = 0.0
    for cp in cps:
        i = idx[cp.y]
        drop = float(field.values[i, cp.s] - field.values[i, cp.s + 1])
        b1 += drop * cp.volume
        st = point_stats(env, field, cp.y, cp.s)
        vol = cp.volume
        Lp = max(st.L, 0.0)
        stated = 4.0 ** d * Lp ** d
        exact = math.inf if abs(st.det) < 1e-300 else (2.0 * Lp) ** d / abs(st.det)
        if cp.vertices.shape[0]:
            proj = cp.vertices @ st.O
            slack_int = float(min(np.min(proj - st.lo[None, :]), np.min(st.hi[None, :] - proj)))
        else:
            slack_int = math.inf
        checks.append({
            "y": list(cp.y), "s": cp.s, "volume": vol, "L": st.L, "det": st.det,
            "slack_stated": stated - vol, "slack_exact": exact - vol, "slack_interval": slack_int,
        })
        uy1 = float(field.values[i, cp.s + 1])
        defect += abs(st.EuT - uy1) ** (d + 1)
    rhs = field.R ** (d / (d + 1)) * defect ** (1.0 / (d + 1))
    ratio = M / rhs if rhs > 0 else (math.inf if M > 0 else 0.0)
    return AbpReport(M, theta, cps, theta, b1, checks, defect, ratio)
