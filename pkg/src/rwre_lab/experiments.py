"""Theorem-level studies on ensembles of environments.

Every row is a pure function of (config, seed); reports sort rows by
(seed, R, ...) and format floats with ``repr`` so reruns give identical CSV
bytes for any worker count.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .backend import kernels as _kern
from .caloric import (BoundaryData, exit_distribution_exact, exit_measure_points, growth_condition_check,
                      harnack_ratio, oscillation, sector_partition, solve_backward, total_variation)
from .environment import SiteLaw, cumulative_rows, sample_iid, sink_env_counterexample
from .lattice import Cylinder, SpaceTimeDomain, parity_filter, parity_of
from .parallel import map_chunks, map_ordered
from .walk import BoxExhausted, exit_sample_batch

PARITIES = ("odd", "even")


# --- configuration and reports ---------------------------------------------------------

@dataclass
class ExperimentConfig:
    law: str = "uniform-axis"
    d: int = 2
    R: list = field(default_factory=lambda: [8])
    seeds: list = field(default_factory=lambda: list(range(10)))
    eps: float = 0.1
    xi: float = 0.1
    w: float = 2.0
    zeta: float = 2.0
    theta: float = 0.5
    parity: str = "both"
    n_data: int = 20
    samples: int = 100_000
    n_sectors: int = 4
    n_time_bins: int = 1
    workers: int | None = None

    def validate(self) -> "ExperimentConfig":
        SiteLaw.from_id(self.law)
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0 < self.eps < 2 - math.sqrt(3):
            raise ValueError("eps must lie in (0, 2 - sqrt 3)")
        if not 0 < self.xi < 0.2:
            raise ValueError("xi must lie in (0, 1/5)")
        if not self.w > 1:
            raise ValueError("w must exceed 1")
        if not self.zeta > 1:
            raise ValueError("zeta must exceed 1")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.parity not in ("both",) + PARITIES:
            raise ValueError("parity must be odd, even or both")
        if not self.R or any(r <= 1 for r in self.R):
            raise ValueError("every R must exceed 1")
        if self.n_data < 1 or self.samples < 1:
            raise ValueError("n_data and samples must be positive")
        return self

    @property
    def parities(self) -> tuple:
        return PARITIES if self.parity == "both" else (self.parity,)

    def to_dict(self) -> dict:
        return asdict(self)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


@dataclass
class ExperimentReport:
    name: str
    columns: list
    rows: list
    summary: dict
    config: dict = field(default_factory=dict)

    def sorted_rows(self) -> list:
        keys = [c for c in ("seed", "R") if c in self.columns]
        rest = [c for c in self.columns if c not in keys]
        return sorted(self.rows, key=lambda r: tuple(r[c] for c in keys) + tuple(_fmt(r[c]) for c in rest))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.sorted_rows():
            w.writerow([_fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        from . import __version__
        return json.dumps({"experiment": self.name, "summary": _jsonable(self.summary), "config": _jsonable(self.config),
                           "versions": {"rwre_lab": __version__, "numpy": np.__version__,
                                        "backend": _kern.BACKEND}}, indent=1, sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def percentiles(vals) -> dict:
    v = np.asarray([x for x in vals if np.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return {"n": 0}
    q = np.percentile(v, [50, 90, 99])
    return {"n": int(v.size), "min": float(v.min()), "median": float(q[0]), "p90": float(q[1]),
            "p99": float(q[2]), "max": float(v.max())}


# --- boundary data family ---------------------------------------------------------

DATA_KINDS = ("indicator", "bump", "exponential")


def boundary_family(dom: SpaceTimeDomain, R: float, n: int, seed: int, center=None) -> tuple[list, np.ndarray]:
    """``n`` non-negative data on ``dom``'s parabolic boundary: datum 0 is constant 1,
    then indicators of boundary cells, coordinate-bump products and exponentials in turn.
    """
    d = dom.d
    center = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    pts = dom.boundary_points()
    rel = (pts[:, :-1] - center).astype(np.float64) / R
    tau = (pts[:, -1] - dom.t0).astype(np.float64) / max(dom.n_steps, 1)
    cells = sector_partition(8, 2, True)
    labels = cells.labels_for(dom, center, R)
    kinds, out = ["constant"], [np.ones(pts.shape[0])]
    for j in range(1, n):
        st = rng.StreamRNG(seed, j)
        kind = DATA_KINDS[(j - 1) % 3]
        if kind == "indicator":
            lab = int(st.random() * len(cells.names))
            v = (labels == lab).astype(np.float64)
        elif kind == "bump":
            c = np.array([2 * st.random() - 1 for _ in range(d)])
            s = 0.2 + 0.6 * st.random()
            tc, ts = st.random(), 0.2 + 0.6 * st.random()
            amp = 0.5 + 4.5 * st.random()
            v = 0.05 + amp * np.exp(-((rel - c) ** 2).sum(axis=1) / (2 * s * s) - (tau - tc) ** 2 / (2 * ts * ts))
        else:
            lam = np.array([4 * st.random() - 2 for _ in range(d)])
            v = np.exp(rel @ lam)
        kinds.append(kind)
        out.append(v)
    return kinds, np.stack(out)


def _env_for(cfg: ExperimentConfig, seed: int, half: int):
    return sample_iid(SiteLaw.from_id(cfg.law), half, seed, cfg.d)


# --- PHI ------------------------------------------------------------------------

def phi_bound(a, eps: float, grid_n: int = 64) -> float:
    """(1 + 3 eps) H_{2-eps} / (1 - eps)^2 with H from the grid estimator."""
    from .homogenize import bm_harnack_constant
    H = bm_harnack_constant(a, 2.0 - eps, grid_n).value
    return (1 + 3 * eps) * H / (1 - eps) ** 2


def phi_experiment(cfg: ExperimentConfig, bound: float | None = None) -> ExperimentReport:
    """Harnack ratios on K_{2R} for the standard data family, filtered by the growth condition."""
    cfg.validate()
    cols = ["R", "seed", "datum_id", "kind", "parity", "max_plus", "min_minus", "ratio", "filtered"]

    def one(item):
        seed, R = item
        cyl = Cylinder(2 * R, (0,) * cfg.d, 0)
        dom = cyl.domain()
        env = _env_for(cfg, seed, int(math.ceil(2 * R)) + 1)
        kinds, data = boundary_family(dom, R, cfg.n_data, seed)
        u = solve_backward(env, dom, BoundaryData(dom, data))
        rows = []
        for p in cfg.parities:
            hi, lo, ratio = harnack_ratio(u, R, p)
            ok = growth_condition_check(u, R, cfg.w, cfg.xi, p)
            for j in range(len(kinds)):
                rows.append({"R": R, "seed": seed, "datum_id": j, "kind": kinds[j], "parity": p,
                             "max_plus": float(hi[j]), "min_minus": float(lo[j]), "ratio": float(ratio[j]),
                             "filtered": bool(ok[j])})
        return rows

    items = [(s, R) for s in cfg.seeds for R in cfg.R]
    rows = [r for part in map_ordered(one, items, cfg.workers) for r in part]
    kept = [r["ratio"] for r in rows if r["filtered"]]
    summary = {"n_rows": len(rows), "n_filtered": len(kept), "filtered": percentiles(kept),
               "all_filtered_finite": bool(all(math.isfinite(v) for v in kept)),
               "unfiltered": percentiles([r["ratio"] for r in rows])}
    if bound is not None:
        summary["phi_bound_estimate"] = bound
        summary["filtered_max_below_bound"] = bool(max(kept, default=0.0) <= bound)
    return ExperimentReport("phi", cols, rows, summary, cfg.to_dict())


# --- counterexample -------------------------------------------------------------

@dataclass
class CounterexampleReport:
    R: int
    ratio: float
    ratio_by_parity: dict
    max_plus: float
    growth_ok: bool
    growth_by_parity: dict
    sink_interior_min: float
    sink_interior_max: float

    @property
    def sink_is_one(self) -> bool:
        return self.sink_interior_min == 1.0 and self.sink_interior_max == 1.0

    def summary(self) -> dict:
        return _jsonable({**asdict(self), "sink_is_one": self.sink_is_one})

    def to_csv(self) -> str:
        lines = ["R,parity,ratio,growth_ok"]
        for p in PARITIES:
            lines.append(f"{self.R},{p},{self.ratio_by_parity[p]!r},{int(self.growth_by_parity[p])}")
        return "\n".join(lines) + "\n"


def counterexample_experiment(R: int = 3, w: float = 2.0, xi: float = 0.1) -> CounterexampleReport:
    """Data 1 on the parabolic boundary of K_{2R}, except 2^(3R^2) at the two trap sites on top."""
    if not 2 <= R <= 4:
        raise ValueError("R must lie in 2..4 (values stay exactly representable)")
    con = sink_env_counterexample(R)
    cyl = Cylinder(2 * R, (0, 0), 0)
    dom = cyl.domain()
    pts = dom.boundary_points()
    g = np.ones(pts.shape[0])
    big = 2.0 ** (3 * R * R)
    for x in (con.x1, con.x2):
        g[np.all(pts == np.array(x + (dom.t_end,)), axis=1)] = big
    u = solve_backward(con.env, dom, BoundaryData(dom, g))
    ratios, growth, his = {}, {}, []
    for p in PARITIES:
        hi, lo, ratio = harnack_ratio(u, R, p)
        ratios[p] = float(ratio)
        growth[p] = bool(growth_condition_check(u, R, w, xi, p))
        his.append(float(hi))
    sink = con.sink_sites[np.asarray(dom.contains_interior(
        np.concatenate([con.sink_sites, np.zeros((con.sink_sites.shape[0], 1), dtype=np.int64)], axis=1)))]
    sp = np.array([tuple(s) + (t,) for t in range(dom.t0, dom.t_end) for s in sink], dtype=np.int64)
    sv = u.at(sp)
    return CounterexampleReport(R, max(ratios.values()), ratios, max(his), all(growth.values()), growth,
                                float(sv.min()), float(sv.max()))


# --- oscillation ------------------------------------------------------------------

def oscillation_experiment(cfg: ExperimentConfig, zeta: float | None = None) -> ExperimentReport:
    """osc over the parity slice of K_R divided by osc over that of K_{zeta R}."""
    cfg.validate()
    zeta = cfg.zeta if zeta is None else zeta
    if not zeta > 1:
        raise ValueError("zeta must exceed 1")
    cols = ["R", "seed", "datum_id", "kind", "parity", "osc_inner", "osc_outer", "ratio", "excluded"]

    def one(item):
        seed, R = item
        outer = Cylinder(zeta * R, (0,) * cfg.d, 0)
        dom = outer.domain()
        env = _env_for(cfg, seed, int(math.ceil(zeta * R)) + 1)
        kinds, data = boundary_family(dom, zeta * R, cfg.n_data, seed)
        u = solve_backward(env, dom, BoundaryData(dom, data))
        inner_pts = Cylinder(R, (0,) * cfg.d, 0).domain().interior_points()
        outer_pts = dom.interior_points()
        rows = []
        for p in cfg.parities:
            oi = oscillation(u, parity_filter(inner_pts, p))
            oo = oscillation(u, parity_filter(outer_pts, p))
            for j in range(len(kinds)):
                den = float(oo[j])
                exc = not den > 1e-12 * max(1.0, float(np.max(np.abs(data[j]))))
                rows.append({"R": R, "seed": seed, "datum_id": j, "kind": kinds[j], "parity": p,
                             "osc_inner": float(oi[j]), "osc_outer": den,
                             "ratio": math.nan if exc else float(oi[j]) / den, "excluded": exc})
        return rows

    items = [(s, R) for s in cfg.seeds for R in cfg.R]
    rows = [r for part in map_ordered(one, items, cfg.workers) for r in part]
    vals = [r["ratio"] for r in rows if not r["excluded"]]
    summary = {"zeta": zeta, "n_rows": len(rows), "n_excluded": sum(r["excluded"] for r in rows),
               "ratio": percentiles(vals), "max_ratio": max(vals, default=math.nan)}
    return ExperimentReport("osc", cols, rows, summary, {**cfg.to_dict(), "zeta": zeta})


# --- coupling / exit-measure TV ---------------------------------------------------

def coupling_success(env, xhat, yhat, c, partition=None) -> tuple[float, float]:
    """Exact TV between the exit laws from two same-parity starts, and the maximal coupling success 1 - TV.

    Without ``partition`` the laws live on the individual boundary points.
    """
    xhat = np.asarray(xhat, dtype=np.int64)
    yhat = np.asarray(yhat, dtype=np.int64)
    if parity_of(xhat[None, :])[0] != parity_of(yhat[None, :])[0]:
        raise ValueError("start points must have the same parity")
    if partition is None:
        _, p = exit_measure_points(env, c, xhat)
        _, q = exit_measure_points(env, c, yhat)
    else:
        p = exit_distribution_exact(env, xhat, c, partition).masses
        q = exit_distribution_exact(env, yhat, c, partition).masses
    tv = total_variation(p, q)
    return tv, 1.0 - tv


def coupling_experiment(cfg: ExperimentConfig, n_pairs: int = 20) -> ExperimentReport:
    """TV between exit laws of K_{zeta R} from random same-parity pairs in K_R."""
    cfg.validate()
    cols = ["R", "seed", "pair", "x", "y", "distance", "tv", "success"]

    def one(item):
        seed, R = item
        outer = Cylinder(cfg.zeta * R, (0,) * cfg.d, 0)
        env = _env_for(cfg, seed, int(math.ceil(cfg.zeta * R)) + 1)
        inner = Cylinder(R, (0,) * cfg.d, 0).domain().interior_points()
        rows = []
        for j in range(n_pairs):
            st = rng.StreamRNG(seed, 10_000 + j)
            x = inner[int(st.random() * inner.shape[0])]
            same = parity_filter(inner, "odd" if parity_of(x[None, :])[0] else "even")
            y = same[int(st.random() * same.shape[0])]
            tv, ok = coupling_success(env, x, y, outer)
            rows.append({"R": R, "seed": seed, "pair": j, "x": tuple(int(v) for v in x),
                         "y": tuple(int(v) for v in y), "distance": float(np.abs(x - y).sum()),
                         "tv": tv, "success": ok})
        return rows

    items = [(s, R) for s in cfg.seeds for R in cfg.R]
    rows = [r for part in map_ordered(one, items, cfg.workers) for r in part]
    return ExperimentReport("couple", cols, rows, {"tv": percentiles([r["tv"] for r in rows])}, cfg.to_dict())


def exit_dp_vs_mc(env, c: Cylinder, start, partition, samples: int, seed: int,
                  workers: int | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact cell masses, Monte Carlo cell frequencies and their TV distance."""
    exact = exit_distribution_exact(env, start, c, partition).masses
    dom = c.domain()
    lab = partition.labels_for(dom, c.center, c.radius)
    bpts = dom.boundary_points()
    ends = exit_sample_batch(env, start, c, seed, samples, workers=workers)
    order = np.lexsort(bpts.T[::-1])
    srt = bpts[order]
    pos = np.searchsorted(_row_keys(srt, dom), _row_keys(ends, dom))
    cell = lab[order][pos]
    freq = np.bincount(cell, minlength=len(partition.names)) / samples
    return exact, freq, total_variation(exact, freq)


def _row_keys(pts: np.ndarray, dom: SpaceTimeDomain) -> np.ndarray:
    lo = np.concatenate([dom.grid_lo, [dom.t0]])
    span = np.concatenate([np.array(dom.grid_shape), [dom.n_steps + 1]])
    rel = pts - lo
    key = np.zeros(pts.shape[0], dtype=np.int64)
    for i in range(pts.shape[1]):
        key = key * span[i] + rel[:, i]
    return key


def optional_stopping_experiment(cfg: ExperimentConfig, n_fields: int = 5, start=None) -> ExperimentReport:
    """Monte Carlo mean of u at the exit point of K_R against the exact u(start)."""
    cfg.validate()
    cols = ["R", "seed", "field", "kind", "exact", "mc_mean", "mc_se", "z"]
    rows = []
    for seed in cfg.seeds:
        for R in cfg.R:
            cyl = Cylinder(R, (0,) * cfg.d, 0)
            dom = cyl.domain()
            env = _env_for(cfg, seed, int(math.ceil(R)) + 1)
            kinds, data = boundary_family(dom, R, n_fields + 1, seed)
            kinds, data = kinds[1:], data[1:]
            s = np.zeros(cfg.d + 1, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64)
            u = solve_backward(env, dom, BoundaryData(dom, data))
            exact = u.at(s[None, :])[:, 0]
            ends = exit_sample_batch(env, s, cyl, rng.derive_seed(seed, 77), cfg.samples, workers=cfg.workers)
            bpts = dom.boundary_points()
            order = np.lexsort(bpts.T[::-1])
            pos = np.searchsorted(_row_keys(bpts[order], dom), _row_keys(ends, dom))
            vals = data[:, order][:, pos]
            for j in range(len(kinds)):
                m = float(vals[j].mean())
                se = float(vals[j].std(ddof=1) / math.sqrt(cfg.samples))
                z = abs(m - exact[j]) / se if se > 0 else (0.0 if m == exact[j] else math.inf)
                rows.append({"R": R, "seed": seed, "field": j, "kind": kinds[j], "exact": float(exact[j]),
                             "mc_mean": m, "mc_se": se, "z": z})
    return ExperimentReport("optional-stopping", cols, rows,
                            {"max_z": max(r["z"] for r in rows), "n": len(rows)}, cfg.to_dict())


# --- transience -----------------------------------------------------------------

@dataclass
class TransienceReport:
    law: str
    d: int
    horizons: list
    samples: int
    seed: int
    mean_visits: list
    standard_errors: list
    deltas: list            # mean(h_{i+1}) - mean(h_i)
    delta_errors: list

    def to_csv(self) -> str:
        lines = ["law,d,horizon,samples,seed,mean_visits,se"]
        for h, m, s in zip(self.horizons, self.mean_visits, self.standard_errors):
            lines.append(f"{self.law},{self.d},{h},{self.samples},{self.seed},{m!r},{s!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return _jsonable(asdict(self))


def transience_experiment(law: str, d: int, horizons, samples: int, seed: int,
                          workers: int | None = None, box_factor: float = 6.0, kern=None) -> TransienceReport:
    """Mean number of visits to the start (time 0 included) up to each horizon.

    The environment is keyed by a hash of the site, so nothing is stored; the
    box only guards against runaway walks (half-width box_factor * sqrt(horizon)).
    """
    kern = _kern if kern is None else kern
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    horizons = sorted(int(h) for h in np.atleast_1d(horizons))
    if horizons[0] < 10 ** 4:
        raise ValueError("horizons must be >= 1e4")
    law_code = {"srw": 0, "uniform-axis": 1}.get(law)
    if law_code is None:
        raise ValueError("transience supports srw and uniform-axis")
    env_key = rng.derive_seed(seed, 0xE)
    half = int(math.ceil(box_factor * math.sqrt(horizons[-1])))
    cum = cumulative_rows(np.full((1, 2 * d), 1.0 / (2 * d)))[0]
    cps = np.asarray(horizons, dtype=np.int64)

    def work(a, b):
        return kern.visit_counts(d, law_code, env_key, rng.stream_keys(seed, a, b - a), cps, half, cum)

    parts = map_chunks(work, samples, workers, chunk=256)
    counts = np.concatenate([p[0] for p in parts]).astype(np.float64)
    status = np.concatenate([p[1] for p in parts])
    if np.any(status != 0):
        raise BoxExhausted(f"{int((status != 0).sum())} walk(s) left the box of half-width {half}")
    means = counts.mean(axis=0)
    ses = counts.std(axis=0, ddof=1) / math.sqrt(samples)
    diff = np.diff(counts, axis=1)
    dm = diff.mean(axis=0) if diff.size else np.zeros(0)
    ds = diff.std(axis=0, ddof=1) / math.sqrt(samples) if diff.size else np.zeros(0)
    return TransienceReport(law, d, horizons, samples, seed, means.tolist(), ses.tolist(), dm.tolist(), ds.tolist())


def srw3_expected_visits(horizon: int, exact_terms: int = 1000) -> float:
    """sum_{n=0}^{horizon} P(S_n = 0) for the 3-d simple random walk.

    Return probabilities are exact (multinomial mixture of 1-d returns) for
    n <= exact_terms; beyond that the local limit 2 (3 / (4 pi m))^{3/2} per
    even time 2m is used with a 1/m correction fitted on the exact range.
    """
    from scipy.special import gammaln

    def p_exact(n):
        if n % 2:
            return 0.0
        i = np.arange(0, n + 1, 2)
        a, b = np.meshgrid(i, i, indexing="ij")
        c = n - a - b
        ok = c >= 0
        a, b, c = a[ok], b[ok], c[ok]

        def lq(k):
            return gammaln(k + 1) - 2 * gammaln(k / 2 + 1) - k * math.log(2)

        lm = gammaln(n + 1) - gammaln(a + 1) - gammaln(b + 1) - gammaln(c + 1) - n * math.log(3)
        return float(np.exp(lm + lq(a) + lq(b) + lq(c)).sum())

    top = min(horizon, exact_terms)
    total = sum(p_exact(n) for n in range(0, top + 1, 2))
    if horizon <= exact_terms:
        return total
    m_fit = np.arange(exact_terms // 4, exact_terms // 2 + 1, 10)
    lead = 2 * (3 / (4 * math.pi * m_fit)) ** 1.5
    ratio = np.array([p_exact(2 * m) for m in m_fit]) / lead
    corr = float(np.polyfit(1.0 / m_fit, ratio - 1.0, 1)[0])
    m = np.arange(exact_terms // 2 + 1, horizon // 2 + 1, dtype=np.float64)
    total += float((2 * (3 / (4 * math.pi * m)) ** 1.5 * (1 + corr / m)).sum())
    return total
