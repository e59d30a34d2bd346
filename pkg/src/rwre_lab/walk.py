"""Quenched walks: single paths, stopping rules, exit sampling, cover times.

Sample ``i`` under master seed ``s`` always consumes the stream
``rng.stream_key(s, i)``; its ``n``-th step uses counter ``n``.  Single-path
simulation (``run``) and the batch kernels therefore agree exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .backend import kernels as _kern
from .environment import Environment
from .lattice import Cylinder, SpaceTimeDomain, axis_offsets, contains_rows, in_ball
from .parallel import map_chunks

ST_STOP, ST_TIME, ST_COVER, ST_CAP, ST_EXHAUST = 0, 1, 2, 3, 4
STATUS_NAMES = {0: "stop", 1: "time", 2: "cover", 3: "cap", 4: "exhausted"}
DEFAULT_GUARD = 10 ** 6
NO_TIME = np.iinfo(np.int64).max // 4


class BoxExhausted(RuntimeError):
    pass


class StepCapHit(RuntimeError):
    pass


@dataclass(frozen=True)
class StopRule:
    """A stopping rule; ``first_of`` composes rules (stop at the first trigger)."""

    kind: str
    param: object = None
    children: tuple = field(default=())

    @staticmethod
    def exit_domain(dom: SpaceTimeDomain) -> "StopRule":
        return StopRule("exit-domain", dom)

    @staticmethod
    def exit_cylinder(c: Cylinder) -> "StopRule":
        return StopRule("exit-domain", c.domain())

    @staticmethod
    def exit_ball(radius: float, center=None) -> "StopRule":
        return StopRule("exit-ball", (float(radius), center))

    @staticmethod
    def hit_set(sites) -> "StopRule":
        return StopRule("hit-set", np.atleast_2d(np.asarray(sites, dtype=np.int64)))

    @staticmethod
    def cover_all() -> "StopRule":
        return StopRule("cover")

    @staticmethod
    def step_cap(n: int) -> "StopRule":
        return StopRule("step-cap", int(n))

    @staticmethod
    def first_of(*rules: "StopRule") -> "StopRule":
        return StopRule("first-of", None, tuple(rules))

    def leaves(self):
        if self.kind == "first-of":
            for c in self.children:
                yield from c.leaves()
        else:
            yield self


@dataclass
class CompiledRule:
    state: np.ndarray   # int8 over padded cells
    t_end: int
    cap: int
    explicit_cap: bool
    cover_mask: int


def compile_rule(env: Environment, rule: StopRule, guard: int | None = None) -> CompiledRule:
    tab = env.walk_tables
    state = tab.state_template()
    inside = state == 1
    sites = tab.unflat(np.flatnonzero(inside))
    stop = np.zeros(sites.shape[0], dtype=bool)
    t_end, cap, explicit, cover = NO_TIME, None, False, 0
    auto_guard = DEFAULT_GUARD
    for leaf in rule.leaves():
        if leaf.kind == "exit-domain":
            dom = leaf.param
            stop |= ~contains_rows(dom.sites, sites)
            t_end = min(t_end, dom.t_end)
            auto_guard = min(auto_guard, 64 * max(dom.n_steps, 1))
        elif leaf.kind == "exit-ball":
            radius, center = leaf.param
            stop |= ~in_ball(sites, radius, center)
            auto_guard = min(auto_guard, int(64 * math.ceil(radius ** 2)))
        elif leaf.kind == "hit-set":
            stop |= contains_rows(leaf.param, sites)
        elif leaf.kind == "cover":
            cover = (1 << env.d) - 1
        elif leaf.kind == "step-cap":
            cap = leaf.param if cap is None else min(cap, leaf.param)
            explicit = True
        else:
            raise ValueError(f"unknown stop rule {leaf.kind!r}")
    flat_inside = np.flatnonzero(inside)
    state[flat_inside[stop]] = 0
    if cap is None:
        cap = guard if guard is not None else auto_guard
    return CompiledRule(state, t_end, int(cap), explicit, cover)


def _check_status(status: np.ndarray, compiled: CompiledRule):
    if np.any(status == ST_EXHAUST):
        raise BoxExhausted(f"{int((status == ST_EXHAUST).sum())} walk(s) left the stored box")
    if not compiled.explicit_cap and np.any(status == ST_CAP):
        raise StepCapHit(f"{int((status == ST_CAP).sum())} walk(s) hit the step cap {compiled.cap}")


@dataclass
class WalkPath:
    start: tuple
    steps: list
    sites: np.ndarray
    status: str

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def end(self) -> tuple:
        x = tuple(int(v) for v in self.sites[-1])
        return x + (self.start[-1] + self.length,)


def run(env: Environment, start, rule: StopRule, seed: int, index: int = 0,
        raise_on_exhaust: bool = True) -> WalkPath:
    """Sample one path from the quenched law, stopped by ``rule``."""
    start = tuple(int(v) for v in start)
    d = env.d
    if len(start) == d:
        start = start + (0,)
    x0, t0 = np.array(start[:d], dtype=np.int64), start[d]
    if not env.contains(x0)[0]:
        raise ValueError("start site outside the environment box")
    tab = env.walk_tables
    comp = compile_rule(env, rule)
    key = rng.stream_key(seed, index)
    idx = int(tab.flat(x0)[0])
    offs = axis_offsets(d)
    steps, sites = [], [x0.copy()]
    x = x0.copy()
    n = 0
    seen = 0
    while True:
        st = comp.state[idx]
        if st < 0:
            status = ST_EXHAUST
            break
        if st == 0:
            status = ST_STOP
            break
        if comp.cover_mask and seen == comp.cover_mask:
            status = ST_COVER
            break
        if t0 + n >= comp.t_end:
            status = ST_TIME
            break
        if n >= comp.cap:
            status = ST_CAP
            break
        u = rng.uniform(key, n)
        k = int(np.count_nonzero(tab.cum[idx] <= u))
        idx += int(tab.step_off[k])
        seen |= 1 << int(tab.axis_of[k])
        x = x + offs[k]
        steps.append(k)
        sites.append(x.copy())
        n += 1
    if status == ST_EXHAUST and raise_on_exhaust:
        raise BoxExhausted("walk left the stored box")
    if status == ST_CAP and not comp.explicit_cap:
        raise StepCapHit(f"walk hit the step cap {comp.cap}")
    return WalkPath(start, steps, np.array(sites, dtype=np.int64), STATUS_NAMES[status])


@dataclass
class BatchResult:
    end: np.ndarray      # (n, d + 1) end space-time points
    steps: np.ndarray
    status: np.ndarray
    seen: np.ndarray


def run_batch(env: Environment, starts, rule: StopRule, seed: int, n: int | None = None,
              first: int = 0, workers: int | None = None, guard: int | None = None,
              check: bool = True, kern=None) -> BatchResult:
    """Samples ``first .. first+n-1``; ``starts`` is one point or one per sample."""
    kern = _kern if kern is None else kern
    d = env.d
    starts = np.atleast_2d(np.asarray(starts, dtype=np.int64))
    if starts.shape[1] == d:
        starts = np.concatenate([starts, np.zeros((starts.shape[0], 1), dtype=np.int64)], axis=1)
    if n is None:
        n = starts.shape[0]
    if starts.shape[0] == 1 and n > 1:
        starts = np.repeat(starts, n, axis=0)
    if starts.shape[0] != n:
        raise ValueError("need one start or one start per sample")
    if not np.all(env.contains(starts[:, :d])):
        raise ValueError("start site outside the environment box")
    tab = env.walk_tables
    comp = compile_rule(env, rule, guard)
    sidx = tab.flat(starts[:, :d]).astype(np.int64)
    stime = np.ascontiguousarray(starts[:, d])

    def work(a, b):
        keys = rng.stream_keys(seed, first + a, b - a)
        return kern.walk_batch(tab.cum, tab.step_off, tab.axis_of, comp.state,
                               np.ascontiguousarray(sidx[a:b]), np.ascontiguousarray(stime[a:b]),
                               int(comp.t_end), keys, int(comp.cap), int(comp.cover_mask))

    parts = map_chunks(work, n, workers)
    if parts:
        idx, steps, status, seen = (np.concatenate(z) for z in zip(*parts))
    else:
        idx = steps = seen = np.zeros(0, dtype=np.int64)
        status = np.zeros(0, dtype=np.int8)
    if check:
        _check_status(status, comp)
    end = np.concatenate([tab.unflat(idx), (stime + steps)[:, None]], axis=1)
    return BatchResult(end, steps, status, seen)


def exit_sample(env: Environment, start, c, seed: int, index: int = 0) -> tuple[tuple, int]:
    """Exit space-time point of one walk from a cylinder (or domain), and rho."""
    dom = c.domain() if isinstance(c, Cylinder) else c
    res = run_batch(env, start, StopRule.exit_domain(dom), seed, n=1, first=index, workers=1)
    return tuple(int(v) for v in res.end[0]), int(res.steps[0])


def exit_sample_batch(env: Environment, start, c, seed: int, n: int, first: int = 0,
                      workers: int | None = None, kern=None) -> np.ndarray:
    dom = c.domain() if isinstance(c, Cylinder) else c
    return run_batch(env, start, StopRule.exit_domain(dom), seed, n, first, workers, kern=kern).end


def cover_time(env: Environment, start, k: int, seed: int, index: int = 0) -> tuple[int, bool]:
    """T^(k) = min(T, k) with T the first time every coordinate has changed."""
    if k < 1:
        raise ValueError("k must be >= 1")
    res = run_batch(env, start, StopRule.first_of(StopRule.cover_all(), StopRule.step_cap(k)),
                    seed, n=1, first=index, workers=1)
    capped = bool(res.status[0] == ST_CAP)
    return int(res.steps[0]), capped


def cover_times(env: Environment, start, k: int, seed: int, n: int, first: int = 0,
                workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    res = run_batch(env, start, StopRule.first_of(StopRule.cover_all(), StopRule.step_cap(k)),
                    seed, n, first, workers)
    return res.steps, res.status == ST_CAP


@dataclass
class CoverStats:
    mean_power: float        # (1/|sites|) sum_x E^x[T]^(d+2)
    mean_power_se: float
    max_tail: float          # max_x P^x(T > k)
    max_tail_se: float
    per_site_mean: np.ndarray
    per_site_tail: np.ndarray


def cover_time_statistics(env: Environment, sites, k: int, samples: int, seed: int,
                          guard: int = 10 ** 4, workers: int | None = None) -> CoverStats:
    """Monte Carlo E^x[T] and P^x(T > k) over ``sites``.

    ``E^x[T]`` is reported as +inf when some walk does not cover within
    ``guard`` steps (e.g. when a whole region moves along one axis only).
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    d = env.d
    cap = max(k, guard)
    rule = StopRule.first_of(StopRule.cover_all(), StopRule.step_cap(cap))
    means, tails, mses, tses = [], [], [], []
    for j, x in enumerate(sites):
        res = run_batch(env, x, rule, seed, samples, first=j * samples, workers=workers)
        T = res.steps.astype(np.float64)
        capped = res.status == ST_CAP
        tail = float(np.mean(T > k))
        tails.append(tail)
        tses.append(math.sqrt(max(tail * (1 - tail), 0.0) / samples))
        if np.any(capped):
            means.append(math.inf)
            mses.append(math.inf)
        else:
            means.append(float(T.mean()))
            mses.append(float(T.std(ddof=1) / math.sqrt(samples)))
    means = np.array(means)
    mses = np.array(mses)
    tails = np.array(tails)
    p = d + 2
    if np.all(np.isfinite(means)):
        power = float(np.mean(means ** p))
        se = float(np.sqrt(np.sum((p * means ** (p - 1) * mses) ** 2)) / len(means))
    else:
        power, se = math.inf, math.inf
    j = int(np.argmax(tails))
    return CoverStats(power, se, float(tails[j]), float(np.array(tses)[j]), means, tails)
