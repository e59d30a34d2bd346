"""Reachability structure of an environment: SCCs, sinks, omega-distances.

On a finite box a component that touches the box frontier may connect to
sites outside it, so verdicts are three-valued: ``sink`` (terminal and away
from the frontier), ``not-sink`` (has an edge to another component and is away
from the frontier) and ``inconclusive``.  Events are reported the same way,
with ``None`` standing for inconclusive.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment
from .lattice import axis_offsets, ball_points

SINK, NOT_SINK, INCONCLUSIVE = "sink", "not-sink", "inconclusive"


@dataclass
class ReachGraph:
    """Digraph x -> x + e_k whenever w(x, e_k) > 0, restricted to a box."""

    lo: np.ndarray
    hi: np.ndarray
    coords: np.ndarray   # (n, d), row-major order of the box
    indptr: np.ndarray
    indices: np.ndarray
    leaks: np.ndarray    # per node: has a positive move leaving the box

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.indices.size)

    @property
    def shape(self) -> tuple:
        return tuple(int(v) for v in self.hi - self.lo + 1)

    def index(self, site) -> int:
        s = np.asarray(site, dtype=np.int64)
        if np.any(s < self.lo) or np.any(s > self.hi):
            raise KeyError(f"site {tuple(s.tolist())} outside the graph box")
        return int(np.ravel_multi_index(tuple(s - self.lo), self.shape))

    def successors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def on_frontier(self) -> np.ndarray:
        return np.any((self.coords == self.lo) | (self.coords == self.hi), axis=1)


def build_reach_graph(env: Environment, box=None) -> ReachGraph:
    d = env.d
    if box is None:
        lo, hi = env.lo.copy(), env.hi.copy()
    else:
        lo = np.asarray(box[0], dtype=np.int64)
        hi = np.asarray(box[1], dtype=np.int64)
        if np.any(lo < env.lo) or np.any(hi > env.hi):
            raise ValueError("graph box must lie inside the environment box")
    shape = tuple(int(v) for v in hi - lo + 1)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    coords = np.stack([m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=1).astype(np.int64)
    n = coords.shape[0]
    probs = env.kernels_at(coords)
    src, dst = [], []
    leaks = np.zeros(n, dtype=bool)
    for k, off in enumerate(axis_offsets(d)):
        tgt = coords + off
        pos = probs[:, k] > 0
        inside = np.all((tgt >= lo) & (tgt <= hi), axis=1)
        leaks |= pos & ~inside
        sel = pos & inside
        src.append(np.flatnonzero(sel))
        rel = tgt[sel] - lo
        dst.append(np.ravel_multi_index(tuple(rel[:, i] for i in range(d)), shape))
    src = np.concatenate(src)
    dst = np.concatenate(dst).astype(np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return ReachGraph(lo, hi, coords, indptr, dst, leaks)


def strongly_connected_components(g: ReachGraph) -> np.ndarray:
    """Component label per node (iterative Tarjan; labels in completion order)."""
    n = g.n
    index = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    on_stack = np.zeros(n, dtype=bool)
    comp = np.full(n, -1, dtype=np.int64)
    stack: list[int] = []
    counter = 0
    n_comp = 0
    indptr, indices = g.indptr, g.indices
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, int(indptr[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            end = int(indptr[v + 1])
            advanced = False
            while pos < end:
                w = int(indices[pos])
                pos += 1
                if index[w] < 0:
                    work[-1] = (v, pos)
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, int(indptr[w])))
                    advanced = True
                    break
                if on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
            if advanced:
                continue
            work.pop()
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
    return comp


@dataclass
class SinkDecomposition:
    graph: ReachGraph
    labels: np.ndarray
    components: list
    terminal: np.ndarray
    boundary_touching: np.ndarray
    verdicts: list = field(default_factory=list)

    def component_of(self, site) -> int:
        return int(self.labels[self.graph.index(site)])

    def sites(self, c: int) -> np.ndarray:
        return self.graph.coords[self.components[c]]

    def sink_mask(self) -> np.ndarray:
        """Nodes in terminal components: the finite-box stand-in for the sink."""
        return self.terminal[self.labels]

    def condensation_is_acyclic(self) -> bool:
        g = self.graph
        src = np.repeat(np.arange(g.n), np.diff(g.indptr))
        a, b = self.labels[src], self.labels[g.indices]
        keep = a != b
        edges = set(zip(a[keep].tolist(), b[keep].tolist()))
        m = len(self.components)
        indeg = np.zeros(m, dtype=np.int64)
        out = [[] for _ in range(m)]
        for x, y in edges:
            out[x].append(y)
            indeg[y] += 1
        q = deque(np.flatnonzero(indeg == 0).tolist())
        seen = 0
        while q:
            x = q.popleft()
            seen += 1
            for y in out[x]:
                indeg[y] -= 1
                if indeg[y] == 0:
                    q.append(y)
        return seen == m

    def report(self) -> dict:
        rows = []
        for c, members in enumerate(self.components):
            rows.append({
                "component": c,
                "size": int(members.size),
                "terminal": bool(self.terminal[c]),
                "boundary_touching": bool(self.boundary_touching[c]),
                "verdict": self.verdicts[c],
                "witness": [int(v) for v in self.graph.coords[members[0]]],
            })
        return {"n_sites": self.graph.n, "n_components": len(rows), "components": rows}

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=1, sort_keys=True)


def find_sinks(env: Environment, box=None) -> SinkDecomposition:
    g = build_reach_graph(env, box)
    labels = strongly_connected_components(g)
    m = int(labels.max()) + 1 if labels.size else 0
    order = np.argsort(labels, kind="stable")
    cuts = np.searchsorted(labels[order], np.arange(m + 1))
    comps = [order[cuts[i]:cuts[i + 1]] for i in range(m)]
    src = np.repeat(np.arange(g.n), np.diff(g.indptr))
    exits = labels[src] != labels[g.indices]
    has_exit = np.zeros(m, dtype=bool)
    has_exit[labels[src[exits]]] = True
    touch = np.zeros(m, dtype=bool)
    np.logical_or.at(touch, labels, g.on_frontier() | g.leaks)
    terminal = ~has_exit
    verdicts = []
    for c in range(m):
        if touch[c]:
            verdicts.append(INCONCLUSIVE)
        else:
            verdicts.append(SINK if terminal[c] else NOT_SINK)
    # relabel components by their smallest node so output order is canonical
    first = np.array([c.min() for c in comps], dtype=np.int64)
    perm = np.argsort(first, kind="stable")
    remap = np.empty(m, dtype=np.int64)
    remap[perm] = np.arange(m)
    return SinkDecomposition(g, remap[labels], [comps[i] for i in perm], terminal[perm],
                             touch[perm], [verdicts[i] for i in perm])


def _bfs(g: ReachGraph, src: int) -> np.ndarray:
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[src] = 0
    q = deque([src])
    while q:
        v = q.popleft()
        for w in g.successors(v):
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                q.append(int(w))
    return dist


def omega_distance(env: Environment, x, y, box=None, graph: ReachGraph | None = None):
    """Directed BFS distance from x to y inside the box; None when unreachable."""
    g = build_reach_graph(env, box) if graph is None else graph
    dist = _bfs(g, g.index(x))
    dv = int(dist[g.index(y)])
    return None if dv < 0 else dv


@dataclass
class EventReport:
    E: bool | None
    H: bool | None
    S: bool | None
    witnesses: dict

    def as_dict(self) -> dict:
        return {"E": self.E, "H": self.H, "S": self.S, "witnesses": self.witnesses}


def _ball_in_box(g: ReachGraph, R: float, d: int, center) -> tuple[np.ndarray, bool]:
    pts = ball_points(R, center, d)
    inside = np.all((pts >= g.lo) & (pts <= g.hi), axis=1)
    return pts[inside], bool(np.all(inside))


def check_small_scale_events(env: Environment, R: float, xi: float, c: int, hole_radius: int | None = None,
                             center=None, box=None) -> EventReport:
    """Evaluate the ellipticity (E), hole (H) and distance (S) events.

    E: no kernel entry in (0, xi) on B_{(c+3)R}.
    H: no site x reachable from some z in B_R with x outside the sink and
       |x - z|_inf equal to the hole radius (default floor(R)).
    S: omega-distances between sink sites in B_{2R} are at most cR.
    The sink is approximated by the terminal components of the box.
    """
    d = env.d
    center = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    r = int(np.floor(R)) if hole_radius is None else int(hole_radius)
    dec = find_sinks(env, box)
    g = dec.graph
    wit: dict = {}

    # E
    pts, full = _ball_in_box(g, (c + 3) * R, d, center)
    p = env.kernels_at(pts)
    bad = (p > 0) & (p < xi)
    if np.any(bad):
        i, k = np.argwhere(bad)[0]
        E = False
        wit["E"] = {"site": pts[i].tolist(), "direction": int(k), "value": float(p[i, k])}
    else:
        E = True if full else None

    # H
    in_sink = dec.sink_mask()
    verdict_of = np.array([v for v in dec.verdicts])[dec.labels]
    zs, full_h = _ball_in_box(g, R, d, center)
    H = True if full_h else None
    for z in zs:
        zi = g.index(z)
        dist = _bfs(g, zi)
        reach = np.flatnonzero(dist >= 0)
        ring = reach[np.abs(g.coords[reach] - z).max(axis=1) == r]
        cand = ring[~in_sink[ring]]
        if cand.size == 0:
            continue
        definite = cand[verdict_of[cand] == NOT_SINK]
        if definite.size:
            H = False
            wit["H"] = {"z": z.tolist(), "x": g.coords[definite[0]].tolist()}
            break
        H = None
        wit.setdefault("H_inconclusive", {"z": z.tolist(), "x": g.coords[cand[0]].tolist()})

    # S
    ss, full_s = _ball_in_box(g, 2 * R, d, center)
    sidx = np.array([g.index(s) for s in ss], dtype=np.int64)
    sidx = sidx[in_sink[sidx]]
    S = True
    limit = c * R
    for a in sidx:
        dist = _bfs(g, int(a))
        far = sidx[(dist[sidx] < 0) | (dist[sidx] > limit)]
        if far.size:
            x = g.coords[a]
            reach_ball_inside = np.all(x - limit >= g.lo) and np.all(x + limit <= g.hi)
            if reach_ball_inside:
                S = False
                wit["S"] = {"x": x.tolist(), "y": g.coords[far[0]].tolist(),
                            "distance": None if dist[far[0]] < 0 else int(dist[far[0]])}
                break
            S = None
    if S is True and not full_s:
        S = None
    return EventReport(E, H, S, wit)
