"""Pure-Python/numpy implementations of the hot kernels.

Semantics are shared with ``_ckernels.pyx``; both must produce bit-identical
output for identical input.  Status codes returned by ``walk_batch``:

* ``0`` the walker sits on a stop site (``state == 0``)
* ``1`` the space-time clock reached ``t_end``
* ``2`` every coordinate has changed at least once (cover mode)
* ``3`` the step cap was hit
* ``4`` the walker left the stored box (``state == -1``)
"""
from __future__ import annotations

import numpy as np

from .rng import GOLDEN, _mix64_array, mix64, stream_key, uniforms, uniform

ST_STOP, ST_TIME, ST_COVER, ST_CAP, ST_EXHAUST = 0, 1, 2, 3, 4

BACKEND = "python"


def walk_batch(cum, step_off, axis_of, state, start_idx, start_time, t_end, keys,
               cap, cover_mask):
    n = start_idx.shape[0]
    idx = start_idx.astype(np.int64).copy()
    steps = np.zeros(n, dtype=np.int64)
    seen = np.zeros(n, dtype=np.int64)
    status = np.full(n, -1, dtype=np.int8)
    start_time = np.asarray(start_time, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        cur = idx[active]
        st = state[cur]
        time = start_time[active] + steps[active]
        code = np.full(active.size, -1, dtype=np.int8)
        code[(code < 0) & (st < 0)] = ST_EXHAUST
        code[(code < 0) & (st == 0)] = ST_STOP
        if cover_mask:
            code[(code < 0) & (seen[active] == cover_mask)] = ST_COVER
        code[(code < 0) & (time >= t_end)] = ST_TIME
        code[(code < 0) & (steps[active] >= cap)] = ST_CAP
        done = code >= 0
        status[active[done]] = code[done]
        active = active[~done]
        if not active.size:
            break
        u = uniforms(keys[active], steps[active])
        rows = cum[idx[active]]
        k = (rows <= u[:, None]).sum(axis=1)
        idx[active] += step_off[k]
        seen[active] |= np.left_shift(1, axis_of[k])
        steps[active] += 1
    return idx, steps, status, seen


def _site_axis(env_key, coords, d):
    # coords: (n, d) int64
    with np.errstate(over="ignore"):
        h = np.zeros(coords.shape[0], dtype=np.uint64)
        for i in range(d):
            h = _mix64_array(h ^ (coords[:, i].astype(np.uint64) + np.uint64((i + 1) * GOLDEN & 0xFFFFFFFFFFFFFFFF)))
        h = _mix64_array(h ^ np.uint64(env_key))
        return (((h >> np.uint64(11)) * np.uint64(d)) >> np.uint64(53)).astype(np.int64)


def site_axis(env_key, coords, d):
    return _site_axis(env_key, np.atleast_2d(np.asarray(coords, dtype=np.int64)), d)


def visit_counts(d, law_code, env_key, keys, checkpoints, halfwidth, srw_cum):
    n = keys.shape[0]
    horizon = int(checkpoints[-1])
    pos = np.zeros((n, d), dtype=np.int64)
    visits = np.ones(n, dtype=np.int64)
    counts = np.zeros((n, len(checkpoints)), dtype=np.int64)
    status = np.zeros(n, dtype=np.int8)
    ci = 0
    rows = np.arange(n)
    for step in range(1, horizon + 1):
        u = uniforms(keys, np.full(n, step - 1, dtype=np.int64))
        if law_code == 0:
            k = (srw_cum[None, :] <= u[:, None]).sum(axis=1)
            axis = k % d
            sign = np.where(k < d, 1, -1)
        else:
            axis = _site_axis(env_key, pos, d)
            sign = np.where(u < 0.5, 1, -1)
        live = status == 0
        pos[rows[live], axis[live]] += sign[live]
        out = np.abs(pos).max(axis=1) > halfwidth
        status[live & out] = ST_EXHAUST
        visits += (live & ~out & (np.abs(pos).sum(axis=1) == 0))
        while ci < len(checkpoints) and checkpoints[ci] == step:
            counts[:, ci] = visits
            ci += 1
    return counts, status


def _shuffle(m, key):
    order = np.arange(m)
    c = 0
    for i in range(m - 1, 0, -1):
        j = int(uniform(key, c) * (i + 1))
        c += 1
        order[i], order[j] = order[j], order[i]
    return order


ROUND = 1e-12


def seidel_lp2(A, b, box, key, eps):
    """Maximise a fixed generic objective over ``A p <= b + eps`` inside ``box``.

    Returns ``(feasible, p)``.  ``box = (xlo, xhi, ylo, yhi)``.
    """
    cx, cy = 1.0, 0.6180339887498949
    xlo, xhi, ylo, yhi = box
    m = A.shape[0]
    # box constraints first, never permuted
    A_all = np.concatenate([np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]), A])
    b_all = np.concatenate([np.array([xhi, -xlo, yhi, -ylo]), b + eps])
    order = np.concatenate([np.arange(4), 4 + _shuffle(m, key)])
    vx = xhi if cx > 0 else xlo
    vy = yhi if cy > 0 else ylo
    for pos in range(4, m + 4):
        i = order[pos]
        ax, ay = A_all[i]
        bi = b_all[i]
        # a few ulps of slack so degenerate vertices (several lines through one
        # point) are not reported as violations by rounding alone
        if ax * vx + ay * vy <= bi + ROUND * (1.0 + abs(bi)):
            continue
        nrm2 = ax * ax + ay * ay
        if nrm2 == 0.0:
            return False, (vx, vy)
        px, py = ax * bi / nrm2, ay * bi / nrm2
        dx, dy = -ay, ax
        tlo, thi = -np.inf, np.inf
        for q in range(pos):
            j = order[q]
            coef = A_all[j, 0] * dx + A_all[j, 1] * dy
            rhs = b_all[j] - (A_all[j, 0] * px + A_all[j, 1] * py)
            if coef > 1e-300:
                thi = min(thi, rhs / coef)
            elif coef < -1e-300:
                tlo = max(tlo, rhs / coef)
            elif rhs < -ROUND * (1.0 + abs(b_all[j])):
                return False, (vx, vy)
        if tlo > thi:
            if tlo - thi > ROUND * (1.0 + abs(tlo) + abs(thi)):
                return False, (vx, vy)
            t = 0.5 * (tlo + thi)
        else:
            t = thi if (cx * dx + cy * dy) > 0 else tlo
        vx, vy = px + t * dx, py + t * dy
    return True, (vx, vy)


def clip_polygon(A, b, box, eps):
    """Sutherland-Hodgman clip of ``box`` by every ``a . p <= b + eps``."""
    xlo, xhi, ylo, yhi = box
    poly = [(xlo, ylo), (xhi, ylo), (xhi, yhi), (xlo, yhi)]
    for (ax, ay), bi in zip(A, b + eps):
        if not poly:
            break
        out = []
        sx, sy = poly[-1]
        sv = ax * sx + ay * sy - bi
        for ex, ey in poly:
            ev = ax * ex + ay * ey - bi
            if ev <= 0.0:
                if sv > 0.0:
                    t = sv / (sv - ev)
                    out.append((sx + t * (ex - sx), sy + t * (ey - sy)))
                out.append((ex, ey))
            elif sv <= 0.0:
                t = sv / (sv - ev)
                out.append((sx + t * (ex - sx), sy + t * (ey - sy)))
            sx, sy, sv = ex, ey, ev
        poly = out
    return np.array(poly, dtype=np.float64).reshape(-1, 2)


__all__ = [
    "BACKEND", "walk_batch", "visit_counts", "site_axis", "seidel_lp2", "clip_polygon",
    "mix64", "stream_key",
]
