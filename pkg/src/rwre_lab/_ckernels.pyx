# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; semantics mirror ``_pykernels`` bit for bit."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, int8_t
from libc.math cimport fabs

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t counter) noexcept nogil:
    return <double>(_mix64(key + (counter + 1) * GOLDEN) >> 11) * INV53


def walk_batch(const double[:, ::1] cum, const int64_t[::1] step_off,
               const int64_t[::1] axis_of, const int8_t[::1] state,
               const int64_t[::1] start_idx, const int64_t[::1] start_time,
               int64_t t_end, const uint64_t[::1] keys, int64_t cap,
               int64_t cover_mask):
    cdef Py_ssize_t n = start_idx.shape[0]
    cdef Py_ssize_t ndir = cum.shape[1]
    out_idx = np.empty(n, dtype=np.int64)
    out_steps = np.empty(n, dtype=np.int64)
    out_status = np.empty(n, dtype=np.int8)
    out_seen = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o_idx = out_idx
    cdef int64_t[::1] o_steps = out_steps
    cdef int8_t[::1] o_status = out_status
    cdef int64_t[::1] o_seen = out_seen
    cdef Py_ssize_t s, k
    cdef int64_t idx, steps, seen
    cdef int8_t code, st
    cdef double u
    with nogil:
        for s in range(n):
            idx = start_idx[s]
            steps = 0
            seen = 0
            while True:
                st = state[idx]
                if st < 0:
                    code = 4
                    break
                if st == 0:
                    code = 0
                    break
                if cover_mask != 0 and seen == cover_mask:
                    code = 2
                    break
                if start_time[s] + steps >= t_end:
                    code = 1
                    break
                if steps >= cap:
                    code = 3
                    break
                u = _uniform(keys[s], <uint64_t>steps)
                k = 0
                while k < ndir and cum[idx, k] <= u:
                    k += 1
                idx += step_off[k]
                seen |= (<int64_t>1) << axis_of[k]
                steps += 1
            o_idx[s] = idx
            o_steps[s] = steps
            o_status[s] = code
            o_seen[s] = seen
    return out_idx, out_steps, out_status, out_seen


cdef inline int64_t _axis_at(uint64_t env_key, int64_t* pos, int d) noexcept nogil:
    cdef uint64_t h = 0
    cdef int i
    for i in range(d):
        h = _mix64(h ^ (<uint64_t>pos[i] + <uint64_t>(i + 1) * GOLDEN))
    h = _mix64(h ^ env_key)
    return <int64_t>(((h >> 11) * <uint64_t>d) >> 53)


def site_axis(uint64_t env_key, coords, int d):
    cdef int64_t[:, ::1] c = np.ascontiguousarray(np.atleast_2d(coords), dtype=np.int64)
    out = np.empty(c.shape[0], dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef Py_ssize_t r
    for r in range(c.shape[0]):
        o[r] = _axis_at(env_key, &c[r, 0], d)
    return out


def visit_counts(int d, int law_code, uint64_t env_key, const uint64_t[::1] keys,
                 const int64_t[::1] checkpoints, int64_t halfwidth,
                 const double[::1] srw_cum):
    cdef Py_ssize_t n = keys.shape[0]
    cdef Py_ssize_t nc = checkpoints.shape[0]
    counts = np.zeros((n, nc), dtype=np.int64)
    status = np.zeros(n, dtype=np.int8)
    cdef int64_t[:, ::1] cnt = counts
    cdef int8_t[::1] stat = status
    cdef int64_t pos[16]
    cdef Py_ssize_t s, ci, c2
    cdef int64_t step, horizon = checkpoints[nc - 1], visits, ax, sgn, l1
    cdef int i, k, ndir = 2 * d
    cdef double u
    cdef bint exhausted
    with nogil:
        for s in range(n):
            for i in range(d):
                pos[i] = 0
            visits = 1
            ci = 0
            exhausted = False
            step = 1
            while step <= horizon:
                u = _uniform(keys[s], <uint64_t>(step - 1))
                if law_code == 0:
                    # guess from u, then correct: same count as a linear scan of a monotone cum
                    k = <int>(u * ndir)
                    while k > 0 and srw_cum[k - 1] > u:
                        k -= 1
                    while k < ndir and srw_cum[k] <= u:
                        k += 1
                    ax = k % d
                    sgn = 1 if k < d else -1
                else:
                    ax = _axis_at(env_key, pos, d)
                    sgn = 1 if u < 0.5 else -1
                pos[ax] += sgn
                if pos[ax] > halfwidth or pos[ax] < -halfwidth:
                    exhausted = True
                    stat[s] = 4
                    break
                if pos[ax] == 0:
                    l1 = 0
                    for i in range(d):
                        l1 += pos[i] if pos[i] >= 0 else -pos[i]
                    if l1 == 0:
                        visits += 1
                while ci < nc and checkpoints[ci] == step:
                    cnt[s, ci] = visits
                    ci += 1
                step += 1
            if exhausted:
                for c2 in range(ci, nc):
                    cnt[s, c2] = visits
    return counts, status


def _shuffle(Py_ssize_t m, uint64_t key):
    order = np.arange(m, dtype=np.int64)
    cdef int64_t[::1] o = order
    cdef Py_ssize_t i, j
    cdef int64_t tmp
    cdef uint64_t c = 0
    for i in range(m - 1, 0, -1):
        j = <Py_ssize_t>(_uniform(key, c) * (i + 1))
        c += 1
        tmp = o[i]
        o[i] = o[j]
        o[j] = tmp
    return order


cdef double ROUND = 1e-12


def seidel_lp2(A_in, b_in, box, uint64_t key, double eps):
    cdef double cx = 1.0, cy = 0.6180339887498949
    cdef double xlo = box[0], xhi = box[1], ylo = box[2], yhi = box[3]
    A_np = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef Py_ssize_t m = A_np.shape[0]
    A_all_np = np.empty((m + 4, 2), dtype=np.float64)
    A_all_np[:4] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
    A_all_np[4:] = A_np
    b_all_np = np.empty(m + 4, dtype=np.float64)
    b_all_np[:4] = [xhi, -xlo, yhi, -ylo]
    b_all_np[4:] = np.asarray(b_in, dtype=np.float64) + eps
    order_np = np.concatenate([np.arange(4, dtype=np.int64), 4 + _shuffle(m, key)])
    cdef double[:, ::1] Aa = A_all_np
    cdef double[::1] ba = b_all_np
    cdef int64_t[::1] order = order_np
    cdef double vx = xhi if cx > 0 else xlo
    cdef double vy = yhi if cy > 0 else ylo
    cdef Py_ssize_t pos, q, i, j
    cdef double ax, ay, bi, nrm2, px, py, dx, dy, tlo, thi, coef, rhs, t
    cdef double inf = float("inf")
    for pos in range(4, m + 4):
        i = order[pos]
        ax = Aa[i, 0]
        ay = Aa[i, 1]
        bi = ba[i]
        if ax * vx + ay * vy <= bi + ROUND * (1.0 + fabs(bi)):
            continue
        nrm2 = ax * ax + ay * ay
        if nrm2 == 0.0:
            return False, (vx, vy)
        px = ax * bi / nrm2
        py = ay * bi / nrm2
        dx = -ay
        dy = ax
        tlo = -inf
        thi = inf
        for q in range(pos):
            j = order[q]
            coef = Aa[j, 0] * dx + Aa[j, 1] * dy
            rhs = ba[j] - (Aa[j, 0] * px + Aa[j, 1] * py)
            if coef > 1e-300:
                if rhs / coef < thi:
                    thi = rhs / coef
            elif coef < -1e-300:
                if rhs / coef > tlo:
                    tlo = rhs / coef
            elif rhs < -ROUND * (1.0 + fabs(ba[j])):
                return False, (vx, vy)
        if tlo > thi:
            if tlo - thi > ROUND * (1.0 + fabs(tlo) + fabs(thi)):
                return False, (vx, vy)
            t = 0.5 * (tlo + thi)
        else:
            t = thi if (cx * dx + cy * dy) > 0 else tlo
        vx = px + t * dx
        vy = py + t * dy
    return True, (vx, vy)


def clip_polygon(A_in, b_in, box, double eps):
    cdef double[:, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t cap = m + 8
    buf_a = np.empty((cap, 2), dtype=np.float64)
    buf_b = np.empty((cap, 2), dtype=np.float64)
    cdef double[:, ::1] P = buf_a
    cdef double[:, ::1] Q = buf_b
    cdef double[:, ::1] T
    cdef Py_ssize_t n = 4, nq, c, v
    cdef double ax, ay, bi, sx, sy, sv, ex, ey, ev, t
    P[0, 0] = box[0]; P[0, 1] = box[2]
    P[1, 0] = box[1]; P[1, 1] = box[2]
    P[2, 0] = box[1]; P[2, 1] = box[3]
    P[3, 0] = box[0]; P[3, 1] = box[3]
    cdef bint swapped = False
    for c in range(m):
        if n == 0:
            break
        ax = A[c, 0]
        ay = A[c, 1]
        bi = b[c] + eps
        nq = 0
        sx = P[n - 1, 0]
        sy = P[n - 1, 1]
        sv = ax * sx + ay * sy - bi
        for v in range(n):
            ex = P[v, 0]
            ey = P[v, 1]
            ev = ax * ex + ay * ey - bi
            if ev <= 0.0:
                if sv > 0.0:
                    t = sv / (sv - ev)
                    Q[nq, 0] = sx + t * (ex - sx)
                    Q[nq, 1] = sy + t * (ey - sy)
                    nq += 1
                Q[nq, 0] = ex
                Q[nq, 1] = ey
                nq += 1
            elif sv <= 0.0:
                t = sv / (sv - ev)
                Q[nq, 0] = sx + t * (ex - sx)
                Q[nq, 1] = sy + t * (ey - sy)
                nq += 1
            sx = ex
            sy = ey
            sv = ev
        T = P
        P = Q
        Q = T
        swapped = not swapped
        n = nq
    res = buf_b if swapped else buf_a
    return np.array(res[:n], dtype=np.float64)
