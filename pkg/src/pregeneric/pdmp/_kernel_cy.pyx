# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Cython PDMP event-loop kernel: compiled twin of _kernel_py.run_pdmp.

Same algorithm, same counter-based RNG, same flow arithmetic; kept in
lockstep with the pure-Python kernel so either can serve a trajectory.
"""

from libc.math cimport log1p, log, sqrt, cos, isfinite, INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF MAXD = 8

cdef double TWO_PI = 6.283185307179586
cdef int REFRESH = 1
cdef int BOUNCE = 2


cdef inline unsigned long long _mix(unsigned long long z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(unsigned long long seed, unsigned long long channel,
                            unsigned long long counter) nogil:
    cdef unsigned long long PHI = 0x9E3779B97F4A7C15ULL
    cdef unsigned long long base = _mix(seed ^ _mix((channel + 1) * PHI))
    return <double>(_mix(base + counter * PHI) >> 11) * 1.1102230246251565e-16


cdef struct Model:
    int d
    double Gf[MAXD][MAXD]
    double gf0[MAXD]
    double Gu[MAXD][MAXD]
    double gu0[MAXD]
    double h_flow


cdef inline void grad_flow(Model* m, double* x, double* out) nogil:
    cdef int i, j
    cdef double s
    for i in range(m.d):
        s = m.gf0[i]
        for j in range(m.d):
            s += m.Gf[i][j] * x[j]
        out[i] = s


cdef inline double rate(Model* m, double* x, double* v) nogil:
    cdef int i, j
    cdef double s = 0.0, g
    for i in range(m.d):
        g = m.gu0[i]
        for j in range(m.d):
            g += m.Gu[i][j] * x[j]
        s += v[i] * g
    return s if s > 0.0 else 0.0


cdef inline void leapfrog(Model* m, double* x, double* v, double e) nogil:
    cdef int i
    cdef double gr[MAXD]
    grad_flow(m, x, gr)
    for i in range(m.d):
        v[i] -= 0.5 * e * gr[i]
        x[i] += e * v[i]
    grad_flow(m, x, gr)
    for i in range(m.d):
        v[i] -= 0.5 * e * gr[i]


cdef inline void flow_to(Model* m, double span, double* x, double* v,
                         double* cx, double* cv) nogil:
    cdef int i
    cdef long n_full, k
    cdef double rem
    for i in range(m.d):
        cx[i] = x[i]
        cv[i] = v[i]
    n_full = <long>(span / m.h_flow)
    for k in range(n_full):
        leapfrog(m, cx, cv, m.h_flow)
    rem = span - n_full * m.h_flow
    if rem > 1e-14:
        leapfrog(m, cx, cv, rem)


def run_pdmp(seed, int d, x0, v0, double T, double lambda_r,
             Gf, gf0, bint bounce_active, Gu, gu0,
             double h_flow, double skel_dt, double window_max):
    """Compiled twin of the pure-Python kernel; same inputs and outputs."""
    if d > MAXD:
        raise ValueError(f"kernel supports at most {MAXD} dimensions")

    cdef Model m
    cdef int i, j
    m.d = d
    m.h_flow = h_flow
    for i in range(d):
        m.gf0[i] = float(gf0[i])
        m.gu0[i] = float(gu0[i])
        for j in range(d):
            m.Gf[i][j] = float(Gf[i][j])
            m.Gu[i][j] = float(Gu[i][j])

    cdef double x[MAXD], v[MAXD]
    cdef double mx[MAXD], mv[MAXD]
    cdef double zx[MAXD], zv[MAXD]
    cdef double gr[MAXD]
    for i in range(d):
        x[i] = float(x0[i])
        v[i] = float(v0[i])

    cdef unsigned long long useed = <unsigned long long>(int(seed) & ((1 << 64) - 1))
    cdef unsigned long long c_rexp = 0, c_rnorm = 0, c_texp = 0, c_tacc = 0
    cdef long n_violations = 0

    cdef long n_skel_max = <long>(T / skel_dt + 2.5)
    skel_arr = np.empty((n_skel_max, 2 * d), dtype=np.float64)
    cdef double[:, ::1] skel = skel_arr
    cdef long n_rec = 0

    events = []

    cdef double t = 0.0, next_skel, next_refresh, t_end, u, u1, u2, r
    cdef double M, span, rem, s, lam, s_accept, seg_stop
    cdef double gnorm2, gv, coef, tiny = 1e-12
    cdef long n_full, k_done
    cdef bint is_refresh_end, accepted, violated

    for i in range(d):
        skel[0, i] = x[i]
        skel[0, d + i] = v[i]
    n_rec = 1
    next_skel = skel_dt

    if lambda_r > 0.0:
        u = _uniform(useed, 0, c_rexp)
        c_rexp += 1
        next_refresh = t - log1p(-u) / lambda_r
    else:
        next_refresh = INFINITY

    while t < T - tiny:
        t_end = next_refresh if next_refresh < T else T
        if t + window_max < t_end:
            t_end = t + window_max
        is_refresh_end = t_end == next_refresh

        accepted = False
        s_accept = 0.0
        if bounce_active:
            for i in range(d):
                mx[i] = x[i]
                mv[i] = v[i]
            M = rate(&m, mx, mv)
            span = t_end - t
            n_full = <long>(span / h_flow)
            for k_done in range(n_full):
                leapfrog(&m, mx, mv, h_flow)
                r = rate(&m, mx, mv)
                if r > M:
                    M = r
            rem = span - n_full * h_flow
            if rem > 1e-14:
                leapfrog(&m, mx, mv, rem)
                r = rate(&m, mx, mv)
                if r > M:
                    M = r
            M *= 1.5
            while M > 0.0:
                s = t
                violated = False
                while True:
                    u = _uniform(useed, 2, c_texp)
                    c_texp += 1
                    s -= log1p(-u) / M
                    if s >= t_end:
                        break
                    flow_to(&m, s - t, x, v, zx, zv)
                    lam = rate(&m, zx, zv)
                    if lam > M:
                        M *= 2.0
                        n_violations += 1
                        violated = True
                        break
                    u = _uniform(useed, 3, c_tacc)
                    c_tacc += 1
                    if u * M < lam:
                        accepted = True
                        s_accept = s
                        break
                if not violated:
                    break

        seg_stop = s_accept if accepted else t_end

        k_done = 0
        for i in range(d):
            mx[i] = x[i]
            mv[i] = v[i]
        while next_skel <= seg_stop + 1e-12 and next_skel <= T + 1e-12:
            span = next_skel - t
            n_full = <long>(span / h_flow)
            while k_done < n_full:
                leapfrog(&m, mx, mv, h_flow)
                k_done += 1
            rem = span - n_full * h_flow
            if rem > 1e-14:
                for i in range(d):
                    zx[i] = mx[i]
                    zv[i] = mv[i]
                leapfrog(&m, zx, zv, rem)
                for i in range(d):
                    skel[n_rec, i] = zx[i]
                    skel[n_rec, d + i] = zv[i]
            else:
                for i in range(d):
                    skel[n_rec, i] = mx[i]
                    skel[n_rec, d + i] = mv[i]
            n_rec += 1
            next_skel += skel_dt

        if seg_stop > t:
            flow_to(&m, seg_stop - t, x, v, zx, zv)
            for i in range(d):
                x[i] = zx[i]
                v[i] = zv[i]
        if not (isfinite(x[0]) and isfinite(v[0])):
            raise FloatingPointError(f"non-finite state at t={seg_stop}")

        if accepted:
            before = [x[i] for i in range(d)] + [v[i] for i in range(d)]
            gnorm2 = 0.0
            gv = 0.0
            for i in range(d):
                r = m.gu0[i]
                for j in range(d):
                    r += m.Gu[i][j] * x[j]
                gr[i] = r
                gnorm2 += r * r
                gv += v[i] * r
            coef = 2.0 * gv / gnorm2
            for i in range(d):
                v[i] -= coef * gr[i]
            events.append((seg_stop, BOUNCE, before,
                           [x[i] for i in range(d)] + [v[i] for i in range(d)]))
        elif is_refresh_end:
            before = [x[i] for i in range(d)] + [v[i] for i in range(d)]
            for i in range(d):
                u1 = _uniform(useed, 1, c_rnorm)
                c_rnorm += 1
                u2 = _uniform(useed, 1, c_rnorm)
                c_rnorm += 1
                r = sqrt(-2.0 * log(1.0 - u1))
                v[i] = r * cos(TWO_PI * u2)
            events.append((seg_stop, REFRESH, before,
                           [x[i] for i in range(d)] + [v[i] for i in range(d)]))
            u = _uniform(useed, 0, c_rexp)
            c_rexp += 1
            next_refresh = seg_stop - log1p(-u) / lambda_r
        t = seg_stop

    return skel_arr[:n_rec].copy(), events, n_violations
