"""Pure-Python PDMP event-loop kernel.

Algorithm, RNG and numerical conventions are mirrored line-by-line by the
Cython kernel (_kernel_cy.pyx); the two must stay interchangeable.  The
deterministic flow is velocity-Verlet with fixed step anchored at each
segment start; bounce events are generated by Poisson thinning against a
per-segment sampled bound (inflated 1.5x, doubled and restarted on
violation); all randomness comes from counter-based streams keyed by
(seed, channel), so replays and channel interleavings are reproducible.

Coefficients are affine: grad V_flow(x) = Gf x + gf0 and grad U_tilde(x) =
Gu x + gu0, which covers quadratic and tilted-quadratic models exactly.

Channels: 0 refresh exponentials, 1 refresh normals, 2 thinning
exponentials, 3 thinning acceptance uniforms.
"""

from __future__ import annotations

import math

MASK = (1 << 64) - 1
PHI = 0x9E3779B97F4A7C15
TWO_PI = 6.283185307179586

REFRESH = 1
BOUNCE = 2


def _mix(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def _u64(seed: int, channel: int, counter: int) -> int:
    base = _mix((seed & MASK) ^ _mix(((channel + 1) * PHI) & MASK))
    return _mix((base + counter * PHI) & MASK)


def uniform(seed: int, channel: int, counter: int) -> float:
    """Counter-based uniform in [0, 1): splitmix64 finalizer over counters."""
    return (_u64(seed, channel, counter) >> 11) * 1.1102230246251565e-16  # 2^-53


def run_pdmp(
    seed,
    d,
    x0,
    v0,
    T,
    lambda_r,
    Gf,
    gf0,
    bounce_active,
    Gu,
    gu0,
    h_flow,
    skel_dt,
    window_max,
):
    """Simulate one trajectory; returns (skeleton, events, n_violations).

    skeleton: list of 2d-lists sampled at 0, skel_dt, 2*skel_dt, ... <= T.
    events: list of (t, kind, before[2d], after[2d]).
    """
    x = [float(x0[i]) for i in range(d)]
    v = [float(v0[i]) for i in range(d)]
    Gf = [[float(Gf[i][j]) for j in range(d)] for i in range(d)]
    Gu = [[float(Gu[i][j]) for j in range(d)] for i in range(d)]
    gf0 = [float(gf0[i]) for i in range(d)]
    gu0 = [float(gu0[i]) for i in range(d)]

    c_rexp = 0
    c_rnorm = 0
    c_texp = 0
    c_tacc = 0
    n_violations = 0
    gscratch = [0.0] * d

    def grad_flow(xx):
        for i in range(d):
            s = gf0[i]
            for j in range(d):
                s += Gf[i][j] * xx[j]
            gscratch[i] = s

    def rate(xx, vv):
        s = 0.0
        for i in range(d):
            g = gu0[i]
            for j in range(d):
                g += Gu[i][j] * xx[j]
            s += vv[i] * g
        return s if s > 0.0 else 0.0

    def leapfrog(xx, vv, e):
        grad_flow(xx)
        for i in range(d):
            vv[i] -= 0.5 * e * gscratch[i]
            xx[i] += e * vv[i]
        grad_flow(xx)
        for i in range(d):
            vv[i] -= 0.5 * e * gscratch[i]

    def flow_to(span, xx, vv):
        """State after flowing for `span` from (xx, vv): full steps + partial."""
        cx = list(xx)
        cv = list(vv)
        n_full = int(span / h_flow)
        for _ in range(n_full):
            leapfrog(cx, cv, h_flow)
        rem = span - n_full * h_flow
        if rem > 1e-14:
            leapfrog(cx, cv, rem)
        return cx, cv

    skeleton = []
    events = []
    t = 0.0
    skeleton.append(list(x) + list(v))
    next_skel = skel_dt

    if lambda_r > 0.0:
        u = uniform(seed, 0, c_rexp)
        c_rexp += 1
        next_refresh = t - math.log1p(-u) / lambda_r
    else:
        next_refresh = math.inf

    tiny = 1e-12
    while t < T - tiny:
        t_end = next_refresh if next_refresh < T else T
        if t + window_max < t_end:
            t_end = t + window_max
        is_refresh_end = t_end == next_refresh

        accepted = False
        s_accept = 0.0
        if bounce_active:
            # Pass 1: sampled rate bound along the anchored flow path.
            mx = list(x)
            mv = list(v)
            M = rate(mx, mv)
            span = t_end - t
            n_full = int(span / h_flow)
            for _ in range(n_full):
                leapfrog(mx, mv, h_flow)
                r = rate(mx, mv)
                if r > M:
                    M = r
            rem = span - n_full * h_flow
            if rem > 1e-14:
                leapfrog(mx, mv, rem)
                r = rate(mx, mv)
                if r > M:
                    M = r
            M *= 1.5
            # Pass 2: thinning; on an observed rate above the bound, double
            # the bound and restart the segment (counters keep advancing).
            while M > 0.0:
                s = t
                violated = False
                while True:
                    u = uniform(seed, 2, c_texp)
                    c_texp += 1
                    s -= math.log1p(-u) / M
                    if s >= t_end:
                        break
                    zx, zv = flow_to(s - t, x, v)
                    lam = rate(zx, zv)
                    if lam > M:
                        M *= 2.0
                        n_violations += 1
                        violated = True
                        break
                    u = uniform(seed, 3, c_tacc)
                    c_tacc += 1
                    if u * M < lam:
                        accepted = True
                        s_accept = s
                        break
                if not violated:
                    break

        seg_stop = s_accept if accepted else t_end

        # Skeleton recording on the anchored grid (incremental marching with
        # side partial steps, arithmetic identical to flow_to).
        k_done = 0
        mx = list(x)
        mv = list(v)
        while next_skel <= seg_stop + 1e-12 and next_skel <= T + 1e-12:
            span = next_skel - t
            n_full = int(span / h_flow)
            while k_done < n_full:
                leapfrog(mx, mv, h_flow)
                k_done += 1
            rem = span - n_full * h_flow
            if rem > 1e-14:
                sx = list(mx)
                sv = list(mv)
                leapfrog(sx, sv, rem)
                skeleton.append(sx + sv)
            else:
                skeleton.append(list(mx) + list(mv))
            next_skel += skel_dt

        if seg_stop > t:
            x, v = flow_to(seg_stop - t, x, v)
        if not (math.isfinite(x[0]) and math.isfinite(v[0])):
            raise FloatingPointError(f"non-finite state at t={seg_stop}")

        if accepted:
            before = list(x) + list(v)
            gnorm2 = 0.0
            gv = 0.0
            for i in range(d):
                g = gu0[i]
                for j in range(d):
                    g += Gu[i][j] * x[j]
                gscratch[i] = g
                gnorm2 += g * g
                gv += v[i] * g
            coef = 2.0 * gv / gnorm2
            for i in range(d):
                v[i] -= coef * gscratch[i]
            events.append((seg_stop, BOUNCE, before, list(x) + list(v)))
        elif is_refresh_end:
            before = list(x) + list(v)
            for i in range(d):
                u1 = uniform(seed, 1, c_rnorm)
                c_rnorm += 1
                u2 = uniform(seed, 1, c_rnorm)
                c_rnorm += 1
                r = math.sqrt(-2.0 * math.log(1.0 - u1))
                v[i] = r * math.cos(TWO_PI * u2)
            events.append((seg_stop, REFRESH, before, list(x) + list(v)))
            u = uniform(seed, 0, c_rexp)
            c_rexp += 1
            next_refresh = seg_stop - math.log1p(-u) / lambda_r
        t = seg_stop

    return skeleton, events, n_violations
