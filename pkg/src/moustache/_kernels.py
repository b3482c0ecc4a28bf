"""Compiled inner loops for the SDE integrators and the cycle engine.

Everything here is numba-jitted scalar code driven by a numpy Generator;
wrappers in :mod:`moustache.sde` and :mod:`moustache.regeneration` own
validation, array packaging and parallel dispatch.

Step-control policy shared by all natural-time integrators:

* stiffness pre-halving: a step is halved (before drawing noise) until the
  deterministic displacement ``drift * h`` is at most ``ETA`` times the
  distance to the lower boundary, so the explicit scheme cannot overshoot
  the repulsive boundary layer;
* landing rule: a proposed step that lands at or below boundary + guard is
  rejected and retried with half the step and a fresh increment.

Both kinds of halving count toward ``max_halvings``.  The same policy, with
the drift-denominator distance in place of the boundary gap, applies in
geometric time.

Interior extremes of accepted steps are sampled from the exact Brownian
bridge law given the endpoints; level crossings use the analogous bridge
crossing probability.  This removes the O(sqrt(dt)) grid bias from minimum,
maximum and hitting statistics, which the cycle law checks are sensitive to.
"""

import numpy as np
from numba import njit

# Fraction of the boundary gap a drift displacement may take in one step.
ETA = 0.5
# Fraction of the boundary gap the one-step noise scale sqrt(h) may take.
# Without this cap the Euler chain jumps multiplicative scales near the
# repelling boundary in a single step and grossly inflates deep-excursion
# (hence record and dip) probabilities; with it, near-boundary steps are
# geometric in the gap and first-passage laws converge at fixed base dt.
KAPPA = 0.125

# Status codes returned by kernels (0 means success).
OK = 0
HALVING_EXHAUSTED = 1
NONFINITE = 2
DRIFT_DOMAIN = 3
THRASH = 4
STACK_OVERFLOW = 5

# Floor applied to sampled path minima of the radial process; keeps records
# strictly above the absorbing level 1 (the continuous process never reaches
# it, discrete bridges can).
_MIN_FLOOR = 1.0 + 1e-9


@njit(cache=True)
def _drift_r(x):
    return 1.0 / (x * np.log(x)) + 0.5 / x


@njit(cache=True)
def _drift_bessel(x, d):
    return 0.5 * (d - 1.0) / x


@njit(cache=True)
def _bridge_min(a, b, h, q):
    # minimum of a unit-diffusion bridge from a to b over time h; q in (0, 1]
    d = a - b
    return 0.5 * (a + b - np.sqrt(d * d - 2.0 * h * np.log(q)))


@njit(cache=True)
def _bridge_max(a, b, h, q):
    d = a - b
    return 0.5 * (a + b + np.sqrt(d * d - 2.0 * h * np.log(q)))


@njit(cache=True)
def _nat_step(x, h0, lower, dparam, guard, max_halvings, rng):
    """One accepted natural-time Euler step from x.

    dparam < 0 selects the radial drift (boundary at 1); otherwise the
    Bessel drift of dimension dparam (boundary at 0).
    Returns (x_new, h_used, status).
    """
    if dparam < 0.0:
        b = _drift_r(x)
    else:
        b = _drift_bessel(x, dparam)
    h = h0
    halv = 0
    gap = x - lower
    cap = KAPPA * gap
    while b * h > ETA * gap or h > cap * cap:
        if halv >= max_halvings:
            return x, 0.0, HALVING_EXHAUSTED
        h *= 0.5
        halv += 1
    while True:
        xp = x + b * h + np.sqrt(h) * rng.standard_normal()
        if not np.isfinite(xp):
            return x, 0.0, NONFINITE
        if xp > lower + guard:
            return xp, h, OK
        if halv >= max_halvings:
            return x, 0.0, HALVING_EXHAUSTED
        h *= 0.5
        halv += 1


@njit(cache=True)
def _geo_step(x, s, h0, guard, max_halvings, rng):
    """One accepted geometric-time Euler step at absolute geometric time s.

    The drift denominator ln(x) + s/2 equals ln of the represented radial
    value, so den <= 0 means the radial path is at or inside the unit disk;
    the landing rule keeps the radial value above 1 + guard/2, mirroring the
    natural-time boundary guard.
    """
    den = np.log(x) + 0.5 * s
    den_floor = 0.5 * np.log1p(guard)
    if den < den_floor:
        return x, 0.0, DRIFT_DOMAIN
    b = 0.5 / x - 0.5 * x + 1.0 / (x * den)
    ab = abs(b)
    scale = x * min(1.0, den)
    cap = KAPPA * scale
    h = h0
    halv = 0
    while ab * h > ETA * scale or h > cap * cap:
        if halv >= max_halvings:
            return x, 0.0, HALVING_EXHAUSTED
        h *= 0.5
        halv += 1
    while True:
        xp = x + b * h + np.sqrt(h) * rng.standard_normal()
        if not np.isfinite(xp):
            return x, 0.0, NONFINITE
        # the only genuine boundary is the represented radial value at 1;
        # X itself may sit many orders below 1 when s is large
        if xp > 0.0 and np.log(xp) + 0.5 * (s + h) > den_floor:
            return xp, h, OK
        if halv >= max_halvings:
            return x, 0.0, HALVING_EXHAUSTED
        h *= 0.5
        halv += 1


@njit(cache=True)
def _grow(arr, n):
    out = np.empty(2 * arr.shape[0], dtype=arr.dtype)
    out[:n] = arr[:n]
    return out


@njit(cache=True)
def _natural_path(x0, horizon, dt, lower, dparam, guard, max_halvings, rng):
    """Full natural-time trajectory on [0, horizon]; returns (t, x, n, status)."""
    cap = int(horizon / dt * 1.25) + 64
    ts = np.empty(cap)
    xs = np.empty(cap)
    ts[0] = 0.0
    xs[0] = x0
    n = 1
    t = 0.0
    x = x0
    while t < horizon:
        h0 = horizon - t
        if h0 > dt:
            h0 = dt
        x, h, st = _nat_step(x, h0, lower, dparam, guard, max_halvings, rng)
        if st != OK:
            return ts, xs, n, st
        t += h
        if n >= cap:
            ts = _grow(ts, n)
            xs = _grow(xs, n)
            cap = ts.shape[0]
        ts[n] = t
        xs[n] = x
        n += 1
    return ts, xs, n, OK


@njit(cache=True)
def _x_path(x0, s0, horizon, dt, guard, max_halvings, rng):
    """Geometric-time trajectory on [s0, s0 + horizon]; returns (s, x, n, status)."""
    cap = int(horizon / dt * 1.25) + 64
    ts = np.empty(cap)
    xs = np.empty(cap)
    ts[0] = s0
    xs[0] = x0
    n = 1
    ds = 0.0
    x = x0
    while ds < horizon:
        h0 = horizon - ds
        if h0 > dt:
            h0 = dt
        x, h, st = _geo_step(x, s0 + ds, h0, guard, max_halvings, rng)
        if st != OK:
            return ts, xs, n, st
        ds += h
        if n >= cap:
            ts = _grow(ts, n)
            xs = _grow(xs, n)
            cap = ts.shape[0]
        ts[n] = s0 + ds
        xs[n] = x
        n += 1
    return ts, xs, n, OK


@njit(cache=True)
def _natural_endpoints(x0, horizon, dt, lower, dparam, guard, max_halvings,
                       n, rng, out):
    for i in range(n):
        x = x0
        t = 0.0
        while t < horizon:
            h0 = horizon - t
            if h0 > dt:
                h0 = dt
            x, h, st = _nat_step(x, h0, lower, dparam, guard, max_halvings, rng)
            if st != OK:
                return st
            t += h
        out[i] = x
    return OK


@njit(cache=True)
def _x_endpoints(x0, s0, horizon, dt, guard, max_halvings, n, rng, out):
    for i in range(n):
        x = x0
        ds = 0.0
        while ds < horizon:
            h0 = horizon - ds
            if h0 > dt:
                h0 = dt
            x, h, st = _geo_step(x, s0 + ds, h0, guard, max_halvings, rng)
            if st != OK:
                return st
            ds += h
        out[i] = x
    return OK


@njit(cache=True)
def _exit_hits(a, r0, b, dt, guard, max_halvings, n, rng):
    """Count paths from r0 absorbed at b before a, with bridge-crossing
    absorption checks at both barriers.  Returns (hits, status)."""
    hits = 0
    for i in range(n):
        x = r0
        while True:
            x2, h, st = _nat_step(x, dt, 1.0, -1.0, guard, max_halvings, rng)
            if st != OK:
                return hits, st
            if x2 <= a:
                break
            if x2 >= b:
                hits += 1
                break
            # interior crossings missed by the endpoints
            pa = np.exp(-2.0 * (x - a) * (x2 - a) / h)
            if rng.random() < pa:
                break
            pb = np.exp(-2.0 * (b - x) * (b - x2) / h)
            if rng.random() < pb:
                hits += 1
                break
            x = x2
    return hits, OK


@njit(cache=True)
def _coupled_paths(delta, horizon, dt, guard, max_halvings, rng):
    """Radial, BES(2) and BES(2+delta) paths driven by one Brownian motion.

    All three share the time grid; a halving requested by any process halves
    the step for all (this joint control is what keeps bes2 <= r exact at
    every grid point).  Returns (t, r, bes2, bes2d, n, status).
    """
    cap = int(horizon / dt * 1.25) + 64
    ts = np.empty(cap)
    rs = np.empty(cap)
    b2s = np.empty(cap)
    b2ds = np.empty(cap)
    # the radial component starts on its singular entrance boundary; apply
    # the deterministic displacement rule (the Bessel boundary is at 0, so
    # their starts stay put and bes2 <= r holds from the first point)
    xr = 1.0 + guard
    x2 = 1.0
    x2d = 1.0
    ts[0] = 0.0
    rs[0] = xr
    b2s[0] = x2
    b2ds[0] = x2d
    n = 1
    t = 0.0
    d2d = 2.0 + delta
    while t < horizon:
        h = horizon - t
        if h > dt:
            h = dt
        halv = 0
        br = _drift_r(xr)
        bb2 = _drift_bessel(x2, 2.0)
        bb2d = _drift_bessel(x2d, d2d)
        gr = KAPPA * (xr - 1.0)
        g2 = KAPPA * x2
        g2d = KAPPA * x2d
        while (br * h > ETA * (xr - 1.0) or bb2 * h > ETA * x2
               or bb2d * h > ETA * x2d or h > gr * gr or h > g2 * g2
               or h > g2d * g2d):
            if halv >= max_halvings:
                return ts, rs, b2s, b2ds, n, HALVING_EXHAUSTED
            h *= 0.5
            halv += 1
        while True:
            w = np.sqrt(h) * rng.standard_normal()
            yr = xr + br * h + w
            y2 = x2 + bb2 * h + w
            y2d = x2d + bb2d * h + w
            if not (np.isfinite(yr) and np.isfinite(y2) and np.isfinite(y2d)):
                return ts, rs, b2s, b2ds, n, NONFINITE
            if yr > 1.0 + guard and y2 > guard and y2d > guard:
                break
            if halv >= max_halvings:
                return ts, rs, b2s, b2ds, n, HALVING_EXHAUSTED
            h *= 0.5
            halv += 1
        xr = yr
        x2 = y2
        x2d = y2d
        t += h
        if n >= cap:
            ts = _grow(ts, n)
            rs = _grow(rs, n)
            b2s = _grow(b2s, n)
            b2ds = _grow(b2ds, n)
            cap = ts.shape[0]
        ts[n] = t
        rs[n] = xr
        b2s[n] = x2
        b2ds[n] = x2d
        n += 1
    return ts, rs, b2s, b2ds, n, OK


@njit(cache=True)
def _one_cycle(r, k, dt_nat, dt_geo, guard, max_halvings, margin,
               switch_budget, rng):
    """Simulate one regeneration cycle started on the boundary.

    Hybrid scheme: natural time from 1 + guard until the radial value first
    exceeds r^2 (records are tracked from the first hit of r, where the
    state is restarted at exactly r via the strong Markov property), then
    geometric time until the value reaches r^k.  A proposed geometric step
    whose bridge minimum undercuts min*(1+margin) is discarded and the walk
    re-enters natural time at the pre-step state until it re-exceeds
    r^2 * min.

    Returns (H, T, A, B, nswitch, status).
    """
    lnr = np.log(r)
    close_level = np.exp(k * lnr)

    # boundary entrance and first passage to r
    x = 1.0 + guard
    t = 0.0
    while x < r:
        x2, h, st = _nat_step(x, dt_nat, 1.0, -1.0, guard, max_halvings, rng)
        if st != OK:
            return 0.0, 0.0, 0.0, 0.0, 0, st
        if x2 >= r:
            t += h * (r - x) / (x2 - x)
            x = r
            break
        x = x2
        t += h

    hit_time = t
    m = r            # running future minimum (record candidate)
    t_rec = t        # grid time (left endpoint) of the current record
    b_rec = r        # running maximum frozen at the current record
    bmax = r         # running maximum over [H, now]
    nswitch = 0
    in_dip = False
    natural = True
    s = 0.0

    while True:
        if natural:
            x2, h, st = _nat_step(x, dt_nat, 1.0, -1.0, guard, max_halvings, rng)
            if st != OK:
                return hit_time, 0.0, 0.0, 0.0, nswitch, st
            bmin = _bridge_min(x, x2, h, 1.0 - rng.random())
            if bmin < _MIN_FLOOR:
                bmin = _MIN_FLOOR
            if bmin < m:
                m = bmin
                t_rec = t
                b_rec = bmax
            bmx = _bridge_max(x, x2, h, 1.0 - rng.random())
            if bmx > bmax:
                bmax = bmx
            x = x2
            t += h
            if x >= close_level:
                break
            exit_level = r * r * m if in_dip else r * r
            if x >= exit_level:
                natural = False
                s = np.log1p(t)
                x = x * np.exp(-0.5 * s)
                nswitch += 1
                if nswitch > switch_budget:
                    return hit_time, 0.0, 0.0, 0.0, nswitch, THRASH
        else:
            x2, h, st = _geo_step(x, s, dt_geo, guard, max_halvings, rng)
            if st != OK:
                return hit_time, 0.0, 0.0, 0.0, nswitch, st
            ef0 = np.exp(0.5 * s)
            xbmin = _bridge_min(x, x2, h, 1.0 - rng.random())
            thr = m * (1.0 + margin)
            if ef0 * xbmin < thr:
                # the step's bridge first-passes the dip threshold: discard
                # the remainder and resume in natural time exactly at the
                # threshold (strong Markov), where records can be resolved
                if x * ef0 > bmax:
                    bmax = x * ef0
                natural = True
                in_dip = True
                t = np.expm1(s)
                x = thr
                nswitch += 1
                if nswitch > switch_budget:
                    return hit_time, 0.0, 0.0, 0.0, nswitch, THRASH
                continue
            ef1 = np.exp(0.5 * (s + h))
            xbmax = ef1 * _bridge_max(x, x2, h, 1.0 - rng.random())
            if xbmax > bmax:
                bmax = xbmax
            x = x2
            s += h
            if x * ef1 >= close_level:
                break

    if bmax > close_level:
        bmax = close_level
    if b_rec > close_level:
        b_rec = close_level
    return hit_time, t_rec, m, b_rec, nswitch, OK


@njit(cache=True)
def _cycles_batch(r, k, n, dt_nat, dt_geo, guard, max_halvings, margin,
                  switch_budget, rng, H, T, A, B, NSW):
    for i in range(n):
        h, t, a, b, nsw, st = _one_cycle(r, k, dt_nat, dt_geo, guard,
                                         max_halvings, margin, switch_budget,
                                         rng)
        if st != OK:
            return st
        H[i] = h
        T[i] = t
        A[i] = a
        B[i] = b
        NSW[i] = nsw
    return OK


@njit(cache=True)
def _direct_renewal(r, n_cycles, k_cert, dt_nat, dt_geo, guard, max_halvings,
                    margin, switch_budget, rng, lnA_out, lnT_out):
    """Sequential renewal extraction from one absolute-scale trajectory.

    No per-cycle rescaling: the walk runs from the boundary and the renewal
    records are read off the single path.  Because the n-th record is only
    certain once the path has risen far above it, a stack of pending record
    candidates is kept: candidate j+1 opens at the first upcrossing of
    r * m_j after the current record time of candidate j, a drop below m_j
    re-records candidate j and discards everything stacked above it, and the
    oldest candidate is certified once the path exceeds m * r^k_cert.
    Natural-time steps are scaled by the square of the working record level,
    which keeps the per-cycle step count flat as the levels grow.

    Fills lnA_out[0:n_cycles], lnT_out[0:n_cycles]; returns status.
    """
    lnr = np.log(r)
    cap = 4096
    stack_m = np.empty(cap)
    stack_t = np.empty(cap)
    top = -1               # index of newest pending candidate
    ncert = 0              # certified cycles so far

    x = 1.0 + guard
    t = 0.0
    natural = True
    s = 0.0
    nswitch = 0

    while True:
        if natural:
            # Brownian scaling: cycle n runs at steps dt * A_{n-1}^2, the
            # parent record level, matching the unit-cycle discretization
            scale = stack_m[top - 1] if top >= 1 else 1.0
            h0 = dt_nat * scale * scale
            x2, h, st = _nat_step(x, h0, 1.0, -1.0, guard, max_halvings, rng)
            if st != OK:
                return st
            bmin = _bridge_min(x, x2, h, 1.0 - rng.random())
            if bmin < _MIN_FLOOR:
                bmin = _MIN_FLOOR
            # a drop below a lower pending level re-records that candidate
            # and invalidates the ones stacked above it
            while top >= 1 and bmin < stack_m[top - 1]:
                top -= 1
            if top >= 0 and bmin < stack_m[top]:
                stack_m[top] = bmin
                stack_t[top] = t
            x = x2
            t += h
            # upcrossing of r * m_top opens the next candidate; restart
            # exactly at the level (strong Markov)
            lvl = r * (stack_m[top] if top >= 0 else 1.0)
            if x >= lvl:
                x = lvl
                if top + 1 >= cap:
                    return STACK_OVERFLOW
                top += 1
                stack_m[top] = lvl
                stack_t[top] = t
            # certify the oldest candidate(s)
            while top >= 1 and x >= stack_m[0] * np.exp(k_cert * lnr):
                lnA_out[ncert] = np.log(stack_m[0])
                lnT_out[ncert] = np.log(stack_t[0])
                ncert += 1
                if ncert >= n_cycles:
                    return OK
                for j in range(top):
                    stack_m[j] = stack_m[j + 1]
                    stack_t[j] = stack_t[j + 1]
                top -= 1
            m_top = stack_m[top] if top >= 0 else 1.0
            if x >= r * r * m_top:
                natural = False
                s = np.log1p(t)
                x = x * np.exp(-0.5 * s)
                nswitch += 1
                if nswitch > switch_budget:
                    return THRASH
        else:
            x2, h, st = _geo_step(x, s, dt_geo, guard, max_halvings, rng)
            if st != OK:
                return st
            ef0 = np.exp(0.5 * s)
            xbmin = _bridge_min(x, x2, h, 1.0 - rng.random())
            m_top = stack_m[top] if top >= 0 else 1.0
            thr = m_top * (1.0 + margin)
            if ef0 * xbmin < thr:
                # first passage of the dip threshold inside this step:
                # resume natural time exactly at the threshold
                natural = True
                t = np.expm1(s)
                x = thr
                nswitch += 1
                if nswitch > switch_budget:
                    return THRASH
                continue
            x = x2
            s += h
            rv = x * np.exp(0.5 * s)
            # candidates keep opening during the geometric ascent; a fresh
            # candidate sits below its own dip threshold, so its records
            # must be tracked in natural time (as after any first passage)
            lvl = r * (stack_m[top] if top >= 0 else 1.0)
            if rv >= lvl:
                if top + 1 >= cap:
                    return STACK_OVERFLOW
                top += 1
                stack_m[top] = lvl
                stack_t[top] = np.expm1(s)
                natural = True
                t = np.expm1(s)
                x = lvl
                nswitch += 1
                if nswitch > switch_budget:
                    return THRASH
                continue
            while top >= 1 and rv >= stack_m[0] * np.exp(k_cert * lnr):
                lnA_out[ncert] = np.log(stack_m[0])
                lnT_out[ncert] = np.log(stack_t[0])
                ncert += 1
                if ncert >= n_cycles:
                    return OK
                for j in range(top):
                    stack_m[j] = stack_m[j + 1]
                    stack_t[j] = stack_t[j + 1]
                top -= 1
