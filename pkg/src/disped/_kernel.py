"""Compiled fixed-step RK4 loop for the dispatch dynamics.

State updates use compensated (Kahan) summation so that the conserved sum of
the auxiliary state does not drift over ~1e6 steps.

Kink handling: with ``sliding=True`` a unit within ``band`` of a box limit
uses the equivalent-control element of its generalized-gradient interval,
i.e. the value that keeps it on the limit (plus a reaching term that pulls it
onto the limit with time constant ``h``), clipped to the interval. Kink units
that neighbour each other are solved jointly. Elsewhere the plain selection
is used. ``sliding=False`` gives the plain selection
everywhere, which chatters across kinks with amplitude O(h / epsilon).
"""

from __future__ import annotations

import numpy as np
from numba import njit

SWEEPS = 100


@njit(cache=True)
def _gauss_seidel(A, d, lo, hi, q, kinks, nk, zeta):
    n = d.size
    for _ in range(SWEEPS):
        change = 0.0
        for m in range(nk):
            i = kinks[m]
            s = q[i]
            for j in range(n):
                s += A[i, j] * zeta[j]
            val = min(max(s / d[i], lo[i]), hi[i])
            change = max(change, abs(val - zeta[i]) / (1.0 + abs(val)))
            zeta[i] = val
        if change <= 1e-15:
            break


@njit(cache=True)
def _equivalent_control(A, d, lo, hi, q, kinks, nk, zeta, cmask, cinv, cvalid):
    """Solve ``zeta_i = clip((sum_j a_ij zeta_j + q_i) / d_i, lo_i, hi_i)`` over the kink units.

    Active-set iteration: unclipped units solve the linear system
    ``d_i zeta_i - sum_{j free} a_ij zeta_j = q_i + sum_{j fixed} a_ij zeta_j``
    exactly; violators are clipped, clipped units whose target re-enters
    their interval are released and the rest are moved to the bound their
    target lies beyond. The inverse for the current free set is cached
    across calls.
    """
    n = d.size
    free = np.zeros(n, dtype=np.bool_)
    for m in range(nk):
        free[kinks[m]] = True
    fidx = np.empty(n, dtype=np.int64)
    rhs_f = np.empty(n)
    for _ in range(2 * nk + 2):
        nf = 0
        for i in range(n):
            if free[i]:
                fidx[nf] = i
                nf += 1
        if nf == n:
            _gauss_seidel(A, d, lo, hi, q, kinks, nk, zeta)
            return
        if nf > 0:
            same = cvalid[0] == 1
            if same:
                for i in range(n):
                    if cmask[i] != free[i]:
                        same = False
                        break
            if not same:
                M = np.empty((nf, nf))
                for a in range(nf):
                    for bb in range(nf):
                        M[a, bb] = -A[fidx[a], fidx[bb]]
                    M[a, a] += d[fidx[a]]
                cinv[:nf, :nf] = np.linalg.inv(M)
                for i in range(n):
                    cmask[i] = free[i]
                cvalid[0] = 1
            for a in range(nf):
                i = fidx[a]
                s = q[i]
                for j in range(n):
                    if not free[j]:
                        s += A[i, j] * zeta[j]
                rhs_f[a] = s
            for a in range(nf):
                s = 0.0
                for bb in range(nf):
                    s += cinv[a, bb] * rhs_f[bb]
                zeta[fidx[a]] = s
        changed = False
        for m in range(nk):
            i = kinks[m]
            if free[i]:
                if zeta[i] < lo[i]:
                    zeta[i] = lo[i]
                    free[i] = False
                    changed = True
                elif zeta[i] > hi[i]:
                    zeta[i] = hi[i]
                    free[i] = False
                    changed = True
        if not changed:
            for m in range(nk):
                i = kinks[m]
                if not free[i]:
                    s = q[i]
                    for j in range(n):
                        s += A[i, j] * zeta[j]
                    t = s / d[i]
                    w = 1e-12 * (1.0 + abs(t))
                    if lo[i] + w < t < hi[i] - w:
                        free[i] = True
                        changed = True
                    else:
                        # a unit clipped in the same pass as a neighbour may sit on the wrong bound
                        side = hi[i] if t >= hi[i] - w else lo[i]
                        if side != zeta[i]:
                            zeta[i] = side
                            changed = True
        if not changed:
            return
    _gauss_seidel(A, d, lo, hi, q, kinks, nk, zeta)


@njit(cache=True)
def selection(P, u, A, d, b, c, pmin, pmax, inv_eps, h, band_factor, sliding, zeta, cmask, cinv, cvalid):
    n = P.size
    for i in range(n):
        g = b[i] + 2.0 * c[i] * P[i]
        if P[i] > pmax[i]:
            g += inv_eps
        elif P[i] < pmin[i]:
            g -= inv_eps
        zeta[i] = g
    if not sliding:
        return
    kinks = np.empty(n, dtype=np.int64)
    lo = np.empty(n)
    hi = np.empty(n)
    q = np.empty(n)
    nk = 0
    for i in range(n):
        if d[i] <= 0.0:
            continue
        band = band_factor * h * d[i] * inv_eps
        du = abs(P[i] - pmax[i])
        dl = abs(P[i] - pmin[i])
        g = b[i] + 2.0 * c[i] * P[i]
        if du <= band and du <= dl:
            lo[i], hi[i] = g, g + inv_eps
            q[i] = u[i] + (P[i] - pmax[i]) / h
        elif dl <= band:
            lo[i], hi[i] = g - inv_eps, g
            q[i] = u[i] + (P[i] - pmin[i]) / h
        else:
            continue
        kinks[nk] = i
        nk += 1
    if nk > 0:
        _equivalent_control(A, d, lo, hi, q, kinks, nk, zeta, cmask, cinv, cvalid)


@njit(cache=True)
def rhs(P, z, v, pl, drive, L, A, d, b, c, pmin, pmax, inv_eps, nu1, nu2, alpha, beta,
        centralized, sliding, h, band_factor, dP, dz, dv, zeta, u, cmask, cinv, cvalid):
    n = P.size
    if centralized:
        tot = 0.0
        for i in range(n):
            tot += P[i]
        fb = (pl - tot) / n
        for i in range(n):
            u[i] = fb
    else:
        for i in range(n):
            u[i] = nu1 * z[i]
    selection(P, u, A, d, b, c, pmin, pmax, inv_eps, h, band_factor, sliding, zeta, cmask, cinv, cvalid)
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += L[i, j] * zeta[j]
        dP[i] = -s + u[i]
    if centralized:
        for i in range(n):
            dz[i] = 0.0
            dv[i] = 0.0
        return
    for i in range(n):
        lz = 0.0
        for j in range(n):
            lz += L[i, j] * z[j]
        dz[i] = -alpha * z[i] - beta * lz - v[i] + nu2 * (pl * drive[i] - P[i])
        dv[i] = alpha * beta * lz


@njit(cache=True)
def _kahan(x, comp, inc):
    for i in range(x.size):
        y = inc[i] - comp[i]
        t = x[i] + y
        comp[i] = (t - x[i]) - y
        x[i] = t


@njit(cache=True)
def rk4_run(P, z, v, pl_grid, drive, L, b, c, pmin, pmax, inv_eps, nu1, nu2, alpha, beta,
            centralized, sliding, band_factor, h, nsteps, rec_steps, rec_P, rec_z, rec_v):
    """Advance ``(P, z, v)`` in place by ``nsteps`` steps of size ``h``.

    ``pl_grid[2k]``, ``pl_grid[2k+1]``, ``pl_grid[2k+2]`` hold the load at the
    start, midpoint and end of step ``k``. After step ``rec_steps[m]`` (1-based
    step count) the state goes into row ``m`` of the record arrays.
    """
    n = P.size
    A = np.empty((n, n))
    d = np.empty(n)
    for i in range(n):
        d[i] = L[i, i]
        for j in range(n):
            A[i, j] = -L[i, j] if i != j else 0.0
    k1 = np.empty((3, n))
    k2 = np.empty((3, n))
    k3 = np.empty((3, n))
    k4 = np.empty((3, n))
    Ps = np.empty(n)
    zs = np.empty(n)
    vs = np.empty(n)
    zeta = np.empty(n)
    u = np.empty(n)
    cP = np.zeros(n)
    cz = np.zeros(n)
    cv = np.zeros(n)
    inc = np.empty(n)
    cmask = np.zeros(n, dtype=np.bool_)
    cinv = np.empty((n, n))
    cvalid = np.zeros(1, dtype=np.int64)
    m = 0
    for k in range(nsteps):
        pl0 = pl_grid[2 * k]
        plh = pl_grid[2 * k + 1]
        pl1 = pl_grid[2 * k + 2]
        rhs(P, z, v, pl0, drive, L, A, d, b, c, pmin, pmax, inv_eps, nu1, nu2, alpha, beta,
            centralized, sliding, h, band_factor, k1[0], k1[1], k1[2], zeta, u, cmask, cinv, cvalid)
        for i in range(n):
            Ps[i] = P[i] + 0.5 * h * k1[0, i]
            zs[i] = z[i] + 0.5 * h * k1[1, i]
            vs[i] = v[i] + 0.5 * h * k1[2, i]
        rhs(Ps, zs, vs, plh, drive, L, A, d, b, c, pmin, pmax, inv_eps, nu1, nu2, alpha, beta,
            centralized, sliding, h, band_factor, k2[0], k2[1], k2[2], zeta, u, cmask, cinv, cvalid)
        for i in range(n):
            Ps[i] = P[i] + 0.5 * h * k2[0, i]
            zs[i] = z[i] + 0.5 * h * k2[1, i]
            vs[i] = v[i] + 0.5 * h * k2[2, i]
        rhs(Ps, zs, vs, plh, drive, L, A, d, b, c, pmin, pmax, inv_eps, nu1, nu2, alpha, beta,
            centralized, sliding, h, band_factor, k3[0], k3[1], k3[2], zeta, u, cmask, cinv, cvalid)
        for i in range(n):
            Ps[i] = P[i] + h * k3[0, i]
            zs[i] = z[i] + h * k3[1, i]
            vs[i] = v[i] + h * k3[2, i]
        rhs(Ps, zs, vs, pl1, drive, L, A, d, b, c, pmin, pmax, inv_eps, nu1, nu2, alpha, beta,
            centralized, sliding, h, band_factor, k4[0], k4[1], k4[2], zeta, u, cmask, cinv, cvalid)
        for i in range(n):
            inc[i] = h / 6.0 * (k1[0, i] + 2.0 * k2[0, i] + 2.0 * k3[0, i] + k4[0, i])
        _kahan(P, cP, inc)
        for i in range(n):
            inc[i] = h / 6.0 * (k1[1, i] + 2.0 * k2[1, i] + 2.0 * k3[1, i] + k4[1, i])
        _kahan(z, cz, inc)
        for i in range(n):
            inc[i] = h / 6.0 * (k1[2, i] + 2.0 * k2[2, i] + 2.0 * k3[2, i] + k4[2, i])
        _kahan(v, cv, inc)
        if m < rec_steps.size and rec_steps[m] == k + 1:
            for i in range(n):
                rec_P[m, i] = P[i] - cP[i]
                rec_z[m, i] = z[i] - cz[i]
                rec_v[m, i] = v[i] - cv[i]
            m += 1
    for i in range(n):
        P[i] -= cP[i]
        z[i] -= cz[i]
        v[i] -= cv[i]


@njit(cache=True)
def field_at(P, z, v, pl, drive, L, b, c, pmin, pmax, inv_eps, nu1, nu2, alpha, beta,
             centralized, sliding, band_factor, h):
    """One right-hand-side evaluation, for cross-checks against the NumPy fields."""
    n = P.size
    A = np.empty((n, n))
    d = np.empty(n)
    for i in range(n):
        d[i] = L[i, i]
        for j in range(n):
            A[i, j] = -L[i, j] if i != j else 0.0
    out = np.empty((3, n))
    zeta = np.empty(n)
    u = np.empty(n)
    cmask = np.zeros(n, dtype=np.bool_)
    cinv = np.empty((n, n))
    cvalid = np.zeros(1, dtype=np.int64)
    rhs(P, z, v, pl, drive, L, A, d, b, c, pmin, pmax, inv_eps, nu1, nu2, alpha, beta,
        centralized, sliding, h, band_factor, out[0], out[1], out[2], zeta, u, cmask, cinv, cvalid)
    return out
