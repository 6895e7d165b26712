"""Fixed-step RK4 integration of the link-density ODE.

Written with scalar loops over flat arrays so that numba can compile it; without
numba the same code runs as plain Python (slowly).
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn

KIND_EXP = 0
KIND_QUAD = 1

EVENT_SATURATED = 0
EVENT_CUT_OUT = 1


@njit(cache=True)
def _flows(rho, kind, fmax, par, sat, blocked, f):
    for e in range(rho.shape[0]):
        if sat[e] or blocked[e]:
            f[e] = 0.0
        elif kind[e] == 0:
            f[e] = -fmax[e] * math.expm1(-par[e] * rho[e])
        else:
            r = min(max(rho[e], 0.0), par[e])
            f[e] = 4.0 * fmax[e] * r * (par[e] - r) / (par[e] * par[e])


@njit(cache=True)
def _rhs(rho, kind, fmax, par, sat, blocked, head, out_ptr, out_idx, dest,
         logw, rate, ref, cap, lam0, f, lam, z, drho):
    _flows(rho, kind, fmax, par, sat, blocked, f)
    n_links = rho.shape[0]
    for v in range(lam.shape[0]):
        lam[v] = 0.0
    lam[0] = lam0
    for e in range(n_links):
        lam[head[e]] += f[e]
    lost = 0.0
    for v in range(lam.shape[0]):
        if v == dest:
            continue
        lo = out_ptr[v]
        hi = out_ptr[v + 1]
        zmax = -np.inf
        for k in range(lo, hi):
            e = out_idx[k]
            if sat[e] or rho[e] >= cap[e]:
                z[k] = -np.inf
            else:
                z[k] = logw[e] - rate[e] * (rho[e] - ref[e])
            if z[k] > zmax:
                zmax = z[k]
        if zmax == -np.inf:
            lost += lam[v]
            for k in range(lo, hi):
                e = out_idx[k]
                drho[e] = -f[e]
        else:
            tot = 0.0
            for k in range(lo, hi):
                z[k] = math.exp(z[k] - zmax)
                tot += z[k]
            for k in range(lo, hi):
                e = out_idx[k]
                drho[e] = lam[v] * z[k] / tot - f[e]
    return lam[dest], lost


@njit(cache=True)
def integrate(rho0, kind, fmax, par, head, out_ptr, out_idx, dest,
              logw, rate, ref, cap, lam0, cascade,
              h, n_steps, check_stride, window_checks, conv_tol, stop_on_converge,
              trace_stride):
    n_links = rho0.shape[0]
    n_nodes = out_ptr.shape[0] - 1
    rho = rho0.copy()
    sat = np.zeros(n_links, dtype=np.bool_)
    blocked = np.zeros(n_links, dtype=np.bool_)
    f = np.empty(n_links)
    lam = np.empty(n_nodes)
    z = np.empty(out_idx.shape[0])
    k1 = np.empty(n_links)
    k2 = np.empty(n_links)
    k3 = np.empty(n_links)
    k4 = np.empty(n_links)
    tmp = np.empty(n_links)

    n_trace = n_steps // trace_stride + 2 if trace_stride > 0 else 0
    trace_t = np.empty(n_trace)
    trace_rho = np.empty((n_trace, n_links))
    trace_f = np.empty((n_trace, n_links))
    trace_lam = np.empty(n_trace)
    n_rec = 0

    ring = window_checks + 1
    hist_f = np.empty((ring, n_links))
    hist_int = np.empty(ring)
    n_checks = 0

    ev_step = np.empty(2 * n_links, dtype=np.int64)
    ev_link = np.empty(2 * n_links, dtype=np.int64)
    ev_kind = np.empty(2 * n_links, dtype=np.int64)
    n_ev = 0

    # compensated sums: the integrals run over up to 10^6 steps
    out_int = 0.0
    out_c = 0.0
    lost_int = 0.0
    lost_c = 0.0
    clamp_mass = 0.0
    converged_step = -1
    nonfinite = False
    lam_mean = np.nan
    step = 0

    while True:
        # observation of the current state
        if trace_stride > 0 and step % trace_stride == 0:
            _flows(rho, kind, fmax, par, sat, blocked, f)
            ln = 0.0
            for e in range(n_links):
                if head[e] == dest:
                    ln += f[e]
            trace_t[n_rec] = step * h
            trace_rho[n_rec, :] = rho
            trace_f[n_rec, :] = f
            trace_lam[n_rec] = ln
            n_rec += 1
        if step % check_stride == 0:
            _flows(rho, kind, fmax, par, sat, blocked, f)
            slot = n_checks % ring
            hist_f[slot, :] = f
            hist_int[slot] = out_int
            if n_checks >= window_checks:
                old = (n_checks - window_checks) % ring
                dev = 0.0
                for e in range(n_links):
                    d = abs(f[e] - hist_f[old, e])
                    if d > dev:
                        dev = d
                lam_mean = (out_int - hist_int[old]) / (window_checks * check_stride * h)
                if dev < conv_tol and converged_step < 0:
                    converged_step = step
            n_checks += 1
            if converged_step >= 0 and stop_on_converge:
                break
        if step >= n_steps:
            break

        ln1, ls1 = _rhs(rho, kind, fmax, par, sat, blocked, head, out_ptr, out_idx, dest,
                        logw, rate, ref, cap, lam0, f, lam, z, k1)
        for e in range(n_links):
            tmp[e] = rho[e] + 0.5 * h * k1[e]
        ln2, ls2 = _rhs(tmp, kind, fmax, par, sat, blocked, head, out_ptr, out_idx, dest,
                        logw, rate, ref, cap, lam0, f, lam, z, k2)
        for e in range(n_links):
            tmp[e] = rho[e] + 0.5 * h * k2[e]
        ln3, ls3 = _rhs(tmp, kind, fmax, par, sat, blocked, head, out_ptr, out_idx, dest,
                        logw, rate, ref, cap, lam0, f, lam, z, k3)
        for e in range(n_links):
            tmp[e] = rho[e] + h * k3[e]
        ln4, ls4 = _rhs(tmp, kind, fmax, par, sat, blocked, head, out_ptr, out_idx, dest,
                        logw, rate, ref, cap, lam0, f, lam, z, k4)
        for e in range(n_links):
            rho[e] += h / 6.0 * (k1[e] + 2.0 * k2[e] + 2.0 * k3[e] + k4[e])
        y = h / 6.0 * (ln1 + 2.0 * ln2 + 2.0 * ln3 + ln4) - out_c
        t = out_int + y
        out_c = (t - out_int) - y
        out_int = t
        y = h / 6.0 * (ls1 + 2.0 * ls2 + 2.0 * ls3 + ls4) - lost_c
        t = lost_int + y
        lost_c = (t - lost_int) - y
        lost_int = t
        step += 1

        for e in range(n_links):
            if not math.isfinite(rho[e]):
                nonfinite = True
            if rho[e] < 0.0:
                clamp_mass -= rho[e]
                rho[e] = 0.0
        if nonfinite:
            break

        if cascade:
            for e in range(n_links):
                if not sat[e] and rho[e] >= cap[e]:
                    clamp_mass -= rho[e] - cap[e]
                    rho[e] = cap[e]
                    sat[e] = True
                    ev_step[n_ev] = step
                    ev_link[n_ev] = e
                    ev_kind[n_ev] = EVENT_SATURATED
                    n_ev += 1
            for e in range(n_links):
                v = head[e]
                if blocked[e] or v == dest:
                    continue
                all_sat = True
                for k in range(out_ptr[v], out_ptr[v + 1]):
                    if not sat[out_idx[k]]:
                        all_sat = False
                        break
                if all_sat:
                    blocked[e] = True
                    ev_step[n_ev] = step
                    ev_link[n_ev] = e
                    ev_kind[n_ev] = EVENT_CUT_OUT
                    n_ev += 1

    _flows(rho, kind, fmax, par, sat, blocked, f)
    return (rho, f.copy(), sat, blocked, step, converged_step, lam_mean, nonfinite,
            out_int, lost_int, clamp_mass,
            trace_t[:n_rec], trace_rho[:n_rec], trace_f[:n_rec], trace_lam[:n_rec],
            ev_step[:n_ev], ev_link[:n_ev], ev_kind[:n_ev])
