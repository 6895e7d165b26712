"""Equilibrium selection: robust LP, delay-constrained selection, Wardrop and tolls.

Delays come from the saturating-exponential flow model: a link carrying flow ``f``
holds density ``mu^{-1}(f)``, so its traversal time is ``T(f) = mu^{-1}(f) / f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import spence

from .lp import linprog
from .network import (ConcaveQuadratic, ExpSaturating, FlowNetwork, NetworkError, Topology,
                      base_of, is_admissible_equilibrium, min_cut_capacity, node_residual_capacity)

CAP_MARGIN = 1e-6


class UnsupportedVariant(NetworkError):
    pass


class ZeroInflow(NetworkError):
    pass


class Infeasible(NetworkError):
    pass


class WardropHasZeroFlowLink(NetworkError):
    pass


class DesiredFlowHasZeroLink(NetworkError):
    pass


# ---------------------------------------------------------------------------
# Delay model
# ---------------------------------------------------------------------------


def _exp_params(fn) -> tuple[float, float]:
    root, c = base_of(fn)
    if isinstance(root, ConcaveQuadratic) or not isinstance(root, ExpSaturating):
        raise UnsupportedVariant("delays are defined only for saturating-exponential links")
    return float(c) * float(root.f_max), float(root.a)


def delay_params(net: FlowNetwork) -> tuple[np.ndarray, np.ndarray]:
    pairs = [_exp_params(fn) for fn in net.flow_fns]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def _delay(f: np.ndarray, F: np.ndarray, a: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    x = f / F
    out = np.full(f.shape, np.inf)
    small = x < 1e-8
    mid = ~small & (x < 1.0)
    # series -log(1-x)/x = 1 + x/2 + x^2/3 + ... near zero flow
    out[small] = (1.0 + x[small] / 2.0 + x[small] ** 2 / 3.0) / (a[small] * F[small])
    out[mid] = -np.log1p(-x[mid]) / (a[mid] * f[mid])
    return out


def eval_delay(fn, f: float) -> float:
    """Traversal time ``T(f)``; ``T(0) = 1/(a f_max)`` and ``+inf`` at or above capacity."""
    if f < 0:
        raise NetworkError(f"negative flow {f}")
    F, a = _exp_params(fn)
    return float(_delay(np.array([f]), np.array([F]), np.array([a]))[0])


def link_delays(net: FlowNetwork, f) -> np.ndarray:
    F, a = delay_params(net)
    return _delay(np.asarray(f, dtype=float), F, a)


def _density_mass(f: np.ndarray, F: np.ndarray, a: np.ndarray) -> np.ndarray:
    x = f / F
    out = np.full(f.shape, np.inf)
    ok = x < 1.0
    out[ok] = -np.log1p(-x[ok]) / a[ok]
    return out


def average_delay(net: FlowNetwork, f) -> float:
    """``sum_e f_e T_e(f_e) / lambda_0``, i.e. total density over inflow."""
    if net.inflow == 0:
        raise ZeroInflow("average delay is undefined for zero inflow")
    F, a = delay_params(net)
    return float(_density_mass(np.asarray(f, dtype=float), F, a).sum() / float(net.inflow))


def beckmann_potential(net: FlowNetwork, f) -> float:
    """``sum_e int_0^{f_e} T_e(s) ds = sum_e Li2(f_e/f_max_e)/a_e``."""
    F, a = delay_params(net)
    x = np.asarray(f, dtype=float) / F
    if np.any(x > 1.0):
        return math.inf
    return float(np.sum(spence(1.0 - x) / a))


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathSet:
    paths: tuple[tuple[int, ...], ...]
    incidence: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.paths)


def enumerate_paths(topology: Topology) -> PathSet:
    paths: list[tuple[int, ...]] = []

    def walk(v: int, prefix: list[int]) -> None:
        if v == topology.destination:
            paths.append(tuple(prefix))
            return
        for e in topology.out_links[v]:
            prefix.append(e)
            walk(topology.links[e].head, prefix)
            prefix.pop()

    walk(0, [])
    A = np.zeros((len(paths), topology.link_count), dtype=int)
    for p, path in enumerate(paths):
        A[p, list(path)] = 1
    return PathSet(tuple(paths), A)


# ---------------------------------------------------------------------------
# Polytope and LP
# ---------------------------------------------------------------------------


@dataclass
class OptResult:
    f_opt: np.ndarray
    objective: float
    iterations: int
    certificate: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"f": self.f_opt.tolist(), "objective": self.objective,
               "iterations": self.iterations, "certificate": self.certificate}
        out.update(self.extra)
        return out


def _conservation(net: FlowNetwork) -> tuple[np.ndarray, np.ndarray]:
    topo = net.topology
    rows = []
    rhs = []
    for v in topo.non_destination_nodes():
        row = np.zeros(topo.link_count)
        row[list(topo.out_links[v])] = 1.0
        row[list(topo.in_links[v])] -= 1.0
        rows.append(row)
        rhs.append(float(net.inflow) if v == 0 else 0.0)
    return np.array(rows), np.array(rhs)


def _polytope(net: FlowNetwork, cap_factor: float, b: Optional[float] = None):
    topo = net.topology
    n = topo.link_count
    F = np.array([float(x) for x in net.f_max])
    A_ub = [np.eye(n)]
    b_ub = [cap_factor * F]
    if b is not None:
        rows = np.zeros((len(topo.non_destination_nodes()), n))
        rhs = np.zeros(rows.shape[0])
        for i, v in enumerate(topo.non_destination_nodes()):
            out = list(topo.out_links[v])
            rows[i, out] = 1.0
            rhs[i] = F[out].sum() - b
        A_ub.append(rows)
        b_ub.append(rhs)
    A_eq, b_eq = _conservation(net)
    return np.vstack(A_ub), np.concatenate(b_ub), A_eq, b_eq


def _max_resilience_lp(net: FlowNetwork, cap_factor: float):
    """LP over ``(f, t)``: maximize ``t`` with ``t <= sum_{E_v+}(cap - f)`` at every node."""
    topo = net.topology
    n = topo.link_count
    F = np.array([float(x) for x in net.f_max])
    nodes = topo.non_destination_nodes()
    A_ub = np.zeros((n + len(nodes), n + 1))
    b_ub = np.zeros(n + len(nodes))
    A_ub[:n, :n] = np.eye(n)
    b_ub[:n] = cap_factor * F
    for i, v in enumerate(nodes):
        out = list(topo.out_links[v])
        A_ub[n + i, out] = 1.0
        A_ub[n + i, n] = 1.0
        b_ub[n + i] = F[out].sum()
    A_eq, b_eq = _conservation(net)
    A_eq = np.hstack([A_eq, np.zeros((A_eq.shape[0], 1))])
    c = np.zeros(n + 1)
    c[n] = -1.0
    return linprog(c, A_ub, b_ub, A_eq, b_eq)


def maximize_resilience(net: FlowNetwork) -> OptResult:
    """Most robust equilibrium: ``max_f min_v sum_{E_v+}(f_max - f)`` over the closed polytope."""
    C = min_cut_capacity(net).capacity
    if net.inflow >= C:
        raise Infeasible(f"inflow {net.inflow} is not below the min-cut capacity {C}")
    res = _max_resilience_lp(net, 1.0)
    if not res.success:  # pragma: no cover - excluded by the min-cut check
        raise Infeasible(f"resilience LP is {res.status}")
    f = np.clip(res.x[:-1], 0.0, None)
    return OptResult(f, float(res.x[-1]), res.iterations, res.duality_residual,
                     {"R_of_f": float(node_residual_capacity(net, f).value)})


# ---------------------------------------------------------------------------
# Frank-Wolfe with away steps
# ---------------------------------------------------------------------------


def _line_search(dderiv: Callable[[float], float], gmax: float) -> float:
    if dderiv(gmax) <= 0.0:
        return gmax
    if dderiv(0.0) >= 0.0:
        return 0.0
    return brentq(dderiv, 0.0, gmax, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)


def _key(x: np.ndarray) -> tuple:
    return tuple(np.round(x, 12).tolist())


def frank_wolfe(grad: Callable[[np.ndarray], np.ndarray], lmo: Callable[[np.ndarray], np.ndarray],
                x0: np.ndarray, tol: float, max_iter: int = 100_000) -> tuple[np.ndarray, int, float]:
    """Away-step Frank-Wolfe with exact line search on a polytope.

    ``lmo(g)`` must return a vertex minimizing ``g . s``; ``x0`` must be a vertex.
    Returns the iterate, the iteration count and the final duality gap.
    """
    x = np.asarray(x0, dtype=float).copy()
    active = {_key(x): [x.copy(), 1.0]}
    gap = math.inf
    for it in range(1, max_iter + 1):
        g = grad(x)
        s = lmo(g)
        d_fw = s - x
        gap = float(-g @ d_fw)
        if gap <= tol:
            return x, it, max(gap, 0.0)
        away_key = max(active, key=lambda k: float(g @ active[k][0]))
        v, alpha_v = active[away_key]
        d_away = x - v
        if gap >= float(-g @ d_away) or len(active) == 1:
            d, gmax, step_kind = d_fw, 1.0, "fw"
        else:
            d, gmax, step_kind = d_away, alpha_v / (1.0 - alpha_v), "away"

        gamma = _line_search(lambda t: float(grad(x + t * d) @ d), gmax)
        if gamma <= 0.0:
            return x, it, max(gap, 0.0)
        x = x + gamma * d
        if step_kind == "fw":
            for item in active.values():
                item[1] *= 1.0 - gamma
            ks = _key(s)
            if gamma >= 1.0:
                active = {ks: [s.copy(), 1.0]}
            else:
                active.setdefault(ks, [s.copy(), 0.0])[1] += gamma
        else:
            for item in active.values():
                item[1] *= 1.0 + gamma
            active[away_key][1] -= gamma
            if gamma >= gmax or active[away_key][1] <= 1e-15:
                del active[away_key]
        total = sum(item[1] for item in active.values())
        for item in active.values():
            item[1] /= total
    return x, max_iter, max(gap, 0.0)


def _lmo_factory(A_ub, b_ub, A_eq, b_eq):
    def lmo(g: np.ndarray) -> np.ndarray:
        res = linprog(g, A_ub, b_ub, A_eq, b_eq)
        if not res.success:
            raise Infeasible(f"linear oracle is {res.status}")
        return np.clip(res.x, 0.0, None)
    return lmo


def min_delay_with_resilience(net: FlowNetwork, b: float, gap_tol: Optional[float] = None,
                              max_iter: int = 100_000) -> OptResult:
    """Minimize average delay subject to ``R(f) >= b``.

    Flows are capped at ``(1 - 1e-6) f_max`` to keep the delay finite. If ``b``
    is feasible for the closed polytope but not for the capped one, the cap wins
    and ``b_effective`` reports the bound actually imposed.
    """
    lam0 = float(net.inflow)
    if b < 0:
        raise ValueError("resilience bound must be nonnegative")
    r_star = maximize_resilience(net).objective
    tol_b = 1e-9 * max(1.0, abs(r_star))
    if b > r_star + tol_b:
        raise Infeasible(f"requested resilience {b} exceeds the maximum {r_star}")
    F, a = delay_params(net)
    if lam0 == 0:
        f = np.zeros(net.topology.link_count)
        return OptResult(f, 0.0, 0, 0.0, {"b": b, "b_effective": b, "R_star": r_star,
                                          "R_of_f": float(node_residual_capacity(net, f).value)})
    capf = 1.0 - CAP_MARGIN
    capped = _max_resilience_lp(net, capf)
    b_eff = min(float(b), float(capped.x[-1]))
    A_ub, b_ub, A_eq, b_eq = _polytope(net, capf, b_eff)
    lmo = _lmo_factory(A_ub, b_ub, A_eq, b_eq)

    def grad(f):
        return 1.0 / (a * (F - f)) / lam0

    x0 = lmo(np.zeros_like(F))
    tol = gap_tol if gap_tol is not None else 1e-7 * lam0
    f, iters, gap = frank_wolfe(grad, lmo, x0, tol, max_iter)
    return OptResult(f, average_delay(net, f), iters, gap,
                     {"b": float(b), "b_effective": b_eff, "R_star": r_star,
                      "R_of_f": float(node_residual_capacity(net, f).value)})


def resilience_delay_sweep(net: FlowNetwork, points: int) -> list[OptResult]:
    """Solve the delay-constrained problem on an even grid of ``b`` in ``[0, R*]``."""
    if points < 2:
        raise ValueError("need at least two sweep points")
    r_star = maximize_resilience(net).objective
    return [min_delay_with_resilience(net, float(b)) for b in np.linspace(0.0, r_star, points)]


# ---------------------------------------------------------------------------
# Wardrop equilibrium and tolls
# ---------------------------------------------------------------------------


@dataclass
class WardropResult:
    f: np.ndarray
    path_costs: np.ndarray
    used_paths: tuple[int, ...]
    kkt_residual: float
    iterations: int
    gap: float

    def to_dict(self) -> dict:
        return {"f": self.f.tolist(), "path_costs": self.path_costs.tolist(),
                "used_paths": list(self.used_paths), "kkt_residual": self.kkt_residual,
                "iterations": self.iterations, "gap": self.gap}


def _wardrop_check(net: FlowNetwork, f: np.ndarray, paths: PathSet, used_tol: float):
    T = link_delays(net, f)
    costs = paths.incidence @ T
    used = tuple(p for p, path in enumerate(paths.paths) if np.all(f[list(path)] > used_tol))
    best = costs.min()
    resid = max((abs(costs[p] - best) / best for p in used), default=0.0)
    return costs, used, float(resid)


def wardrop_equilibrium(net: FlowNetwork, gap_tol: Optional[float] = None,
                        max_iter: int = 100_000) -> WardropResult:
    """Minimize the Beckmann potential; its stationary points equalize used path delays."""
    C = min_cut_capacity(net).capacity
    if net.inflow >= C:
        raise Infeasible(f"inflow {net.inflow} is not below the min-cut capacity {C}")
    F, a = delay_params(net)
    lam0 = float(net.inflow)
    paths = enumerate_paths(net.topology)
    if lam0 == 0:
        f = np.zeros_like(F)
        costs, used, resid = _wardrop_check(net, f, paths, 0.0)
        return WardropResult(f, costs, used, resid, 0, 0.0)
    A_ub, b_ub, A_eq, b_eq = _polytope(net, 1.0 - CAP_MARGIN)
    lmo = _lmo_factory(A_ub, b_ub, A_eq, b_eq)

    def grad(f):
        return _delay(f, F, a)

    x0 = lmo(grad(np.zeros_like(F)))
    tol = gap_tol if gap_tol is not None else 1e-13 * lam0
    f, iters, gap = frank_wolfe(grad, lmo, x0, tol, max_iter)
    costs, used, resid = _wardrop_check(net, f, paths, 1e-9 * lam0)
    return WardropResult(f, costs, used, resid, iters, gap)


@dataclass
class TollResult:
    tolls: np.ndarray
    factor: float
    max_ratio: float
    nu: float
    path_costs: np.ndarray
    residual: float
    wardrop_flow: np.ndarray

    def to_dict(self) -> dict:
        return {"tolls": self.tolls.tolist(), "factor": self.factor, "max_ratio": self.max_ratio,
                "nu": self.nu, "path_costs": self.path_costs.tolist(), "residual": self.residual,
                "wardrop_flow": self.wardrop_flow.tolist()}


def synthesize_tolls(net: FlowNetwork, f_desired: Sequence[float], factor: Optional[float] = None,
                     wardrop: Optional[WardropResult] = None) -> TollResult:
    """Tolls ``c T(f^W) - T(f)`` that make ``f`` the toll-induced equilibrium.

    The default ``c`` is ``max_e T_e(f_e)/T_e(f^W_e)``, the smallest value keeping
    every toll nonnegative; any larger ``c`` works too. The result is verified on
    every path whose links all carry positive desired flow.
    """
    f = np.asarray(f_desired, dtype=float)
    report = is_admissible_equilibrium(net, f)
    if not report.admissible:
        raise NetworkError("desired flow is not an admissible equilibrium: "
                           + "; ".join(report.violations))
    if np.any(f <= 0):
        raise DesiredFlowHasZeroLink(f"desired flow vanishes on links {np.flatnonzero(f <= 0).tolist()}")
    w = wardrop or wardrop_equilibrium(net)
    if np.any(w.f <= 1e-9 * float(net.inflow)):
        raise WardropHasZeroFlowLink(f"Wardrop flow vanishes on links {np.flatnonzero(w.f <= 1e-9).tolist()}")
    T_w = link_delays(net, w.f)
    T_d = link_delays(net, f)
    ratio = float(np.max(T_d / T_w))
    c = ratio if factor is None else float(factor)
    if c < ratio * (1 - 1e-12):
        raise ValueError(f"toll factor {c} is below the minimum {ratio}")
    tolls = c * T_w - T_d
    tolls[(tolls < 0) & (tolls >= -1e-9)] = 0.0

    paths = enumerate_paths(net.topology)
    nu = c * float(np.min(paths.incidence @ T_w))
    checked = [p for p, path in enumerate(paths.paths) if np.all(f[list(path)] > 0)]
    costs = paths.incidence @ (T_d + tolls)
    residual = max((abs(costs[p] - nu) / nu for p in checked), default=0.0)
    return TollResult(tolls, c, ratio, nu, costs, float(residual), w.f)
