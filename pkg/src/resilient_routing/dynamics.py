"""Simulation of perturbed dynamical flow networks.

Each link density obeys ``d rho_e/dt = lambda_v G^v_e(rho^v) - mu_e(rho_e)`` where
``v`` is the tail of ``e``, ``lambda_0`` is the exogenous inflow and ``lambda_v``
sums the flows entering ``v``. Integration is fixed-step RK4; see ``_kernel``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import _kernel
from .network import (ConcaveQuadratic, ExpSaturating, FlowNetwork, NetworkError, Scaled,
                      base_of, rho_max_of, validate_topology)
from .routing import LogitPolicy, PolicyError

FULLY_TRANSFERRING = "fully_transferring"
NOT_FULLY_TRANSFERRING = "not_fully_transferring"


class NonFiniteState(RuntimeError):
    pass


class NotConverged(RuntimeError):
    pass


class InputExceedsLocalCapacity(NetworkError):
    pass


class PerturbationError(NetworkError):
    pass


@dataclass(frozen=True)
class Perturbation:
    """Per-link scale factors ``c_e in (0, 1]``; links not listed are untouched."""

    scales: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for link, c in self.scales.items():
            if not 0 < c <= 1:
                raise PerturbationError(f"scale for link {link} must lie in (0, 1], got {c}")
            clean[int(link)] = c
        object.__setattr__(self, "scales", dict(sorted(clean.items())))

    @classmethod
    def identity(cls) -> "Perturbation":
        return cls({})

    def check(self, net: FlowNetwork) -> None:
        for link in self.scales:
            if not 0 <= link < net.topology.link_count:
                raise PerturbationError(f"perturbation references unknown link {link}")

    def apply(self, net: FlowNetwork) -> FlowNetwork:
        self.check(net)
        fns = list(net.flow_fns)
        for link, c in self.scales.items():
            if c != 1:
                fns[link] = Scaled(fns[link], c)
        return net.with_flow_fns(fns)

    def to_dict(self) -> dict:
        return {"scale": {str(k): float(v) for k, v in self.scales.items()}}

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "Perturbation":
        if not data:
            return cls.identity()
        return cls({int(k): float(v) for k, v in data.get("scale", {}).items()})


@dataclass(frozen=True)
class PerturbationMagnitude:
    delta_total: float
    delta_per_link: dict


def perturbation_magnitude(net: FlowNetwork, pert: Perturbation) -> PerturbationMagnitude:
    """``delta_e = (1 - c_e) f_max_e`` summed over links; exact for rational inputs."""
    pert.check(net)
    per_link = {link: (1 - c) * net.flow_fns[link].f_max for link, c in pert.scales.items()}
    return PerturbationMagnitude(sum(per_link.values(), 0), per_link)


@dataclass(frozen=True)
class SimConfig:
    step: float = 0.01
    horizon: float = 2000.0
    window: float = 50.0
    conv_tol: float = 1e-7
    transfer_tol: Optional[float] = None  # defaults to 1e-3 * inflow
    trace_stride: int = 100
    check_stride: int = 10
    stop_on_converge: bool = True

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon >= self.window > 0:
            raise ValueError("need horizon >= window > 0")
        if not self.conv_tol > 0 or (self.transfer_tol is not None and not self.transfer_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.check_stride < 1 or self.trace_stride < 0:
            raise ValueError("strides must be positive")

    def tolerance_for(self, inflow: float) -> float:
        return self.transfer_tol if self.transfer_tol is not None else 1e-3 * float(inflow)


@dataclass(frozen=True)
class CascadeEvent:
    t: float
    link_id: int
    kind: str  # "saturated" or "cut_out"


@dataclass
class SimResult:
    times: np.ndarray
    rho_trace: np.ndarray
    flow_trace: np.ndarray
    lambda_trace: np.ndarray
    t_final: float
    final_rho: np.ndarray
    final_flow: np.ndarray
    converged: bool
    converged_at: Optional[float]
    lim_lambda_n: float
    inflow: float
    transfer_tol: float
    events: list = field(default_factory=list)
    saturated: tuple = ()
    cut_out: tuple = ()
    initial_mass: float = 0.0
    outflow_integral: float = 0.0
    lost_integral: float = 0.0
    clamp_mass: float = 0.0

    @property
    def limit_flow(self) -> Optional[np.ndarray]:
        return self.final_flow if self.converged else None

    @property
    def fully_transferring(self) -> bool:
        return abs(self.lim_lambda_n - self.inflow) <= self.transfer_tol

    @property
    def verdict(self) -> str:
        return FULLY_TRANSFERRING if self.fully_transferring else NOT_FULLY_TRANSFERRING

    @property
    def shut_links(self) -> tuple:
        return tuple(sorted(set(self.saturated) | set(self.cut_out)))

    @property
    def mass_balance_residual(self) -> float:
        """``sum rho(T) - sum rho(0) - int (lambda_0 - lambda_n)`` with lost and clamped mass."""
        injected = self.inflow * self.t_final - self.outflow_integral - self.lost_integral
        return float(self.final_rho.sum() - self.initial_mass - injected - self.clamp_mass)

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "converged": self.converged,
            "converged_at": self.converged_at,
            "t_final": self.t_final,
            "inflow": self.inflow,
            "lim_lambda_n": self.lim_lambda_n,
            "limit_flow": None if self.limit_flow is None else self.limit_flow.tolist(),
            "final_flow": self.final_flow.tolist(),
            "final_rho": self.final_rho.tolist(),
            "shut_links": list(self.shut_links),
            "events": [{"t": ev.t, "link": ev.link_id, "kind": ev.kind} for ev in self.events],
            "mass_balance_residual": self.mass_balance_residual,
        }

    def write_trace_csv(self, path: Union[str, Path]) -> None:
        n = self.final_rho.shape[0]
        header = (["t"] + [f"link_{e}_rho" for e in range(n)]
                  + [f"link_{e}_f" for e in range(n)] + ["lambda_n"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.times.shape[0]):
                row = [self.times[i], *self.rho_trace[i], *self.flow_trace[i], self.lambda_trace[i]]
                w.writerow([repr(float(x)) for x in row])

    def write_summary_json(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Flattening to kernel arrays
# ---------------------------------------------------------------------------


def _flow_arrays(net: FlowNetwork):
    n = net.topology.link_count
    kind = np.empty(n, dtype=np.int64)
    fmax = np.empty(n)
    par = np.empty(n)
    for e, fn in enumerate(net.flow_fns):
        root, c = base_of(fn)
        fmax[e] = float(c) * float(root.f_max)
        if isinstance(root, ExpSaturating):
            kind[e], par[e] = _kernel.KIND_EXP, root.a
        elif isinstance(root, ConcaveQuadratic):
            kind[e], par[e] = _kernel.KIND_QUAD, root.rho_max
        else:  # pragma: no cover
            raise NetworkError(f"unsupported flow function {fn!r}")
    return kind, fmax, par


def _csr_out(topology):
    ptr = [0]
    idx: list[int] = []
    for v in range(topology.node_count):
        idx.extend(topology.out_links[v])
        ptr.append(len(idx))
    return np.asarray(ptr, dtype=np.int64), np.asarray(idx, dtype=np.int64)


def initial_densities(net: FlowNetwork, initial_flow) -> np.ndarray:
    f0 = np.asarray(initial_flow, dtype=float)
    if f0.shape != (net.topology.link_count,):
        raise NetworkError(f"initial flow needs {net.topology.link_count} entries")
    return np.asarray(net.densities(f0.tolist()), dtype=float)


def random_initial_flow(net: FlowNetwork, rng: np.random.Generator, fill: float = 0.95) -> np.ndarray:
    """Uniform draw from ``[0, fill * f_max)`` on each link (no conservation imposed)."""
    fmax = np.asarray([float(x) for x in net.f_max])
    return rng.uniform(0.0, fill, size=fmax.shape[0]) * fmax


def _run(net: FlowNetwork, policy: LogitPolicy, pert: Perturbation, rho0: np.ndarray,
         cfg: SimConfig, cascade: bool, cap: np.ndarray) -> SimResult:
    topo = net.topology
    if policy.topology.link_count != topo.link_count:
        raise PolicyError("policy and network have different link sets")
    perturbed = pert.apply(net)
    kind, fmax, par = _flow_arrays(perturbed)
    out_ptr, out_idx = _csr_out(topo)
    head = np.asarray(topo.heads(), dtype=np.int64)

    n_steps = int(round(cfg.horizon / cfg.step))
    window_steps = int(round(cfg.window / cfg.step))
    window_checks = max(1, window_steps // cfg.check_stride)
    inflow = float(net.inflow)

    (rho, f, sat, blocked, steps, conv_step, lam_mean, nonfinite, out_int, lost_int, clamp,
     tt, tr, tf, tl, ev_step, ev_link, ev_kind) = _kernel.integrate(
        np.ascontiguousarray(rho0, dtype=float), kind, fmax, par, head, out_ptr, out_idx,
        topo.destination, policy.log_weight.astype(float), policy.rate.astype(float),
        policy.reference.astype(float), cap.astype(float), inflow, cascade,
        float(cfg.step), n_steps, int(cfg.check_stride), int(window_checks),
        float(cfg.conv_tol), bool(cfg.stop_on_converge), int(cfg.trace_stride))
    if nonfinite:
        raise NonFiniteState(f"density became non-finite after {steps} steps")

    t_final = steps * cfg.step
    lam_final = float(sum(f[e] for e in topo.in_links[topo.destination]))
    if math.isnan(lam_mean):
        lam_mean = lam_final
    times, tr, tf, tl = tt.copy(), tr.copy(), tf.copy(), tl.copy()
    if cfg.trace_stride > 0 and (times.size == 0 or times[-1] != t_final):
        times = np.append(times, t_final)
        tr = np.vstack([tr, rho[None, :]])
        tf = np.vstack([tf, f[None, :]])
        tl = np.append(tl, lam_final)
    names = {_kernel.EVENT_SATURATED: "saturated", _kernel.EVENT_CUT_OUT: "cut_out"}
    events = [CascadeEvent(int(s) * cfg.step, int(e), names[int(k)])
              for s, e, k in zip(ev_step, ev_link, ev_kind)]
    return SimResult(
        times=times, rho_trace=tr, flow_trace=tf, lambda_trace=tl, t_final=t_final,
        final_rho=rho.copy(), final_flow=f.copy(), converged=conv_step >= 0,
        converged_at=None if conv_step < 0 else conv_step * cfg.step,
        lim_lambda_n=float(lam_mean), inflow=inflow, transfer_tol=cfg.tolerance_for(inflow),
        events=events, saturated=tuple(int(e) for e in np.flatnonzero(sat)),
        cut_out=tuple(int(e) for e in np.flatnonzero(blocked)),
        initial_mass=float(np.sum(rho0)), outflow_integral=float(out_int),
        lost_integral=float(lost_int), clamp_mass=float(clamp))


def simulate(net: FlowNetwork, policy: LogitPolicy, pert: Optional[Perturbation] = None,
             initial_flow: Optional[Sequence[float]] = None, cfg: Optional[SimConfig] = None,
             initial_rho: Optional[Sequence[float]] = None) -> SimResult:
    """Integrate the perturbed dynamics from ``rho(0) = mu^{-1}(f0)``.

    ``f0`` is inverted through the unperturbed flow functions. Non-convergence is
    reported through ``SimResult.converged`` rather than raised.
    """
    pert = pert or Perturbation.identity()
    cfg = cfg or SimConfig()
    if initial_rho is not None:
        rho0 = np.asarray(initial_rho, dtype=float)
    else:
        if initial_flow is None:
            raise ValueError("need an initial flow or initial densities")
        rho0 = initial_densities(net, initial_flow)
    return _run(net, policy, pert, rho0, cfg, False, np.asarray(policy.cap, dtype=float))


def simulate_cascade(net: FlowNetwork, policy: LogitPolicy, pert: Optional[Perturbation] = None,
                     initial_flow: Optional[Sequence[float]] = None,
                     cfg: Optional[SimConfig] = None) -> SimResult:
    """Finite-density dynamics with permanent shutdowns.

    A link whose density reaches ``rho_max`` is clamped there and stops discharging
    for good. A link whose head node has all outgoing links saturated is cut out:
    its outflow is zero from then on while it keeps filling up to its own cap.
    Inflow arriving at a node with every outgoing link saturated is lost and
    tracked in ``lost_integral``.
    """
    pert = pert or Perturbation.identity()
    cfg = cfg or SimConfig()
    if initial_flow is None:
        raise ValueError("need an initial flow")
    cap = np.asarray([rho_max_of(fn) for fn in net.flow_fns], dtype=float)
    if not np.all(np.isfinite(cap)):
        raise NetworkError("cascade simulation needs a finite rho_max on every link")
    if not np.allclose(np.asarray(policy.cap, dtype=float), cap):
        raise PolicyError("cascade simulation needs a policy capped at each link's rho_max")
    rho0 = initial_densities(net, initial_flow)
    return _run(net, policy, pert, rho0, cfg, True, cap)


# ---------------------------------------------------------------------------
# Local systems
# ---------------------------------------------------------------------------


def local_equilibrium(net: FlowNetwork, policy: LogitPolicy, v: int, inflow: float,
                      pert: Optional[Perturbation] = None, cfg: Optional[SimConfig] = None,
                      initial_rho: Optional[Sequence[float]] = None) -> np.ndarray:
    """Fixed point of the single-node system with constant input ``inflow``.

    The outgoing links of ``v`` are wired in parallel from a fresh origin to a
    fresh sink, keeping their (perturbed) flow functions and routing parameters,
    and the result is integrated to window convergence.
    """
    pert = pert or Perturbation.identity()
    links = list(net.topology.out_links[v])
    if not links:
        raise NetworkError(f"node {v} has no outgoing links")
    fns = list(pert.apply(net).flow_fns)
    local_fns = [fns[e] for e in links]
    capacity = sum(float(fn.f_max) for fn in local_fns)
    if inflow >= capacity:
        raise InputExceedsLocalCapacity(f"input {inflow} >= local capacity {capacity}")
    topo = validate_topology(2, [(0, 1)] * len(links))
    local_net = FlowNetwork(topo, tuple(local_fns), inflow)
    idx = np.asarray(links)
    local_policy = LogitPolicy(topo, policy.log_weight[idx], policy.rate[idx],
                               policy.reference[idx], policy.cap[idx])
    cfg = cfg or SimConfig(conv_tol=1e-11, trace_stride=0)
    rho0 = np.zeros(len(links)) if initial_rho is None else np.asarray(initial_rho, dtype=float)
    result = _run(local_net, local_policy, Perturbation.identity(), rho0, cfg, False,
                  np.asarray(local_policy.cap, dtype=float))
    if not result.converged:
        raise NotConverged(f"local system at node {v} did not converge within the horizon")
    return result.final_flow


def equilibrium_residual(net: FlowNetwork, policy: LogitPolicy, f_star: Sequence[float]) -> float:
    """Largest violation of ``lambda_v G^v_e(rho*) = f*_e`` and of conservation at the origin."""
    topo = net.topology
    f = np.asarray(f_star, dtype=float)
    rho = np.asarray(net.densities(f.tolist()), dtype=float)
    worst = abs(float(f[list(topo.out_links[0])].sum()) - float(net.inflow))
    for v in topo.non_destination_nodes():
        lam = float(net.inflow) if v == 0 else float(f[list(topo.in_links[v])].sum())
        links = list(topo.out_links[v])
        share = policy.split(v, rho[links])
        worst = max(worst, float(np.max(np.abs(lam * share - f[links]))))
    return worst
