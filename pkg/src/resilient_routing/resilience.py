"""Resilience metrics and the empirical strong-resilience probe."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from .dynamics import Perturbation, SimConfig, equilibrium_residual, simulate
from .equilibrium import maximize_resilience
from .network import FlowNetwork, NetworkError, min_cut_capacity, node_residual_capacity
from .routing import LogitPolicy

INCONCLUSIVE = "inconclusive"
COARSE_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)


class DeltaExceedsNodeCapacity(NetworkError):
    pass


class NotAnEquilibrium(NetworkError):
    pass


def node_capacity(net: FlowNetwork, v: int):
    return sum((net.flow_fns[e].f_max for e in net.topology.out_links[v]), 0)


def adversarial_perturbation(net: FlowNetwork, v: int, delta) -> Perturbation:
    """Scale every outgoing link of ``v`` by ``(kappa - delta)/kappa``.

    ``kappa`` is the total capacity leaving ``v``, so the magnitude of the
    returned perturbation is exactly ``delta``.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    kappa = node_capacity(net, v)
    if delta >= kappa:
        raise DeltaExceedsNodeCapacity(f"delta {delta} >= capacity {kappa} leaving node {v}")
    if delta == 0:
        return Perturbation.identity()
    c = (kappa - delta) / kappa
    return Perturbation({e: c for e in net.topology.out_links[v]})


@dataclass(frozen=True)
class ProbeRecord:
    delta: float
    verdict: str
    lim_lambda_n: float
    converged: bool
    tail_transferring: bool

    @property
    def transferring(self) -> bool:
        """Tail-mean verdict; an unconverged probe still reports its window mean."""
        return self.tail_transferring


@dataclass
class ResilienceReport:
    analytic_R: float
    argmin_node: int
    min_cut_C: float
    inflow: float
    kappa: float
    bracket: tuple
    probes: list

    @property
    def weak_upper_bound(self) -> float:
        return self.min_cut_C

    @property
    def strong_gap(self) -> float:
        return self.min_cut_C - self.inflow - self.analytic_R

    @property
    def empirical_threshold(self) -> float:
        return 0.5 * (self.bracket[0] + self.bracket[1])

    def to_dict(self) -> dict:
        return {
            "analytic_R": self.analytic_R, "argmin_node": self.argmin_node,
            "min_cut_C": self.min_cut_C, "inflow": self.inflow,
            "weak_upper_bound": self.weak_upper_bound, "strong_gap": self.strong_gap,
            "kappa": self.kappa, "empirical_threshold": self.empirical_threshold,
            "bracket": list(self.bracket),
            "probes": [{"delta": p.delta, "verdict": p.verdict, "lim_lambda_n": p.lim_lambda_n,
                        "converged": p.converged} for p in self.probes],
        }

    def write_json(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_probe_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "verdict", "lim_lambda_n"])
            for p in sorted(self.probes, key=lambda p: p.delta):
                w.writerow([repr(p.delta), p.verdict, repr(p.lim_lambda_n)])


def run_probe(net: FlowNetwork, policy: LogitPolicy, f_star: Sequence[float], v: int,
              delta: float, cfg: Optional[SimConfig] = None) -> ProbeRecord:
    pert = adversarial_perturbation(net, v, delta)
    res = simulate(net, policy, pert, f_star, cfg)
    verdict = res.verdict if res.converged else INCONCLUSIVE
    return ProbeRecord(float(delta), verdict, res.lim_lambda_n, res.converged,
                       res.fully_transferring)


def strong_resilience_probe(net: FlowNetwork, policy: LogitPolicy, f_star: Sequence[float],
                            cfg: Optional[SimConfig] = None, bracket_tol: Optional[float] = None,
                            max_bisections: int = 12, equilibrium_tol: float = 1e-8
                            ) -> ResilienceReport:
    """Bracket the smallest adversarial perturbation that breaks full transfer.

    Perturbations are the uniform scalings of the outgoing links of the node with
    the smallest residual capacity, started from ``f*``. A coarse sweep over
    ``COARSE_FRACTIONS`` of that node's capacity seeds a bisection that stops when
    the bracket is narrower than ``bracket_tol`` (default 2% of the capacity).
    """
    resid = equilibrium_residual(net, policy, f_star)
    if resid >= equilibrium_tol:
        raise NotAnEquilibrium(f"f* violates the equilibrium condition by {resid:.3g}")
    R = node_residual_capacity(net, f_star)
    C = min_cut_capacity(net).capacity
    v = R.argmin_node
    kappa = float(node_capacity(net, v))
    tol = 0.02 * kappa if bracket_tol is None else bracket_tol

    probes = [run_probe(net, policy, f_star, v, frac * kappa, cfg) for frac in COARSE_FRACTIONS]
    passing = [p.delta for p in probes if p.transferring]
    failing = [p.delta for p in probes if not p.transferring]
    lo = max(passing, default=0.0)
    hi = min((d for d in failing if d > lo), default=kappa)
    for _ in range(max_bisections):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        rec = run_probe(net, policy, f_star, v, mid, cfg)
        probes.append(rec)
        if rec.transferring:
            lo = mid
        else:
            hi = mid
    return ResilienceReport(float(R.value), v, float(C), float(net.inflow), kappa, (lo, hi), probes)


def price_of_anarchy(net: FlowNetwork, f_star: Sequence[float]) -> float:
    """Resilience forgone at ``f*``: ``R* - R(f*)``."""
    return float(maximize_resilience(net).objective) - float(node_residual_capacity(net, f_star).value)
