"""Distributed routing policies.

Every policy here is a generalized logit: at node ``v`` the share sent to an
outgoing link ``e`` is proportional to ``w_e * exp(-b_e * (rho_e - ref_e))``,
optionally zeroed once ``rho_e`` reaches a density cap. The variants only differ
in how ``w``, ``b``, ``ref`` and the cap are chosen, which lets the simulator use
a single vectorized kernel for all of them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .network import FlowNetwork, MalformedInput, NetworkError, Topology, rho_max_of


class AllOutgoingSaturated(RuntimeError):
    """Every outgoing link of a density-capped node is at its density cap."""

    def __init__(self, node: int):
        super().__init__(f"all outgoing links of node {node} are saturated")
        self.node = node


class PolicyError(NetworkError):
    pass


def _per_link(value, count: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(count, float(arr))
    if arr.shape != (count,):
        raise PolicyError(f"expected {count} per-link values, got shape {arr.shape}")
    return arr.copy()


def _safe_log(w: np.ndarray) -> np.ndarray:
    out = np.full(w.shape, -np.inf)
    pos = w > 0
    out[pos] = np.log(w[pos])
    return out


@dataclass(frozen=True, eq=False)
class LogitPolicy:
    topology: Topology
    log_weight: np.ndarray
    rate: np.ndarray
    reference: np.ndarray
    cap: np.ndarray

    kind = "logit"
    differentiable = True

    @property
    def capped(self) -> np.ndarray:
        return np.isfinite(self.cap)

    def _scores(self, links: Sequence[int], rho_local) -> np.ndarray:
        idx = np.asarray(links, dtype=int)
        rho = np.asarray(rho_local, dtype=float)
        z = self.log_weight[idx] - self.rate[idx] * (rho - self.reference[idx])
        z = np.where(rho >= self.cap[idx], -np.inf, z)
        return z

    def split(self, v: int, rho_local) -> np.ndarray:
        """Probability vector over ``topology.out_links[v]``."""
        links = self.topology.out_links[v]
        if not links:
            raise PolicyError(f"node {v} has no outgoing links")
        if len(rho_local) != len(links):
            raise PolicyError(f"node {v} has {len(links)} outgoing links, got {len(rho_local)} densities")
        z = self._scores(links, rho_local)
        top = z.max()
        if top == -np.inf:
            raise AllOutgoingSaturated(v)
        p = np.exp(z - top)
        return p / p.sum()

    def split_all(self, rho) -> tuple[np.ndarray, list[int]]:
        """Shares for every link from the full density vector.

        Returns the per-link share array and the nodes whose outgoing links are
        all saturated (their links get share 0).
        """
        rho = np.asarray(rho, dtype=float)
        shares = np.zeros(self.topology.link_count)
        saturated = []
        for v in self.topology.non_destination_nodes():
            links = self.topology.out_links[v]
            try:
                shares[list(links)] = self.split(v, rho[list(links)])
            except AllOutgoingSaturated:
                saturated.append(v)
        return shares, saturated

    def to_dict(self) -> dict:
        return {"kind": "logit", "weights": np.exp(self.log_weight).tolist(),
                "rates": self.rate.tolist()}


class ConstantFraction(LogitPolicy):
    kind = "constant"

    def __init__(self, topology: Topology, fractions):
        p = _per_link(fractions, topology.link_count)
        if np.any(p < 0):
            raise PolicyError("fractions must be nonnegative")
        for v in topology.non_destination_nodes():
            links = list(topology.out_links[v])
            if not math.isclose(p[links].sum(), 1.0, abs_tol=1e-9):
                raise PolicyError(f"fractions at node {v} sum to {p[links].sum()}")
        n = topology.link_count
        super().__init__(topology, _safe_log(p), np.zeros(n), np.zeros(n), np.full(n, np.inf))

    @classmethod
    def from_node_fractions(cls, topology: Topology, by_node: Mapping[int, Sequence[float]]):
        p = np.zeros(topology.link_count)
        for v in topology.non_destination_nodes():
            links = topology.out_links[v]
            if v in by_node:
                vals = list(by_node[v])
            elif len(links) == 1:
                vals = [1.0]
            else:
                raise PolicyError(f"no fractions given for node {v}")
            if len(vals) != len(links):
                raise PolicyError(f"node {v}: expected {len(links)} fractions")
            p[list(links)] = vals
        return cls(topology, p)

    @property
    def fractions(self) -> np.ndarray:
        return np.exp(self.log_weight)

    def to_dict(self) -> dict:
        p = self.fractions
        return {"kind": "constant",
                "fractions": {str(v): p[list(self.topology.out_links[v])].tolist()
                              for v in self.topology.non_destination_nodes()}}


class CustomLogit(LogitPolicy):
    """``G_e = w_e exp(-b_e rho_e) / sum_j w_j exp(-b_j rho_j)``; rates may be negative."""

    kind = "logit"

    def __init__(self, topology: Topology, weights, rates):
        w = _per_link(weights, topology.link_count)
        if np.any(w < 0):
            raise PolicyError("weights must be nonnegative")
        n = topology.link_count
        super().__init__(topology, _safe_log(w), _per_link(rates, n), np.zeros(n),
                         np.full(n, np.inf))


def _reference_weights(topology: Topology, f_star: np.ndarray) -> np.ndarray:
    # A node carrying no reference flow falls back to uniform weights.
    w = f_star.copy()
    for v in topology.non_destination_nodes():
        links = list(topology.out_links[v])
        if not np.any(w[links] > 0):
            w[links] = 1.0
    return w


class LocallyResponsiveExp(LogitPolicy):
    """``G_e ∝ f*_e exp(-eta_e (rho_e - rho*_e))``.

    Its equilibrium is ``f*`` and it is locally responsive for any ``eta > 0``.
    """

    kind = "lr_exp"

    def __init__(self, topology: Topology, f_star, rho_star, eta):
        n = topology.link_count
        f = _per_link(f_star, n)
        e = _per_link(eta, n)
        if np.any(e <= 0):
            raise PolicyError("eta must be positive")
        if np.any(f < 0):
            raise PolicyError("reference flow must be nonnegative")
        super().__init__(topology, _safe_log(_reference_weights(topology, f)), e,
                         _per_link(rho_star, n), self._caps(topology, n))
        object.__setattr__(self, "f_star", f)
        object.__setattr__(self, "eta", e)

    def _caps(self, topology, n):
        return np.full(n, np.inf)

    @classmethod
    def from_equilibrium(cls, net: FlowNetwork, f_star, eta):
        rho_star = net.densities(list(map(float, f_star)))
        return cls(net.topology, f_star, rho_star, eta)

    def to_dict(self) -> dict:
        eta = self.eta
        eta_out = float(eta[0]) if np.all(eta == eta[0]) else eta.tolist()
        return {"kind": self.kind, "eta": eta_out, "f_star": self.f_star.tolist()}


class DensityCappedExp(LocallyResponsiveExp):
    """Locally responsive exponential rule that never routes into a link at its density cap."""

    kind = "lr_exp_capped"
    differentiable = False

    def __init__(self, topology: Topology, f_star, rho_star, eta, rho_max):
        object.__setattr__(self, "_rho_max", _per_link(rho_max, topology.link_count))
        super().__init__(topology, f_star, rho_star, eta)

    def _caps(self, topology, n):
        return self._rho_max

    @classmethod
    def from_equilibrium(cls, net: FlowNetwork, f_star, eta):
        rho_star = net.densities(list(map(float, f_star)))
        rho_max = [rho_max_of(fn) for fn in net.flow_fns]
        return cls(net.topology, f_star, rho_star, eta, rho_max)


RoutingPolicy = Union[ConstantFraction, CustomLogit, LocallyResponsiveExp, DensityCappedExp]


def split(policy: LogitPolicy, v: int, rho_local) -> np.ndarray:
    return policy.split(v, rho_local)


# ---------------------------------------------------------------------------
# Local responsiveness check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResponsivenessReport:
    node: int
    min_offdiagonal_partial: float
    property_a: bool
    property_b: bool
    failed_subsets: tuple[tuple[int, ...], ...]

    @property
    def locally_responsive(self) -> bool:
        return self.property_a and self.property_b


def _fd_step(rho: float) -> float:
    return 1e-5 * max(1.0, rho)


def check_locally_responsive(policy: LogitPolicy, v: int, samples: int = 200, seed: int = 42,
                             partial_tol: float = -1e-8, vanish_tol: float = 1e-6,
                             max_exhaustive: int = 4, sampled_subsets: int = 32
                             ) -> ResponsivenessReport:
    """Finite-difference test of the two local-responsiveness properties at node ``v``.

    (a) off-diagonal partials ``dG_j/drho_e`` are nonnegative, estimated by central
    differences at ``samples`` random density points;
    (b) for each nonempty proper subset ``J`` of outgoing links, driving the other
    links' densities to 1e3, 1e4, 1e6 sends their total share monotonically below
    ``vanish_tol``. All subsets are tried up to ``max_exhaustive`` links.
    """
    rng = np.random.default_rng(seed)
    links = policy.topology.out_links[v]
    k = len(links)
    cap = policy.cap[list(links)]
    upper = np.minimum(10.0, 0.999 * cap)

    min_partial = math.inf
    for _ in range(samples):
        rho = rng.uniform(0.0, 1.0, size=k) * upper
        for e in range(k):
            h = _fd_step(rho[e])
            lo = rho.copy()
            hi = rho.copy()
            lo[e] = max(0.0, rho[e] - h)
            hi[e] = rho[e] + h
            if hi[e] >= cap[e]:
                continue
            grad = (policy.split(v, hi) - policy.split(v, lo)) / (hi[e] - lo[e])
            for j in range(k):
                if j != e:
                    min_partial = min(min_partial, grad[j])
    if k == 1:
        min_partial = 0.0
    property_a = min_partial >= partial_tol

    if k <= max_exhaustive:
        subsets = [J for r in range(1, k) for J in itertools.combinations(range(k), r)]
    else:
        subsets = []
        for _ in range(sampled_subsets):
            r = int(rng.integers(1, k))
            subsets.append(tuple(sorted(rng.choice(k, size=r, replace=False).tolist())))
    failed = []
    for J in subsets:
        excluded = [e for e in range(k) if e not in J]
        base = rng.uniform(0.0, 1.0, size=k) * upper
        totals = []
        for big in (1e3, 1e4, 1e6):
            rho = base.copy()
            rho[excluded] = big
            try:
                p = policy.split(v, rho)
            except AllOutgoingSaturated:
                p = np.zeros(k)
            totals.append(float(p[excluded].sum()))
        monotone = all(b <= a + 1e-15 for a, b in zip(totals, totals[1:]))
        if not (monotone and totals[-1] < vanish_tol):
            failed.append(tuple(links[j] for j in J))
    return ResponsivenessReport(v, float(min_partial), bool(property_a), not failed, tuple(failed))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def policy_from_dict(data: dict, net: FlowNetwork) -> LogitPolicy:
    kind = data.get("kind")
    topo = net.topology
    try:
        if kind == "constant":
            by_node = {int(k): v for k, v in data["fractions"].items()}
            return ConstantFraction.from_node_fractions(topo, by_node)
        if kind == "lr_exp":
            return LocallyResponsiveExp.from_equilibrium(net, data["f_star"], data["eta"])
        if kind == "lr_exp_capped":
            return DensityCappedExp.from_equilibrium(net, data["f_star"], data["eta"])
        if kind == "logit":
            return CustomLogit(topo, data["weights"], data["rates"])
    except (KeyError, TypeError, AttributeError) as exc:
        raise MalformedInput(f"policy {kind!r} is malformed: {exc!r}") from exc
    raise PolicyError(f"unknown policy kind {kind!r}")
