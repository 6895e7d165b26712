"""Static flow network model: topology, flow functions, cuts and residual capacities.

All static operations are written against plain Python numbers so that they work
unchanged with :class:`fractions.Fraction` capacities when exact arithmetic is wanted.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, Union

Number = Union[int, float, Fraction]

CONSERVATION_TOL = 1e-9
CAPACITY_MARGIN = 1e-12


class NetworkError(ValueError):
    """Base class for malformed networks and inadmissible flows."""


class TopologyError(NetworkError):
    pass


class CycleDetected(TopologyError):
    pass


class MultipleOrigins(TopologyError):
    pass


class MultipleDestinations(TopologyError):
    pass


class NodeWithoutPathToDestination(TopologyError):
    pass


class DomainExceeded(NetworkError):
    pass


class FlowAtOrAboveCapacity(NetworkError):
    pass


class FlowExceedsCapacity(NetworkError):
    pass


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Link:
    link_id: int
    tail: int
    head: int


@dataclass(frozen=True)
class Topology:
    """Validated acyclic multigraph with origin 0 and destination ``node_count - 1``.

    ``order`` lists the nodes so that every incoming link of a node leaves an
    earlier node. Build instances through :func:`validate_topology`.
    """

    node_count: int
    links: tuple[Link, ...]
    order: tuple[int, ...]
    out_links: tuple[tuple[int, ...], ...] = field(repr=False)
    in_links: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def destination(self) -> int:
        return self.node_count - 1

    @property
    def link_count(self) -> int:
        return len(self.links)

    def non_destination_nodes(self) -> list[int]:
        return [v for v in self.order if v != self.destination]

    def tails(self) -> list[int]:
        return [link.tail for link in self.links]

    def heads(self) -> list[int]:
        return [link.head for link in self.links]


def validate_topology(node_count: int, links: Iterable) -> Topology:
    """Check acyclicity, unique origin/destination and reachability of the destination.

    ``links`` may hold :class:`Link` records or ``(tail, head)`` pairs; pairs get
    ids by position. Returns a :class:`Topology` carrying a topological order.
    """
    raw = []
    for pos, item in enumerate(links):
        if isinstance(item, Link):
            raw.append(item)
        else:
            tail, head = item
            raw.append(Link(pos, int(tail), int(head)))
    raw.sort(key=lambda link: link.link_id)
    if [link.link_id for link in raw] != list(range(len(raw))):
        raise TopologyError("link ids must be unique and dense in 0..|E|-1")
    if node_count < 2:
        raise TopologyError("a network needs at least an origin and a destination")
    for link in raw:
        for node in (link.tail, link.head):
            if not 0 <= node < node_count:
                raise TopologyError(f"link {link.link_id} references unknown node {node}")
        if link.tail == link.head:
            raise CycleDetected(f"self-loop on node {link.tail}")

    out_links: list[list[int]] = [[] for _ in range(node_count)]
    in_links: list[list[int]] = [[] for _ in range(node_count)]
    for link in raw:
        out_links[link.tail].append(link.link_id)
        in_links[link.head].append(link.link_id)

    # Kahn's algorithm with smallest-label tie breaking for a stable order.
    indeg = [len(in_links[v]) for v in range(node_count)]
    ready = sorted(v for v in range(node_count) if indeg[v] == 0)
    order: list[int] = []
    queue = deque(ready)
    while queue:
        v = queue.popleft()
        order.append(v)
        released = []
        for e in out_links[v]:
            w = raw[e].head
            indeg[w] -= 1
            if indeg[w] == 0:
                released.append(w)
        queue.extend(sorted(released))
        queue = deque(sorted(queue))
    if len(order) != node_count:
        raise CycleDetected("topology contains a directed cycle")

    sources = [v for v in range(node_count) if not in_links[v]]
    sinks = [v for v in range(node_count) if not out_links[v]]
    destination = node_count - 1
    if len(sources) != 1:
        raise MultipleOrigins(f"nodes without incoming links: {sources}")
    if len(sinks) != 1:
        raise MultipleDestinations(f"nodes without outgoing links: {sinks}")
    if sources[0] != 0:
        raise MultipleOrigins(f"origin must be node 0, found {sources[0]}")
    if sinks[0] != destination:
        raise MultipleDestinations(f"destination must be node {destination}, found {sinks[0]}")

    reaches = [False] * node_count
    reaches[destination] = True
    for v in reversed(order):
        if any(reaches[raw[e].head] for e in out_links[v]):
            reaches[v] = True
    stranded = [v for v in range(node_count) if not reaches[v]]
    if stranded:
        raise NodeWithoutPathToDestination(f"no path to destination from {stranded}")

    return Topology(
        node_count=node_count,
        links=tuple(raw),
        order=tuple(order),
        out_links=tuple(tuple(x) for x in out_links),
        in_links=tuple(tuple(x) for x in in_links),
    )


# ---------------------------------------------------------------------------
# Flow functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpSaturating:
    """``f_max * (1 - exp(-a * rho))``."""

    f_max: Number
    a: float

    def __post_init__(self):
        if not self.f_max > 0 or not self.a > 0:
            raise NetworkError("ExpSaturating needs f_max > 0 and a > 0")

    def __call__(self, rho: float) -> float:
        if rho < 0:
            raise DomainExceeded(f"negative density {rho}")
        return -float(self.f_max) * math.expm1(-self.a * rho)

    def derivative(self, rho: float) -> float:
        return float(self.f_max) * self.a * math.exp(-self.a * rho)

    def inverse(self, f: float) -> float:
        if f < 0:
            raise DomainExceeded(f"negative flow {f}")
        if f >= self.f_max:
            raise FlowAtOrAboveCapacity(f"flow {f} >= capacity {self.f_max}")
        return -math.log1p(-float(f) / float(self.f_max)) / self.a


@dataclass(frozen=True)
class ConcaveQuadratic:
    """``4 f_max rho (rho_max - rho) / rho_max**2`` on ``[0, rho_max]``."""

    f_max: Number
    rho_max: float

    def __post_init__(self):
        if not self.f_max > 0 or not self.rho_max > 0:
            raise NetworkError("ConcaveQuadratic needs f_max > 0 and rho_max > 0")

    def __call__(self, rho: float) -> float:
        if rho < 0 or rho > self.rho_max:
            raise DomainExceeded(f"density {rho} outside [0, {self.rho_max}]")
        return 4.0 * float(self.f_max) * rho * (self.rho_max - rho) / self.rho_max**2

    def derivative(self, rho: float) -> float:
        return 4.0 * float(self.f_max) * (self.rho_max - 2.0 * rho) / self.rho_max**2

    def inverse(self, f: float) -> float:
        """Root on the increasing branch ``[0, rho_max/2]``."""
        fm = float(self.f_max)
        if f < 0 or f > fm:
            raise DomainExceeded(f"flow {f} outside [0, {fm}]")
        # rho = rho_max/2 * (1 - sqrt(1 - f/f_max)), written to avoid cancellation.
        s = math.sqrt(max(0.0, 1.0 - f / fm))
        return 0.5 * self.rho_max * (f / fm) / (1.0 + s)


@dataclass(frozen=True)
class Scaled:
    """``factor * base(rho)`` with ``0 < factor <= 1``."""

    base: "FlowFunction"
    factor: float

    def __post_init__(self):
        if not 0 < self.factor <= 1:
            raise NetworkError(f"scale factor must lie in (0, 1], got {self.factor}")

    @property
    def f_max(self) -> Number:
        return self.factor * self.base.f_max

    @property
    def rho_max(self) -> float:
        return getattr(self.base, "rho_max", math.inf)

    def __call__(self, rho: float) -> float:
        return self.factor * self.base(rho)

    def derivative(self, rho: float) -> float:
        return self.factor * self.base.derivative(rho)

    def inverse(self, f: float) -> float:
        if isinstance(self.root(), ExpSaturating) and f >= self.f_max:
            raise FlowAtOrAboveCapacity(f"flow {f} >= capacity {self.f_max}")
        return self.base.inverse(f / self.factor)

    def root(self):
        fn = self.base
        while isinstance(fn, Scaled):
            fn = fn.base
        return fn

    def total_factor(self) -> float:
        c, fn = self.factor, self.base
        while isinstance(fn, Scaled):
            c *= fn.factor
            fn = fn.base
        return c


FlowFunction = Union[ExpSaturating, ConcaveQuadratic, Scaled]


def eval_flow(fn: FlowFunction, rho: float) -> float:
    return fn(rho)


def invert_flow(fn: FlowFunction, f: float) -> float:
    return fn.inverse(f)


def base_of(fn: FlowFunction) -> tuple[FlowFunction, float]:
    """Return the unscaled root function and the accumulated scale factor."""
    if isinstance(fn, Scaled):
        return fn.root(), fn.total_factor()
    return fn, 1.0


def rho_max_of(fn: FlowFunction) -> float:
    root, _ = base_of(fn)
    return root.rho_max if isinstance(root, ConcaveQuadratic) else math.inf


# ---------------------------------------------------------------------------
# Flow network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowNetwork:
    topology: Topology
    flow_fns: tuple[FlowFunction, ...]
    inflow: Number

    def __post_init__(self):
        if len(self.flow_fns) != self.topology.link_count:
            raise NetworkError("need exactly one flow function per link")
        if self.inflow < 0:
            raise NetworkError("inflow must be nonnegative")

    @property
    def f_max(self) -> list[Number]:
        return [fn.f_max for fn in self.flow_fns]

    def with_flow_fns(self, flow_fns: Sequence[FlowFunction]) -> "FlowNetwork":
        return FlowNetwork(self.topology, tuple(flow_fns), self.inflow)

    def with_inflow(self, inflow: Number) -> "FlowNetwork":
        return FlowNetwork(self.topology, self.flow_fns, inflow)

    def densities(self, flows: Sequence[float]) -> list[float]:
        """Increasing-branch inverse of every link flow."""
        return [fn.inverse(f) for fn, f in zip(self.flow_fns, flows)]


def build_network(node_count: int, links: Iterable, flow_fns: Sequence[FlowFunction],
                  inflow: Number) -> FlowNetwork:
    return FlowNetwork(validate_topology(node_count, links), tuple(flow_fns), inflow)


# ---------------------------------------------------------------------------
# Cuts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CutReport:
    cut_node_set: frozenset[int]
    crossing_links: tuple[int, ...]
    capacity: Number


def _is_exact(values) -> bool:
    return all(isinstance(x, (int, Fraction)) for x in values)


def min_cut_capacity(net: FlowNetwork) -> CutReport:
    """Max-flow/min-cut by shortest augmenting paths (Edmonds-Karp) on ``f_max``."""
    topo = net.topology
    caps = net.f_max
    tol = 0 if _is_exact(caps) else 1e-12 * max(1.0, max(float(c) for c in caps))
    flow = [0 * c for c in caps]
    source, sink = 0, topo.destination

    def residual_arcs(v):
        for e in topo.out_links[v]:
            yield e, topo.links[e].head, caps[e] - flow[e], +1
        for e in topo.in_links[v]:
            yield e, topo.links[e].tail, flow[e], -1

    while True:
        parent: dict[int, tuple[int, int, int]] = {source: (-1, -1, 0)}
        queue = deque([source])
        while queue and sink not in parent:
            v = queue.popleft()
            for e, w, room, sign in residual_arcs(v):
                if w not in parent and room > tol:
                    parent[w] = (v, e, sign)
                    queue.append(w)
        if sink not in parent:
            break
        path = []
        w = sink
        while w != source:
            v, e, sign = parent[w]
            path.append((e, sign))
            w = v
        bottleneck = min(caps[e] - flow[e] if sign > 0 else flow[e] for e, sign in path)
        for e, sign in path:
            flow[e] = flow[e] + bottleneck if sign > 0 else flow[e] - bottleneck

    reachable = frozenset(parent)
    crossing = tuple(link.link_id for link in topo.links
                     if link.tail in reachable and link.head not in reachable)
    capacity = sum((caps[e] for e in crossing), start=0 * caps[0])
    return CutReport(reachable, crossing, capacity)


def cut_capacity(net: FlowNetwork, nodes: Iterable[int]) -> Number:
    """Total ``f_max`` of links leaving the node set ``nodes``."""
    U = set(nodes)
    caps = net.f_max
    return sum((caps[l.link_id] for l in net.topology.links
                if l.tail in U and l.head not in U), start=0 * caps[0])


# ---------------------------------------------------------------------------
# Residual capacities and admissibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeResidual:
    value: Number
    argmin_node: int
    per_node: dict


def node_residuals(net: FlowNetwork, f_star: Sequence[Number]) -> dict[int, Number]:
    topo = net.topology
    caps = net.f_max
    return {v: sum((caps[e] - f_star[e] for e in topo.out_links[v]), start=0 * caps[0])
            for v in range(topo.node_count) if v != topo.destination}


def node_residual_capacity(net: FlowNetwork, f_star: Sequence[Number]) -> NodeResidual:
    """Minimum over non-destination nodes of the unused outgoing capacity.

    Ties go to the lowest node index.
    """
    caps = net.f_max
    if len(f_star) != len(caps):
        raise NetworkError("flow vector length does not match link count")
    tol = 0 if _is_exact(list(caps) + list(f_star)) else CAPACITY_MARGIN
    for e, (f, c) in enumerate(zip(f_star, caps)):
        if f > c + tol:
            raise FlowExceedsCapacity(f"link {e}: flow {f} exceeds capacity {c}")
    per_node = node_residuals(net, f_star)
    best = min(per_node, key=lambda v: (per_node[v], v))
    return NodeResidual(per_node[best], best, per_node)


def node_imbalance(net: FlowNetwork, f: Sequence[float]) -> dict[int, float]:
    """Outflow minus required inflow at every non-destination node."""
    topo = net.topology
    out = {}
    for v in range(topo.node_count):
        if v == topo.destination:
            continue
        outgoing = sum(f[e] for e in topo.out_links[v])
        incoming = net.inflow if v == 0 else sum(f[e] for e in topo.in_links[v])
        out[v] = outgoing - incoming
    return out


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    violations: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.admissible


def is_admissible_equilibrium(net: FlowNetwork, f: Sequence[float],
                              conservation_tol: float = CONSERVATION_TOL,
                              capacity_margin: float = CAPACITY_MARGIN) -> AdmissibilityReport:
    violations = []
    if len(f) != net.topology.link_count:
        return AdmissibilityReport(False, ("flow vector length does not match link count",))
    for e, (fe, cap) in enumerate(zip(f, net.f_max)):
        if fe < 0:
            violations.append(f"link {e}: negative flow {fe}")
        if fe > cap - capacity_margin:
            violations.append(f"link {e}: flow {fe} not strictly below capacity {cap}")
    for v, gap in node_imbalance(net, f).items():
        if abs(gap) > conservation_tol:
            violations.append(f"node {v}: conservation violated by {gap:.3e}")
    return AdmissibilityReport(not violations, tuple(violations))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


class MalformedInput(NetworkError):
    """Input document is structurally broken (missing fields, wrong types)."""


def _number(x, exact: bool):
    if isinstance(x, bool) or not isinstance(x, (int, float, str, Fraction)):
        raise MalformedInput(f"expected a number, got {x!r}")
    return Fraction(str(x)) if exact else float(x)


def flow_fn_from_dict(data: dict, exact: bool = False) -> FlowFunction:
    """``exact`` reads capacities as fractions of their decimal literals."""
    kind = data["kind"]
    if kind == "exp":
        fn = ExpSaturating(_number(data["f_max"], exact), float(data["a"]))
    elif kind == "quad":
        fn = ConcaveQuadratic(_number(data["f_max"], exact), float(data["rho_max"]))
    else:
        raise NetworkError(f"unknown flow function kind {kind!r}")
    if "scale" in data:
        fn = Scaled(fn, float(data["scale"]))
    return fn


def flow_fn_to_dict(fn: FlowFunction) -> dict:
    root, factor = base_of(fn)
    if isinstance(root, ExpSaturating):
        out = {"kind": "exp", "f_max": float(root.f_max), "a": root.a}
    else:
        out = {"kind": "quad", "f_max": float(root.f_max), "rho_max": root.rho_max}
    if factor != 1.0:
        out["scale"] = factor
    return out


def network_from_dict(data: dict, exact: bool = False) -> FlowNetwork:
    try:
        links = [Link(int(l["id"]), int(l["tail"]), int(l["head"])) for l in data["links"]]
        by_id = {int(l["id"]): l for l in data["links"]}
        if len(by_id) != len(links):
            raise TopologyError("duplicate link id")
        topo = validate_topology(int(data["nodes"]), links)
        fns = tuple(flow_fn_from_dict(by_id[e]["flow_fn"], exact) for e in range(len(links)))
        return FlowNetwork(topo, fns, _number(data["inflow"], exact))
    except (KeyError, TypeError, AttributeError) as exc:
        raise MalformedInput(f"malformed network description: {exc!r}") from exc


def network_to_dict(net: FlowNetwork) -> dict:
    return {
        "nodes": net.topology.node_count,
        "inflow": float(net.inflow),
        "links": [
            {"id": l.link_id, "tail": l.tail, "head": l.head,
             "flow_fn": flow_fn_to_dict(net.flow_fns[l.link_id])}
            for l in net.topology.links
        ],
    }


def load_network(path: Union[str, Path], exact: bool = False) -> FlowNetwork:
    with open(path) as fh:
        return network_from_dict(json.load(fh), exact)
