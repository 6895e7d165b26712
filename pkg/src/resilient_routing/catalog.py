"""Ready-made networks used by the tests, scenarios and CLI sweeps."""

from __future__ import annotations

import math
from fractions import Fraction as Fr
from typing import Sequence

from .dynamics import Perturbation
from .network import ConcaveQuadratic, ExpSaturating, FlowNetwork, build_network

# origin -> 2 directly, or origin -> 1 -> 2 over two parallel links
DETOUR_LINKS = [(0, 2), (0, 1), (1, 2), (1, 2)]
# origin -> {1, 2} -> 3
DIAMOND_LINKS = [(0, 1), (0, 2), (1, 3), (2, 3)]
# three-layer grid feeding node 8
GRID_LINKS = [
    (0, 1), (0, 2), (0, 3),
    (1, 4), (2, 4), (2, 5), (3, 5), (3, 7), (1, 6),
    (4, 6), (5, 7), (4, 8), (5, 8), (6, 8), (7, 8),
]


def _exp_links(f_max: Sequence, a) -> list:
    a = [a] * len(f_max) if not isinstance(a, (list, tuple)) else list(a)
    return [ExpSaturating(F, ai) for F, ai in zip(f_max, a)]


def detour_network(f_max: Sequence, a, inflow) -> FlowNetwork:
    return build_network(3, DETOUR_LINKS, _exp_links(f_max, a), inflow)


def diamond_network(f_max: Sequence, inflow, a=1.0) -> FlowNetwork:
    return build_network(4, DIAMOND_LINKS, _exp_links(f_max, a), inflow)


def parallel_network(f_max: Sequence, inflow, a=1.0) -> FlowNetwork:
    return build_network(2, [(0, 1)] * len(f_max), _exp_links(f_max, a), inflow)


def single_path_network(f_max: Sequence, inflow, a=1.0) -> FlowNetwork:
    links = [(k, k + 1) for k in range(len(f_max))]
    return build_network(len(f_max) + 1, links, _exp_links(f_max, a), inflow)


# ---------------------------------------------------------------------------
# Detour network instances
# ---------------------------------------------------------------------------


def overflow_detour():
    """Detour network whose bypass node is the bottleneck; returns ``(net, f*)``."""
    net = detour_network([2, 2, Fr(3, 4), Fr(3, 4)], 1.0, 2)
    return net, [Fr(3, 2), Fr(1, 2), Fr(1, 4), Fr(1, 4)]


OVERFLOW_FRACTIONS = {0: [0.75, 0.25], 1: [0.5, 0.5]}


def anarchy_rate(eps: float) -> float:
    """Common rate on the three slow links that makes the stated Wardrop split exact."""
    return (3 * eps / (1 - eps)) * (math.log((eps + eps**2) / (1 + eps**2))
                                    / math.log((1 + eps**2 - eps) / (1 + eps**2)))


def anarchy_detour(eps: float) -> FlowNetwork:
    """Detour network whose Wardrop flow is far less robust than the optimum."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    big = 1 / eps + eps
    small = 1 / (2 * eps) + eps / 2
    r = anarchy_rate(eps)
    return detour_network([big, big, small, small], [1.0, r, r, r], 1 / eps)


def anarchy_wardrop_flow(eps: float) -> list:
    return [1.0, 1 / eps - 1, 1 / (2 * eps) - 0.5, 1 / (2 * eps) - 0.5]


def delay_tradeoff_detour() -> FlowNetwork:
    """Detour network with a slow-but-wide direct link and fast narrow bypass."""
    return detour_network([2, 2, 0.75, 0.75], [0.01, 10, 10, 10], 2)


# ---------------------------------------------------------------------------
# Diamond gap instance
# ---------------------------------------------------------------------------


def lopsided_diamond(eps):
    """Diamond with one wide and one narrow branch; returns ``(net, f*)``."""
    net = diamond_network([1 / eps, 1, 1 / eps, 1], 1)
    return net, [eps, 1 - eps, eps, 1 - eps]


# ---------------------------------------------------------------------------
# Finite-density grid
# ---------------------------------------------------------------------------

GRID_F_MAX = [Fr(5, 2), Fr(5, 2), Fr(5, 2), Fr(9, 10), Fr(7, 4), Fr(1), Fr(7, 10), Fr(7, 10),
              Fr(2, 5), Fr(3, 2), Fr(1), Fr(3, 2), Fr(1), Fr(2), Fr(8, 5)]
GRID_F_STAR = [Fr(1, 2), Fr(2), Fr(1, 2), Fr(3, 10), Fr(3, 2), Fr(1, 2), Fr(1, 4), Fr(1, 4),
               Fr(1, 5), Fr(9, 10), Fr(9, 20), Fr(9, 10), Fr(3, 10), Fr(11, 10), Fr(7, 10)]
GRID_RHO_MAX = 3.0
GRID_INFLOW = 3


def cascade_grid():
    """Nine-node grid with concave-quadratic links; returns ``(net, f*)``."""
    fns = [ConcaveQuadratic(F, GRID_RHO_MAX) for F in GRID_F_MAX]
    return build_network(9, GRID_LINKS, fns, GRID_INFLOW), list(GRID_F_STAR)


def grid_single_cut() -> Perturbation:
    """Weakens one link leaving node 4 (``delta = 0.7``)."""
    return Perturbation({9: Fr(8, 15)})


def grid_wide_damage() -> Perturbation:
    """Weakens eight middle-layer links (``delta = 4``)."""
    return Perturbation({3: Fr(2, 9), 4: Fr(23, 35), 5: Fr(4, 5), 6: Fr(2, 7), 7: Fr(2, 7),
                         8: Fr(1, 2), 9: Fr(3, 5), 11: Fr(8, 15)})
