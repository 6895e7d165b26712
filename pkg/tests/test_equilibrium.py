import itertools
import math

import numpy as np
import pytest

from resilient_routing import catalog
from resilient_routing.equilibrium import (DesiredFlowHasZeroLink, Infeasible, UnsupportedVariant,
                                           WardropHasZeroFlowLink, ZeroInflow, _polytope, average_delay, beckmann_potential,
                                           enumerate_paths, eval_delay, link_delays,
                                           maximize_resilience, min_delay_with_resilience,
                                           resilience_delay_sweep, synthesize_tolls,
                                           wardrop_equilibrium)
from resilient_routing.lp import linprog
from resilient_routing.network import (ConcaveQuadratic, ExpSaturating, build_network,
                                       min_cut_capacity, node_residual_capacity)

BRIDGE_LINKS = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]


class TestDelay:
    def test_at_zero(self):
        assert eval_delay(ExpSaturating(2, 1), 0.0) == 0.5

    def test_interior(self):
        assert eval_delay(ExpSaturating(2, 1), 1.0) == pytest.approx(0.693147, abs=1e-6)

    def test_at_capacity(self):
        assert eval_delay(ExpSaturating(2, 1), 2.0) == math.inf

    def test_continuous_at_zero(self):
        assert eval_delay(ExpSaturating(2, 1), 1e-12) == pytest.approx(0.5, rel=1e-9)

    def test_increasing(self):
        vals = [eval_delay(ExpSaturating(2, 0.4), f) for f in np.linspace(0, 1.99, 200)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_quadratic_unsupported(self):
        with pytest.raises(UnsupportedVariant):
            eval_delay(ConcaveQuadratic(1, 3), 0.5)

    def test_average_single_link(self):
        net = catalog.single_path_network([2], 1)
        assert average_delay(net, [1.0]) == pytest.approx(0.693147, abs=1e-6)

    def test_average_empty(self):
        net = catalog.parallel_network([2, 2], 2)
        assert average_delay(net, [0.0, 0.0]) == 0.0

    def test_average_needs_inflow(self):
        with pytest.raises(ZeroInflow):
            average_delay(catalog.parallel_network([2, 2], 0), [0.0, 0.0])

    def test_average_at_capacity(self):
        assert average_delay(catalog.parallel_network([2, 2], 2), [2.0, 0.0]) == math.inf


def test_paths_of_detour():
    ps = enumerate_paths(catalog.overflow_detour()[0].topology)
    assert sorted(ps.paths) == [(0,), (1, 2), (1, 3)]
    assert ps.incidence.shape == (3, 4)


def _vertex_max_resilience(net):
    """Largest t over all basic solutions of the resilience LP in (f, t)."""
    topo = net.topology
    n = topo.link_count
    F = np.array([float(x) for x in net.f_max])
    nodes = topo.non_destination_nodes()
    rows, rhs = [], []
    for e in range(n):
        r = np.zeros(n + 1); r[e] = 1; rows.append(r); rhs.append(F[e])
        r = np.zeros(n + 1); r[e] = -1; rows.append(r); rhs.append(0.0)
    for v in nodes:
        r = np.zeros(n + 1); r[list(topo.out_links[v])] = 1; r[n] = 1
        rows.append(r); rhs.append(F[list(topo.out_links[v])].sum())
    eq = []
    for v in nodes:
        r = np.zeros(n + 1)
        r[list(topo.out_links[v])] = 1
        r[list(topo.in_links[v])] -= 1
        eq.append((r, float(net.inflow) if v == 0 else 0.0))
    G, h = np.array(rows), np.array(rhs)
    E = np.array([r for r, _ in eq]); d = np.array([x for _, x in eq])
    free = n + 1 - np.linalg.matrix_rank(E)
    best = -math.inf
    for active in itertools.combinations(range(len(rows)), free):
        M = np.vstack([E, G[list(active)]])
        if np.linalg.matrix_rank(M) < n + 1:
            continue
        x = np.linalg.lstsq(M, np.concatenate([d, h[list(active)]]), rcond=None)[0]
        if np.all(G @ x <= h + 1e-9) and np.allclose(E @ x, d, atol=1e-9):
            best = max(best, x[n])
    return best


def _small_networks(rng):
    """Random instances with at most five links, inflow strictly below the min cut."""
    def loaded(net):
        return net.with_inflow(float(rng.uniform(0.1, 0.9)) * float(min_cut_capacity(net).capacity))

    nets = []
    for _ in range(6):
        nets.append(loaded(catalog.detour_network(rng.uniform(0.5, 3, size=4), 1.0, 0.0)))
        nets.append(loaded(catalog.diamond_network(rng.uniform(0.5, 3, size=4), 0.0)))
        fns = [ExpSaturating(x, 1.0) for x in rng.uniform(0.5, 3, size=5)]
        nets.append(loaded(build_network(4, BRIDGE_LINKS, fns, 0.0)))
    nets.append(loaded(catalog.parallel_network(rng.uniform(0.5, 3, size=3), 0.0)))
    return nets


class TestMaximizeResilience:
    def test_delay_tradeoff_network(self):
        res = maximize_resilience(catalog.delay_tradeoff_detour())
        assert res.objective == pytest.approx(1.5, abs=1e-8)
        assert res.f_opt == pytest.approx([2, 0, 0, 0], abs=1e-8)

    def test_anarchy_network(self):
        # the bypass node's own capacity caps the max-min residual below 1/eps + 2 eps
        res = maximize_resilience(catalog.anarchy_detour(0.5))
        assert res.objective == pytest.approx(2.5, abs=1e-8)

    def test_parallel(self):
        assert maximize_resilience(catalog.parallel_network([2, 2], 2)).objective == pytest.approx(2)

    def test_inflow_at_cut(self):
        with pytest.raises(Infeasible):
            maximize_resilience(catalog.parallel_network([1, 1], 2))

    @pytest.mark.property
    def test_matches_vertex_enumeration(self, rng):
        for net in _small_networks(rng):
            res = maximize_resilience(net)
            assert res.objective == pytest.approx(_vertex_max_resilience(net), abs=1e-6)
            assert float(node_residual_capacity(net, res.f_opt).value) == pytest.approx(res.objective, abs=1e-9)

    def test_optimum_is_feasible(self):
        net = catalog.anarchy_detour(0.3)
        f = maximize_resilience(net).f_opt
        A_ub, b_ub, A_eq, b_eq = _polytope(net, 1.0)
        assert np.all(A_ub @ f <= b_ub + 1e-7)
        assert np.allclose(A_eq @ f, b_eq, atol=1e-7)


def _interior_points(net, rng, count):
    A_ub, b_ub, A_eq, b_eq = _polytope(net, 0.95)
    verts = [linprog(rng.normal(size=net.topology.link_count), A_ub, b_ub, A_eq, b_eq).x
             for _ in range(8)]
    pts = []
    for _ in range(count):
        w = rng.dirichlet(np.ones(len(verts)))
        pts.append(np.clip(w @ np.asarray(verts), 0, None))
    return pts


class TestMinDelay:
    def test_unconstrained_optimum(self):
        res = min_delay_with_resilience(catalog.delay_tradeoff_detour(), 0.0)
        assert res.objective == pytest.approx(15.17, rel=0.01)
        assert res.f_opt == pytest.approx([0.5, 1.5, 0.75, 0.75], abs=0.02)

    def test_delay_at_full_resilience(self):
        res = min_delay_with_resilience(catalog.delay_tradeoff_detour(), 1.5)
        assert res.f_opt[0] == pytest.approx(2, abs=0.01)
        assert res.extra["b_effective"] <= 1.5

    def test_above_maximum(self):
        with pytest.raises(Infeasible):
            min_delay_with_resilience(catalog.delay_tradeoff_detour(), 1.6)

    def test_sweep_is_monotone(self):
        rows = resilience_delay_sweep(catalog.delay_tradeoff_detour(), 6)
        D = [r.objective for r in rows]
        assert all(b >= a - 1e-9 for a, b in zip(D, D[1:]))
        for r in rows:
            assert r.extra["R_of_f"] >= r.extra["b_effective"] - 1e-7

    @pytest.mark.property
    def test_delay_is_convex_along_segments(self, rng):
        net = catalog.delay_tradeoff_detour()
        pts = _interior_points(net, rng, 20)
        for p, q in zip(pts[::2], pts[1::2]):
            Dp, Dq = average_delay(net, p), average_delay(net, q)
            for s in np.linspace(0, 1, 11):
                assert average_delay(net, (1 - s) * p + s * q) <= (1 - s) * Dp + s * Dq + 1e-9


@pytest.mark.property
def test_potential_gradient_matches_delay(rng):
    net = catalog.anarchy_detour(0.4)
    F = np.array([float(x) for x in net.f_max])
    h = 1e-6
    for _ in range(50):
        f = rng.uniform(0.02, 0.95, size=4) * F
        num = np.array([(beckmann_potential(net, f + h * np.eye(4)[e])
                         - beckmann_potential(net, f - h * np.eye(4)[e])) / (2 * h) for e in range(4)])
        assert num == pytest.approx(link_delays(net, f), rel=1e-4)


class TestWardrop:
    def test_anarchy_network(self):
        res = wardrop_equilibrium(catalog.anarchy_detour(0.5))
        assert res.f == pytest.approx([1, 1, 0.5, 0.5], abs=1e-3)
        assert res.kkt_residual <= 1e-5

    def test_single_path(self):
        res = wardrop_equilibrium(catalog.single_path_network([2, 3], 1.2))
        assert res.f == pytest.approx([1.2, 1.2], abs=1e-9)

    def test_symmetric_parallel(self):
        res = wardrop_equilibrium(catalog.parallel_network([2, 2], 1.5))
        assert res.f == pytest.approx([0.75, 0.75], abs=1e-6)

    @pytest.mark.property
    def test_used_paths_have_equal_cost(self, rng):
        for net in _small_networks(rng):
            res = wardrop_equilibrium(net)
            best = res.path_costs.min()
            for p in res.used_paths:
                assert abs(res.path_costs[p] - best) <= 1e-5 * best


class TestTolls:
    net = catalog.anarchy_detour(0.5)

    def test_interior_target(self):
        res = synthesize_tolls(self.net, [0.8, 1.2, 0.6, 0.6])
        assert np.all(res.tolls >= 0)
        assert res.residual <= 1e-6

    def test_wardrop_target_needs_no_toll(self):
        w = wardrop_equilibrium(self.net)
        res = synthesize_tolls(self.net, w.f, wardrop=w)
        assert res.factor == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(res.tolls)) <= 1e-9

    def test_larger_factor_verifies(self):
        base = synthesize_tolls(self.net, [0.8, 1.2, 0.6, 0.6])
        res = synthesize_tolls(self.net, [0.8, 1.2, 0.6, 0.6], factor=2 * base.factor)
        assert res.residual <= 1e-6
        assert np.all(res.tolls >= base.tolls)

    def test_factor_too_small(self):
        base = synthesize_tolls(self.net, [0.8, 1.2, 0.6, 0.6])
        with pytest.raises(ValueError):
            synthesize_tolls(self.net, [0.8, 1.2, 0.6, 0.6], factor=0.5 * base.factor)

    def test_target_with_empty_link(self):
        with pytest.raises(DesiredFlowHasZeroLink):
            synthesize_tolls(self.net, [1.0, 1.0, 1.0, 0.0])

    def test_wardrop_with_empty_link(self):
        # the direct link is so slow that the Wardrop flow avoids it entirely
        net = catalog.detour_network([2, 2, 2, 2], [0.001, 10, 10, 10], 0.5)
        with pytest.raises(WardropHasZeroFlowLink):
            synthesize_tolls(net, [0.1, 0.4, 0.2, 0.2])
