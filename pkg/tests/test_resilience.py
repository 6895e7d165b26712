from fractions import Fraction as Fr

import pytest

from resilient_routing import catalog
from resilient_routing.dynamics import FULLY_TRANSFERRING, perturbation_magnitude
from resilient_routing.equilibrium import maximize_resilience, wardrop_equilibrium
from resilient_routing.network import node_residual_capacity
from resilient_routing.resilience import (DeltaExceedsNodeCapacity, NotAnEquilibrium,
                                          adversarial_perturbation, price_of_anarchy, run_probe,
                                          strong_resilience_probe)
from resilient_routing.routing import LocallyResponsiveExp


def _floats(xs):
    return [float(x) for x in xs]


class TestAdversarialPerturbation:
    def test_uniform_scaling(self, overflow):
        net, _ = overflow
        p = adversarial_perturbation(net, 1, Fr(3, 4))
        assert p.scales == {2: Fr(1, 2), 3: Fr(1, 2)}

    def test_zero(self, overflow):
        assert adversarial_perturbation(overflow[0], 1, 0).scales == {}

    def test_too_large(self, overflow):
        with pytest.raises(DeltaExceedsNodeCapacity):
            adversarial_perturbation(overflow[0], 1, 1.5)

    @pytest.mark.property
    def test_magnitude(self, grid, rng):
        net, _ = grid
        for _ in range(200):
            v = int(rng.integers(0, 8))
            kappa = sum(float(net.flow_fns[e].f_max) for e in net.topology.out_links[v])
            delta = float(rng.uniform(0, kappa))
            mag = perturbation_magnitude(net, adversarial_perturbation(net, v, delta))
            assert abs(float(mag.delta_total) - delta) <= 1e-12 * max(1.0, kappa)


class TestProbe:
    def test_overflow_detour(self, overflow):
        net, f = overflow
        pol = LocallyResponsiveExp.from_equilibrium(net, f, 1.0)
        report = strong_resilience_probe(net, pol, _floats(f))
        assert report.analytic_R == 1.0
        assert report.argmin_node == 1
        lo, hi = report.bracket
        assert 0.95 <= lo < hi <= 1.05
        assert report.weak_upper_bound == 3.5
        assert report.strong_gap == pytest.approx(0.5)

    def test_rejects_non_equilibrium(self, overflow):
        net, f = overflow
        pol = LocallyResponsiveExp.from_equilibrium(net, f, 1.0)
        with pytest.raises(NotAnEquilibrium):
            strong_resilience_probe(net, pol, [1.0, 1.0, 0.5, 0.5])

    def test_probe_files(self, overflow, tmp_path):
        net, f = overflow
        pol = LocallyResponsiveExp.from_equilibrium(net, f, 1.0)
        report = strong_resilience_probe(net, pol, _floats(f), max_bisections=2)
        report.write_probe_csv(tmp_path / "probe.csv")
        lines = (tmp_path / "probe.csv").read_text().splitlines()
        assert lines[0] == "delta,verdict,lim_lambda_n"
        assert len(lines) == 1 + len(report.probes)


def _responsive_cases():
    net, f = catalog.overflow_detour()
    yield net, _floats(f)
    net, f = catalog.lopsided_diamond(0.5)
    yield net, f
    net = catalog.diamond_network([2, 2, 2, 2], 2)
    yield net, [1.0, 1.0, 1.0, 1.0]


@pytest.mark.property
@pytest.mark.parametrize("case", range(3))
def test_threshold_matches_residual_capacity(case):
    net, f = list(_responsive_cases())[case]
    pol = LocallyResponsiveExp.from_equilibrium(net, f, 1.0)
    R = node_residual_capacity(net, f)
    R_val = float(R.value)
    for v in net.topology.non_destination_nodes():
        for delta in (0.5 * R_val, 0.95 * R_val):
            assert run_probe(net, pol, f, v, delta).verdict == FULLY_TRANSFERRING
    assert not run_probe(net, pol, f, R.argmin_node, 1.05 * R_val).transferring


class TestPriceOfAnarchy:
    def test_parallel_is_free(self):
        net = catalog.parallel_network([2, 2], 2)
        assert price_of_anarchy(net, [0.5, 1.5]) == pytest.approx(0, abs=1e-9)

    def test_wardrop_flow_on_anarchy_network(self):
        net = catalog.anarchy_detour(0.5)
        w = wardrop_equilibrium(net)
        assert price_of_anarchy(net, w.f) == pytest.approx(1.0, abs=1e-6)

    def test_zero_at_optimum(self):
        net = catalog.delay_tradeoff_detour()
        assert price_of_anarchy(net, maximize_resilience(net).f_opt) == pytest.approx(0, abs=1e-9)

    @pytest.mark.property
    def test_nonnegative(self, rng):
        net = catalog.anarchy_detour(0.4)
        lam = float(net.inflow)
        F = _floats(net.f_max)
        for _ in range(50):
            x = rng.uniform(max(0, lam - F[0]), min(lam, F[1]))
            direct = lam - x
            s = rng.uniform(max(0, x - F[3]), min(x, F[2]))
            assert price_of_anarchy(net, [direct, x, s, x - s]) >= -1e-9
