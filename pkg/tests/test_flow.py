from __future__ import annotations

import numpy as np
import pytest
import sympy as sp

from srclab.expr import VectorField
from srclab.flow import (
    DomainExitError,
    GeodesicShooter,
    flow_transport,
    integrate_hamiltonian,
    reeb_transport,
    solve_geodesic_bvp,
)
from srclab.hamiltonian import (
    HEISENBERG_METRICS,
    MetricCoeffs,
    get_structure,
    heisenberg_frame,
    metric_hamiltonian,
    reeb_field,
)

FLAT_H = metric_hamiltonian(heisenberg_frame(), MetricCoeffs.identity())


def heisenberg_closed_form(c, s, a, t):
    """Arclength geodesic of h/2 from 0 with (v1, v2) = (c, s), p3 = a; derived with sympy."""
    tt = sp.symbols("t", real=True)
    if a == 0:
        x, y = c * tt, s * tt
    else:
        x = (c * sp.sin(a * tt) + s * sp.cos(a * tt) - s) / a
        y = (s * sp.sin(a * tt) - c * sp.cos(a * tt) + c) / a
    v2 = sp.diff(y, tt)
    z = sp.integrate(sp.expand(x * v2), (tt, 0, t))
    return np.array([float(x.subs(tt, t)), float(y.subs(tt, t)), float(z)])


class TestIntegrate:
    def test_straight_geodesic(self):
        tr = integrate_hamiltonian(FLAT_H, ((0, 0, 0), (1, 0, 0)), 1.0, 1e-3, scale=0.5)
        assert np.allclose(tr.final[:3], [1, 0, 0], atol=1e-14)
        assert tr.energy_drift <= 1e-10

    def test_unscaled_hamiltonian_runs_twice_as_fast(self):
        tr = integrate_hamiltonian(FLAT_H, ((0, 0, 0), (1, 0, 0)), 1.0, 1e-3)
        assert np.allclose(tr.final[:3], [2, 0, 0], atol=1e-14)

    def test_reeb_flow_of_flat_heisenberg(self):
        u = reeb_field(heisenberg_frame(), MetricCoeffs.identity()).u_h
        q0 = np.array([0.3, -0.2, 0.5])
        tr = integrate_hamiltonian(u, (q0, (0.1, 0.4, -1.0)), 1.5, 0.01)
        assert np.allclose(tr.q, q0 + np.outer(tr.times, [0, 0, -1]), atol=1e-13)

    def test_zero_duration(self):
        tr = integrate_hamiltonian(FLAT_H, ((0.1, 0.2, 0.3), (1, 2, 3)), 0.0, 1e-3)
        assert tr.states.shape == (1, 6)
        assert np.allclose(tr.final, [0.1, 0.2, 0.3, 1, 2, 3])

    def test_bad_step(self):
        with pytest.raises(ValueError):
            integrate_hamiltonian(FLAT_H, ((0, 0, 0), (1, 0, 0)), 1.0, 0.0)

    def test_domain_exit(self):
        with pytest.raises(DomainExitError):
            integrate_hamiltonian(FLAT_H, ((0, 0, 0), (1, 0, 0)), 3.0, 1e-2, scale=0.5,
                                  domain=((-1, 1),) * 3)

    @pytest.mark.parametrize("key", ["flat", "sheared", "unimodular-z", "conformal"])
    def test_energy_conservation(self, key):
        s = get_structure("heisenberg-flat", key)
        h = metric_hamiltonian(s.frame, s.metric)
        tr = integrate_hamiltonian(h, ((0.1, 0.0, 0.2), (0.3, -0.4, 0.5)), 10.0, 1e-3, scale=0.5)
        assert tr.relative_energy_drift <= 1e-9

    def test_fourth_order(self):
        c, s, a = np.cos(0.7), np.sin(0.7), 3.0
        exact = heisenberg_closed_form(c, s, a, 2.0)
        p0 = (c, s, a)
        errs = []
        for step in (0.1, 0.05):
            tr = integrate_hamiltonian(FLAT_H, ((0, 0, 0), p0), 2.0, step, scale=0.5)
            errs.append(np.linalg.norm(tr.final[:3] - exact))
        assert 13.0 <= errs[0] / errs[1] <= 19.0

    def test_closed_form_agreement(self):
        c, s, a = np.cos(2.0), np.sin(2.0), -1.3
        tr = integrate_hamiltonian(FLAT_H, ((0, 0, 0), (c, s, a)), 1.7, 1e-3, scale=0.5)
        assert np.allclose(tr.final[:3], heisenberg_closed_form(c, s, a, 1.7), atol=1e-12)

    def test_adaptive_matches_fixed(self):
        s = get_structure("heisenberg-flat", "sheared")
        h = metric_hamiltonian(s.frame, s.metric)
        xi0 = ((0.1, 0.0, 0.2), (0.3, -0.4, 0.5))
        a = integrate_hamiltonian(h, xi0, 2.0, 1e-3)
        b = integrate_hamiltonian(h, xi0, 2.0, 1e-3, adaptive=True)
        assert np.allclose(a.states, b.states, atol=1e-9)

    def test_csv_dump(self, tmp_path):
        tr = integrate_hamiltonian(FLAT_H, ((0, 0, 0), (1, 0, 0)), 0.01, 1e-3)
        tr.to_csv(tmp_path / "traj.csv")
        lines = (tmp_path / "traj.csv").read_text().splitlines()
        assert lines[0] == "t,x1,x2,x3,p1,p2,p3,H"
        assert len(lines) == 12


class TestTransport:
    @pytest.mark.parametrize("t", [0.0, 0.4, -0.7])
    def test_flat_heisenberg_identity(self, t):
        tr = reeb_transport(heisenberg_frame(), MetricCoeffs.identity(), (0.2, 0.1, 0.0), t, 1e-2)
        assert np.allclose(tr.matrices, np.eye(3), atol=1e-14)
        assert np.allclose(tr.base[-1], [0.2, 0.1, -t])

    @pytest.mark.parametrize("key", ["sheared", "conformal"])
    def test_composition(self, key):
        s = get_structure("heisenberg-flat", key)
        rng = np.random.default_rng(5)
        for _ in range(3):
            q = rng.uniform(-0.5, 0.5, 3)
            a, b = rng.uniform(-0.2, 0.2, 2)
            A = reeb_transport(s.frame, s.metric, q, a, 1e-3)
            B = reeb_transport(s.frame, s.metric, A.base[-1], b, 1e-3)
            # same step count along the full interval for a clean comparison
            full = reeb_transport(s.frame, s.metric, q, a + b, 1e-3)
            assert np.max(np.abs(B.final @ A.final - full.final)) <= 1e-8
            assert np.allclose(B.base[-1], full.base[-1], atol=1e-8)

    def test_agrees_with_lift_flow(self):
        s = get_structure("heisenberg-flat", "sheared")
        u = reeb_field(s.frame, s.metric).u_h
        q, xi = np.array([0.2, -0.1, 0.4]), np.array([0.3, -1.0, 0.7])
        tr = reeb_transport(s.frame, s.metric, q, 0.3, 1e-3)
        ham = integrate_hamiltonian(u, (q, xi), 0.3, 1e-3)
        assert np.allclose(ham.final[3:], tr.apply(xi), atol=1e-12)

    def test_transport_preserves_h_on_invariant_metric(self):
        s = get_structure("heisenberg-flat", "flat")
        tr = reeb_transport(s.frame, s.metric, (0.1, 0.2, 0.3), 0.5, 1e-2)
        h = metric_hamiltonian(s.frame, s.metric)
        xi = np.array([0.4, -0.3, 1.1])
        assert h(tr.base[-1], tr.apply(xi)) == pytest.approx(h(tr.base[0], xi), abs=1e-13)

    def test_exit_from_box(self):
        f1 = VectorField.parse(["1", "0", "0"])
        with pytest.raises(DomainExitError):
            flow_transport(f1, (0.9, 0, 0), 0.5, 0.01, domain=((-1, 1),) * 3)


MARTINET_H = metric_hamiltonian(get_structure("martinet-flat").frame, MetricCoeffs.identity())


class TestBvp:
    def test_heisenberg_straight_segment(self):
        sols = solve_geodesic_bvp(FLAT_H, (0, 0, 0), (1, 0, 0), restarts=32, seed=3)
        assert sols.multiplicity == 1
        assert sols.distance == pytest.approx(1.0, abs=1e-8)
        assert all(s.terminal_error < 1e-7 for s in sols)

    def test_trivial(self):
        sols = solve_geodesic_bvp(FLAT_H, (0.1, 0, 0), (0.1, 0, 0))
        assert sols.distance == 0.0 and sols.multiplicity == 1

    def test_heisenberg_vertical_distance(self):
        sols = solve_geodesic_bvp(FLAT_H, (0, 0, 0), (0, 0, 0.1), restarts=32, seed=1)
        assert sols.distance == pytest.approx(np.sqrt(4 * np.pi * 0.1), rel=1e-6)

    def test_martinet_cut_point(self):
        sols = solve_geodesic_bvp(MARTINET_H, (0, 0, 0), (0, 0.2, 0.01), restarts=64, seed=0)
        assert sols.multiplicity >= 2
        lengths = [s.length for s in sols.minimal]
        assert max(lengths) - min(lengths) <= 1e-6

    def test_reflection_equivariance(self):
        a = solve_geodesic_bvp(MARTINET_H, (0, 0, 0), (0.08, 0.15, 0.004), restarts=32, seed=2)
        b = solve_geodesic_bvp(MARTINET_H, (0, 0, 0), (-0.08, 0.15, 0.004), restarts=32, seed=2)
        assert a.distance == pytest.approx(b.distance, abs=1e-6)
        # reflected solutions are solutions of the reflected problem with equal length
        sh = GeodesicShooter(MARTINET_H, (0, 0, 0))
        for s in a:
            p = s.p0 * np.array([-1, 1, 1])
            end = sh.shoot(p, s.T)[0, :3]
            assert np.allclose(end, [-0.08, 0.15, 0.004], atol=1e-7)

    def test_determinism(self):
        a = solve_geodesic_bvp(MARTINET_H, (0, 0, 0), (0.1, 0.1, 0.003), restarts=16, seed=11)
        b = solve_geodesic_bvp(MARTINET_H, (0, 0, 0), (0.1, 0.1, 0.003), restarts=16, seed=11)
        assert [(s.length, s.restart, tuple(s.p0)) for s in a] == [(s.length, s.restart, tuple(s.p0)) for s in b]

    def test_normalization(self):
        sols = solve_geodesic_bvp(MARTINET_H, (0, 0, 0), (0.1, 0.1, 0.003), restarts=16, seed=11)
        for s in sols:
            assert MARTINET_H((0, 0, 0), s.p0) == pytest.approx(1.0, abs=1e-12)


def test_catalog_metrics_all_present():
    assert {"flat", "unimodular-z", "phi", "sheared", "conformal"} <= set(HEISENBERG_METRICS)
