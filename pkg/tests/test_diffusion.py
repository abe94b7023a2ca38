from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srclab.diffusion import (
    GridAxis,
    GridMetricField,
    GridModel,
    KappaPreconditionError,
    StabilityBoundError,
    SymbolicModel,
    averaging_step,
    det_transport_check,
    evolve_heat,
    heat_rhs,
    invariance_residual,
    kappa_estimate,
    orbit_transport,
    scaled_averaging_step,
)
from srclab.hamiltonian import (
    HEISENBERG_METRICS,
    MetricCoeffs,
    get_structure,
    heisenberg_frame,
    metric_hamiltonian,
    poisson_bracket,
    reeb_field,
)

FRAME = heisenberg_frame()
Z_AXES = (GridAxis(0, 0, 1), GridAxis(0, 0, 1), GridAxis(-np.pi, np.pi, 64))
UNIMODULAR = MetricCoeffs.parse(*HEISENBERG_METRICS["unimodular-z"])


def z_field(metric=UNIMODULAR, axes=Z_AXES):
    return GridMetricField.from_metric(FRAME, metric, axes)


def znodes(field):
    return field.axes[2].nodes


class TestGrid:
    def test_periodic_interpolation_is_exact_for_trig_polynomials(self):
        ax = GridAxis(-np.pi, np.pi, 16)
        x = np.linspace(-4, 4, 37)
        vals = np.sin(3 * ax.nodes) + np.cos(8 * ax.nodes)
        assert np.allclose(ax.weights(x) @ vals, np.sin(3 * x) + np.cos(8 * x), atol=1e-12)
        assert np.allclose(ax.weights(x, 2) @ vals, -9 * np.sin(3 * x) - 64 * np.cos(8 * x), atol=1e-10)

    def test_spectral_derivative(self):
        ax = GridAxis(0, 2 * np.pi, 32)
        f = np.exp(np.sin(ax.nodes))
        assert np.allclose(ax.derivative(f), np.cos(ax.nodes) * f, atol=1e-12)

    def test_bounded_axis_spline(self):
        ax = GridAxis(0, 1, 11, periodic=False)
        assert np.allclose(ax.weights([0.33]) @ ax.nodes**3, 0.33**3, atol=1e-14)

    def test_rejects_indefinite(self):
        from srclab.hamiltonian import NotPositiveDefiniteError

        with pytest.raises(NotPositiveDefiniteError):
            GridMetricField.from_metric(FRAME, MetricCoeffs.parse("1", "2", "1"), Z_AXES)

    def test_immutable(self):
        f = z_field()
        with pytest.raises(ValueError):
            f.values[0, 0, 0, 0] = 3.0

    def test_csv(self, tmp_path):
        f = z_field()
        f.to_csv(tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0] == "x1,x2,x3,a11,a12,a22" and len(lines) == 65


class TestModel:
    METRIC = MetricCoeffs.parse("1 + 0.2*sin(x3)", "0.1*cos(x3)", "1 + 0.1*sin(2*x3)")

    @pytest.mark.parametrize("orientation", [1, -1])
    def test_grid_reeb_matches_geometric(self, orientation):
        frame = heisenberg_frame(orientation)
        g = GridModel(GridMetricField.from_metric(frame, self.METRIC, Z_AXES))
        s = SymbolicModel(frame, self.METRIC)
        pts = np.random.default_rng(0).uniform(-1, 1, (9, 3))
        a, b = g.local(pts), s.local(pts)
        assert np.allclose(a.e, b.e, atol=1e-10)
        assert np.allclose(a.C, b.C, atol=1e-9)
        assert np.max(np.abs(b.leak)) < 1e-12

    def test_transport_matches_cotangent_lift(self):
        # B A(P_t q) B^T in frame momenta equals h(P_t q, M(t) xi) from the 3x3 variational flow
        from srclab.flow import reeb_transport

        s = get_structure("heisenberg-flat", "sheared")
        q = np.array([0.2, -0.1, 0.3])
        X, B, ok = orbit_transport(SymbolicModel(s.frame, s.metric), q, np.array([0.4]), max_step=1e-3)
        tr = reeb_transport(s.frame, s.metric, q, 0.4, 1e-3)
        h = metric_hamiltonian(s.frame, s.metric)
        xi = np.array([0.3, -0.7, 0.5])
        v = np.array([xi[0], xi[1] + q[0] * xi[2]])
        K = B[0, 0] @ s.metric.matrix(X[0, 0]) @ B[0, 0].T
        assert ok[0]
        assert np.allclose(X[0, 0], tr.base[-1], atol=1e-12)
        assert v @ K @ v == pytest.approx(h(tr.base[-1], tr.apply(xi)), abs=1e-11)


class TestAveraging:
    @pytest.mark.parametrize("coeffs", [("1", "0", "1"), ("4", "1", "2"), ("0.5", "-0.1", "3")])
    def test_constant_metric_fixed_point(self, coeffs):
        f = z_field(MetricCoeffs.parse(*coeffs))
        out, rep = averaging_step(f)
        assert rep.sup_change <= 1e-10
        assert rep.nodes == 9 and rep.eps == 0.3 and rep.skipped == 0

    def test_window_average_oracle(self):
        f = z_field()
        out, rep = averaging_step(f, 0.3)
        z = znodes(f)
        expected = 1 + 0.3 * np.sin(0.3) / 0.3 * np.sin(z)
        assert np.max(np.abs(out.values[0, 0, :, 0] - expected)) <= 1e-8
        assert rep.det_drift <= 1e-10

    def test_non_invariant_changes(self):
        _, rep = averaging_step(z_field())
        assert rep.sup_change > 1e-3

    def test_input_not_mutated(self):
        f = z_field()
        before = f.values.copy()
        averaging_step(f)
        assert np.array_equal(f.values, before)

    def test_full_3d_grid_matches_symbolic(self):
        metric = MetricCoeffs.parse("1 + 0.2*sin(x3)", "0.1*cos(x3)", "1 + 0.1*sin(2*x3)")
        axes = (GridAxis(-0.5, 0.5, 5, periodic=False), GridAxis(0, 0, 1), GridAxis(-np.pi, np.pi, 48))
        f = GridMetricField.from_metric(FRAME, metric, axes)
        out, rep = averaging_step(f, 0.2, max_step=0.01)
        # independent: Gauss-Legendre average of the transported form with the symbolic model
        t, w = np.polynomial.legendre.leggauss(9)
        t, w = 0.2 * t, 0.2 * w
        q = f.points.reshape(-1, 3)[::7]
        X, B, ok = orbit_transport(SymbolicModel(FRAME, metric), q, t, max_step=0.01)
        A = metric.matrix(X)
        K = np.einsum("t,ntij->nij", w, B @ A @ np.swapaxes(B, -1, -2)) / 0.4
        got = out.values.reshape(-1, 3)[::7]
        _, _, inside = orbit_transport(GridModel(f), q, t, max_step=0.01)
        sel = ok & inside
        assert sel.sum() >= len(sel) // 2
        assert np.allclose(got[sel, 0], K[sel, 0, 0], atol=1e-8)
        assert np.allclose(got[sel, 1], K[sel, 0, 1], atol=1e-8)
        assert np.allclose(got[sel, 2], K[sel, 1, 1], atol=1e-8)

    def test_orbit_exit_holds_value(self):
        # the Reeb field of the sheared metric moves x1; a thin bounded x1 axis is left quickly
        metric = MetricCoeffs.parse("1", "0", "exp(0.5*sin(x3))")
        axes = (GridAxis(-0.05, 0.05, 4, periodic=False), GridAxis(0, 0, 1), GridAxis(-np.pi, np.pi, 16))
        f = GridMetricField.from_metric(FRAME, metric, axes)
        out, rep = averaging_step(f, 0.3)
        assert rep.skipped > 0 and 0 < rep.skipped_fraction <= 1
        held = np.all(out.values == f.values, axis=-1).ravel()
        assert held.sum() >= rep.skipped


class TestScaledAveraging:
    def test_half_eps_equals_plain_average(self):
        f = z_field()
        a, _ = averaging_step(f, 0.3)
        b, _ = scaled_averaging_step(f, 0.3, 1 / 0.6)
        assert np.allclose(a.values, b.values, atol=1e-14)

    @pytest.mark.parametrize("c", [0.5, 2.0])
    def test_constant_metric_scales(self, c):
        f = z_field(MetricCoeffs.parse("2", "0.5", "1"))
        out, _ = scaled_averaging_step(f, 0.25, c)
        assert np.allclose(out.values, f.values * c * 0.5, atol=1e-12)

    def test_default_preserves_max_trace(self):
        f = z_field()
        out, rep = scaled_averaging_step(f, 0.3)
        tr = lambda g: np.max(g.values[..., 0] + g.values[..., 2])  # noqa: E731
        assert tr(out) == pytest.approx(tr(f), abs=1e-9)
        assert rep.normalization["policy"] == "preserve-max-trace"
        assert out.meta["last_step"]["policy"] == "preserve-max-trace"

    def test_bad_c(self):
        with pytest.raises(ValueError):
            scaled_averaging_step(z_field(), 0.3, -1.0)


class TestResidual:
    def test_flat_zero(self):
        assert invariance_residual(z_field(MetricCoeffs.identity())) <= 1e-10
        assert invariance_residual(get_structure("heisenberg-flat")) <= 1e-10

    def test_su2_zero(self):
        assert invariance_residual(get_structure("su2-killing")) <= 1e-8

    def test_decreases_under_averaging(self):
        f = z_field()
        r = [invariance_residual(f)]
        for _ in range(3):
            f, _ = averaging_step(f)
            r.append(invariance_residual(f))
        assert r[0] > 0 and all(b < a for a, b in zip(r, r[1:]))

    def test_matches_symbolic_bracket(self):
        # oracle: {u_h, h} with u_h the lift of the geometric Reeb field, evaluated directly
        metric = MetricCoeffs.parse("1 + 0.2*sin(x3)", "0.1*cos(x3)", "1 + 0.1*sin(2*x3)")
        f = z_field(metric)
        h = metric_hamiltonian(FRAME, metric)
        u = reeb_field(FRAME, metric).u_h
        br = poisson_bracket(u, h)
        rng = np.random.default_rng(0)
        P = rng.standard_normal((8, 3))
        P /= np.linalg.norm(P, axis=1, keepdims=True)
        pts = f.points.reshape(-1, 3)
        direct = max(np.max(np.abs(br(pts, p))) for p in P)
        assert invariance_residual(f, seed=0) == pytest.approx(direct, rel=1e-9)

    @pytest.mark.parametrize("key", ["flat", "scaled", "diag41", "unimodular-z", "sheared"])
    def test_fixed_point_characterization(self, key):
        metric = MetricCoeffs.parse(*HEISENBERG_METRICS[key])
        if not metric.is_constant() and any("x1" in str(c) for c in metric.components):
            pytest.skip("x1-dependent metrics are not sampled on the z-grid")
        f = z_field(metric)
        _, rep = averaging_step(f)
        res = invariance_residual(f)
        assert (rep.sup_change <= 1e-10) == (res <= 1e-10)


class TestDetTransport:
    def test_flat_identity(self):
        for q in [(0, 0, 0), (0.4, -0.3, 0.5)]:
            assert det_transport_check(get_structure("heisenberg-flat"), q, 0.5) <= 1e-9

    @pytest.mark.parametrize("key", sorted(HEISENBERG_METRICS))
    def test_catalog_invariance(self, key):
        s = get_structure("heisenberg-flat", key)
        assert det_transport_check(s, (0.2, 0.1, 0.3), 0.5) <= 1e-8

    def test_su2(self):
        assert det_transport_check(get_structure("su2-killing"), (0.1, 0.05, 0.1), 0.3) <= 1e-8

    def test_grid_unimodular(self):
        assert det_transport_check(z_field(), (0, 0, 0.7), 0.5) <= 1e-8

    def test_non_reeb_negative_control(self):
        s = get_structure("heisenberg-flat", "sheared")
        assert det_transport_check(s, (0.3, 0.1, 0.2), 0.3, flow=s.frame.f1) > 1e-3

    def test_exit(self):
        from srclab.diffusion import OrbitExitError

        s = get_structure("heisenberg-flat")
        with pytest.raises(OrbitExitError):
            det_transport_check(s, (0.0, 0.0, 3.0), 0.5)


def _symbolic_double_bracket(metric, pts):
    """Frame-coordinate coefficients of {u_h, {u_h, h}} via exact Poisson brackets."""
    h = metric_hamiltonian(FRAME, metric)
    u = reeb_field(FRAME, metric).u_h
    dd = poisson_bracket(u, poisson_bracket(u, h))
    out = []
    for x in pts:
        Q = dd.fiber_matrix(x)
        F = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, x[0]]])
        Fp = F.T @ np.linalg.inv(F @ F.T)
        M = Fp.T @ Q @ Fp
        out.append([M[0, 0], M[0, 1], M[1, 1]])
    return np.array(out)


class TestHeat:
    def test_constant_stationary(self):
        f = z_field(MetricCoeffs.parse("3", "0.5", "1"))
        assert np.max(np.abs(heat_rhs(f))) <= 1e-12
        assert np.max(np.abs(heat_rhs(z_field(MetricCoeffs.parse("4", "0", "4"))))) <= 1e-12

    def test_unimodular_reduces_to_heat_operator(self):
        f = z_field()
        z = znodes(f)
        assert np.allclose(heat_rhs(f)[0, 0, :, 0], -0.3 * np.sin(z), atol=1e-10)

    def test_matches_symbolic_double_bracket(self):
        metric = MetricCoeffs.parse("1 + 0.2*sin(x3)", "0.1*cos(x3)", "1 + 0.1*sin(2*x3)")
        f = z_field(metric)
        pts = f.points.reshape(-1, 3)[::5]
        got = heat_rhs(f).reshape(-1, 3)[::5]
        assert np.allclose(got, _symbolic_double_bracket(metric, pts), atol=1e-8)

    def test_evolve_constant_unchanged(self):
        f = z_field(MetricCoeffs.parse("2", "0.3", "1"))
        out = evolve_heat(f, 1.0, 0.05)
        assert np.max(np.abs(out.values - f.values)) <= 1e-12
        assert not out.meta["generalized_metric"]

    def test_evolve_small_time_matches_1d_heat(self):
        f = z_field()
        out = evolve_heat(f, 1.0, 0.01)
        z = znodes(f)
        exact = 1 + 0.3 * np.exp(-0.01) * np.sin(z)
        assert np.max(np.abs(out.values[0, 0, :, 0] - exact)) <= 1e-4

    def test_residual_decreases(self):
        out = evolve_heat(z_field(), 1.0, 0.05)
        r = [row[1] for row in out.meta["history"]]
        assert all(b < a for a, b in zip(r, r[1:]))

    def test_stability_bound_refusal(self):
        with pytest.raises(StabilityBoundError):
            evolve_heat(z_field(), 1.0, 0.1, dt=0.01)

    def test_rank_drop_halts(self):
        # a strongly anisotropic metric whose a12 grows under the flow loses definiteness
        metric = MetricCoeffs.parse("1", "0.99*sin(x3)", "1")
        f = z_field(metric, (GridAxis(0, 0, 1), GridAxis(0, 0, 1), GridAxis(-np.pi, np.pi, 16)))
        out = evolve_heat(f, 1.0, 2.0)
        assert out.meta["generalized_metric"]
        assert out.meta["halt"]["cause"] == "positive definiteness lost"
        assert 0 < out.meta["halt"]["t"] < 2.0
        assert out.meta["history"][-1][0] <= out.meta["halt"]["t"] + 1e-12


def _shift(field, k):
    return field.with_values(np.roll(field.values, k, axis=2))


class TestEquivariance:
    @settings(max_examples=5, deadline=None)
    @given(st.integers(1, 63))
    def test_averaging_commutes_with_z_shift(self, k):
        f = z_field()
        a, _ = averaging_step(_shift(f, k))
        b, _ = averaging_step(f)
        assert np.allclose(a.values, _shift(b, k).values, atol=1e-12)

    @settings(max_examples=5, deadline=None)
    @given(st.integers(1, 63))
    def test_heat_rhs_commutes_with_z_shift(self, k):
        f = z_field(MetricCoeffs.parse("1 + 0.2*sin(x3)", "0.1*cos(x3)", "1 + 0.1*sin(2*x3)"))
        assert np.allclose(heat_rhs(_shift(f, k)), np.roll(heat_rhs(f), k, axis=2), atol=1e-11)

    def test_rhs_vanishes_where_residual_vanishes(self):
        for coeffs in [("1", "0", "1"), ("2", "0.3", "5")]:
            f = z_field(MetricCoeffs.parse(*coeffs))
            assert invariance_residual(f) <= 1e-12 and np.max(np.abs(heat_rhs(f))) <= 1e-12
        f = z_field()
        assert invariance_residual(f) > 0 and np.max(np.abs(heat_rhs(f))) > 0


SU2_KAPPA = 1.0  # frozen oracle: X_i orthonormal makes S^3 radius 2, the Hopf base a unit sphere


class TestKappa:
    def test_flat(self):
        assert abs(kappa_estimate(get_structure("heisenberg-flat"), (0.1, 0.2, 0.3))) <= 1e-6
        assert abs(kappa_estimate(z_field(MetricCoeffs.identity()), (0, 0, 0.5))) <= 1e-6

    def test_su2_constant(self):
        s = get_structure("su2-killing")
        m = SymbolicModel(s.frame, s.metric)
        pts = np.random.default_rng(1).uniform(-0.3, 0.3, (6, 3))
        ks = np.array([kappa_estimate(m, q) for q in pts])
        assert np.ptp(ks) < 1e-5
        assert np.all(np.abs(ks - SU2_KAPPA) <= 1e-4)

    def test_su2_oracle_coarse(self):
        # independent coarse oracle: Gauss curvature of the quotient from second-order
        # differences of the Gram matrix on a wide stencil
        s = get_structure("su2-killing")
        assert kappa_estimate(s, (0.0, 0.0, 0.0), h=0.05) == pytest.approx(SU2_KAPPA, abs=1e-3)

    def test_constant_along_orbit(self):
        s = get_structure("su2-killing")
        m = SymbolicModel(s.frame, s.metric)
        q = np.array([0.1, -0.05, 0.05])
        X, _, _ = orbit_transport(m, q, np.linspace(0, 1, 5), max_step=0.01)
        k0 = kappa_estimate(m, q)
        for x in X[0]:
            assert abs(kappa_estimate(m, x) - k0) <= 1e-6

    def test_refuses_non_invariant(self):
        with pytest.raises(KappaPreconditionError) as err:
            kappa_estimate(get_structure("heisenberg-flat", "sheared"), (0, 0, 0))
        assert err.value.residual > 1e-6
