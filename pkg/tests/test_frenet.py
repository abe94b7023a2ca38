from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from srclab.frenet import (
    MILNOR_BOUND,
    DegenerateCurveError,
    FrenetControls,
    NonFiniteControlError,
    closure_defect,
    closure_search,
    frame_length,
    integrate_frenet,
    milnor_check,
)


def wavy(m=1, n=3, amp=0.3):
    c = np.zeros((n - 1, 5))
    c[:, 0] = 1.0
    c[0, 1], c[0, 4] = amp, -0.5 * amp
    if n > 2:
        c[1:, 0], c[1:, 2] = 0.4, 0.2
    return FrenetControls(n, m, c)


def reference(ctrl, T):
    """Dense DOP853 solution of the Frenet system in the plain (gamma, E) form."""
    n = ctrl.n

    def rhs(t, y):
        E = y[n:].reshape(n, n)
        u = ctrl(t)
        W = np.zeros((n, n))
        idx = np.arange(n - 1)
        W[idx + 1, idx], W[idx, idx + 1] = u, -u
        return np.concatenate([E[:, 0], (E @ W).ravel()])

    y0 = np.concatenate([np.zeros(n), np.eye(n).ravel()])
    sol = solve_ivp(rhs, (0, T), y0, method="DOP853", rtol=1e-13, atol=1e-13)
    return sol.y[:n, -1], sol.y[n:, -1].reshape(n, n)


@pytest.fixture(scope="module")
def success32():
    return closure_search(3, 2, seed=0)


class TestControls:
    def test_evaluation(self):
        c = wavy()
        t = np.array([0.0, 1.0])
        u = c(t)
        assert u.shape == (2, 2)
        assert u[0, 0] == pytest.approx(1.3)
        assert u[1, 0] == pytest.approx(1 + 0.3 * np.cos(1) - 0.15 * np.sin(2))

    def test_period_is_2pi_m(self):
        c = wavy(m=3)
        assert c.T == pytest.approx(6 * np.pi)
        np.testing.assert_allclose(c(0.7), c(0.7 + c.T), atol=1e-12)

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            FrenetControls(3, 1, np.zeros((1, 3)))

    def test_non_finite(self):
        c = FrenetControls.constant([1.0, np.nan])
        with pytest.raises(NonFiniteControlError):
            integrate_frenet(c)

    def test_strict_floor(self):
        FrenetControls.constant([1.0, 2e-3], strict=True).check()
        with pytest.raises(ValueError):
            FrenetControls.constant([1.0, 1e-4], strict=True).check()

    def test_csv(self, tmp_path):
        wavy().to_csv(tmp_path / "c.csv")
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0] == ["control", "mode", "cos", "sin"]
        assert len(rows) == 1 + 2 * 3


class TestIntegrate:
    def test_circle_closes(self):
        tr = integrate_frenet(FrenetControls.constant([1.0, 0.0]))
        assert tr.defect <= 1e-9
        # unit circle through the origin in the (e1, e2) plane
        np.testing.assert_allclose(np.linalg.norm(tr.gamma - (0, 1, 0), axis=1), 1.0, atol=1e-10)

    def test_half_circle_diameter(self):
        tr = integrate_frenet(FrenetControls.constant([1.0, 0.0]), steps=2048)
        # node 1024 is t = pi
        np.testing.assert_allclose(tr.gamma[1024], (0.0, 2.0, 0.0), rtol=0, atol=1e-11)
        assert np.linalg.norm(tr.gamma[1024] - tr.gamma[0]) == pytest.approx(2.0, abs=1e-11)

    def test_orthogonality_over_4pi(self):
        tr = integrate_frenet(wavy(m=2, n=4))
        assert tr.orthogonality_drift <= 1e-10

    def test_matches_reference(self):
        c = wavy(m=1, n=3)
        tr = integrate_frenet(c, steps=1024)
        g, E = reference(c, c.T)
        np.testing.assert_allclose(tr.gamma[-1], g, atol=1e-9)
        np.testing.assert_allclose(tr.E[-1], E, atol=1e-9)

    def test_fourth_order(self):
        c = wavy(m=1, n=4, amp=0.8)
        g, E = reference(c, c.T)
        errs = [np.linalg.norm(integrate_frenet(c, steps=s).E[-1] - E) for s in (32, 64)]
        assert errs[0] / errs[1] == pytest.approx(16, rel=0.15)

    def test_planar_n2(self):
        tr = integrate_frenet(FrenetControls.constant([1.0]))
        assert tr.gamma.shape[1] == 2
        assert tr.defect <= 1e-9

    def test_initial_frame(self):
        c = wavy()
        R = np.linalg.qr(np.arange(9.0).reshape(3, 3) + np.eye(3))[0]
        a, b = integrate_frenet(c), integrate_frenet(c, E0=R, gamma0=(1, 2, 3))
        np.testing.assert_allclose(b.gamma, a.gamma @ R.T + (1, 2, 3), atol=1e-12)
        np.testing.assert_allclose(b.E, R @ a.E, atol=1e-12)

    def test_trajectory_csv(self, tmp_path):
        tr = integrate_frenet(wavy(), steps=64)
        tr.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0].split(",")[:4] == ["t", "g1", "g2", "g3"]
        assert len(lines) == 66 and len(lines[0].split(",")) == 1 + 3 + 9

    def test_odd_steps_rejected(self):
        with pytest.raises(ValueError):
            integrate_frenet(wavy(), steps=31)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 5), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 2))
def test_orthogonality_invariant(n, a, b, c0):
    c = np.zeros((n - 1, 3))
    c[:, 0], c[:, 1], c[-1, 2] = c0, a, b
    tr = integrate_frenet(FrenetControls(n, 2, c), steps=128)
    assert tr.orthogonality_drift <= 1e-10


class TestFrameLength:
    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_m_circle(self, m):
        assert frame_length(FrenetControls.constant([1.0, 0.0], m=m)) == pytest.approx(2 * np.pi * m, rel=1e-14)

    def test_pythagorean(self):
        c = FrenetControls.constant([3.0, 4.0])
        # length per unit time
        assert frame_length(c) / c.T == pytest.approx(5.0, rel=1e-14)

    def test_trig_exact(self):
        # |u| = 1 + 0.5 cos t exactly for u = ((1 + 0.5 cos t) cos a, (1 + 0.5 cos t) sin a)
        c = np.zeros((2, 3))
        c[:, 0], c[:, 1] = (0.6, 0.8), (0.3, 0.4)
        assert frame_length(FrenetControls(3, 1, c)) == pytest.approx(2 * np.pi, rel=1e-14)

    def test_helix(self):
        eps = 0.1
        L, margin = milnor_check(FrenetControls.constant([1.0, eps], m=2))
        assert L == pytest.approx(4 * np.pi * np.sqrt(1 + eps**2), rel=1e-14)
        assert margin > 0

    @given(st.floats(0.1, 10))
    def test_homogeneous(self, s):
        c = wavy()
        c2 = FrenetControls(3, 1, s * c.coeffs)
        assert frame_length(c2) == pytest.approx(s * frame_length(c), rel=1e-12)

    def test_arc_length_of_frame(self):
        # frame length equals the length of t -> E(t) under |W|^2 = tr(W^T W) / 2
        c = wavy(n=4)
        tr = integrate_frenet(c, steps=4096)
        dE = np.diff(tr.E, axis=0)
        arc = np.sum(np.linalg.norm(dE.reshape(dE.shape[0], -1), axis=1)) / np.sqrt(2)
        assert arc == pytest.approx(frame_length(c), rel=1e-5)


class TestMilnor:
    def test_double_circle_degenerate(self):
        with pytest.raises(DegenerateCurveError):
            milnor_check(FrenetControls.constant([1.0, 0.0], m=2))

    def test_planar_sample_degenerate(self):
        t = np.linspace(0, 2 * np.pi, 128, endpoint=False)
        with pytest.raises(DegenerateCurveError):
            milnor_check(np.stack([np.cos(t), np.sin(t), 0 * t], 1))

    def test_sampled_helix_like_curve(self):
        # (2, 3) torus knot: total torsion never vanishes
        t = np.linspace(0, 2 * np.pi, 512, endpoint=False)
        r = 2 + np.cos(3 * t)
        curve = np.stack([r * np.cos(2 * t), r * np.sin(2 * t), np.sin(3 * t)], 1)
        try:
            L, margin = milnor_check(curve)
        except DegenerateCurveError:
            pytest.skip("sampled knot has a torsion zero")
        assert margin > 0 and L > MILNOR_BOUND

    def test_rejects_planar_dimension(self):
        with pytest.raises(ValueError):
            milnor_check(FrenetControls.constant([1.0], m=2))


class TestClosureSearch:
    def test_success_m2(self, success32):
        r = success32
        assert r.converged
        assert r.defect < 1e-6
        assert r.min_u[1] >= 1e-3 and r.min_u[0] > 0
        assert r.milnor_margin > 0

    def test_certificate_reverifies(self, success32):
        c = success32.controls
        assert closure_defect(c, 4 * 2 * c.sample_count()) < 1e-6
        g, E = reference(c, c.T)
        assert np.linalg.norm(g) + np.linalg.norm(E - np.eye(3)) < 1e-6

    def test_milnor_on_success_curve(self, success32):
        c = success32.controls
        L, margin = milnor_check(c)
        assert L == pytest.approx(success32.frame_length, rel=1e-12)
        # the integrated curve is unit speed, so its sampled frame length agrees;
        # Simpson nodes only, and modest N since third derivatives amplify noise where u_1 is small
        tr = integrate_frenet(c, steps=1024)
        L2, _ = milnor_check(tr.gamma[:-1:2], T=c.T)
        assert L2 == pytest.approx(L, rel=1e-5)

    def test_report_json(self, success32, tmp_path):
        success32.to_json(tmp_path / "r.json")
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["status"] == "SUCCESS" and d["n"] == 3 and d["m"] == 2
        c = FrenetControls(3, 2, np.array(d["controls"]["coeffs"]))
        assert closure_defect(c) < 1e-6

    def test_planar_success(self):
        r = closure_search(2, 1, seed=0, restarts=4)
        assert r.converged and r.defect < 1e-6

    def test_deterministic(self):
        kw = dict(seed=3, restarts=2, batch=2, max_iter=15)
        a, b = closure_search(3, 1, **kw), closure_search(3, 1, **kw)
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)

    def test_small_budget_fails(self):
        r = closure_search(3, 1, seed=0, restarts=2, batch=2, max_iter=10)
        assert r.status == "FAILURE" and r.defect > 1e-6
        assert r.restarts_run == 2

    def test_invalid(self):
        with pytest.raises(ValueError):
            closure_search(1, 1)
