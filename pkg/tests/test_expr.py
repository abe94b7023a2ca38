from __future__ import annotations

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, reject, settings
from hypothesis import strategies as st

from srclab.expr import (
    EvaluationError,
    ExprSyntaxError,
    Frame2,
    FrameDegeneracyError,
    RankAmbiguityError,
    UnknownIdentifierError,
    VariableIndexError,
    VectorField,
    bracket_flag_dim,
    differentiate,
    evaluate,
    lie_bracket,
    parse_expr,
)
from srclab.hamiltonian import heisenberg_frame, martinet_frame, su2_frame

from strategies import points, poly_fields, smooth_exprs

X = sp.symbols("x1:4")


def sympy_of(text: str):
    return sp.sympify(text.replace("^", "**"), locals={f"x{i}": X[i - 1] for i in range(1, 4)})


class TestParse:
    def test_square(self):
        assert evaluate(parse_expr("x1^2", 3), [3, 0, 0]) == 9.0

    def test_zero_case(self):
        assert evaluate(parse_expr("x1*x2 + sin(x3)", 3), [0, 5, 0]) == 0.0

    def test_division_by_zero_raises(self):
        e = parse_expr("x1/x1", 3)
        with pytest.raises(EvaluationError):
            evaluate(e, [0.0, 1.0, 2.0])

    def test_sqrt_of_negative_raises(self):
        with pytest.raises(EvaluationError):
            evaluate(parse_expr("sqrt(x1)"), [-1.0, 0, 0])

    @pytest.mark.parametrize(
        "text,exc,pos",
        [
            ("x1 +", ExprSyntaxError, 4),
            ("x1 * (x2", ExprSyntaxError, 8),
            ("y + 1", UnknownIdentifierError, 0),
            ("x1 + x4", VariableIndexError, 5),
            ("2 $ 3", ExprSyntaxError, 2),
            ("x1^x2", ExprSyntaxError, 3),
        ],
    )
    def test_errors_carry_position(self, text, exc, pos):
        with pytest.raises(exc) as info:
            parse_expr(text, 3)
        assert info.value.position == pos

    def test_precedence_and_unary(self):
        e = parse_expr("-x1^2 + 2*x2/4 - (x3 - 1)", 3)
        q = [1.5, -2.0, 0.25]
        assert evaluate(e, q) == pytest.approx(-(1.5**2) + 2 * -2.0 / 4 - (0.25 - 1))

    def test_negative_exponent(self):
        assert evaluate(parse_expr("x1^-2"), [2.0, 0, 0]) == pytest.approx(0.25)
        assert evaluate(parse_expr("x1^(-1)"), [4.0, 0, 0]) == pytest.approx(0.25)

    def test_decimals_are_exact(self):
        assert str(parse_expr("0.1 + 0.2")) == "3/10"

    def test_dimension_limit(self):
        with pytest.raises(ValueError):
            parse_expr("x1", 10)

    @settings(max_examples=100, deadline=None)
    @given(smooth_exprs, points)
    def test_round_trip(self, text, q):
        e = parse_expr(text, 3)
        e2 = parse_expr(str(e), 3)
        assert evaluate(e2, q) == pytest.approx(evaluate(e, q), rel=1e-12, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(smooth_exprs, points)
    def test_matches_sympy_value(self, text, q):
        ref = float(sympy_of(text).subs(dict(zip(X, q))))
        assert evaluate(parse_expr(text), q) == pytest.approx(ref, rel=1e-10, abs=1e-10)

    def test_vectorized_evaluation(self):
        e = parse_expr("x1*x2 + 3")
        pts = np.arange(12.0).reshape(4, 3)
        assert np.allclose(evaluate(e, pts), pts[:, 0] * pts[:, 1] + 3)


class TestDifferentiate:
    def test_examples(self):
        e = parse_expr("x1^2")
        assert str(differentiate(e, 1)) == "2*x1"
        assert str(differentiate(e, 2)) == "0"
        assert evaluate(differentiate(parse_expr("sin(x3)"), 3), [0, 0, 0]) == 1.0

    @settings(max_examples=80, deadline=None)
    @given(smooth_exprs, st.integers(1, 3), points)
    def test_against_sympy(self, text, k, q):
        ref = float(sp.diff(sympy_of(text), X[k - 1]).subs(dict(zip(X, q))))
        got = evaluate(differentiate(parse_expr(text), k), q)
        assert got == pytest.approx(ref, rel=1e-9, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(smooth_exprs, st.integers(1, 3), points)
    def test_central_differences(self, text, k, q):
        e = parse_expr(text)
        h = 1e-5
        qp, qm = np.array(q, float), np.array(q, float)
        qp[k - 1] += h
        qm[k - 1] -= h
        fd = (evaluate(e, qp) - evaluate(e, qm)) / (2 * h)
        exact = evaluate(differentiate(e, k), q)
        assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))

    def test_quotient_exp_sqrt(self):
        text = "exp(x1)*sqrt(1 + x2^2)/(2 + cos(x3))"
        q = (0.3, -0.7, 1.1)
        for k in (1, 2, 3):
            ref = float(sp.diff(sympy_of(text), X[k - 1]).subs(dict(zip(X, q))))
            assert evaluate(differentiate(parse_expr(text), k), q) == pytest.approx(ref, rel=1e-12)


def _field(texts):
    return VectorField.parse(list(texts))


class TestLieBracket:
    def test_martinet_bracket(self):
        F = VectorField.parse(["1", "0", "0"])
        G = VectorField.parse(["0", "1", "x1^2"])
        B = lie_bracket(F, G)
        assert [str(c) for c in B.components] == ["0", "0", "2*x1"]
        assert np.allclose(B([1.0, 0.0, 0.0]), [0, 0, 2])

    def test_heisenberg_second_brackets_vanish(self):
        fr = heisenberg_frame()
        f3 = fr.bracket()
        assert lie_bracket(fr.f1, f3).is_zero()
        assert lie_bracket(fr.f2, f3).is_zero()

    def test_self_bracket_zero(self):
        F = _field(["x2*x3", "sin(x1)", "x1^2"])
        assert lie_bracket(F, F).is_zero()

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lie_bracket(VectorField.parse(["1", "0"]), VectorField.parse(["1", "0", "0"]))

    @settings(max_examples=50, deadline=None)
    @given(poly_fields, poly_fields, poly_fields, points)
    def test_jacobi_and_antisymmetry(self, a, b, c, q):
        F, G, H = _field(a), _field(b), _field(c)
        jac = (
            lie_bracket(F, lie_bracket(G, H))
            + lie_bracket(G, lie_bracket(H, F))
            + lie_bracket(H, lie_bracket(F, G))
        )
        assert np.max(np.abs(jac(q))) <= 1e-9
        assert np.allclose(lie_bracket(F, G)(q), -lie_bracket(G, F)(q), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(poly_fields, poly_fields, points)
    def test_against_sympy(self, a, b, q):
        F, G = _field(a), _field(b)
        Fs = [sympy_of(t) for t in a]
        Gs = [sympy_of(t) for t in b]
        sub = dict(zip(X, q))
        for j in range(3):
            ref = sum(Fs[k] * sp.diff(Gs[j], X[k]) - Gs[k] * sp.diff(Fs[j], X[k]) for k in range(3))
            assert lie_bracket(F, G)(q)[j] == pytest.approx(float(ref.subs(sub)), abs=1e-10)


class TestFlag:
    def test_martinet(self):
        fr = martinet_frame()
        assert bracket_flag_dim(fr, [0, 0, 0], 2) == 2
        assert bracket_flag_dim(fr, [0, 0, 0], 3) == 3
        assert bracket_flag_dim(fr, [0.5, 0, 0], 2) == 3

    @pytest.mark.parametrize("q", [(0, 0, 0), (0.3, -0.2, 1.0), (-0.9, 0.4, -2.0)])
    def test_heisenberg(self, q):
        assert bracket_flag_dim(heisenberg_frame(), q, 2) == 3
        assert bracket_flag_dim(heisenberg_frame(), q, 1) == 2

    def test_su2_contact(self):
        assert bracket_flag_dim(su2_frame(), [0.1, 0.2, -0.3], 2) == 3

    @settings(max_examples=30, deadline=None)
    @given(points)
    def test_nondecreasing_and_capped(self, q):
        fr = martinet_frame()
        try:
            dims = [bracket_flag_dim(fr, q, k) for k in (1, 2, 3, 4)]
        except RankAmbiguityError:
            reject()
        assert dims == sorted(dims) and dims[-1] <= 3

    def test_ambiguity_reported_near_martinet_surface(self):
        with pytest.raises(RankAmbiguityError):
            bracket_flag_dim(martinet_frame(), [1e-8, 0.0, 0.0], 2)

    def test_degenerate_frame_rejected(self):
        with pytest.raises(FrameDegeneracyError):
            Frame2.parse(("1", "0", "0"), ("x1", "0", "0"))
