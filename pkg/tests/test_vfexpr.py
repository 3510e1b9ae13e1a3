"""Expression parsing, exact differentiation, and bracket evaluators."""

import math

import numpy as np
import pytest

from endmap.vfexpr import (
    EvalDomainError,
    ExprVectorField,
    ParseError,
    ad,
    eval_jet,
    lie_bracket,
    make_field,
    parse_field,
)
from endmap.vfexpr import eval_node


def ev(text, x, n=None):
    n = n if n is not None else len(x)
    [comp] = parse_field([text], n)
    return eval_node(comp.root, np.asarray(x, dtype=float))


class TestParsing:
    def test_numbers_and_arithmetic(self):
        assert ev("2 + 3*4", [0.0]) == 14.0
        assert ev("2*3 - 8/4", [0.0]) == 4.0
        assert ev("1.5e2", [0.0]) == 150.0
        assert ev(".5 + 0.25", [0.0]) == 0.75

    def test_variables_and_aliases(self):
        assert ev("x1", [7.0]) == 7.0
        assert ev("x + y", [2.0, 3.0]) == 5.0
        assert ev("z", [0.0, 0.0, 4.0]) == 4.0
        # aliases switch off above dimension 3
        with pytest.raises(ParseError):
            ev("x", [1.0, 2.0, 3.0, 4.0])

    def test_power_binds_tighter_than_unary_minus(self):
        assert ev("-x^2", [3.0]) == -9.0
        assert ev("(-x)^2", [3.0]) == 9.0
        assert ev("2^3^2", [0.0]) == 64.0  # left-assoc: (2^3)^2

    def test_precedence_mul_over_add(self):
        assert ev("1 + 2*x^2", [2.0]) == 9.0

    def test_functions(self):
        assert ev("sin(0)", [0.0]) == 0.0
        assert abs(ev("cos(x)", [math.pi]) + 1.0) < 1e-15
        assert abs(ev("exp(1)", [0.0]) - math.e) < 1e-15

    def test_unary_minus_chains(self):
        assert ev("--x", [5.0]) == 5.0
        assert ev("-(-(x))", [5.0]) == 5.0

    def test_whitespace_is_free(self):
        assert ev("  1+ 2 * x ", [3.0]) == 7.0

    def test_parse_errors_carry_offsets(self):
        with pytest.raises(ParseError) as err:
            parse_field(["1 + $"], 1)
        assert err.value.offset == 4
        with pytest.raises(ParseError) as err:
            parse_field(["x1 + foo"], 1)
        assert err.value.offset == 5
        with pytest.raises(ParseError):
            parse_field(["x2"], 1)  # index out of range
        with pytest.raises(ParseError):
            parse_field(["x^0"], 1)
        with pytest.raises(ParseError):
            parse_field(["x^2.5"], 1)
        with pytest.raises(ParseError):
            parse_field(["x^(-1)"], 1)
        with pytest.raises(ParseError):
            parse_field(["sin x"], 1)  # function call needs parentheses
        with pytest.raises(ParseError):
            parse_field(["(1 + 2"], 1)
        with pytest.raises(ParseError):
            parse_field(["1 2"], 1)  # trailing token

    def test_division_domain_error(self):
        with pytest.raises(EvalDomainError):
            ev("1/x", [0.0])

    def test_field_arity_checks(self):
        with pytest.raises(ValueError):
            ExprVectorField([])
        a = parse_field(["x1"], 1)
        b = parse_field(["x1", "x2"], 2)
        with pytest.raises(ValueError):
            ExprVectorField(a + b)


class TestDerivatives:
    def test_polynomial_gradient_is_exact(self):
        f = make_field(["x^3 + 2*x*y - y^2"], 2)
        jet = f.jet(np.array([2.0, 3.0]))
        # d/dx = 3x^2 + 2y, d/dy = 2x - 2y at (2, 3)
        assert jet.jacobian[0, 0] == 3 * 4.0 + 6.0
        assert jet.jacobian[0, 1] == 4.0 - 6.0

    def test_jet_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        f = make_field(
            ["sin(x*y) + x^2", "exp(-x) * cos(y)", "x - y^3 + 0.5*x*y"], 2
        )
        for _ in range(6):
            x = rng.uniform(-1.5, 1.5, size=2)
            jet = f.jet(x)
            h = 1e-6
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = (f.value(x + e) - f.value(x - e)) / (2 * h)
                assert np.allclose(jet.jacobian[:, j], fd, atol=1e-7)

    def test_quotient_rule(self):
        f = make_field(["x / (1 + y^2)"], 2)
        x = np.array([2.0, 1.0])
        jet = f.jet(x)
        assert abs(jet.jacobian[0, 0] - 0.5) < 1e-15
        # d/dy x/(1+y^2) = -2xy/(1+y^2)^2 = -4/4 = -1
        assert abs(jet.jacobian[0, 1] + 1.0) < 1e-15

    def test_eval_jet_wrapper(self):
        jet = eval_jet(parse_field(["x^2"], 1), [3.0])
        assert jet.value[0] == 9.0
        assert jet.jacobian[0, 0] == 6.0


class TestBrackets:
    def test_linear_fields_bracket_is_commutator(self):
        # f = Ax, g = Bx gives [f,g] = (BA - AB) x
        A = np.array([[0.0, 1.0], [-2.0, 0.5]])
        B = np.array([[1.0, 0.0], [3.0, -1.0]])
        f = make_field(["x2", "-2*x1 + 0.5*x2"], 2)
        g = make_field(["x1", "3*x1 - x2"], 2)
        br = lie_bracket(f, g)
        C = B @ A - A @ B
        rng = np.random.default_rng(3)
        for _ in range(5):
            x = rng.uniform(-2, 2, size=2)
            assert np.allclose(br.value(x), C @ x, atol=1e-12)

    def test_heisenberg_bracket_is_vertical(self):
        f1 = make_field(["1", "0", "-0.5*y"], 3)
        f2 = make_field(["0", "1", "0.5*x"], 3)
        br = lie_bracket(f1, f2)
        rng = np.random.default_rng(5)
        for _ in range(5):
            x = rng.uniform(-1, 1, size=3)
            assert np.allclose(br.value(x), [0.0, 0.0, 1.0], atol=1e-14)

    def test_bracket_arity_mismatch(self):
        with pytest.raises(ValueError):
            lie_bracket(make_field(["x1"], 1), make_field(["x1", "x2"], 2))

    def test_ad_zero_is_identity(self):
        g = make_field(["x2", "x1"], 2)
        out = ad(make_field(["1", "0"], 2), g, 0)
        x = np.array([0.3, -0.7])
        assert np.allclose(out.value(x), g.value(x))

    def test_nested_bracket_on_linear_fields(self):
        # ad^2 f.g = [f, [f, g]] = [A, [A, B]] acting as matrix commutators
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        B = np.array([[0.0, 0.0], [1.0, 0.0]])
        f = make_field(["x2", "x1"], 2)
        g = make_field(["0", "x1"], 2)
        C1 = B @ A - A @ B
        C2 = C1 @ A - A @ C1
        out = ad(f, g, 2)
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = rng.uniform(-1, 1, size=2)
            assert np.allclose(out.value(x), C2 @ x, atol=1e-8)

    def test_bracket_jet_uses_differencing(self):
        f1 = make_field(["1", "0", "0.5*y^2"], 3)
        f2 = make_field(["0", "1", "0"], 3)
        br = lie_bracket(f1, f2)   # equals (0, 0, -y)
        jet = br.jet(np.array([0.2, 0.4, 0.0]))
        assert np.allclose(jet.value, [0.0, 0.0, -0.4], atol=1e-12)
        expected = np.zeros((3, 3))
        expected[2, 1] = -1.0
        assert np.allclose(jet.jacobian, expected, atol=1e-8)
