import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from ejcbf.cbf import (
    CbfRowData, Constraint, LinearSystem, build_chain, constraint_margin, eval_row, linear_constraint,
)


def _symbolic_psi(alphas=(1, 1, 1)):
    """Expand (D + a3)(D + a2)(D + a1) b for b = 0.8 - q1 along the integrator chain."""
    t = sp.symbols("t")
    q = sp.Function("q")(t)
    expr = sp.Rational(4, 5) - q
    for a in alphas:
        expr = sp.diff(expr, t) + a * expr
    xs = sp.symbols("x1 x2 x3 x4")
    subs = {sp.diff(q, t, k): xs[k] for k in (3, 2, 1)}
    subs[q] = xs[0]
    return sp.expand(expr.subs(subs)), xs


def test_chain_closed_form():
    expr, xs = _symbolic_psi()
    assert expr == sp.Rational(4, 5) - xs[0] - 3 * xs[1] - 3 * xs[2] - xs[3]
    f = sp.lambdify(xs, expr)
    chain = build_chain(linear_constraint(0.8, [1, 0]))
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x = rng.normal(size=8) * 3
        assert chain.psi(x) == pytest.approx(f(x[0], x[2], x[4], x[6]), abs=1e-12)


def test_general_slopes_match_symbolic():
    alphas = (0.5, 2.0, 1.5)
    expr, xs = _symbolic_psi(alphas)
    f = sp.lambdify(xs, expr)
    chain = build_chain(linear_constraint(0.8, [1, 0]), alphas, 16.0)
    x = np.arange(8.0) * 0.1 - 0.3
    assert chain.psi(x) == pytest.approx(f(x[0], x[2], x[4], x[6]), abs=1e-12)


def test_grad_psi_matches_finite_differences():
    chain = build_chain(linear_constraint(0.8, [1, 0]))
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.normal(size=8)
        fd = np.array([(chain.psi(x + 1e-6 * e) - chain.psi(x - 1e-6 * e)) / 2e-6 for e in np.eye(8)])
        np.testing.assert_allclose(chain.grad_psi(x), fd, atol=1e-6)


def _quadratic_constraint():
    """b(q) = 1 - q1^2 - q1 q2^2: exercises the higher-derivative tensors."""
    def grad(q):
        return np.array([-2 * q[0] - q[1] ** 2, -2 * q[0] * q[1]])

    def hess(q):
        return np.array([[-2.0, -2 * q[1]], [-2 * q[1], -2 * q[0]]])

    def d3(q):
        T = np.zeros((2, 2, 2))
        T[0, 1, 1] = T[1, 0, 1] = T[1, 1, 0] = -2.0
        return T

    return Constraint(lambda q: 1 - q[0] ** 2 - q[0] * q[1] ** 2, grad, hess, d3,
                      lambda q: np.zeros((2, 2, 2, 2)))


def test_nonlinear_constraint_derivatives_along_trajectory():
    chain = build_chain(_quadratic_constraint())
    rng = np.random.default_rng(3)
    c = rng.normal(size=(5, 2)) * 0.5
    q = lambda t: sum(ck * t ** k for k, ck in enumerate(c))
    x = np.concatenate([c[0], c[1], 2 * c[2], 6 * c[3]])
    b = lambda t: chain.constraint.value(q(t))
    h = 1e-3
    fd = [b(0), (b(h) - b(-h)) / (2 * h), (b(h) - 2 * b(0) + b(-h)) / h ** 2,
          (b(2 * h) - 2 * b(h) + 2 * b(-h) - b(-2 * h)) / (2 * h ** 3)]
    np.testing.assert_allclose(chain.b_derivatives(x), fd, atol=1e-4)
    for _ in range(20):
        z = rng.normal(size=8)
        num = np.array([(chain.psi(z + 1e-6 * e) - chain.psi(z - 1e-6 * e)) / 2e-6 for e in np.eye(8)])
        np.testing.assert_allclose(chain.grad_psi(z), num, atol=1e-5)


def test_trivial_chains():
    const = Constraint(lambda q: 2.0, lambda q: np.zeros(2), lambda q: np.zeros((2, 2)),
                       lambda q: np.zeros((2, 2, 2)), lambda q: np.zeros((2, 2, 2, 2)))
    ch = build_chain(const)
    x = np.random.default_rng(0).normal(size=8)
    assert ch.psi(x) == 2.0 and np.all(ch.grad_psi(x) == 0)
    pure = build_chain(linear_constraint(0.8, [1, 0]), (0, 0, 0))
    assert pure.psi(x) == pytest.approx(-x[6])
    with pytest.raises(ValueError):
        build_chain(linear_constraint(0.8, [1, 0]), (1, 1))
    with pytest.raises(ValueError):
        build_chain(linear_constraint(0.8, [1, 0]), kappa=0)


def test_row_for_builtin_barrier():
    sys = LinearSystem(2)
    for kappa in (1.0, 16.0, 32.0):
        chain = build_chain(linear_constraint(0.8, [1, 0]), kappa=kappa)
        x = np.linspace(-1, 1, 8)
        row = eval_row(chain, sys, x)
        np.testing.assert_array_equal(row.grad_psi_B, [-1.0, 0.0])
        assert row.norm_grad_psi_B == 1.0
        assert row.alpha_psi == pytest.approx(kappa * chain.psi(x))


def test_margin_limits():
    row = CbfRowData(np.array([-1.0, 0.0]), 0.4, 1.6, 0.1)
    assert constraint_margin(row, 0.0, 0.0, [0.3, 5.0]) == pytest.approx(0.4 - 0.3 + 1.6)
    d = row.grad_psi_B / row.norm_grad_psi_B
    big = [constraint_margin(row, 0.5, 1.0, s * d) for s in (1e2, 1e4, 1e6)]
    assert big[0] < big[1] < big[2] and big[2] > 1e5


@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_property_psi_linear_in_state(x):
    chain = build_chain(linear_constraint(0.8, [1, 0]))
    x = np.array(x)
    assert chain.psi(x) == pytest.approx(0.8 + chain.grad_psi(x) @ x, abs=1e-9)
