import numpy as np
import pytest
from hypothesis import given, strategies as st

from ejcbf import dynamics as dyn
from ejcbf.backend import available
from ejcbf.taylor import Taylor2, cos, sin


def _poly_trajectory(rng):
    coef = rng.normal(size=(5, 2)) * np.array([[1.0], [1.0], [0.5], [0.3], [0.2]])

    def q(t):
        return sum(c * t ** k for k, c in enumerate(coef))

    fac = np.array([1, 1, 2, 6])
    x = np.concatenate([coef[k] * fac[k] for k in range(4)])  # q, q', q'', q''' at t = 0
    return q, x


def _mc_along(params, q, t, h):
    """M(q(t)) and C(q(t), q'(t)) with q' from a central difference of step h/100."""
    e = h * 1e-2
    qt = q(t)
    dq = (q(t + e) - q(t - e)) / (2 * e)
    return dyn.inertia(params, qt), dyn.coriolis_gravity(params, qt, dq)


def test_derivative_engine_vs_trajectory_differences(params):
    """Mdot / Mddot / Cddot agree with finite differences along 100 random trajectories."""
    rng = np.random.default_rng(7)
    worst = np.zeros(3)
    for _ in range(100):
        q, x = _poly_trajectory(rng)
        M, dM, ddM, C, dC, ddC = dyn.mc_derivatives(params, x)
        h = 1e-3
        Mp, Cp = _mc_along(params, q, h, h)
        Mm, Cm = _mc_along(params, q, -h, h)
        M0, C0 = _mc_along(params, q, 0.0, h)
        np.testing.assert_allclose(M0, M, atol=1e-12)
        fd_dM = (Mp - Mm) / (2 * h)
        fd_ddM = (Mp - 2 * M0 + Mm) / h ** 2
        fd_ddC = (Cp - 2 * C0 + Cm) / h ** 2
        worst = np.maximum(worst, [np.abs(fd_dM - dM).max(), np.abs(fd_ddM - ddM).max(),
                                   np.abs(fd_ddC - ddC).max()])
    assert worst[0] < 1e-5
    assert worst[1] < 1e-3
    assert worst[2] < 1e-3


def test_taylor_arithmetic_matches_chain_rule():
    a = Taylor2.along(0.3, 1.2, -0.7)
    # y(t) = sin(a(t)) * cos(a(t)) + 2 a(t) with a(t) = 0.3 + 1.2 t - 0.35 t^2
    y = sin(a) * cos(a) + a * 2.0
    f = lambda t: np.sin(0.3 + 1.2 * t - 0.35 * t * t) * np.cos(0.3 + 1.2 * t - 0.35 * t * t) \
        + 2 * (0.3 + 1.2 * t - 0.35 * t * t)
    h = 1e-4
    assert y.value == pytest.approx(f(0.0), abs=1e-15)
    assert y.d1 == pytest.approx((f(h) - f(-h)) / (2 * h), abs=1e-7)
    assert y.d2 == pytest.approx((f(h) - 2 * f(0) + f(-h)) / h ** 2, abs=1e-5)


@pytest.mark.skipif("cython" not in available(), reason="extension not built")
@given(st.lists(st.floats(-2, 2), min_size=8, max_size=8),
       st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_property_backends_agree(x, u):
    b = available()
    p, py, cy = dyn.RobotParams().packed, b["python"], b["cython"]
    x, u = np.array(x), np.array(u)
    np.testing.assert_allclose(cy.plant_rhs(p, x, u), py.plant_rhs(p, x, u), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(cy.rk4_hold(p, x, u, 0.01, 10), py.rk4_hold(p, x, u, 0.01, 10),
                               rtol=1e-11, atol=1e-11)
    np.testing.assert_allclose(cy.flat_observe(p, x), py.flat_observe(p, x), rtol=1e-12, atol=1e-11)
    for a, b_ in zip(cy.mc_derivs(p, x), py.mc_derivs(p, x)):
        np.testing.assert_allclose(a, b_, rtol=1e-12, atol=1e-11)
    for a, b_ in zip(cy.f_and_g(p, x), py.f_and_g(p, x)):
        np.testing.assert_allclose(a, b_, rtol=1e-12, atol=1e-9)


def test_backend_env_override():
    import subprocess, sys
    out = subprocess.run([sys.executable, "-c", "from ejcbf.backend import BACKEND; print(BACKEND)"],
                         env={"EJCBF_BACKEND": "python", "PATH": ""}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
