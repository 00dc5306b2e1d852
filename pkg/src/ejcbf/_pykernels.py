"""Pure-Python implementation of the two-link elastic-joint kernels.

Mirrors ``_ckernels.pyx`` function by function.  The packed parameter vector
is ``[m1, m2, l1, l2, i1, i2, j, k, g]``; states are
``[q1, q2, dq1, dq2, th1, th2, dth1, dth2]`` and flat states
``[x1(2), x2(2), x3(2), x4(2)]``.
"""

from __future__ import annotations

import numpy as np

from .taylor import Taylor2, cos, sin

BACKEND = "python"


def mc_entries(p, q1, q2, dq1, dq2):
    """Entries (M11, M12, M22, C1, C2) for floats or :class:`Taylor2` inputs."""
    m1, m2, l1, l2, i1, i2, _, _, g = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]
    alpha = i1 + i2 + m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2)
    beta = m2 * l1 * l2
    delta = i2 + m2 * l2 * l2
    c2, s2 = cos(q2), sin(q2)
    c1, c12 = cos(q1), cos(q1 + q2)
    m11 = alpha + 2.0 * beta * c2
    m12 = delta + beta * c2
    m22 = delta + 0.0 * c2
    grav2 = m2 * g * l2 * c12
    cc1 = -beta * s2 * (2.0 * dq1 * dq2 + dq2 * dq2) + (m1 + m2) * g * l1 * c1 + grav2
    cc2 = beta * s2 * dq1 * dq1 + grav2
    return m11, m12, m22, cc1, cc2


def _solve2(m11, m12, m22, r1, r2):
    det = m11 * m22 - m12 * m12
    return (m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det


def plant_rhs(p, s, u):
    k, j = p[7], p[6]
    q1, q2, dq1, dq2, th1, th2, dth1, dth2 = s
    m11, m12, m22, cc1, cc2 = mc_entries(p, q1, q2, dq1, dq2)
    a1, a2 = _solve2(m11, m12, m22, -(cc1 + k * (q1 - th1)), -(cc2 + k * (q2 - th2)))
    b1 = (u[0] - k * (th1 - q1)) / j
    b2 = (u[1] - k * (th2 - q2)) / j
    return np.array([dq1, dq2, a1, a2, dth1, dth2, b1, b2])


def rk4_hold(p, s, u, dt, n_sub):
    """Integrate ``n_sub`` RK4 substeps of length ``dt / n_sub`` with ``u`` held."""
    s = np.array(s, dtype=float)
    u = np.asarray(u, dtype=float)
    h = dt / n_sub
    for _ in range(n_sub):
        k1 = plant_rhs(p, s, u)
        k2 = plant_rhs(p, s + 0.5 * h * k1, u)
        k3 = plant_rhs(p, s + 0.5 * h * k2, u)
        k4 = plant_rhs(p, s + h * k3, u)
        s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return s


def mc_derivs(p, x):
    """M, C and their first two total time derivatives along the flat state.

    Returns ``(M, dM, ddM, C, dC, ddC)`` as numpy arrays.
    """
    q1 = Taylor2.along(x[0], x[2], x[4])
    q2 = Taylor2.along(x[1], x[3], x[5])
    dq1 = Taylor2.along(x[2], x[4], x[6])
    dq2 = Taylor2.along(x[3], x[5], x[7])
    m11, m12, m22, cc1, cc2 = mc_entries(p, q1, q2, dq1, dq2)

    def mat(attr):
        a, b, c = getattr(m11, attr), getattr(m12, attr), getattr(m22, attr)
        return np.array([[a, b], [b, c]])

    return (
        mat("value"), mat("d1"), mat("d2"),
        np.array([cc1.value, cc2.value]),
        np.array([cc1.d1, cc2.d1]),
        np.array([cc1.d2, cc2.d2]),
    )


def flat_observe(p, s):
    k = p[7]
    q1, q2, dq1, dq2, th1, th2, dth1, dth2 = (float(v) for v in s)
    m11, m12, m22, cc1, cc2 = mc_entries(p, q1, q2, dq1, dq2)
    a1, a2 = _solve2(m11, m12, m22, -(cc1 + k * (q1 - th1)), -(cc2 + k * (q2 - th2)))
    # first derivatives of M and C along (q, dq, ddq)
    t_q1 = Taylor2(q1, dq1)
    t_q2 = Taylor2(q2, dq2)
    t_dq1 = Taylor2(dq1, a1)
    t_dq2 = Taylor2(dq2, a2)
    n11, n12, n22, d1, d2 = mc_entries(p, t_q1, t_q2, t_dq1, t_dq2)
    r1 = -(n11.c1 * a1 + n12.c1 * a2 + d1.c1 + k * (dq1 - dth1))
    r2 = -(n12.c1 * a1 + n22.c1 * a2 + d2.c1 + k * (dq2 - dth2))
    j1, j2 = _solve2(m11, m12, m22, r1, r2)
    return np.array([q1, q2, dq1, dq2, a1, a2, j1, j2])


def f_and_g(p, x):
    j, k = p[6], p[7]
    kj = k / j
    x = [float(v) for v in x]
    q1 = Taylor2.along(x[0], x[2], x[4])
    q2 = Taylor2.along(x[1], x[3], x[5])
    dq1 = Taylor2.along(x[2], x[4], x[6])
    dq2 = Taylor2.along(x[3], x[5], x[7])
    m11, m12, m22, cc1, cc2 = mc_entries(p, q1, q2, dq1, dq2)
    x31, x32, x41, x42 = x[4], x[5], x[6], x[7]
    M11, M12, M22 = m11.c0, m12.c0, m22.c0
    r1 = (kj * (M11 * x31 + M12 * x32 + cc1.c0)
          + k * x31 + m11.d2 * x31 + m12.d2 * x32
          + 2.0 * (m11.c1 * x41 + m12.c1 * x42) + cc1.d2)
    r2 = (kj * (M12 * x31 + M22 * x32 + cc2.c0)
          + k * x32 + m12.d2 * x31 + m22.d2 * x32
          + 2.0 * (m12.c1 * x41 + m22.c1 * x42) + cc2.d2)
    f1, f2 = _solve2(M11, M12, M22, -r1, -r2)
    det = M11 * M22 - M12 * M12
    G = (kj / det) * np.array([[M22, -M12], [-M12, M11]])
    return np.array([f1, f2]), G
