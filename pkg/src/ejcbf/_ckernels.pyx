# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled two-link elastic-joint kernels (same API as ``_pykernels``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos

cnp.import_array()

BACKEND = "cython"

ctypedef struct tay:
    double c0
    double c1
    double c2

ctypedef struct prm:
    double m1, m2, l1, l2, i1, i2, j, k, g

ctypedef struct mc:
    tay m11, m12, m22, cc1, cc2


cdef inline tay t_make(double c0, double c1, double c2) noexcept nogil:
    cdef tay r
    r.c0 = c0
    r.c1 = c1
    r.c2 = c2
    return r


cdef inline tay t_add(tay a, tay b) noexcept nogil:
    return t_make(a.c0 + b.c0, a.c1 + b.c1, a.c2 + b.c2)


cdef inline tay t_scale(tay a, double s) noexcept nogil:
    return t_make(a.c0 * s, a.c1 * s, a.c2 * s)


cdef inline tay t_mul(tay a, tay b) noexcept nogil:
    return t_make(a.c0 * b.c0,
                  a.c0 * b.c1 + a.c1 * b.c0,
                  a.c0 * b.c2 + a.c1 * b.c1 + a.c2 * b.c0)


cdef inline tay t_sin(tay a) noexcept nogil:
    cdef double s = sin(a.c0), c = cos(a.c0)
    return t_make(s, c * a.c1, c * a.c2 - 0.5 * s * a.c1 * a.c1)


cdef inline tay t_cos(tay a) noexcept nogil:
    cdef double s = sin(a.c0), c = cos(a.c0)
    return t_make(c, -s * a.c1, -s * a.c2 - 0.5 * c * a.c1 * a.c1)


cdef prm unpack(double[::1] p) noexcept:
    cdef prm r
    r.m1 = p[0]
    r.m2 = p[1]
    r.l1 = p[2]
    r.l2 = p[3]
    r.i1 = p[4]
    r.i2 = p[5]
    r.j = p[6]
    r.k = p[7]
    r.g = p[8]
    return r


cdef mc mc_entries(prm p, tay q1, tay q2, tay dq1, tay dq2) noexcept nogil:
    cdef double alpha = p.i1 + p.i2 + p.m1 * p.l1 * p.l1 + p.m2 * (p.l1 * p.l1 + p.l2 * p.l2)
    cdef double beta = p.m2 * p.l1 * p.l2
    cdef double delta = p.i2 + p.m2 * p.l2 * p.l2
    cdef tay c2 = t_cos(q2), s2 = t_sin(q2)
    cdef tay c1 = t_cos(q1), c12 = t_cos(t_add(q1, q2))
    cdef tay grav2 = t_scale(c12, p.m2 * p.g * p.l2)
    cdef tay vv
    cdef mc r
    r.m11 = t_scale(c2, 2.0 * beta)
    r.m11.c0 += alpha
    r.m12 = t_scale(c2, beta)
    r.m12.c0 += delta
    r.m22 = t_make(delta, 0.0, 0.0)
    vv = t_add(t_scale(t_mul(dq1, dq2), 2.0), t_mul(dq2, dq2))
    r.cc1 = t_add(t_add(t_scale(t_mul(s2, vv), -beta),
                        t_scale(c1, (p.m1 + p.m2) * p.g * p.l1)), grav2)
    r.cc2 = t_add(t_scale(t_mul(s2, t_mul(dq1, dq1)), beta), grav2)
    return r


cdef inline void solve2(double m11, double m12, double m22, double r1, double r2,
                        double* o1, double* o2) noexcept nogil:
    cdef double det = m11 * m22 - m12 * m12
    o1[0] = (m22 * r1 - m12 * r2) / det
    o2[0] = (m11 * r2 - m12 * r1) / det


cdef void rhs(prm p, double* s, double u1, double u2, double* out) noexcept nogil:
    cdef mc e = mc_entries(p, t_make(s[0], 0, 0), t_make(s[1], 0, 0),
                           t_make(s[2], 0, 0), t_make(s[3], 0, 0))
    cdef double a1, a2
    solve2(e.m11.c0, e.m12.c0, e.m22.c0,
           -(e.cc1.c0 + p.k * (s[0] - s[4])), -(e.cc2.c0 + p.k * (s[1] - s[5])),
           &a1, &a2)
    out[0] = s[2]
    out[1] = s[3]
    out[2] = a1
    out[3] = a2
    out[4] = s[6]
    out[5] = s[7]
    out[6] = (u1 - p.k * (s[4] - s[0])) / p.j
    out[7] = (u2 - p.k * (s[5] - s[1])) / p.j


def plant_rhs(double[::1] p, s, u):
    cdef double buf[8]
    cdef double out[8]
    cdef int i
    for i in range(8):
        buf[i] = s[i]
    rhs(unpack(p), buf, u[0], u[1], out)
    return np.array([out[i] for i in range(8)])


def rk4_hold(double[::1] p, s, u, double dt, int n_sub):
    """Integrate ``n_sub`` RK4 substeps of length ``dt / n_sub`` with ``u`` held."""
    cdef prm pp = unpack(p)
    cdef double x[8]
    cdef double tmp[8]
    cdef double k1[8]
    cdef double k2[8]
    cdef double k3[8]
    cdef double k4[8]
    cdef double u1 = u[0], u2 = u[1]
    cdef double h = dt / n_sub
    cdef int i, n
    for i in range(8):
        x[i] = s[i]
    with nogil:
        for n in range(n_sub):
            rhs(pp, x, u1, u2, k1)
            for i in range(8):
                tmp[i] = x[i] + 0.5 * h * k1[i]
            rhs(pp, tmp, u1, u2, k2)
            for i in range(8):
                tmp[i] = x[i] + 0.5 * h * k2[i]
            rhs(pp, tmp, u1, u2, k3)
            for i in range(8):
                tmp[i] = x[i] + h * k3[i]
            rhs(pp, tmp, u1, u2, k4)
            for i in range(8):
                x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return np.array([x[i] for i in range(8)])


cdef mc along_flat(prm p, x):
    cdef double x11 = x[0], x12 = x[1], x21 = x[2], x22 = x[3]
    cdef double x31 = x[4], x32 = x[5], x41 = x[6], x42 = x[7]
    return mc_entries(p, t_make(x11, x21, 0.5 * x31), t_make(x12, x22, 0.5 * x32),
                      t_make(x21, x31, 0.5 * x41), t_make(x22, x32, 0.5 * x42))


def mc_derivs(double[::1] p, x):
    """M, C and their first two total time derivatives along the flat state."""
    cdef mc e = along_flat(unpack(p), x)
    return (
        np.array([[e.m11.c0, e.m12.c0], [e.m12.c0, e.m22.c0]]),
        np.array([[e.m11.c1, e.m12.c1], [e.m12.c1, e.m22.c1]]),
        np.array([[2 * e.m11.c2, 2 * e.m12.c2], [2 * e.m12.c2, 2 * e.m22.c2]]),
        np.array([e.cc1.c0, e.cc2.c0]),
        np.array([e.cc1.c1, e.cc2.c1]),
        np.array([2 * e.cc1.c2, 2 * e.cc2.c2]),
    )


def flat_observe(double[::1] p, s):
    cdef prm pp = unpack(p)
    cdef double q1 = s[0], q2 = s[1], dq1 = s[2], dq2 = s[3]
    cdef double th1 = s[4], th2 = s[5], dth1 = s[6], dth2 = s[7]
    cdef double a1, a2, j1, j2, r1, r2
    cdef mc e = mc_entries(pp, t_make(q1, 0, 0), t_make(q2, 0, 0),
                           t_make(dq1, 0, 0), t_make(dq2, 0, 0))
    solve2(e.m11.c0, e.m12.c0, e.m22.c0,
           -(e.cc1.c0 + pp.k * (q1 - th1)), -(e.cc2.c0 + pp.k * (q2 - th2)), &a1, &a2)
    cdef mc d = mc_entries(pp, t_make(q1, dq1, 0), t_make(q2, dq2, 0),
                           t_make(dq1, a1, 0), t_make(dq2, a2, 0))
    r1 = -(d.m11.c1 * a1 + d.m12.c1 * a2 + d.cc1.c1 + pp.k * (dq1 - dth1))
    r2 = -(d.m12.c1 * a1 + d.m22.c1 * a2 + d.cc2.c1 + pp.k * (dq2 - dth2))
    solve2(e.m11.c0, e.m12.c0, e.m22.c0, r1, r2, &j1, &j2)
    return np.array([q1, q2, dq1, dq2, a1, a2, j1, j2])


def f_and_g(double[::1] p, x):
    cdef prm pp = unpack(p)
    cdef double kj = pp.k / pp.j
    cdef double x31 = x[4], x32 = x[5], x41 = x[6], x42 = x[7]
    cdef mc e = along_flat(pp, x)
    cdef double M11 = e.m11.c0, M12 = e.m12.c0, M22 = e.m22.c0
    cdef double r1, r2, f1, f2, det, sc
    r1 = (kj * (M11 * x31 + M12 * x32 + e.cc1.c0)
          + pp.k * x31 + 2 * e.m11.c2 * x31 + 2 * e.m12.c2 * x32
          + 2.0 * (e.m11.c1 * x41 + e.m12.c1 * x42) + 2 * e.cc1.c2)
    r2 = (kj * (M12 * x31 + M22 * x32 + e.cc2.c0)
          + pp.k * x32 + 2 * e.m12.c2 * x31 + 2 * e.m22.c2 * x32
          + 2.0 * (e.m12.c1 * x41 + e.m22.c1 * x42) + 2 * e.cc2.c2)
    solve2(M11, M12, M22, -r1, -r2, &f1, &f2)
    det = M11 * M22 - M12 * M12
    sc = kj / det
    return np.array([f1, f2]), np.array([[sc * M22, -sc * M12], [-sc * M12, sc * M11]])
