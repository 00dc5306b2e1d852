"""Truncated Taylor arithmetic for total time derivatives.

A :class:`Taylor2` holds the coefficients of ``a(t) = c0 + c1 t + c2 t**2``.
Propagating these through a smooth expression yields the value and the first
two time derivatives of the expression along a polynomial trajectory:
``value = c0``, ``d/dt = c1``, ``d2/dt2 = 2 c2``.
"""

from __future__ import annotations

import math


class Taylor2:
    __slots__ = ("c0", "c1", "c2")

    def __init__(self, c0: float, c1: float = 0.0, c2: float = 0.0):
        self.c0 = float(c0)
        self.c1 = float(c1)
        self.c2 = float(c2)

    @classmethod
    def along(cls, x0: float, dx: float, ddx: float = 0.0) -> "Taylor2":
        """Trajectory through ``x0`` with first/second derivatives ``dx``, ``ddx``."""
        return cls(x0, dx, 0.5 * ddx)

    @property
    def value(self) -> float:
        return self.c0

    @property
    def d1(self) -> float:
        return self.c1

    @property
    def d2(self) -> float:
        return 2.0 * self.c2

    def __add__(self, other):
        if isinstance(other, Taylor2):
            return Taylor2(self.c0 + other.c0, self.c1 + other.c1, self.c2 + other.c2)
        return Taylor2(self.c0 + other, self.c1, self.c2)

    __radd__ = __add__

    def __neg__(self):
        return Taylor2(-self.c0, -self.c1, -self.c2)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Taylor2):
            return Taylor2(
                self.c0 * other.c0,
                self.c0 * other.c1 + self.c1 * other.c0,
                self.c0 * other.c2 + self.c1 * other.c1 + self.c2 * other.c0,
            )
        return Taylor2(self.c0 * other, self.c1 * other, self.c2 * other)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Taylor2({self.c0!r}, {self.c1!r}, {self.c2!r})"


def _sincos(a: Taylor2) -> tuple[Taylor2, Taylor2]:
    s, c = math.sin(a.c0), math.cos(a.c0)
    sin = Taylor2(s, c * a.c1, c * a.c2 - 0.5 * s * a.c1 * a.c1)
    cos = Taylor2(c, -s * a.c1, -s * a.c2 - 0.5 * c * a.c1 * a.c1)
    return sin, cos


def sin(a):
    if isinstance(a, Taylor2):
        return _sincos(a)[0]
    return math.sin(a)


def cos(a):
    if isinstance(a, Taylor2):
        return _sincos(a)[1]
    return math.cos(a)
