"""Higher-order control barrier functions on the integrator chain.

For a constraint ``b(q) >= 0`` of relative degree four and linear chain maps
``alpha_i(s) = a_i s`` the barrier is

    psi = (d/dt + a_4)(d/dt + a_3)(d/dt + a_2) b

with time derivatives taken along ``x1' = x2, x2' = x3, x3' = x4``.  The
final class-K function is ``alpha(psi) = kappa psi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class LinearSystem:
    """Integrator chain ``x' = A x + B nu`` with ``x`` in R^{4m}."""

    m: int = 2

    @property
    def A(self) -> np.ndarray:
        n = 4 * self.m
        return np.eye(n, k=self.m)

    @property
    def B(self) -> np.ndarray:
        out = np.zeros((4 * self.m, self.m))
        out[3 * self.m:] = np.eye(self.m)
        return out


@dataclass(frozen=True)
class Constraint:
    """Scalar constraint ``b(q)`` with partial derivatives up to order four.

    ``d3`` and ``d4`` return the third and fourth derivative tensors with
    shapes ``(m, m, m)`` and ``(m, m, m, m)``.
    """

    value: Callable
    grad: Callable
    hess: Callable
    d3: Callable
    d4: Callable


def linear_constraint(offset: float, weights) -> Constraint:
    """``b(q) = offset - w^T q``; e.g. ``linear_constraint(0.8, [1, 0])`` for ``q1 <= 0.8``."""
    w = np.asarray(weights, dtype=float)
    m = w.size
    return Constraint(
        value=lambda q: float(offset - w @ q),
        grad=lambda q: -w,
        hess=lambda q: np.zeros((m, m)),
        d3=lambda q: np.zeros((m, m, m)),
        d4=lambda q: np.zeros((m, m, m, m)),
    )


@dataclass(frozen=True)
class CbfRowData:
    grad_psi_B: np.ndarray
    drift: float
    alpha_psi: float
    psi: float

    @property
    def norm_grad_psi_B(self) -> float:
        return float(np.linalg.norm(self.grad_psi_B))


def _poly_coeffs(alphas) -> np.ndarray:
    """Coefficients p_k of psi = sum_k p_k b^(k) for the product of (D + a_i)."""
    c = np.array([1.0])
    for a in alphas:
        c = np.convolve(c, [a, 1.0])
    return c


@dataclass(frozen=True)
class CbfChain:
    constraint: Constraint
    alphas: tuple = (1.0, 1.0, 1.0)
    kappa: float = 16.0
    m: int = 2

    def __post_init__(self):
        if len(self.alphas) != 3:
            raise ValueError("relative degree four needs exactly three chain maps")
        if min(self.alphas) < 0:
            raise ValueError("chain slopes must be non-negative")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    @property
    def coeffs(self) -> np.ndarray:
        return _poly_coeffs(self.alphas)

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        m = self.m
        return x[:m], x[m:2 * m], x[2 * m:3 * m], x[3 * m:]

    def b_derivatives(self, x) -> np.ndarray:
        """``[b, b', b'', b''']`` along the chain."""
        x1, x2, x3, x4 = self._split(x)
        c = self.constraint
        g, H, T = c.grad(x1), c.hess(x1), c.d3(x1)
        return np.array([
            c.value(x1),
            g @ x2,
            x2 @ H @ x2 + g @ x3,
            np.einsum("ijk,i,j,k->", T, x2, x2, x2) + 3.0 * x2 @ H @ x3 + g @ x4,
        ])

    def psi_tilde(self, x) -> np.ndarray:
        """Intermediate barriers ``psi_1 .. psi_4`` of the chain."""
        bd = self.b_derivatives(x)
        cur = [np.array([1.0])]
        for a in self.alphas:
            cur.append(np.convolve(cur[-1], [a, 1.0]))
        return np.array([c @ bd[: c.size] for c in cur])

    def psi(self, x) -> float:
        return float(self.coeffs @ self.b_derivatives(x))

    def grad_psi(self, x) -> np.ndarray:
        x1, x2, x3, x4 = self._split(x)
        c = self.constraint
        g, H, T, Q = c.grad(x1), c.hess(x1), c.d3(x1), c.d4(x1)
        m = self.m
        z = np.zeros(m)
        # rows: gradient of b^(k) w.r.t. (x1, x2, x3, x4)
        grads = [
            (g, z, z, z),
            (H @ x2, g, z, z),
            (np.einsum("ijk,i,j->k", T, x2, x2) + H @ x3, 2.0 * H @ x2, g, z),
            (np.einsum("ijkl,i,j,k->l", Q, x2, x2, x2) + 3.0 * np.einsum("ijk,i,j->k", T, x2, x3) + H @ x4,
             3.0 * np.einsum("ijk,i,j->k", T, x2, x2) + 3.0 * H @ x3,
             3.0 * H @ x2,
             g),
        ]
        out = np.zeros(4 * m)
        for p, blocks in zip(self.coeffs, grads):
            out += p * np.concatenate(blocks)
        return out


def build_chain(constraint: Constraint, alphas=(1.0, 1.0, 1.0), kappa: float = 16.0, m: int = 2) -> CbfChain:
    return CbfChain(constraint, tuple(float(a) for a in alphas), float(kappa), m)


def eval_row(chain: CbfChain, sys: LinearSystem, x) -> CbfRowData:
    x = np.asarray(x, dtype=float)
    xi = chain.grad_psi(x)
    psi = chain.psi(x)
    return CbfRowData(
        grad_psi_B=sys.B.T @ xi,
        drift=float(xi @ sys.A @ x),
        alpha_psi=chain.kappa * psi,
        psi=psi,
    )


def constraint_margin(row: CbfRowData, gamma_E: float, e_bar: float, nu) -> float:
    """Slack of the robust CBF inequality for input ``nu`` (>= 0 certifies safety)."""
    nu = np.asarray(nu, dtype=float)
    lhs = row.drift + row.grad_psi_B @ nu - row.norm_grad_psi_B * (gamma_E * np.linalg.norm(nu) + e_bar)
    return float(lhs + row.alpha_psi)
