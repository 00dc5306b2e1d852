"""Two-link planar robot with elastic joints.

Plant::

    M(q) q'' + C(q, q') + K (q - theta) = 0
    J theta'' + K (theta - q) = u

Each link is modelled as a point mass at its tip plus a rotational inertia
about that point, with gravity acting along ``-y`` (angles measured from the
horizontal).  ``K = k I`` and ``J = j I``.

The control-affine reformulation uses the flat state ``x = (q, q', q'', q''')``
so that ``x4' = f(x) + G(x) u``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from functools import cached_property

import numpy as np

from .backend import kernels


class NonFiniteState(ArithmeticError):
    """Integration produced NaN or Inf."""


@dataclass(frozen=True)
class RobotParams:
    link_masses: tuple[float, float] = (1.0, 1.0)
    link_lengths: tuple[float, float] = (1.0, 1.0)
    link_inertias: tuple[float, float] = (1.25, 1.25)
    motor_inertia_scale: float = 0.001
    stiffness_scale: float = 1.0
    gravity: float = 9.81
    m: int = 2

    def __post_init__(self):
        if self.m != 2:
            raise ValueError("only the two-link planar arm (m = 2) is implemented")
        for name in ("link_masses", "link_lengths", "link_inertias"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != self.m:
                raise ValueError(f"{name} must have {self.m} entries")
            object.__setattr__(self, name, vals)
        if min(self.link_masses) <= 0 or min(self.link_lengths) <= 0:
            raise ValueError("masses and lengths must be positive")
        if min(self.link_inertias) < 0:
            raise ValueError("link inertias must be non-negative")
        if self.motor_inertia_scale <= 0 or self.stiffness_scale <= 0:
            raise ValueError("motor inertia and stiffness scales must be positive")

    @cached_property
    def packed(self) -> np.ndarray:
        """Flat parameter vector consumed by the kernel backends."""
        return np.array(
            [*self.link_masses, *self.link_lengths, *self.link_inertias,
             self.motor_inertia_scale, self.stiffness_scale, self.gravity],
            dtype=float,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RobotParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown robot parameter(s): {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    dq: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.dq, self.theta, self.dtheta])

    @classmethod
    def from_vector(cls, v) -> "PlantState":
        v = np.asarray(v, dtype=float)
        m = v.size // 4
        return cls(v[:m].copy(), v[m:2 * m].copy(), v[2 * m:3 * m].copy(), v[3 * m:].copy())


@dataclass(frozen=True)
class MatrixBounds:
    gamma_M_lo: float
    gamma_M_hi: float
    gamma_J_lo: float
    gamma_J_hi: float
    gamma_K_lo: float
    gamma_K_hi: float

    def __post_init__(self):
        for lo, hi in ((self.gamma_M_lo, self.gamma_M_hi),
                       (self.gamma_J_lo, self.gamma_J_hi),
                       (self.gamma_K_lo, self.gamma_K_hi)):
            if not 0 < lo <= hi:
                raise ValueError("matrix bounds need 0 < lo <= hi")

    @property
    def gamma_G_lo(self) -> float:
        return self.gamma_K_lo / (self.gamma_M_hi * self.gamma_J_hi)

    @property
    def gamma_G_hi(self) -> float:
        return self.gamma_K_hi / (self.gamma_M_lo * self.gamma_J_lo)

    @classmethod
    def from_g_bounds(cls, g_lo: float, g_hi: float, j: float, k: float) -> "MatrixBounds":
        """Bounds whose composed G interval is exactly ``[g_lo, g_hi]`` for ``J = jI``, ``K = kI``."""
        return cls(k / (g_hi * j), k / (g_lo * j), j, j, k, k)


def _unit_state(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (8,):
        raise ValueError(f"expected a state of length 8, got shape {x.shape}")
    return x


def inertia(params: RobotParams, q) -> np.ndarray:
    x = np.zeros(8)
    x[:2] = q
    return kernels.mc_derivs(params.packed, x)[0]


def coriolis_gravity(params: RobotParams, q, dq) -> np.ndarray:
    x = np.zeros(8)
    x[:2] = q
    x[2:4] = dq
    return kernels.mc_derivs(params.packed, x)[3]


def mc_derivatives(params: RobotParams, x):
    """``(M, dM/dt, d2M/dt2, C, dC/dt, d2C/dt2)`` along the flat state ``x``."""
    return kernels.mc_derivs(params.packed, _unit_state(x))


def plant_rhs(params: RobotParams, s, u) -> np.ndarray:
    return kernels.plant_rhs(params.packed, _unit_state(s), np.asarray(u, dtype=float))


def step_plant(params: RobotParams, s, u, dt: float, substeps: int = 1):
    """Advance the plant by ``dt`` with ``u`` held, using ``substeps`` RK4 steps.

    Accepts and returns either a :class:`PlantState` or a raw length-8 vector.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite input torque")
    as_state = isinstance(s, PlantState)
    v = s.vector if as_state else _unit_state(s)
    out = kernels.rk4_hold(params.packed, v, u, float(dt), int(substeps))
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("plant integration diverged")
    return PlantState.from_vector(out) if as_state else out


def flat_observe(params: RobotParams, s) -> np.ndarray:
    """Flat state ``(q, q', q'', q''')`` of a plant state."""
    v = s.vector if isinstance(s, PlantState) else _unit_state(s)
    return kernels.flat_observe(params.packed, v)


def plant_from_flat(params: RobotParams, x) -> np.ndarray:
    """Inverse of :func:`flat_observe`: motor angles/velocities reproducing ``x``."""
    x = _unit_state(x)
    k = params.stiffness_scale
    M, dM, _, C, dC, _ = mc_derivatives(params, x)
    q, dq, x3, x4 = x[:2], x[2:4], x[4:6], x[6:]
    theta = q + (M @ x3 + C) / k
    dtheta = dq + (M @ x4 + dM @ x3 + dC) / k
    return np.concatenate([q, dq, theta, dtheta])


def true_f_g(params: RobotParams, x):
    """Drift ``f(x)`` and input matrix ``G(x) = M^-1 K J^-1`` of the flat dynamics."""
    return kernels.f_and_g(params.packed, _unit_state(x))


def matrix_bounds(params: RobotParams, n_grid: int = 2001, inflation: float = 0.01) -> MatrixBounds:
    # M depends on q only through cos(q2)
    q2 = np.linspace(-np.pi, np.pi, n_grid)
    eig = np.array([np.linalg.eigvalsh(inertia(params, [0.0, a])) for a in q2])
    j, k = params.motor_inertia_scale, params.stiffness_scale
    return MatrixBounds(eig.min() / (1 + inflation), eig.max() * (1 + inflation), j, j, k, k)


def perturbed_params(params: RobotParams, rel_scale: float, seed) -> RobotParams:
    """Masses and lengths scaled by independent factors drawn from U[1-r, 1+r]."""
    if not 0 <= rel_scale < 1:
        raise ValueError("rel_scale must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    fac = rng.uniform(1 - rel_scale, 1 + rel_scale, size=2 * params.m)
    m = params.m
    return replace(
        params,
        link_masses=tuple(np.asarray(params.link_masses) * fac[:m]),
        link_lengths=tuple(np.asarray(params.link_lengths) * fac[m:]),
    )


def mechanical_energy(params: RobotParams, s) -> float:
    """Kinetic + spring + gravitational energy of a plant state."""
    v = s.vector if isinstance(s, PlantState) else _unit_state(s)
    q, dq, th, dth = v[:2], v[2:4], v[4:6], v[6:]
    M = inertia(params, q)
    m1, m2 = params.link_masses
    l1, l2 = params.link_lengths
    y1 = l1 * np.sin(q[0])
    y2 = y1 + l2 * np.sin(q[0] + q[1])
    kin = 0.5 * dq @ M @ dq + 0.5 * params.motor_inertia_scale * dth @ dth
    spring = 0.5 * params.stiffness_scale * np.sum((q - th) ** 2)
    return float(kin + spring + params.gravity * (m1 * y1 + m2 * y2))
