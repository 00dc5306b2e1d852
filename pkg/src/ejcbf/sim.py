"""Closed-loop simulation at a fixed control rate with a zero-order hold.

Each control period: observe the flat state, form the nominal tracking input,
choose a feedback-linearization branch, filter the virtual input through the
robust CBF cone program, convert it to torque, then hold that torque while
the plant is integrated with RK4.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .backend import kernels
from .cbf import CbfChain, LinearSystem, constraint_margin, eval_row
from .dynamics import MatrixBounds, RobotParams, plant_from_flat
from .gp import TrainingSet
from .linearize import Branch, SwitchConfig, envelope, inverse, SingularMeanG
from .socp import Status, filter_input

DIVERGENCE_NORM = 1e6


class GridShapeMismatch(ValueError):
    """Requested sample count does not match the configured grid shape."""


class Mode(str, Enum):
    SWITCHING = "switching"
    GP_ONLY = "gp_only"
    BACKUP_ONLY = "backup_only"


# ---------------------------------------------------------------- reference


@dataclass(frozen=True)
class Reference:
    """``q_d(t) = [sin(pi t / c), cos(pi t / c)]`` and its analytic derivatives."""

    c: float
    horizon: float = 30.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def omega(self) -> float:
        return np.pi / self.c

    def derivatives(self, t: float) -> np.ndarray:
        """Rows ``q_d, q_d', ..., q_d''''`` at ``t``; shape ``(5, 2)``."""
        w = self.omega
        s, co = np.sin(w * t), np.cos(w * t)
        base = np.array([[s, co], [co, -s], [-s, -co], [-co, s], [s, co]])
        return base * (w ** np.arange(5))[:, None]

    def q_d(self, t: float) -> np.ndarray:
        return self.derivatives(t)[0]

    def x_d(self, t: float) -> np.ndarray:
        return self.derivatives(t)[:4].ravel()

    def q4(self, t: float) -> np.ndarray:
        return self.derivatives(t)[4]


# ---------------------------------------------------------------- nominal controller


def default_gain_matrix(m: int = 2) -> np.ndarray:
    L = np.zeros((m, 4 * m))
    for j in range(m):
        L[j, [j, m + j, 2 * m + j, 3 * m + j]] = [1e4, 1e3, 300.0, 10.0]
    return L


@dataclass(frozen=True)
class TrackingGain:
    L: np.ndarray

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        if L.ndim != 2 or L.shape[1] != 4 * L.shape[0]:
            raise ValueError(f"gain must be m x 4m, got {L.shape}")
        L.setflags(write=False)
        object.__setattr__(self, "L", L)
        eig = self.closed_loop_eigenvalues()
        if not np.all(eig.real < 0):
            raise ValueError(f"A - B L is not Hurwitz (max Re = {eig.real.max():.3g})")

    @property
    def m(self) -> int:
        return self.L.shape[0]

    def closed_loop_eigenvalues(self) -> np.ndarray:
        sys = LinearSystem(self.L.shape[0])
        return np.linalg.eigvals(sys.A - sys.B @ self.L)

    @classmethod
    def default(cls, m: int = 2) -> "TrackingGain":
        return cls(default_gain_matrix(m))


def nominal_input(gain: TrackingGain, ref: Reference, t: float, x) -> np.ndarray:
    """``q_d''''(t) + L (x_d(t) - x)``."""
    d = ref.derivatives(t)
    return d[4] + gain.L @ (d[:4].ravel() - np.asarray(x, dtype=float))


# ---------------------------------------------------------------- models


class ExactModel:
    """Model interface backed by the true ``(f, G)``; zero posterior spread."""

    def __init__(self, params: RobotParams, beta: float = 24.0):
        self.params = params
        self.beta = float(beta)
        self._p = params.packed

    def predict(self, x):
        f, G = kernels.f_and_g(self._p, np.asarray(x, dtype=float))
        m = f.size
        return f, np.zeros(m), G, np.zeros((m, m))


# ---------------------------------------------------------------- training data


@dataclass(frozen=True)
class Region:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("region bounds must be finite and of equal length")
        if np.any(hi < lo):
            raise ValueError("region needs lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @classmethod
    def from_blocks(cls, half_widths) -> "Region":
        """Symmetric box with one half-width per flat block, each repeated m = 2 times."""
        h = np.repeat(np.asarray(half_widths, dtype=float), 2)
        return cls(-h, h)


def korobov_generator(n: int, d: int) -> int:
    """Generator of the rank-1 lattice ``{k (1, a, ..., a^{d-1}) / n}`` with the
    largest minimal toroidal point distance."""
    best_a, best = 1, -1.0
    k = np.arange(1, n)[:, None]
    for a in range(1, n):
        if np.gcd(a, n) != 1:
            continue
        z = (k * np.array([pow(a, j, n) for j in range(d)])) % n / n
        z = np.minimum(z, 1.0 - z)
        md = float(np.min((z * z).sum(1)))
        if md > best:
            best_a, best = a, md
    return best_a


def lattice_points(n: int, d: int, generator: int | None = None) -> np.ndarray:
    """Centred rank-1 lattice in ``[0, 1]^d``."""
    a = korobov_generator(n, d) if generator is None else int(generator)
    g = np.array([pow(a, j, n) for j in range(d)])
    return ((np.arange(n)[:, None] * g) % n + 0.5) / n


def grid_points(shape, n: int) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != n:
        raise GridShapeMismatch(f"grid shape {shape} has {int(np.prod(shape))} points, expected {n}")
    axes = [np.linspace(0.0, 1.0, s) if s > 1 else np.array([0.5]) for s in shape]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(n, len(shape))


def generate_training_data(params: RobotParams, region: Region, n: int = 786, noise_std: float = 0.1,
                           u_box=(-30.0, 30.0), seed=0, grid_shape=None,
                           lattice_generator: int | None = None) -> TrainingSet:
    """Targets ``y = f(x) + G(x) u + w`` on a uniform design over ``region``.

    The design is a Cartesian grid when ``grid_shape`` is given, otherwise a
    rank-1 lattice (covers all ``4m`` dimensions for any ``n``).
    """
    if grid_shape is not None and len(grid_shape) != region.dim:
        raise GridShapeMismatch(f"grid shape needs {region.dim} entries")
    unit = grid_points(grid_shape, n) if grid_shape is not None else lattice_points(n, region.dim, lattice_generator)
    X = region.lo + (region.hi - region.lo) * unit
    rng = np.random.default_rng(seed)
    m = params.m
    U = rng.uniform(u_box[0], u_box[1], size=(n, m))
    W = rng.normal(0.0, 1.0, size=(n, m)) * noise_std
    p = params.packed
    Y = np.empty((n, m))
    for k in range(n):
        f, G = kernels.f_and_g(p, X[k])
        Y[k] = f + G @ U[k] + W[k]
    return TrainingSet(X, U, Y, noise_std)


# ---------------------------------------------------------------- log


CSV_HEADER = (
    ["t"]
    + [f"s{k}" for k in range(8)]
    + [f"x{k}" for k in range(8)]
    + ["qd1", "qd2", "nu_nom1", "nu_nom2", "nu1", "nu2", "u1", "u2"]
    + ["branch", "gamma_E", "e_bar", "psi", "margin", "status"]
)


@dataclass
class TrajectoryLog:
    mode: str
    c: float
    dt: float
    t: np.ndarray
    plant: np.ndarray
    flat: np.ndarray
    q_ref: np.ndarray
    nu_nom: np.ndarray
    nu_star: np.ndarray
    u: np.ndarray
    branch: list
    gamma_E: np.ndarray
    e_bar: np.ndarray
    psi: np.ndarray
    margin: np.ndarray
    status: list
    infeasible: bool = False
    diverged: bool = False
    fail_time: float | None = None
    notes: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.t.size

    @property
    def completed(self) -> bool:
        return not (self.infeasible or self.diverged)

    @property
    def mse(self) -> float:
        """Mean of ``|q - q_d|^2`` over the logged steps."""
        if self.steps == 0:
            return float("nan")
        e = self.flat[:, :2] - self.q_ref
        return float(np.mean(np.sum(e * e, axis=1)))

    @property
    def max_q1(self) -> float:
        return float(np.max(self.flat[:, 0])) if self.steps else float("nan")

    def min_b(self, offset: float = 0.8) -> float:
        return offset - self.max_q1

    def summary(self) -> dict:
        br = np.array(self.branch)
        return {
            "mode": self.mode,
            "c": self.c,
            "steps": self.steps,
            "mse": self.mse,
            "max_q1": self.max_q1,
            "min_b": self.min_b(),
            "infeasible": self.infeasible,
            "diverged": self.diverged,
            "completed": self.completed,
            "fail_time": self.fail_time,
            "backup_fraction": float(np.mean(br == Branch.BACKUP.value)) if br.size else 0.0,
            "min_margin": float(np.min(self.margin)) if self.steps else float("nan"),
            **self.notes,
        }

    def to_csv(self, path) -> None:
        fmt = lambda v: format(float(v), ".17g")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for k in range(self.steps):
                row = [fmt(self.t[k])]
                row += [fmt(v) for v in self.plant[k]]
                row += [fmt(v) for v in self.flat[k]]
                row += [fmt(v) for v in self.q_ref[k]]
                row += [fmt(v) for v in self.nu_nom[k]]
                row += [fmt(v) for v in self.nu_star[k]]
                row += [fmt(v) for v in self.u[k]]
                row += [self.branch[k], fmt(self.gamma_E[k]), fmt(self.e_bar[k]),
                        fmt(self.psi[k]), fmt(self.margin[k]), self.status[k]]
                w.writerow(row)

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------- closed loop


_FORCE = {Mode.SWITCHING: None, Mode.GP_ONLY: Branch.GP, Mode.BACKUP_ONLY: Branch.BACKUP}


def _torque(env, bounds: MatrixBounds, nu) -> np.ndarray:
    if env.branch is Branch.GP:
        return inverse(env.mu_G) @ (nu - env.mu_f)
    return (nu - env.mu_f) / bounds.gamma_G_hi


def run_closed_loop(params: RobotParams, model, bounds: MatrixBounds, chain: CbfChain,
                    gain: TrackingGain, ref: Reference, mode: Mode | str = Mode.SWITCHING,
                    dt_ctrl: float = 0.01, horizon: float | None = None, substeps: int = 10,
                    zeta: float = 0.95, use_filter: bool = True, solver: str = "specialized") -> TrajectoryLog:
    """Simulate one reference under ``mode``; failures end the run and are flagged."""
    mode = Mode(mode)
    T = ref.horizon if horizon is None else float(horizon)
    if not (T > 0 and dt_ctrl > 0):
        raise ValueError("horizon and dt_ctrl must be positive")
    n = int(round(T / dt_ctrl))
    m = params.m
    cfg = SwitchConfig(bounds, zeta)
    sys = LinearSystem(m)
    force = _FORCE[mode]
    p = params.packed

    ts = np.empty(n)
    plant = np.empty((n, 4 * m))
    flat = np.empty((n, 4 * m))
    q_ref = np.empty((n, m))
    nu_nom = np.empty((n, m))
    nu_star = np.empty((n, m))
    u_log = np.empty((n, m))
    gam = np.empty(n)
    ebar = np.empty(n)
    psi = np.empty(n)
    marg = np.empty(n)
    branch, status = [], []
    infeasible = diverged = False
    fail_time = None

    s = plant_from_flat(params, ref.x_d(0.0))
    k = 0
    for k in range(n):
        t = k * dt_ctrl
        x = kernels.flat_observe(p, s)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            diverged, fail_time = True, t
            break
        d = ref.derivatives(t)
        nu0 = d[4] + gain.L @ (d[:4].ravel() - x)
        env = envelope(model, cfg, x, force)
        row = eval_row(chain, sys, x)
        ts[k], plant[k], flat[k], q_ref[k], nu_nom[k] = t, s, x, d[0], nu0
        gam[k], ebar[k], psi[k] = env.gamma_E, env.e_bar, row.psi
        branch.append(env.branch.value)
        if mode is Mode.GP_ONLY and env.branch is not Branch.GP:
            # GP law undefined: singular posterior mean of G
            status.append(Status.INFEASIBLE.value)
            nu_star[k], u_log[k], marg[k] = nu0, np.nan, np.nan
            infeasible, fail_time = True, t
            k += 1
            break
        if use_filter:
            res = filter_input(row, env.gamma_E, env.e_bar, nu0, solver=solver)
            status.append(res.status.value)
            nu = res.nu_star
            if not res.ok:
                nu_star[k], u_log[k], marg[k] = nu, np.nan, np.nan
                infeasible, fail_time = True, t
                k += 1
                break
        else:
            status.append("Unfiltered")
            nu = nu0
        nu_star[k] = nu
        marg[k] = constraint_margin(row, env.gamma_E, env.e_bar, nu)
        try:
            u = _torque(env, bounds, nu)
        except SingularMeanG:
            u = np.full(m, np.nan)
        u_log[k] = u
        if not np.all(np.isfinite(u)):
            diverged, fail_time = True, t
            k += 1
            break
        s = kernels.rk4_hold(p, s, u, dt_ctrl, substeps)
        if not np.all(np.isfinite(s)):
            diverged, fail_time = True, t + dt_ctrl
            k += 1
            break
    else:
        k = n
    cut = slice(0, k)
    return TrajectoryLog(
        mode=mode.value, c=ref.c, dt=dt_ctrl, t=ts[cut], plant=plant[cut], flat=flat[cut],
        q_ref=q_ref[cut], nu_nom=nu_nom[cut], nu_star=nu_star[cut], u=u_log[cut],
        branch=branch[:k], gamma_E=gam[cut], e_bar=ebar[cut], psi=psi[cut], margin=marg[cut],
        status=status[:k], infeasible=infeasible, diverged=diverged, fail_time=fail_time,
    )
