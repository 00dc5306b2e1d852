"""Feedback linearization with a learned model and a prior-bound fallback.

Two laws turn a virtual input ``nu`` into a torque:

* learned:  ``u = mu_G^{-1} (nu - mu_f)``
* fallback: ``u = (nu - mu_f) / gamma_G_hi``

Each has a multiplicative error bound ``gamma_E`` and an additive error
bound ``e_bar`` on the resulting ``x4' = nu + E nu + e``.  The switching
rule picks the learned law whenever its ``gamma_E`` is at most ``zeta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamics import MatrixBounds

DET_GUARD = 1e-12


class SingularMeanG(ArithmeticError):
    """Posterior mean of G is (numerically) singular."""


class Branch(str, Enum):
    GP = "GP"
    BACKUP = "BACKUP"


@dataclass(frozen=True)
class SwitchConfig:
    bounds: MatrixBounds
    zeta: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.zeta < 1.0:
            raise ValueError("zeta must lie in (0, 1)")


@dataclass(frozen=True)
class Envelope:
    """Branch choice and error bounds at one state, before ``nu`` is known."""

    branch: Branch
    gamma_E: float
    e_bar: float
    mu_f: np.ndarray
    mu_G: np.ndarray
    min_sv: float
    gamma_E_gp: float


@dataclass(frozen=True)
class LinearizationOutcome:
    u: np.ndarray
    active_branch: Branch
    gamma_E: float
    e_bar: float
    mu_f: np.ndarray
    min_singular_mu_G: float


def min_singular_value(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.shape == (2, 2):
        det = abs(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
        fro2 = float(np.sum(A * A))
        disc = np.sqrt(max(fro2 * fro2 - 4.0 * det * det, 0.0))
        smax = np.sqrt(0.5 * (fro2 + disc))
        return 0.0 if smax == 0.0 else det / smax
    return float(np.linalg.svd(A, compute_uv=False)[-1])


def inverse(A) -> np.ndarray:
    """Adjugate inverse for 2x2 (LU otherwise) with a determinant guard."""
    A = np.asarray(A, dtype=float)
    if A.shape == (2, 2):
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        if abs(det) <= DET_GUARD:
            raise SingularMeanG(f"|det mu_G| = {abs(det):.3e}")
        return np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det
    if abs(np.linalg.det(A)) <= DET_GUARD:
        raise SingularMeanG("mu_G is singular")
    return np.linalg.inv(A)


def _predict(model, x):
    return model.predict(x)


def gp_branch_metrics(model, x, pred=None):
    """``(gamma_E_GP, e_bar_GP, mu_f, mu_G, min_sv)`` at ``x``.

    Raises :class:`SingularMeanG` if ``sigma_min(mu_G) = 0``.
    """
    mu_f, sig_f, mu_G, sig_G = _predict(model, x) if pred is None else pred
    sb = np.sqrt(model.beta)
    smin = min_singular_value(mu_G)
    if smin <= 0.0:
        raise SingularMeanG("sigma_min(mu_G) = 0")
    g_fro = sb * np.sqrt(np.sum(sig_G * sig_G))
    gamma = g_fro / smin
    e_bar = sb * np.linalg.norm(sig_f) + gamma * np.linalg.norm(mu_f)
    return float(gamma), float(e_bar), mu_f, mu_G, float(smin)


def backup_branch_metrics(bounds: MatrixBounds, model, x, pred=None):
    """``(gamma_E_gamma, e_bar_gamma, mu_f)`` for the fallback law."""
    mu_f, sig_f, _, _ = _predict(model, x) if pred is None else pred
    gamma = (bounds.gamma_G_hi - bounds.gamma_G_lo) / bounds.gamma_G_hi
    e_bar = np.sqrt(model.beta) * np.linalg.norm(sig_f) + gamma * np.linalg.norm(mu_f)
    return float(gamma), float(e_bar), mu_f


def envelope(model, cfg: SwitchConfig, x, force: Branch | None = None) -> Envelope:
    """Pick the branch at ``x`` (or use ``force``) and return its bounds."""
    pred = _predict(model, x)
    mu_f, _, mu_G, _ = pred
    try:
        g_gp, e_gp, _, _, smin = gp_branch_metrics(model, x, pred)
        inverse(mu_G)
        gp_ok = True
    except SingularMeanG:
        g_gp, e_gp, smin, gp_ok = np.inf, np.inf, 0.0, False
    use_gp = gp_ok and (force is Branch.GP or (force is None and g_gp <= cfg.zeta))
    if use_gp:
        return Envelope(Branch.GP, g_gp, e_gp, mu_f, mu_G, smin, g_gp)
    g_b, e_b, _ = backup_branch_metrics(cfg.bounds, model, x, pred)
    return Envelope(Branch.BACKUP, g_b, e_b, mu_f, mu_G, smin, g_gp)


def torque(env: Envelope, bounds: MatrixBounds, nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if env.branch is Branch.GP:
        return inverse(env.mu_G) @ (nu - env.mu_f)
    return (nu - env.mu_f) / bounds.gamma_G_hi


def select_and_linearize(model, bounds: MatrixBounds, cfg: SwitchConfig, x, nu,
                         force: Branch | None = None) -> LinearizationOutcome:
    env = envelope(model, cfg if cfg.bounds is bounds else SwitchConfig(bounds, cfg.zeta), x, force)
    u = torque(env, bounds, nu)
    return LinearizationOutcome(u, env.branch, env.gamma_E, env.e_bar, env.mu_f, env.min_sv)
