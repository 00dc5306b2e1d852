"""Safety-filter cone program and two solvers for it.

The filter problem over ``z = [nu, t]`` is::

    minimize    -2 nu_nom^T nu + t
    subject to  ||P_i z + q_i|| <= r_i^T z + s_i,   i = 1, 2

Constraint 1 is the epigraph ``nu^T nu <= t``; constraint 2 is the robust
barrier condition ``a ||nu|| <= b^T nu + c``.

``solve_specialized`` exploits the single-cone structure (projection onto a
convex cone section, solved through a scalar multiplier).  ``solve_ipm`` is
a small dense homogeneous primal-dual interior-point method with
Nesterov-Todd scaling that accepts any list of second-order cones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import brentq

from .cbf import CbfRowData


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True)
class ConeConstraint:
    """``||P z + q|| <= r^T z + s``."""

    P: np.ndarray
    q: np.ndarray
    r: np.ndarray
    s: float

    def residual(self, z) -> float:
        """Positive where violated."""
        return float(np.linalg.norm(self.P @ z + self.q) - self.r @ z - self.s)


@dataclass(frozen=True)
class SocpProblem:
    cost: np.ndarray
    constraints: tuple
    nu_nom: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.cost.size

    def to_json(self) -> str:
        return json.dumps({
            "cost": self.cost.tolist(),
            "nu_nom": None if self.nu_nom is None else self.nu_nom.tolist(),
            "constraints": [
                {"P": c.P.tolist(), "q": c.q.tolist(), "r": c.r.tolist(), "s": c.s}
                for c in self.constraints
            ],
        })

    @classmethod
    def from_json(cls, text: str) -> "SocpProblem":
        d = json.loads(text)
        cons = tuple(
            ConeConstraint(np.array(c["P"], dtype=float), np.array(c["q"], dtype=float),
                           np.array(c["r"], dtype=float), float(c["s"]))
            for c in d["constraints"]
        )
        nom = None if d.get("nu_nom") is None else np.array(d["nu_nom"], dtype=float)
        return cls(np.array(d["cost"], dtype=float), cons, nom)


@dataclass
class FilterResult:
    nu_star: np.ndarray
    status: Status
    objective: float
    kkt_residual: float
    solve_iterations: int
    distance_sq: float = field(default=float("nan"))

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def build_problem(row: CbfRowData, gamma_E: float, e_bar: float, nu_nom) -> SocpProblem:
    nu_nom = np.asarray(nu_nom, dtype=float)
    m = nu_nom.size
    if not 0.0 <= gamma_E:
        raise ValueError("gamma_E must be non-negative")
    if e_bar < 0:
        raise ValueError("e_bar must be non-negative")
    n = m + 1
    nb = row.norm_grad_psi_B
    P1 = np.diag(np.r_[np.full(m, 2.0), 1.0])
    q1 = np.r_[np.zeros(m), -1.0]
    r1 = np.r_[np.zeros(m), 1.0]
    P2 = np.zeros((n, n))
    P2[:m, :m] = gamma_E * nb * np.eye(m)
    r2 = np.r_[row.grad_psi_B, 0.0]
    s2 = row.drift - nb * e_bar + row.alpha_psi
    cons = (ConeConstraint(P1, q1, r1, 1.0),
            ConeConstraint(P2, np.zeros(n), r2, float(s2)))
    return SocpProblem(np.r_[-2.0 * nu_nom, 1.0], cons, nu_nom)


def _result(nu, nu_nom, status, kkt, iters) -> FilterResult:
    d = float(np.sum((nu - nu_nom) ** 2))
    return FilterResult(nu, status, d - float(nu_nom @ nu_nom), kkt, iters, d)


def _cone_data(p: SocpProblem):
    """Extract ``(nu_nom, a, b, c)`` from a problem with the filter layout."""
    if len(p.constraints) != 2:
        raise ValueError("specialized solver expects exactly two cone constraints")
    m = p.n - 1
    nu_nom = -0.5 * p.cost[:m] if p.nu_nom is None else p.nu_nom
    c2 = p.constraints[1]
    a = float(c2.P[0, 0]) if m else 0.0
    return nu_nom, a, c2.r[:m].astype(float), float(c2.s)


def solve_specialized(p: SocpProblem, max_iter: int = 200, lam_cap: float = 1e12) -> FilterResult:
    """Minimise ``||nu - nu_nom||^2`` subject to ``a ||nu|| <= b^T nu + c``.

    For a multiplier ``lam`` the stationary point is
    ``nu(lam) = max(||w|| - lam a, 0) / 2 * w / ||w||`` with
    ``w = 2 nu_nom + lam b``.  The constraint value along this curve is
    monotone in ``lam``, so the active multiplier is found by bracketing
    and a safeguarded scalar root search.
    """
    nu_nom, a, b, c = _cone_data(p)
    nb = float(np.linalg.norm(b))

    def slack(nu):
        return a * np.linalg.norm(nu) - b @ nu - c

    scale = 1.0 + np.linalg.norm(nu_nom) + abs(c)
    if slack(nu_nom) <= 0.0:
        return _result(nu_nom.copy(), nu_nom, Status.OPTIMAL, 0.0, 0)
    if a >= nb and c < 0.0:
        return _result(nu_nom.copy(), nu_nom, Status.INFEASIBLE, float("inf"), 0)

    def nu_of(lam):
        w = 2.0 * nu_nom + lam * b
        nw = np.linalg.norm(w)
        r = nw - lam * a
        if r <= 0.0 or nw == 0.0:
            return np.zeros_like(w)
        return (0.5 * r / nw) * w

    def phi(lam):
        return slack(nu_of(lam))

    lo, hi = 0.0, 1.0
    it = 0
    while phi(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        it += 1
        if hi > lam_cap or it >= max_iter:
            return _result(nu_of(hi), nu_nom, Status.MAX_ITER, float("inf"), it)
    try:
        lam, info = brentq(phi, lo, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps,
                           maxiter=max_iter - it, full_output=True, disp=False)
        it += info.iterations
        converged = info.converged
    except (ValueError, RuntimeError):
        converged = False
    if not converged:
        # bisection keeping phi(hi) <= 0
        for _ in range(max_iter - it):
            mid = 0.5 * (lo + hi)
            if phi(mid) > 0.0:
                lo = mid
            else:
                hi = mid
            it += 1
        lam = hi
    # step to the feasible side if the root landed a hair outside
    k = 0
    while phi(lam) > 0.0 and k < 60:
        lam = max(lam * (1.0 + 1e-14), lam + 1e-300)
        k += 1
    nu = nu_of(lam)
    kkt = _specialized_kkt(nu, nu_nom, a, b, c, lam) / scale
    status = Status.OPTIMAL if slack(nu) <= 1e-9 * scale else Status.MAX_ITER
    return _result(nu, nu_nom, status, kkt, it)


def _specialized_kkt(nu, nu_nom, a, b, c, lam) -> float:
    s = a * np.linalg.norm(nu) - b @ nu - c
    nn = np.linalg.norm(nu)
    if nn > 0.0:
        stat = np.linalg.norm(2.0 * (nu - nu_nom) + lam * (a * nu / nn - b))
    else:
        # subgradient of ||.|| at 0 is the unit ball
        stat = max(0.0, np.linalg.norm(2.0 * nu_nom + lam * b) - lam * a)
    return float(max(stat, max(s, 0.0), abs(lam * s)))


# --- generic interior-point method ------------------------------------------

def _to_conic(p: SocpProblem):
    """``h - G z`` in a product of second-order cones with the listed sizes."""
    Gs, hs, dims = [], [], []
    for con in p.constraints:
        # identically zero rows of [P q] add nothing to the norm but make the
        # cone degenerate at the solution
        keep = np.any(con.P != 0, axis=1) | (con.q != 0)
        Gs.append(-np.vstack([con.r[None, :], con.P[keep]]))
        hs.append(np.r_[con.s, con.q[keep]])
        dims.append(1 + int(keep.sum()))
    return np.vstack(Gs), np.concatenate(hs), dims


def _blocks(dims):
    out, i = [], 0
    for d in dims:
        out.append(slice(i, i + d))
        i += d
    return out


def _jdot(u, v):
    return u[0] * v[0] - u[1:] @ v[1:]


def _max_step(u, d, blocks) -> float:
    """Largest ``alpha`` keeping ``u + alpha d`` inside the cone product."""
    best = np.inf
    for sl in blocks:
        x, dx = u[sl], d[sl]
        det = _jdot(x, x)
        root = np.sqrt(det)
        xb1 = x[1:] / root
        xb0 = x[0] / root
        d0 = (x[0] * dx[0] - x[1:] @ dx[1:]) / det
        d1 = (dx[1:] - xb1 * dx[0] + xb1 * (xb1 @ dx[1:]) / (1.0 + xb0)) / root
        rho = np.linalg.norm(d1) - d0
        if rho > 0.0:
            best = min(best, 1.0 / rho)
    return best


def _hyp(w):
    """Hyperbolic rotation ``[[w0, w1^T], [w1, I + w1 w1^T / (1 + w0)]]`` (det(w) = 1)."""
    n = w.size
    w1 = w[1:]
    H = np.empty((n, n))
    H[0, 0] = w[0]
    H[0, 1:] = w1
    H[1:, 0] = w1
    H[1:, 1:] = np.eye(n - 1) + np.outer(w1, w1) / (1.0 + w[0])
    return H


def _nt_block(s, z):
    """Symmetric Nesterov-Todd scaling ``W`` and ``W^{-1}`` of one cone pair."""
    ns, nz = np.sqrt(_jdot(s, s)), np.sqrt(_jdot(z, z))
    sb, zb = s / ns, z / nz
    gam = np.sqrt(0.5 * (1.0 + sb @ zb))
    w = np.r_[sb[0] + zb[0], sb[1:] - zb[1:]] / (2.0 * gam)
    eta = np.sqrt(ns / nz)
    H = _hyp(w)
    Hi = H.copy()
    Hi[0, 1:] *= -1.0
    Hi[1:, 0] *= -1.0
    return eta * H, Hi / eta


class _Scaling:
    """Cone automorphism ``W`` with ``W z = W^{-T} s = lambda``.

    The first scaling is built from ``(s, z)`` directly.  Later iterations
    compose it with the scaling of the pair ``(W^{-T} s+, W z+)``, which
    stays near the central axis, so ``W`` keeps full precision even when
    ``s`` and ``z`` approach the cone boundary.
    """

    def __init__(self, s, z, blocks):
        k = s.size
        self.blocks = blocks
        self.W = np.zeros((k, k))
        self.Wi = np.zeros((k, k))
        for sl in blocks:
            self.W[sl, sl], self.Wi[sl, sl] = _nt_block(s[sl], z[sl])
        self.lam = self.W @ z

    def update(self, st, zt):
        """Compose with the scaling of the scaled iterates ``st``, ``zt``."""
        k = st.size
        Wt = np.zeros((k, k))
        Wti = np.zeros((k, k))
        for sl in self.blocks:
            Wt[sl, sl], Wti[sl, sl] = _nt_block(st[sl], zt[sl])
        self.W = Wt @ self.W
        self.Wi = self.Wi @ Wti
        self.lam = Wt @ zt

    def fwd(self, v):
        return self.W @ v

    def inv_t(self, v):
        return self.Wi.T @ v


def _jprod(u, v, blocks):
    out = np.empty_like(u)
    for sl in blocks:
        a, b = u[sl], v[sl]
        o = out[sl]
        o[0] = a @ b
        o[1:] = a[0] * b[1:] + b[0] * a[1:]
    return out


def _jsolve(lam, r, blocks):
    """``x`` with ``lam o x = r``."""
    out = np.empty_like(r)
    for sl in blocks:
        l, rr = lam[sl], r[sl]
        det = _jdot(l, l)
        x0 = (l[0] * rr[0] - l[1:] @ rr[1:]) / det
        o = out[sl]
        o[0] = x0
        o[1:] = (rr[1:] - x0 * l[1:]) / l[0]
    return out


def _unit(blocks, n):
    e = np.zeros(n)
    for sl in blocks:
        e[sl.start] = 1.0
    return e


def _kkt_solve(G, sc, r1, r2, refine: int = 2):
    return _kkt_factor(G, sc, refine)(r1, r2)


def _kkt_factor(G, sc, refine: int = 2):
    """Solver for ``[[0, G^T], [G, -W^T W]] [x; z] = [r1; r2]``.

    Works in scaled variables ``Gs = W^{-T} G``, ``zs = W z`` through a QR
    factorisation of ``Gs`` followed by iterative refinement on the
    unscaled system.  ``sc = None`` means ``W = I``.  The factorisation is
    reused for every right-hand side.
    """
    if sc is None:
        Gs = G
        fwd = inv_t = _ident
        back = _ident
        wtw = _ident
    else:
        Gs = sc.Wi.T @ G
        fwd, inv_t, back = sc.fwd, sc.inv_t, (lambda v: sc.Wi @ v)
        wtw = lambda v: sc.W.T @ (sc.W @ v)
    # rows sorted by norm keep Householder QR accurate under wide row scaling
    order = np.argsort(-np.linalg.norm(Gs, axis=1))
    Q, R = np.linalg.qr(Gs[order])

    def solve(a1, a2):
        b = inv_t(a2)[order]
        try:
            y = solve_triangular(R, a1, trans="T", check_finite=False)
            x = solve_triangular(R, y + Q.T @ b, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            x = np.linalg.lstsq(R.T @ R, a1 + R.T @ (Q.T @ b), rcond=None)[0]
        zs = np.empty_like(b)
        zs[order] = Q @ (R @ x) - b
        return x, back(zs)

    def refined(r1, r2):
        x, z = solve(r1, r2)
        for _ in range(refine):
            e1 = r1 - G.T @ z
            e2 = r2 - (G @ x - wtw(z))
            dx, dz = solve(e1, e2)
            x, z = x + dx, z + dz
        return x, z

    return refined


def _ident(v):
    return v


def _normalized(p: SocpProblem):
    """Filter problem rescaled so that ``|nu_nom| <= 1``, with the scale.

    ``nu = sig * nuh`` and ``t = sig^2 th`` map the epigraph cone onto itself
    and divide the barrier offset by ``sig``; the solution set scales
    exactly.  Without this the homogeneous iterate loses precision once
    ``|nu_nom|`` reaches the thousands.
    """
    if p.nu_nom is None or len(p.constraints) != 2:
        return p, 1.0
    c2 = p.constraints[1]
    m = p.n - 1
    # a negative offset pushes the solution out to about -c / (|b| - a)
    room = float(np.linalg.norm(c2.r[:m])) - float(np.abs(c2.P[:m, :m]).max(initial=0.0))
    push = max(0.0, -c2.s) / room if room > 0 else abs(c2.s)
    sig = max(1.0, float(np.linalg.norm(p.nu_nom)), push)
    if sig == 1.0:
        return p, 1.0
    nom = p.nu_nom / sig
    cons = (p.constraints[0], ConeConstraint(c2.P, c2.q / sig, c2.r, c2.s / sig))
    return SocpProblem(np.r_[-2.0 * nom, p.cost[m]], cons, nom), sig


def _row_scaled(G, h, blocks):
    G, h = G.copy(), h.copy()
    for sl in blocks:
        rho = max(np.abs(G[sl]).max(), np.abs(h[sl]).max())
        if rho > 0:
            G[sl] /= rho
            h[sl] /= rho
    return G, h


def solve_ipm(p: SocpProblem, max_iter: int = 100, tol: float = 1e-11) -> FilterResult:
    """Homogeneous self-dual path-following method with Mehrotra correction.

    Returns the ``nu`` block of the optimal ``z``.  Infeasibility is reported
    when an approximate certificate of primal or dual infeasibility appears.
    """
    if p.n > 64 or len(p.constraints) > 8:
        raise ValueError("dense interior-point path limited to n <= 64 and 8 cones")
    m = p.n - 1
    nu_nom = -0.5 * p.cost[:m] if p.nu_nom is None else p.nu_nom
    ps, sig = _normalized(p)
    G, h, dims = _to_conic(ps)
    blocks = _blocks(dims)
    G, h = _row_scaled(G, h, blocks)
    x, status, kkt, it = _hsde(ps.cost.astype(float), G, h, blocks, max_iter, tol)
    return _result(sig * x[:m], nu_nom, status, kkt, it)


def _hsde(c, G, h, blocks, max_iter, tol, polish=8):
    k = G.shape[0]
    n = c.size
    e = _unit(blocks, k)
    ncone = len(blocks)

    # starting point from two least-squares problems (identity scaling)
    x, zz = _kkt_solve(G, None, np.zeros(n), h)
    s = -zz
    _, z = _kkt_solve(G, None, -c, np.zeros(k))

    def shift(v):
        a = max(np.linalg.norm(v[sl][1:]) - v[sl][0] for sl in blocks)
        return v + (1.0 + a) * e if a >= -1e-8 else v

    s, z = shift(s), shift(z)
    tau, kap = 1.0, 1.0
    hn, cn = max(1.0, np.linalg.norm(h)), max(1.0, np.linalg.norm(c))
    sc = _Scaling(s, z, blocks)

    best = (np.inf, None)
    extra = stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        rx = G.T @ z + c * tau
        rz = s + G @ x - h * tau
        rt = kap + c @ x + h @ z
        pcost = c @ x / tau
        # feasibility and gap of the current point itself rather than of
        # the running residuals, which accumulate rounding in s
        slack = h - G @ (x / tau)
        pres = max(0.0, max(np.linalg.norm(slack[sl][1:]) - slack[sl][0] for sl in blocks)) / hn
        dres = np.linalg.norm(rx) / tau / cn
        relgap = abs(c @ x + h @ z) / tau / max(1.0, abs(pcost))
        merit = max(pres, dres, relgap)
        if not np.isfinite(merit):
            break
        if merit < best[0]:
            best = (merit, x / tau)
            stall = 0
        else:
            stall += 1
        if best[0] < tol:
            # keep tightening nu while the residuals still fall
            extra += 1
            if extra > polish or stall >= 2 or best[0] < 1e-3 * tol:
                break
        if h @ z < 0 and np.linalg.norm(G.T @ z) / -(h @ z) < tol:
            return x / tau, Status.INFEASIBLE, float("inf"), it
        if c @ x < 0 and np.linalg.norm(G @ x + s) / -(c @ x) < tol:
            return x / tau, Status.INFEASIBLE, float("inf"), it

        lam = sc.lam
        mu = (lam @ lam + tau * kap) / (ncone + 1)
        kkt_solve = _kkt_factor(G, sc)
        x1, z1 = kkt_solve(-c, h)
        wz1 = sc.fwd(z1)
        denom = kap + tau * (wz1 @ wz1)

        def direction(eta, target, dtk_target):
            # scaled steps: dst = W^{-T} ds, dzt = W dz
            u = _jsolve(lam, target, blocks)
            x2, z2 = kkt_solve(-eta * rx, -eta * rz - sc.W.T @ u)
            dtau = (dtk_target + tau * (eta * rt + c @ x2 + h @ z2)) / denom
            dx = x2 + dtau * x1
            dz = z2 + dtau * z1
            dkap = -eta * rt - c @ dx - h @ dz
            dzt = sc.fwd(dz)
            dst = u - dzt
            return dx, dz, dst, dzt, dtau, dkap

        def step_len(dst, dzt, dtau, dkap):
            a = min(_max_step(lam, dst, blocks), _max_step(lam, dzt, blocks))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kap / dkap)
            return a

        lamlam = _jprod(lam, lam, blocks)
        _, _, dsa, dza, dta, dka = direction(1.0, -lamlam, -tau * kap)
        a_aff = min(1.0, step_len(dsa, dza, dta, dka))
        sigma = (1.0 - a_aff) ** 3
        corr = _jprod(dsa, dza, blocks)
        dx, dz, dst, dzt, dt, dk = direction(1.0 - sigma, -lamlam + sigma * mu * e - corr,
                                             -tau * kap + sigma * mu - dta * dka)
        alpha = min(1.0, 0.99 * step_len(dst, dzt, dt, dk))
        x = x + alpha * dx
        z = z + alpha * dz
        s = s + alpha * (sc.W.T @ dst)
        tau = tau + alpha * dt
        kap = kap + alpha * dk
        st, zt = lam + alpha * dst, lam + alpha * dzt
        if min(min(_jdot(st[sl], st[sl]), _jdot(zt[sl], zt[sl])) for sl in blocks) <= 0.0:
            break
        sc.update(st, zt)
    if best[0] < tol:
        return best[1], Status.OPTIMAL, float(best[0]), it
    return (x / tau if best[1] is None else best[1]), Status.MAX_ITER, float(best[0]), it


def filter_input(row: CbfRowData, gamma_E: float, e_bar: float, nu_nom,
                 solver: str = "specialized", dump_path=None) -> FilterResult:
    prob = build_problem(row, gamma_E, e_bar, nu_nom)
    if dump_path is not None:
        with open(dump_path, "w") as fh:
            fh.write(prob.to_json())
    if solver == "specialized":
        return solve_specialized(prob)
    if solver == "ipm":
        return solve_ipm(prob)
    raise ValueError(f"unknown solver {solver!r}")
