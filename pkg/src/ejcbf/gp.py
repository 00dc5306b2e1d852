"""Gaussian-process regression of control-affine dynamics ``y = f(x) + G(x) u``.

Each output ``i`` gets the composite kernel

    k_i((x, u), (x', u')) = k_fi(x, x') + sum_j u_j k_gij(x, x') u'_j

with squared-exponential ``k_fi`` and ``k_gij``.  Posterior means and
standard deviations of every ``f_i`` and ``g_ij`` follow from a single
Cholesky factor per output.  Hyperparameters maximise the log marginal
likelihood with the noise level held fixed, by multi-start L-BFGS-B on the
analytic gradient (default) or derivative-free Nelder-Mead.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .backend import kernels
from .dynamics import RobotParams

MODEL_VERSION = "ejcbf-gp/1"
JITTER_START = 1e-10
JITTER_MAX = 1e-4
LOG2PI = np.log(2.0 * np.pi)


class CholeskyFailure(np.linalg.LinAlgError):
    """Gram matrix stayed indefinite after the largest allowed jitter."""


# ---------------------------------------------------------------- data


@dataclass(frozen=True)
class TrainingSet:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    noise_std: float

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        u = np.asarray(self.u, dtype=float).reshape(x.shape[0], -1)
        y = np.asarray(self.y, dtype=float).reshape(x.shape[0], -1)
        if x.shape[0] < 1:
            raise ValueError("a training set needs at least one sample")
        if u.shape[0] != x.shape[0] or y.shape[0] != x.shape[0]:
            raise ValueError("x, u and y must share their first dimension")
        if u.shape[1] != y.shape[1]:
            raise ValueError("u and y must have the same width m")
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be non-negative")
        for name, v in (("x", x), ("u", u), ("y", y)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "noise_std", float(self.noise_std))

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.y.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        return TrainingSet(self.x[idx], self.u[idx], self.y[idx], self.noise_std)

    def to_csv(self, path) -> None:
        header = ([f"x{k}" for k in range(self.d)] + [f"u{k}" for k in range(self.m)]
                  + [f"y{k}" for k in range(self.m)])
        with open(path, "w", newline="") as fh:
            fh.write(f"# noise_std={self.noise_std!r}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in np.hstack([self.x, self.u, self.y]):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, noise_std: float | None = None) -> "TrainingSet":
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        stored = None
        if lines and lines[0].startswith("#"):
            key, _, val = lines[0][1:].strip().partition("=")
            if key.strip() == "noise_std":
                stored = float(val)
            lines = lines[1:]
        rows = list(csv.reader(lines))
        header, body = rows[0], rows[1:]
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        cols = {h: k for k, h in enumerate(header)}
        xs = sorted((h for h in header if h.startswith("x")), key=lambda h: int(h[1:]))
        us = sorted((h for h in header if h.startswith("u")), key=lambda h: int(h[1:]))
        ys = sorted((h for h in header if h.startswith("y")), key=lambda h: int(h[1:]))
        if len(us) != len(ys) or not xs:
            raise ValueError(f"{path}: malformed training-set header")
        sigma = noise_std if noise_std is not None else stored
        if sigma is None:
            raise ValueError(f"{path}: noise_std missing; pass it explicitly")
        pick = lambda names: data[:, [cols[h] for h in names]]
        return cls(pick(xs), pick(us), pick(ys), sigma)


# ---------------------------------------------------------------- kernels


@dataclass(frozen=True)
class SEParams:
    signal_std: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float).ravel()
        if not self.signal_std > 0 or not np.all(ls > 0):
            raise ValueError("kernel hyperparameters must be strictly positive")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_std", float(self.signal_std))

    def to_log(self) -> np.ndarray:
        return np.concatenate([[np.log(self.signal_std)], np.log(self.lengthscales)])

    @classmethod
    def from_log(cls, v) -> "SEParams":
        v = np.asarray(v, dtype=float)
        return cls(float(np.exp(v[0])), np.exp(v[1:]))

    def to_dict(self) -> dict:
        return {"signal_std": self.signal_std, "lengthscales": self.lengthscales.tolist()}

    @classmethod
    def from_dict(cls, d) -> "SEParams":
        return cls(d["signal_std"], d["lengthscales"])


def se_kernel(a, b, p: SEParams) -> np.ndarray:
    """``s^2 exp(-|(a - b) / l|^2 / 2)`` for row-stacked inputs."""
    a = np.atleast_2d(a) / p.lengthscales
    b = np.atleast_2d(b) / p.lengthscales
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(d2, 0.0, out=d2)
    return p.signal_std ** 2 * np.exp(-0.5 * d2)


@dataclass(frozen=True)
class KernelParams:
    """``f[i]`` is the kernel of ``f_i``; ``g[i][j]`` the kernel of ``g_ij``."""

    f: tuple
    g: tuple

    def __post_init__(self):
        f = tuple(self.f)
        g = tuple(tuple(r) for r in self.g)
        m = len(f)
        if m < 1 or len(g) != m or any(len(r) != m for r in g):
            raise ValueError("need m f-kernels and an m x m block of g-kernels")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)

    @property
    def m(self) -> int:
        return len(self.f)

    def output(self, i: int) -> tuple:
        return (self.f[i],) + self.g[i]

    def with_output(self, i: int, parts) -> "KernelParams":
        f = list(self.f)
        g = [list(r) for r in self.g]
        f[i] = parts[0]
        g[i] = list(parts[1:])
        return KernelParams(tuple(f), tuple(tuple(r) for r in g))

    @classmethod
    def uniform(cls, m: int, d: int, f_std=1.0, g_std=1.0, lengthscale=1.0) -> "KernelParams":
        ls = np.full(d, float(lengthscale))
        return cls(tuple(SEParams(f_std, ls) for _ in range(m)),
                   tuple(tuple(SEParams(g_std, ls) for _ in range(m)) for _ in range(m)))

    def to_dict(self) -> dict:
        return {"f": [p.to_dict() for p in self.f],
                "g": [[p.to_dict() for p in r] for r in self.g]}

    @classmethod
    def from_dict(cls, d) -> "KernelParams":
        return cls(tuple(SEParams.from_dict(p) for p in d["f"]),
                   tuple(tuple(SEParams.from_dict(p) for p in r) for r in d["g"]))


def _output_gram(x, u, parts) -> np.ndarray:
    K = se_kernel(x, x, parts[0])
    for j, pg in enumerate(parts[1:]):
        K += u[:, j, None] * se_kernel(x, x, pg) * u[None, :, j]
    return K


def composite_gram(tset: TrainingSet, kp: KernelParams, i: int) -> np.ndarray:
    if not 0 <= i < tset.m:
        raise IndexError(f"output index {i} out of range for m = {tset.m}")
    K = _output_gram(tset.x, tset.u, kp.output(i))
    return 0.5 * (K + K.T)


# ---------------------------------------------------------------- priors


class ZeroPrior:
    kind = "zero"

    def __init__(self, m: int):
        self.m = int(m)

    def f_hat(self, x) -> np.ndarray:
        return np.zeros(self.m)

    def g_hat(self, x) -> np.ndarray:
        return np.zeros((self.m, self.m))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "m": self.m}


class RobotPrior:
    """Drift (and optionally input matrix) of a nominal robot model."""

    kind = "robot"

    def __init__(self, params: RobotParams, use_g: bool = False):
        self.params = params
        self.use_g = bool(use_g)
        self.m = params.m
        self._p = params.packed

    def f_hat(self, x) -> np.ndarray:
        return kernels.f_and_g(self._p, np.asarray(x, dtype=float))[0]

    def g_hat(self, x) -> np.ndarray:
        if not self.use_g:
            return np.zeros((self.m, self.m))
        return kernels.f_and_g(self._p, np.asarray(x, dtype=float))[1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params.to_dict(), "use_g": self.use_g}


def prior_from_dict(d):
    if d["kind"] == "zero":
        return ZeroPrior(d["m"])
    if d["kind"] == "robot":
        return RobotPrior(RobotParams.from_dict(d["params"]), d.get("use_g", False))
    raise ValueError(f"unknown prior kind {d['kind']!r}")


def _centered_targets(tset: TrainingSet, prior) -> np.ndarray:
    out = np.empty_like(tset.y)
    for n in range(tset.count):
        out[n] = tset.y[n] - prior.f_hat(tset.x[n]) - prior.g_hat(tset.x[n]) @ tset.u[n]
    return out


# ---------------------------------------------------------------- factorization


def _jittered_cholesky(K: np.ndarray, noise_var: float):
    """Lower Cholesky factor of ``K + (noise_var + jitter) I`` and the jitter used."""
    n = K.shape[0]
    scale = max(np.trace(K) / n, 1e-300)
    A = K + noise_var * np.eye(n)
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jit = rel * scale
        try:
            return np.linalg.cholesky(A + jit * np.eye(n)), jit
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise CholeskyFailure(f"Gram matrix not positive definite with jitter {JITTER_MAX:g} * trace / N")


def log_marginal_likelihood(x, u, yc, parts, noise_var: float) -> float:
    K = _output_gram(x, u, parts)
    L, _ = _jittered_cholesky(0.5 * (K + K.T), noise_var)
    a = cho_solve((L, True), yc)
    return float(-0.5 * yc @ a - np.log(np.diag(L)).sum() - 0.5 * yc.size * LOG2PI)


def lml_and_grad(x, u, yc, parts, noise_var: float, sqdist=None):
    """Log marginal likelihood and its gradient in the packed log parameters.

    The gradient treats the (tiny, trace-scaled) jitter as a constant.
    ``sqdist`` may carry the precomputed ``(N, N, d)`` squared differences.
    """
    D2 = (x[:, None, :] - x[None, :, :]) ** 2 if sqdist is None else sqdist
    n = x.shape[0]
    blocks = []
    K = np.zeros((n, n))
    for k, p in enumerate(parts):
        il = p.lengthscales ** -2
        Kk = p.signal_std ** 2 * np.exp(-0.5 * (D2 @ il))
        if k > 0:
            w = u[:, k - 1]
            Kk *= w[:, None] * w[None, :]
        blocks.append((Kk, il))
        K += Kk
    L, _ = _jittered_cholesky(K, noise_var)
    a = cho_solve((L, True), yc)
    Kinv = cho_solve((L, True), np.eye(n))
    lml = float(-0.5 * yc @ a - np.log(np.diag(L)).sum() - 0.5 * n * LOG2PI)
    W = np.outer(a, a) - Kinv
    grad = []
    for Kk, il in blocks:
        WK = W * Kk
        grad.append(np.sum(WK))
        grad.append(0.5 * np.einsum("ij,ijd->d", WK, D2) * il)
    return lml, np.concatenate([np.atleast_1d(g) for g in grad])


# ---------------------------------------------------------------- model


@dataclass
class _Output:
    L: np.ndarray
    alpha: np.ndarray
    Linv: np.ndarray
    jitter: float


@dataclass
class GpModel:
    """Fitted control-affine GP.  Immutable after :func:`fit` by convention."""

    tset: TrainingSet | None
    kp: KernelParams
    prior: object
    beta: float = 24.0
    delta: float = 0.05
    _out: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.tset is not None and not self._out:
            self._out = [self._factor(i) for i in range(self.m)]

    @property
    def m(self) -> int:
        return self.kp.m

    def _factor(self, i: int) -> _Output:
        t = self.tset
        yc = _centered_targets(t, self.prior)[:, i]
        K = composite_gram(t, self.kp, i)
        L, jit = _jittered_cholesky(K, t.noise_std ** 2)
        alpha = cho_solve((L, True), yc)
        Linv = solve_triangular(L, np.eye(L.shape[0]), lower=True)
        return _Output(L, alpha, Linv, jit)

    # prediction ------------------------------------------------------

    def predict_many(self, X):
        """Batched posterior: ``mu_f (n, m), sig_f (n, m), mu_G (n, m, m), sig_G (n, m, m)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, m = X.shape[0], self.m
        mu_f = np.array([self.prior.f_hat(x) for x in X]).reshape(n, m)
        mu_G = np.array([self.prior.g_hat(x) for x in X]).reshape(n, m, m)
        sig_f = np.empty((n, m))
        sig_G = np.empty((n, m, m))
        for i in range(m):
            parts = self.kp.output(i)
            if self.tset is None:
                sig_f[:, i] = parts[0].signal_std
                for j in range(m):
                    sig_G[:, i, j] = parts[1 + j].signal_std
                continue
            o = self._out[i]
            U = self.tset.u
            # rows: k_f, then k_gj scaled by the training inputs u_j
            ks = np.stack([se_kernel(X, self.tset.x, p) for p in parts])
            ks[1:] *= U.T[:, None, :]
            mu = ks @ o.alpha
            mu_f[:, i] += mu[0]
            mu_G[:, i, :] += mu[1:].T
            W = ks.reshape(-1, ks.shape[-1]) @ o.Linv.T
            red = (W * W).sum(1).reshape(m + 1, n)
            s2 = np.array([p.signal_std ** 2 for p in parts])[:, None]
            sd = np.sqrt(np.maximum(s2 - red, 0.0))
            sig_f[:, i] = sd[0]
            sig_G[:, i, :] = sd[1:].T
        return mu_f, sig_f, mu_G, sig_G

    def predict(self, x):
        """``(mu_f, sig_f, mu_G, sig_G)`` at a single state."""
        mu_f, sig_f, mu_G, sig_G = self.predict_many(np.asarray(x, dtype=float)[None, :])
        return mu_f[0], sig_f[0], mu_G[0], sig_G[0]

    def predict_f(self, x):
        mu_f, sig_f, _, _ = self.predict(x)
        return mu_f, sig_f

    def predict_g(self, x):
        _, _, mu_G, sig_G = self.predict(x)
        return mu_G, sig_G

    def error_envelopes(self, x):
        """``(sqrt(beta) sig_f, sqrt(beta * sum sig_g^2))`` at ``x``."""
        _, sig_f, _, sig_G = self.predict(x)
        sb = np.sqrt(self.beta)
        return sb * sig_f, float(sb * np.sqrt(np.sum(sig_G ** 2)))

    # persistence -----------------------------------------------------

    def to_json(self) -> str:
        t = self.tset
        data = None if t is None else {
            "x": t.x.tolist(), "u": t.u.tolist(), "y": t.y.tolist(), "noise_std": t.noise_std}
        return json.dumps({
            "version": MODEL_VERSION,
            "beta": self.beta,
            "delta": self.delta,
            "kernel": self.kp.to_dict(),
            "prior": self.prior.to_dict(),
            "data": data,
        })

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "GpModel":
        d = json.loads(text)
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        t = d["data"]
        tset = None if t is None else TrainingSet(t["x"], t["u"], t["y"], t["noise_std"])
        return cls(tset, KernelParams.from_dict(d["kernel"]), prior_from_dict(d["prior"]),
                   d["beta"], d["delta"])

    @classmethod
    def load(cls, path) -> "GpModel":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------- fitting


def initial_kernel_params(tset: TrainingSet, prior) -> KernelParams:
    """Data-driven starting point: lengthscales from input spread, amplitudes
    from a least-squares fit of the centered targets against ``[1, u]``."""
    yc = _centered_targets(tset, prior)
    span = tset.x.max(0) - tset.x.min(0)
    ls = np.where(span > 0, span, 1.0)
    A = np.hstack([np.ones((tset.count, 1)), tset.u])
    f, g = [], []
    for i in range(tset.m):
        coef, *_ = np.linalg.lstsq(A, yc[:, i], rcond=None)
        res = yc[:, i] - A @ coef
        f_std = max(np.hypot(coef[0], res.std()), 1e-3)
        f.append(SEParams(f_std, ls))
        g.append(tuple(SEParams(max(abs(c), 1e-3), ls) for c in coef[1:]))
    return KernelParams(tuple(f), tuple(g))


def _pack(parts) -> np.ndarray:
    return np.concatenate([p.to_log() for p in parts])


def _unpack(v, n_parts: int, d: int):
    v = np.asarray(v).reshape(n_parts, d + 1)
    return tuple(SEParams.from_log(r) for r in v)


OPTIMIZERS = ("lbfgs", "nelder-mead")


def _starts(v0, restarts, rng, d):
    """``v0``, a long-lengthscale copy of it, then random perturbations."""
    yield v0
    if restarts > 1:
        smooth = v0.copy().reshape(-1, d + 1)
        smooth[:, 1:] += np.log(10.0)
        yield smooth.ravel()
    for _ in range(restarts - 2):
        yield v0 + rng.normal(scale=1.0, size=v0.size)


def optimize_output(tset: TrainingSet, yc_i, parts0, restarts: int = 3, max_evals: int = 500,
                    seed=0, log_bound: float = 12.0, optimizer: str = "lbfgs"):
    """Multi-start maximisation of one output's log marginal likelihood.

    Returns ``(parts, lml)``.  The search box is ``log_bound`` either side of
    ``parts0`` in log space; ``max_evals`` caps each local run.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
    rng = np.random.default_rng(seed)
    n_parts, d = len(parts0), tset.d
    noise_var = tset.noise_std ** 2
    v0 = _pack(parts0)
    lo, hi = v0 - log_bound, v0 + log_bound

    if optimizer == "lbfgs":
        D2 = (tset.x[:, None, :] - tset.x[None, :, :]) ** 2

        def objective(v):
            try:
                lml, g = lml_and_grad(tset.x, tset.u, yc_i, _unpack(v, n_parts, d), noise_var, D2)
            except CholeskyFailure:
                return 1e300, np.zeros_like(v)
            return -lml, -g

        kw = dict(jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                  options={"maxiter": max_evals, "maxfun": max_evals})
    else:
        def objective(v):
            if np.any(v < lo) or np.any(v > hi):
                return np.inf
            try:
                return -log_marginal_likelihood(tset.x, tset.u, yc_i, _unpack(v, n_parts, d), noise_var)
            except CholeskyFailure:
                return np.inf

        kw = dict(method="Nelder-Mead",
                  options={"maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-6, "adaptive": True})

    best_v, best = v0, np.inf
    for start in _starts(v0, max(restarts, 1), rng, d):
        res = minimize(objective, np.clip(start, lo, hi), **kw)
        if np.isfinite(res.fun) and res.fun < best:
            best_v, best = res.x, float(res.fun)
    parts = _unpack(best_v, n_parts, d)
    return parts, log_marginal_likelihood(tset.x, tset.u, yc_i, parts, noise_var)


def fit(tset: TrainingSet, prior, kp: KernelParams | None = None, beta: float = 24.0,
        delta: float = 0.05, optimize: bool = True, restarts: int = 3, max_evals: int = 500,
        seed=0, optimizer: str = "lbfgs") -> GpModel:
    """Condition the GP on ``tset``; optionally tune ``kp`` per output first."""
    if kp is None:
        kp = initial_kernel_params(tset, prior)
    if kp.m != tset.m or kp.f[0].lengthscales.size != tset.d:
        raise ValueError("kernel parameters do not match the training-set dimensions")
    if optimize:
        yc = _centered_targets(tset, prior)
        ss = np.random.SeedSequence(seed).spawn(tset.m)
        for i in range(tset.m):
            parts, _ = optimize_output(tset, yc[:, i], kp.output(i), restarts, max_evals, ss[i],
                                        optimizer=optimizer)
            kp = kp.with_output(i, parts)
    return GpModel(tset, kp, prior, beta, delta)


def prior_model(prior, kp: KernelParams, beta: float = 24.0, delta: float = 0.05) -> GpModel:
    """Model with no data: posterior equals the prior."""
    return GpModel(None, kp, prior, beta, delta)
