"""Independent reference computations shared by several test modules."""

import numpy as np
from scipy.optimize import minimize_scalar

from ejcbf.cbf import CbfRowData


def random_filter_instance(rng, gamma_max=0.99):
    """Random robust-CBF row with ``gamma_E < 1`` (always feasible)."""
    g = rng.normal(size=2)
    g *= rng.uniform(0.1, 3.0) / np.linalg.norm(g)
    row = CbfRowData(grad_psi_B=g, drift=float(rng.normal(scale=5)), alpha_psi=float(rng.normal(scale=5)),
                     psi=0.0)
    gamma = float(rng.uniform(0.0, gamma_max))
    e_bar = float(rng.exponential(2.0))
    nu_nom = rng.normal(scale=rng.choice([0.1, 3.0, 50.0]), size=2)
    return row, gamma, e_bar, nu_nom


def _ray_best(phi, nu_nom, a, b, c):
    """Per angle: min over r >= 0 of |r e - nu_nom|^2 s.t. r (a - b.e) <= c.

    Vectorised over ``phi``; returns ``(values, radii)`` (inf where empty).
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    k = a - e @ b
    proj = e @ nu_nom
    lo = np.zeros_like(phi)
    hi = np.full_like(phi, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = np.where(k > 0, c / k, hi)
        lo = np.where(k < 0, np.maximum(0.0, c / k), lo)
    empty = ((k > 0) & (c < 0)) | ((k == 0) & (c < 0))
    r = np.minimum(np.maximum(proj, lo), hi)
    val = r * r - 2 * r * proj + nu_nom @ nu_nom
    return np.where(empty, np.inf, val), np.where(empty, np.nan, r)


def polar_oracle(a, b, c, nu_nom, n_grid=20000):
    """Brute-force ``min |nu - nu_nom|^2, a |nu| <= b.nu + c`` in polar coordinates.

    The radial problem is solved exactly per angle; the angle is gridded and
    then refined around the best cells.  Returns ``(value, nu)``.
    """
    nu_nom = np.asarray(nu_nom, dtype=float)
    phis = np.linspace(-np.pi, np.pi, n_grid, endpoint=False)
    vals, _ = _ray_best(phis, nu_nom, a, b, c)
    h = phis[1] - phis[0]
    best_v, best_phi = np.inf, 0.0
    for k in np.argsort(vals)[:3]:
        if not np.isfinite(vals[k]):
            continue
        res = minimize_scalar(lambda p: min(float(_ray_best(p, nu_nom, a, b, c)[0][0]), 1e300),
                              bounds=(phis[k] - h, phis[k] + h), method="bounded",
                              options={"xatol": 1e-13})
        for v, p in ((res.fun, res.x), (vals[k], phis[k])):
            if v < best_v:
                best_v, best_phi = float(v), float(p)
    if c >= 0 and nu_nom @ nu_nom < best_v:
        return float(nu_nom @ nu_nom), np.zeros(2)
    r = _ray_best(best_phi, nu_nom, a, b, c)[1][0]
    return best_v, r * np.array([np.cos(best_phi), np.sin(best_phi)])


def se_loop(a, b, p):
    """Loop-based squared-exponential kernel, independent of the package's vectorised one."""
    out = np.empty((len(a), len(b)))
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            r = (np.asarray(ai) - np.asarray(bj)) / p.lengthscales
            out[i, j] = p.signal_std ** 2 * np.exp(-0.5 * r @ r)
    return out


def prior_draw_coverage(seed=2024, reps=100, n_train=30, n_test=100, noise=0.1, beta=24.0):
    """Fraction of test points with |mu_f - f| <= sqrt(beta) sig_f, m = 1, f and g drawn from the prior."""
    from ejcbf.gp import GpModel, KernelParams, SEParams, TrainingSet, ZeroPrior

    rng = np.random.default_rng(seed)
    pf, pg = SEParams(1.0, [0.3]), SEParams(0.7, [0.5])
    kp = KernelParams((pf,), ((pg,),))
    hits = 0
    for _ in range(reps):
        x = rng.uniform(-1, 1, size=(n_train + n_test, 1))
        eye = 1e-10 * np.eye(len(x))
        f = np.linalg.cholesky(se_loop(x, x, pf) + eye) @ rng.normal(size=len(x))
        g = np.linalg.cholesky(se_loop(x, x, pg) + eye) @ rng.normal(size=len(x))
        u = rng.uniform(-1, 1, size=n_train)
        y = f[:n_train] + g[:n_train] * u + noise * rng.normal(size=n_train)
        model = GpModel(TrainingSet(x[:n_train], u, y, noise), kp, ZeroPrior(1), beta=beta)
        mu, sd, _, _ = model.predict_many(x[n_train:])
        hits += int(np.sum(np.abs(mu[:, 0] - f[n_train:]) <= np.sqrt(beta) * sd[:, 0]))
    return hits / (reps * n_test)
