import numpy as np
import pytest
from hypothesis import given, strategies as st

from ejcbf.cbf import CbfRowData, build_chain, constraint_margin, eval_row, linear_constraint, LinearSystem
from ejcbf.socp import (
    ConeConstraint, SocpProblem, Status, build_problem, filter_input, solve_ipm, solve_specialized,
)
from oracles import polar_oracle, random_filter_instance


def _abc(row, gamma, e_bar):
    nb = row.norm_grad_psi_B
    return gamma * nb, row.grad_psi_B, row.drift - nb * e_bar + row.alpha_psi


def test_feasible_nominal_is_returned_unchanged():
    row = CbfRowData(np.array([-1.0, 0.0]), 0.0, 10.0, 1.0)
    nu = np.array([-0.5, 2.0])
    res = filter_input(row, 0.1, 0.1, nu)
    assert res.ok and np.array_equal(res.nu_star, nu)


def test_scalar_half_line_projection():
    row = CbfRowData(np.array([1.0]), 0.0, 0.0, 0.0)
    res = filter_input(row, 0.0, 0.0, np.array([-5.0]))
    assert res.ok
    assert res.nu_star[0] == pytest.approx(0.0, abs=1e-9)


def test_zero_gamma_gives_linear_constraint():
    row = CbfRowData(np.array([0.6, -0.8]), 1.0, 2.0, 0.0)
    p = build_problem(row, 0.0, 0.5, np.zeros(2))
    assert np.all(p.constraints[1].P == 0)


def test_epigraph_identity(rng):
    p = build_problem(CbfRowData(np.array([1.0, 0.0]), 0, 0, 0), 0.3, 0.0, np.zeros(2))
    c1 = p.constraints[0]
    for _ in range(100):
        z = rng.normal(size=3) * 3
        lhs = np.linalg.norm(c1.P @ z + c1.q) ** 2 - (c1.r @ z + c1.s) ** 2
        # |(2nu, t - 1)|^2 - (t + 1)^2 = 4 (nu.nu - t)
        assert lhs == pytest.approx(4 * (z[:2] @ z[:2] - z[2]), abs=1e-9)


def test_builtin_barrier_gives_gamma_diagonal():
    chain = build_chain(linear_constraint(0.8, [1, 0]))
    row = eval_row(chain, LinearSystem(2), np.zeros(8))
    p = build_problem(row, 0.37, 0.0, np.zeros(2))
    np.testing.assert_allclose(np.diag(p.constraints[1].P)[:2], [0.37, 0.37])


def test_empty_cone_reported_infeasible():
    row = CbfRowData(np.array([1.0, 0.0]), -10.0, 0.0, 0.0)
    for solver in ("specialized", "ipm"):
        res = filter_input(row, 1.5, 1.0, np.array([-1.0, 0.0]), solver=solver)
        assert res.status is Status.INFEASIBLE


def test_specialized_matches_polar_oracle_and_ipm():
    """1000 random instances, gamma_E in [0, 0.99]: specialized = IPM = polar grid."""
    rng = np.random.default_rng(99)
    worst_sp = worst_ipm = worst_nu = 0.0
    for _ in range(1000):
        row, g, e, nu_nom = random_filter_instance(rng)
        sp = filter_input(row, g, e, nu_nom)
        ip = filter_input(row, g, e, nu_nom, solver="ipm")
        assert sp.ok and ip.ok
        a, b, c = _abc(row, g, e)
        for r in (sp, ip):
            assert a * np.linalg.norm(r.nu_star) - b @ r.nu_star - c <= 1e-8 * (1 + abs(c) + np.linalg.norm(nu_nom))
        ref, _ = polar_oracle(a, b, c, nu_nom, n_grid=4000)
        scale = 1 + nu_nom @ nu_nom
        worst_sp = max(worst_sp, (sp.distance_sq - ref) / scale)
        worst_ipm = max(worst_ipm, abs(ip.distance_sq - sp.distance_sq) / scale)
        worst_nu = max(worst_nu, np.linalg.norm(ip.nu_star - sp.nu_star)
                       / (1 + np.linalg.norm(nu_nom) + np.linalg.norm(sp.nu_star)))
        assert sp.distance_sq >= ref - 1e-6 * scale  # oracle is a true lower bound up to tolerance
    assert worst_sp < 1e-6
    assert worst_ipm < 1e-6
    assert worst_nu < 1e-6


def test_ipm_pure_epigraph():
    nu_nom = np.array([1.5, -2.0])
    p = build_problem(CbfRowData(np.zeros(2), 0, 0, 0), 0.0, 0.0, nu_nom)
    p = SocpProblem(p.cost, p.constraints[:1], nu_nom)
    res = solve_ipm(p)
    assert res.ok
    np.testing.assert_allclose(res.nu_star, nu_nom, atol=1e-7)


def test_scaled_problem_same_solution(rng):
    for _ in range(20):
        row, g, e, nu_nom = random_filter_instance(rng)
        p = build_problem(row, g, e, nu_nom)
        c2 = p.constraints[1]
        scaled = SocpProblem(p.cost, (p.constraints[0], ConeConstraint(10 * c2.P, 10 * c2.q, 10 * c2.r, 10 * c2.s)),
                             nu_nom)
        for solve in (solve_specialized, solve_ipm):
            a, b = solve(p), solve(scaled)
            np.testing.assert_allclose(a.nu_star, b.nu_star, rtol=1e-6, atol=1e-7)


def test_problem_json_roundtrip(tmp_path, rng):
    row, g, e, nu_nom = random_filter_instance(rng)
    path = tmp_path / "p.json"
    res = filter_input(row, g, e, nu_nom, dump_path=path)
    back = SocpProblem.from_json(path.read_text())
    assert np.array_equal(solve_specialized(back).nu_star, res.nu_star)
    with pytest.raises(ValueError):
        filter_input(row, g, e, nu_nom, solver="nope")


def test_margin_equals_cone_slack(rng):
    for _ in range(100):
        row, g, e, nu_nom = random_filter_instance(rng)
        nu = rng.normal(size=2) * 4
        c2 = build_problem(row, g, e, nu_nom).constraints[1]
        z = np.r_[nu, 0.0]
        assert constraint_margin(row, g, e, nu) == pytest.approx(
            c2.s + c2.r @ z - np.linalg.norm(c2.P @ z), abs=1e-12 * (1 + np.abs(nu).sum() + abs(c2.s)))


@given(st.integers(0, 100_000))
def test_property_idempotent_and_feasible(seed):
    rng = np.random.default_rng(seed)
    row, g, e, nu_nom = random_filter_instance(rng)
    first = filter_input(row, g, e, nu_nom)
    assert first.ok
    assert constraint_margin(row, g, e, first.nu_star) >= -1e-8 * (1 + abs(row.drift) + np.linalg.norm(nu_nom))
    again = filter_input(row, g, e, first.nu_star)
    np.testing.assert_allclose(again.nu_star, first.nu_star, rtol=1e-9, atol=1e-9)


@given(st.integers(0, 100_000))
def test_property_passive_when_nominal_safe(seed):
    rng = np.random.default_rng(seed)
    row, g, e, nu_nom = random_filter_instance(rng)
    if constraint_margin(row, g, e, nu_nom) > 0:
        assert np.array_equal(filter_input(row, g, e, nu_nom).nu_star, nu_nom)
