import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ejcbf.cbf import build_chain, linear_constraint
from ejcbf.dynamics import MatrixBounds, RobotParams, true_f_g
from ejcbf.sim import (
    CSV_HEADER, ExactModel, GridShapeMismatch, Mode, Reference, Region, TrackingGain,
    generate_training_data, grid_points, korobov_generator, lattice_points, nominal_input,
    default_gain_matrix, run_closed_loop,
)

BOUNDS = MatrixBounds.from_g_bounds(97, 1640, 0.001, 1.0)
CHAIN = build_chain(linear_constraint(0.8, [1, 0]))
REGION = Region.from_blocks([1.2, 1.0, 0.7, 0.5])


def test_reference_at_zero():
    d = Reference(15).derivatives(0.0)
    np.testing.assert_allclose(d[0], [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(d[4], [0.0, (np.pi / 15) ** 4], atol=1e-15)


def test_reference_derivatives_finite_difference():
    ref = Reference(7.0)
    h = 1e-5
    for t in (0.3, 4.1, 11.0):
        d = ref.derivatives(t)
        for k in range(4):
            fd = (ref.derivatives(t + h)[k] - ref.derivatives(t - h)[k]) / (2 * h)
            np.testing.assert_allclose(fd, d[k + 1], atol=1e-8)


def test_gain_matrix_entries_and_stability():
    L = default_gain_matrix()
    assert L[0, 0] == 1e4 and L[0, 4] == 300 and L[0, 2] == 1e3 and L[0, 6] == 10
    assert L[1, 1] == 1e4 and L[0, 1] == 0
    assert np.all(TrackingGain(L).closed_loop_eigenvalues().real < 0)
    with pytest.raises(ValueError):
        TrackingGain(-L)
    with pytest.raises(ValueError):
        TrackingGain(np.zeros((2, 3)))


def test_nominal_input_on_reference():
    ref = Reference(15)
    for t in (0.0, 2.5, 17.0):
        np.testing.assert_allclose(nominal_input(TrackingGain.default(), ref, t, ref.x_d(t)), ref.q4(t), atol=1e-9)


def test_lattice_design():
    assert korobov_generator(786, 8) == 401
    P = lattice_points(786, 8)
    assert P.shape == (786, 8) and P.min() > 0 and P.max() < 1
    # every one-dimensional projection is the full uniform grid when gcd(a^j, n) = 1
    for j in range(8):
        np.testing.assert_allclose(np.sort(P[:, j]), (np.arange(786) + 0.5) / 786)
    assert len({tuple(r) for r in np.round(P, 12)}) == 786


def test_grid_design_and_mismatch():
    G = grid_points((2, 3), 6)
    assert G.shape == (6, 2)
    with pytest.raises(GridShapeMismatch):
        grid_points((2, 3), 7)
    with pytest.raises(GridShapeMismatch):
        generate_training_data(RobotParams(), REGION, n=6, grid_shape=(2, 3))


def test_noise_free_targets_exact():
    p = RobotParams()
    ts = generate_training_data(p, REGION, n=50, noise_std=0.0, seed=3)
    for x, u, y in zip(ts.x, ts.u, ts.y):
        f, G = true_f_g(p, x)
        np.testing.assert_allclose(y, f + G @ u, rtol=1e-12, atol=1e-9)
    assert np.all(np.abs(ts.u) <= 30)


def test_noise_mean_clt_bound():
    p = RobotParams()
    ts = generate_training_data(p, REGION, seed=0)
    res = np.array([y - (lambda fg: fg[0] + fg[1] @ u)(true_f_g(p, x)) for x, u, y in zip(ts.x, ts.u, ts.y)])
    assert np.all(np.abs(res.mean(0)) <= 4 * 0.1 / np.sqrt(786))
    again = generate_training_data(p, REGION, seed=0)
    assert np.array_equal(again.y, ts.y) and np.array_equal(again.u, ts.u)


def test_exact_linearization_tracks_slow_reference():
    p = RobotParams()
    log = run_closed_loop(p, ExactModel(p), BOUNDS, CHAIN, TrackingGain.default(), Reference(100), use_filter=False)
    assert log.completed and log.steps == 3000
    assert log.mse < 1e-4


def _short_run(mode, c=15, T=3.0, model=None):
    p = RobotParams()
    return run_closed_loop(p, model or ExactModel(p), BOUNDS, CHAIN, TrackingGain.default(), Reference(c),
                           mode, horizon=T)


def test_filtered_exact_run_is_safe_and_margins_hold():
    log = _short_run(Mode.SWITCHING, c=4, T=3.0)
    assert log.completed
    assert np.all(log.margin >= -1e-9)
    # where the nominal input already satisfies the barrier the filter leaves it alone
    free = log.psi > 1.0
    assert np.any(free)


def test_runs_are_deterministic(tmp_path):
    a, b = _short_run(Mode.SWITCHING), _short_run(Mode.SWITCHING)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER and len(rows) == a.steps + 1


def test_backup_only_branch_flags():
    log = _short_run(Mode.BACKUP_ONLY, T=0.5)
    assert set(log.branch) == {"BACKUP"}
    s = log.summary()
    assert s["backup_fraction"] == 1.0
    assert s["infeasible"] is False


class _SingularModel:
    beta = 24.0

    def predict(self, x):
        return np.zeros(2), np.ones(2), np.zeros((2, 2)), np.ones((2, 2))


def test_gp_only_with_undefined_law_is_infeasible():
    log = _short_run(Mode.GP_ONLY, T=0.5, model=_SingularModel())
    assert log.infeasible and log.steps == 1 and log.fail_time == 0.0
    assert not log.completed and np.isfinite(log.mse)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        Reference(0.0)
    with pytest.raises(ValueError):
        _short_run(Mode.SWITCHING, T=-1)
    with pytest.raises(ValueError):
        Mode("nope")


@given(st.floats(4, 100), st.floats(0, 30))
def test_property_reference_on_unit_circle(c, t):
    q = Reference(c).q_d(t)
    assert q @ q == pytest.approx(1.0)
