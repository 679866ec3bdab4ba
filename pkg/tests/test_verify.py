import numpy as np
import pytest

from geoloop.solver import build_model
from geoloop.verify import (VerifyError, dense_oracle_compare, energy_decay_check, format_report,
                            interior_bump, l2_error, linear_case, mms_convergence, sine_case,
                            small_scenario, solve_manufactured, Check)
from geoloop.mesh import build_graded_grid


def test_l2_error_of_exact_interpolant_of_linear_field_is_zero():
    mesh = build_graded_grid(1.0, 1.0, 1.0, counts=(3, 3, 3))
    f = lambda p: 1 + p[:, 0] + 2 * p[:, 1] - p[:, 2]
    assert l2_error(f(mesh.points), mesh, f) < 1e-13


def test_l2_error_of_constant_offset():
    mesh = build_graded_grid(2.0, 1.0, 1.0, counts=(2, 2, 2))
    assert l2_error(np.ones(mesh.n_nodes), mesh, lambda p: np.zeros(len(p))) == pytest.approx(np.sqrt(2.0))


def test_source_is_consistent_with_solution():
    # rho c dtheta/dt - k lap theta evaluated by finite differences
    case = sine_case(tau=0.3, k=2.0, rho_c=5.0)
    p = np.array([[0.3, 0.4, 0.7]])
    h, dt = 1e-4, 1e-6
    lap = sum((case.theta(p + h * e, 0.1) - 2 * case.theta(p, 0.1) + case.theta(p - h * e, 0.1)) / h ** 2
              for e in np.eye(3))
    dth = (case.theta(p, 0.1 + dt) - case.theta(p, 0.1 - dt)) / (2 * dt)
    assert case.source(p, 0.1)[0] == pytest.approx((5.0 * dth - 2.0 * lap)[0], rel=1e-5)


def test_linear_case_exact_on_every_mesh():
    case = linear_case()
    for n in (1, 2, 5):
        st, mesh = solve_manufactured(case, max(n, 2), 4, 1.0)
        assert np.max(np.abs(st.theta - case.theta(mesh.points, 1.0))) < 1e-10


def test_quick_spatial_convergence():
    r = mms_convergence(sine_case(), (4, 8, 16), (4, 8, 16), t_end=0.1)
    assert r.monotone and r.order_h > 1.85


def test_non_monotone_sequence_is_flagged():
    r = mms_convergence(sine_case(), (8, 4, 2), (8, 4, 2), t_end=0.1)
    assert not r.monotone
    assert r.order_h is not None


def test_too_few_levels():
    with pytest.raises(VerifyError):
        mms_convergence(sine_case(), (4, 8), (4, 8))


def test_energy_zero_for_identical_fields():
    sc = small_scenario(**{"boundary.emissivity": 0.0})
    a = build_model(sc).initial_state().theta
    r = energy_decay_check(sc, a, a, n_steps=3)
    assert r.passed and not r.energies.any()


def test_energy_decays_with_bump():
    sc = small_scenario(n=(7, 7, 7), **{"boundary.emissivity": 0.0, "solver.krylov_tol": 1e-12})
    m = build_model(sc)
    a = m.initial_state().theta
    r = energy_decay_check(sc, a, a + interior_bump(m), n_steps=20)
    assert r.passed and r.energies[-1] < r.energies[0]


def test_dense_cap():
    sc = small_scenario(n=(9, 9, 9))
    with pytest.raises(VerifyError):
        dense_oracle_compare(sc, 2)


def test_dense_single_step_residuals():
    sc = small_scenario(**{"boundary.emissivity": 0.0})
    r = dense_oracle_compare(sc, 1)
    m = build_model(sc)
    scale = 1e-10 * np.linalg.norm(m.system.mass @ m.initial_state().theta) / sc.solver.dt
    assert r.max_discrepancy < 1e-8
    assert r.dense_residuals[0] < scale and r.sparse_residuals[0] < scale


def test_report_lines():
    text = format_report([Check("a", True, "ok"), Check("b", False, "bad")])
    assert text.splitlines()[0].startswith("PASS  a")
    assert text.splitlines()[1].startswith("FAIL  b")
    assert text.splitlines()[-1] == "1/2 checks passed"
