"""Verification tooling: manufactured solutions, energy decay of differences, dense oracle."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import assembly as asm
from .mesh import StructuredMesh, build_graded_grid
from .solver import (SemiDiscreteSystem, SolverConfig, ThermalState, build_model, integrate, BDF)


class VerifyError(ValueError):
    pass


# -- manufactured solutions -------------------------------------------------------

@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form temperature on the unit cube with the source that makes it exact."""

    name: str
    theta: Callable        # (points (n,3), t) -> (n,)  [K]
    source: Callable       # (points (n,3), t) -> (n,)  [W/m3]
    conductivity: float = 1.0
    heat_capacity: float = 1.0   # rho*c [J/(m3 K)]
    length: float = 1.0          # cube edge [m]


def sine_case(amplitude=10.0, base=300.0, tau=1.0, k=1.0, rho_c=1.0) -> ManufacturedCase:
    """``base + A sin(pi x) sin(pi y) sin(pi z) exp(-t/tau)`` on the unit cube."""

    def shape(p):
        return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * np.sin(np.pi * p[:, 2])

    def theta(p, t):
        return base + amplitude * shape(p) * np.exp(-t / tau)

    def source(p, t):
        return amplitude * shape(p) * np.exp(-t / tau) * (-rho_c / tau + 3 * np.pi ** 2 * k)

    return ManufacturedCase("sine", theta, source, k, rho_c)


def linear_case(slope=0.03, base=303.15, k=1.0, rho_c=1.0, length=1.0) -> ManufacturedCase:
    """Steady ``base + slope*z``; no source needed."""
    return ManufacturedCase("linear_z", lambda p, t: base + slope * p[:, 2],
                            lambda p, t: np.zeros(len(p)), k, rho_c, length)


def _mms_system(case: ManufacturedCase, mesh: StructuredMesh, config: SolverConfig):
    material = asm.MaterialField(case.heat_capacity, 1.0, case.conductivity)
    M = asm.assemble_mass(mesh, material)
    K = asm.assemble_conduction(mesh, material)
    M1 = M / case.heat_capacity
    pts = mesh.points
    dofs = np.unique(np.concatenate([mesh.face_nodes(f) for f in asm.FACES]))
    bpts = pts[dofs]
    return SemiDiscreteSystem(M, K, None, None, dofs, lambda t: case.theta(bpts, t),
                              source=lambda t: M1 @ case.source(pts, t),
                              preconditioner=config.preconditioner)


_G3 = np.polynomial.legendre.leggauss(3)


def l2_error(theta_h, mesh: StructuredMesh, exact: Callable) -> float:
    """L2 norm of ``theta_h - exact`` with 3x3x3 Gauss points per cell."""
    g, w = (_G3[0] + 1) / 2, _G3[1] / 2
    cells, sizes = mesh.cells, mesh.cell_sizes
    origin = mesh.points[cells[:, 0]]
    vals = np.asarray(theta_h)[cells]           # (nc, 8)
    total = 0.0
    for a, wa in zip(g, w):
        for b, wb in zip(g, w):
            for c, wc in zip(g, w):
                N = np.array([(1 - a if di == 0 else a) * (1 - b if dj == 0 else b) * (1 - c if dk == 0 else c)
                              for dk in (0, 1) for dj in (0, 1) for di in (0, 1)])
                p = origin + sizes * np.array([a, b, c])
                diff = vals @ N - exact(p)
                total += wa * wb * wc * np.sum(diff ** 2 * np.prod(sizes, axis=1))
    return float(np.sqrt(total))


def solve_manufactured(case: ManufacturedCase, n: int, steps: int, t_end: float,
                       config: SolverConfig | None = None, order: int = 2):
    """Final nodal field and mesh of the manufactured problem on an n^3-cell grid."""
    config = config or SolverConfig(dt=t_end / steps, total_time=t_end, bdf_order=order,
                                    krylov_tol=1e-12, newton_tol=1e-10)
    L = case.length
    mesh = build_graded_grid(L, L, L, counts=(n, n, n))
    system = _mms_system(case, mesh, config)
    state = ThermalState(case.theta(mesh.points, 0.0), 0.0)
    for state, _ in integrate(system, state, t_end / steps, steps, config, order):
        pass
    return state, mesh


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class ConvergenceResult:
    h: list
    dt: list
    errors: list
    order_h: float | None = None
    order_dt: float | None = None
    monotone: bool = True
    seconds: float = 0.0


def mms_convergence(case: ManufacturedCase, resolutions, steps, t_end: float = 0.1,
                    order: int = 2, reference_steps: int | None = None) -> ConvergenceResult:
    """Errors over paired (cells per axis, time steps) levels and their least-squares slopes.

    Against the exact solution by default; with ``reference_steps`` the error is
    measured against a fine-step solution on the same mesh, isolating time error.
    """
    resolutions, steps = list(resolutions), list(steps)
    if len(resolutions) != len(steps):
        raise VerifyError("resolutions and step counts must pair up")
    if len(resolutions) < 3:
        raise VerifyError("a convergence study needs at least 3 levels")
    start = time.perf_counter()
    errors = []
    refs = {}
    for n, m in zip(resolutions, steps):
        state, mesh = solve_manufactured(case, n, m, t_end, order=order)
        if reference_steps is None:
            err = l2_error(state.theta, mesh, lambda p: case.theta(p, t_end))
        else:
            if n not in refs:
                refs[n] = solve_manufactured(case, n, reference_steps, t_end, order=order)[0].theta
            err = float(np.sqrt((state.theta - refs[n]) @ asm.assemble_mass(
                mesh, asm.MaterialField(1.0, 1.0, 1.0)) @ (state.theta - refs[n])))
        errors.append(err)
    h = [case.length / n for n in resolutions]
    dt = [t_end / m for m in steps]
    res = ConvergenceResult(h, dt, errors, seconds=time.perf_counter() - start)
    res.monotone = all(e1 < e0 for e0, e1 in zip(errors, errors[1:]))
    if min(errors) > 0:
        if len(set(h)) > 1:
            res.order_h = _slope(h, errors)
        if len(set(dt)) > 1:
            res.order_dt = _slope(dt, errors)
    return res


# -- energy of the difference of two runs --------------------------------------------

@dataclass
class EnergyDecayResult:
    energies: np.ndarray
    passed: bool
    worst_ratio: float   # max E[n+1]/E[n]


def energy_decay_check(scenario, theta_a, theta_b, n_steps: int = 100, rtol: float = 1e-12,
                       config: SolverConfig | None = None) -> EnergyDecayResult:
    """Integrate both initial fields with identical data and track ``0.5 w^T M w``."""
    model = build_model(scenario)
    config = config or scenario.solver
    M = model.system.mass
    sa = ThermalState(np.asarray(theta_a, dtype=float), 0.0)
    sb = ThermalState(np.asarray(theta_b, dtype=float), 0.0)
    energies = [0.5 * (sa.theta - sb.theta) @ M @ (sa.theta - sb.theta)]
    runs = zip(integrate(model.system, sa, config.dt, n_steps, config),
               integrate(model.system, sb, config.dt, n_steps, config))
    for (a, _), (b, _) in runs:
        w = a.theta - b.theta
        energies.append(0.5 * w @ M @ w)
    E = np.array(energies)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(E[:-1] > 0, E[1:] / E[:-1], np.where(E[1:] > 0, np.inf, 1.0))
    passed = bool(np.all(E[1:] <= E[:-1] * (1 + rtol)))
    return EnergyDecayResult(E, passed, float(ratios.max()) if ratios.size else 1.0)


def interior_bump(model, amplitude=10.0, center=None, radius=None):
    """Smooth bump on unconstrained nodes, centred on the channel midpoint by default."""
    pts = model.mesh.points
    if center is None:
        center = model.network.nodes[model.network.segments[1].start]
        center = 0.5 * (center + model.network.nodes[model.network.segments[1].end])
    if radius is None:
        radius = 2.0 * np.max(np.diff(model.mesh.x))
    bump = amplitude * np.exp(-np.sum((pts - center) ** 2, axis=1) / radius ** 2)
    bump[model.system.dofs] = 0.0
    return bump


# -- dense oracle -------------------------------------------------------------------

@dataclass
class OracleResult:
    max_discrepancy: float    # [K]
    per_step: list
    sparse_residuals: list
    dense_residuals: list


def _dense_step(S, M, load, rad, dofs, values, history, dt, order, tol=1e-13, max_iter=30):
    a0, coeffs = BDF[order]
    n = S.shape[0]
    free = np.setdiff1d(np.arange(n), dofs)
    A = a0 / dt * M + S
    rhs = M @ sum(c * h for c, h in zip(coeffs, history[::-1])) / dt + load
    x = history[-1].copy()
    x[dofs] = values
    for _ in range(max_iter):
        r = A @ x - rhs
        J = A.copy()
        if rad is not None:
            rr, Jr = rad(x)
            r = r + rr
            J = J + Jr.toarray()
        lu = sla.lu_factor(J[np.ix_(free, free)])
        dx = sla.lu_solve(lu, -r[free])
        x[free] += dx
        if np.max(np.abs(dx)) <= tol * np.max(np.abs(x)):
            break
    r = A @ x - rhs + (rad(x)[0] if rad is not None else 0.0)
    return x, float(np.linalg.norm(r[free]))


def dense_oracle_compare(scenario, n_steps: int = 10, cap: int = 512,
                         config: SolverConfig | None = None) -> OracleResult:
    """Max-norm gap between the Krylov path and dense LU on every step."""
    model = build_model(scenario)
    if model.mesh.n_nodes > cap:
        raise VerifyError(f"{model.mesh.n_nodes} nodes exceeds the dense cap of {cap}")
    config = config or dataclasses.replace(scenario.solver, krylov_tol=1e-13, newton_tol=1e-12)
    sys_ = model.system
    S, M = sys_.stiffness.toarray(), sys_.mass.toarray()
    order = config.bdf_order
    init = model.initial_state()
    history = [init.theta.copy()]
    gaps, sparse_res, dense_res = [], [], []
    for state, info in integrate(sys_, init, config.dt, n_steps, config, order):
        k = min(order, len(history))
        xd, rd = _dense_step(S, M, sys_.load, sys_.radiation, sys_.dofs, sys_.values(state.t),
                             history[-k:], config.dt, k)
        gaps.append(float(np.max(np.abs(state.theta - xd))))
        sparse_res.append(info["residual"])
        dense_res.append(rd)
        # follow the dense trajectory so the comparison stays independent
        history = (history + [xd])[-2:]
    return OracleResult(max(gaps), gaps, sparse_res, dense_res)


# -- report --------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def _timed(name, fn) -> Check:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return Check(name, passed, detail, time.perf_counter() - t0)


def small_scenario(kind="U", n=(5, 5, 5), **over):
    """Reduced-domain scenario for fast checks; ``over`` maps dotted keys to values."""
    from .scenario_io import load_scenario, set_path

    doc = {"domain": {"lx": 6000.0, "ly": 6000.0, "lz": 8000.0},
           "layout": {"kind": kind, "depth": 4000.0},
           "mesh": {"nx": n[0] - 1, "ny": n[1] - 1, "nz": n[2] - 1, "grading": 1.0},
           "solver": {"dt": 1e7, "total_time": 1e8, "bdf_order": 1}}
    if kind == "Comb":
        doc["layout"].update(spacing=1500.0, n_laterals=2)
    for path, value in over.items():
        set_path(doc, path, value)
    return load_scenario(doc)


def run_checks(quick: bool = False) -> list[Check]:
    checks = []

    def mms_space():
        levels = (4, 8, 16) if quick else (8, 16, 32)
        r = mms_convergence(sine_case(), levels, levels, t_end=0.1)
        return (r.order_h is not None and r.order_h >= 1.9 and r.monotone,
                f"order {r.order_h:.3f}, errors {['%.3e' % e for e in r.errors]}")

    def mms_linear():
        case = linear_case(length=100.0)
        worst = 0.0
        for n in (2, 4, 8):
            st, mesh = solve_manufactured(case, n, 3, 3.0, order=2)
            worst = max(worst, float(np.max(np.abs(st.theta - case.theta(mesh.points, 0.0)))))
        return worst < 1e-10, f"max error {worst:.2e} K"

    def mms_time():
        # rho*c = 100 keeps dt*lambda_max O(1) so the step sequence is asymptotic
        steps = (8, 16, 32)
        r = mms_convergence(sine_case(tau=0.05, rho_c=100.0), (6,) * 3, steps, t_end=0.1,
                            reference_steps=1024)
        return (r.order_dt is not None and r.order_dt >= 1.8,
                f"order {r.order_dt:.3f}, errors {['%.3e' % e for e in r.errors]}")

    def energy():
        sc = small_scenario(n=(9, 9, 9), **{"boundary.emissivity": 0.0, "solver.krylov_tol": 1e-12})
        model = build_model(sc)
        a = model.initial_state().theta
        r = energy_decay_check(sc, a, a + interior_bump(model), n_steps=100)
        return r.passed, f"E0 {r.energies[0]:.4e}, E100 {r.energies[-1]:.4e}, worst ratio {r.worst_ratio:.15f}"

    def energy_same():
        sc = small_scenario(**{"boundary.emissivity": 0.0})
        a = build_model(sc).initial_state().theta
        r = energy_decay_check(sc, a, a, n_steps=5)
        return bool(np.all(r.energies == 0.0)), f"max E {r.energies.max():.1e}"

    def energy_radiation():
        sc = small_scenario(n=(9, 9, 9), **{"solver.krylov_tol": 1e-12})
        model = build_model(sc)
        a = model.initial_state().theta
        r = energy_decay_check(sc, a, a + interior_bump(model), n_steps=100)
        return r.passed, f"worst ratio {r.worst_ratio:.15f}"

    def oracle(mdot):
        def run():
            sc = small_scenario(**{"fluid.mass_flow_rate": mdot})
            r = dense_oracle_compare(sc, 10)
            return r.max_discrepancy < 1e-8, f"max |sparse - dense| {r.max_discrepancy:.2e} K"
        return run

    checks.append(_timed("mms spatial order >= 1.9", mms_space))
    checks.append(_timed("mms linear-in-depth steady state exact", mms_linear))
    checks.append(_timed("mms BDF2 temporal order >= 1.8", mms_time))
    checks.append(_timed("energy of identical runs stays zero", energy_same))
    checks.append(_timed("energy decay, no radiation", energy))
    checks.append(_timed("energy decay, with radiation", energy_radiation))
    checks.append(_timed("dense oracle, no channel", oracle(0.0)))
    checks.append(_timed("dense oracle, U channel", oracle(30.0)))
    return checks


def format_report(checks) -> str:
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}  ({c.seconds:.1f} s)  {c.detail}"
             for c in checks]
    n = sum(c.passed for c in checks)
    lines.append(f"{n}/{len(checks)} checks passed")
    return "\n".join(lines)
