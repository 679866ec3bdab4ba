"""Time integration (BDF1/BDF2), Newton for the radiation term, and Krylov solves."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly as asm
from .geometry import build_layout
from .mesh import map_channel_to_edges, mesh_for_network
from .postprocess import TimeSeries, mean_surface_temperature, outlet_temperature

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class LinearSolverError(SolverError):
    def __init__(self, msg, trace=()):
        super().__init__(msg)
        self.trace = list(trace)


class NewtonError(SolverError):
    def __init__(self, msg, last_iterate=None, residual_norms=()):
        super().__init__(msg)
        self.last_iterate = last_iterate
        self.residual_norms = list(residual_norms)


class SimulationError(SolverError):
    def __init__(self, msg, series=None):
        super().__init__(msg)
        self.series = series


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1.0e6               # [s]
    total_time: float = 2.0e9       # [s]
    bdf_order: int = 2
    newton_tol: float = 1e-8        # relative to the first residual
    newton_max: int = 20
    krylov_tol: float = 1e-9        # relative residual
    krylov_max: int = 1000
    preconditioner: str = "ilu"     # or "diagonal"
    krylov_method: str = "gmres"    # or "bicgstab"
    restart: int = 60

    def __post_init__(self):
        if not self.dt > 0:
            raise SolverError("dt must be positive")
        if self.total_time < 0:
            raise SolverError("total time must be >= 0")
        if self.bdf_order not in (1, 2):
            raise SolverError("bdf_order must be 1 or 2")
        for name in ("newton_tol", "krylov_tol"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise SolverError(f"{name} must lie in (0, 1)")
        if self.preconditioner not in ("ilu", "diagonal"):
            raise SolverError(f"unknown preconditioner {self.preconditioner!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))


@dataclass(frozen=True)
class ThermalState:
    theta: np.ndarray   # nodal temperatures [K]
    t: float            # [s]

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if not np.all(np.isfinite(th)):
            raise SolverError(f"non-finite temperatures at t={self.t}")
        if np.any(th <= 0):
            raise SolverError(f"non-positive temperatures at t={self.t}")
        object.__setattr__(self, "theta", th)


# -- linear algebra -------------------------------------------------------------

def make_preconditioner(A, kind: str = "ilu"):
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if kind == "diagonal":
        d = A.diagonal()
        if np.any(d == 0):
            raise LinearSolverError("zero on the diagonal; Jacobi preconditioner undefined")
        inv = 1.0 / d
        return spla.LinearOperator((n, n), matvec=lambda x: inv * np.ravel(x), dtype=float)
    try:
        ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
    except RuntimeError as exc:
        raise LinearSolverError(f"incomplete factorization failed: {exc}") from exc
    return spla.LinearOperator((n, n), matvec=ilu.solve, dtype=float)


def solve_linear_system(A, b, config: SolverConfig | None = None, preconditioner=None,
                        x0=None, info: dict | None = None):
    """Preconditioned Krylov solve with a verified relative residual."""
    config = config or SolverConfig()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.size:
        raise LinearSolverError(f"shape mismatch: operator {A.shape}, rhs {b.shape}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        if info is not None:
            info.update(iterations=0, residual=0.0)
        return np.zeros_like(b)
    if preconditioner is None:
        preconditioner = make_preconditioner(A, config.preconditioner)
    tol = config.krylov_tol
    trace = []
    x = None if x0 is None else np.asarray(x0, dtype=float)
    its = 0
    for attempt in range(3):
        counter = []
        if config.krylov_method == "bicgstab":
            x, flag = spla.bicgstab(A, b, x0=x, rtol=0.1 * tol, atol=0.0,
                                    maxiter=config.krylov_max, M=preconditioner,
                                    callback=lambda xk: counter.append(1))
        else:
            restart = min(config.restart, A.shape[0])
            x, flag = spla.gmres(A, b, x0=x, rtol=0.1 * tol, atol=0.0, restart=restart,
                                 maxiter=max(1, math.ceil(config.krylov_max / restart)),
                                 M=preconditioner, callback=lambda r: counter.append(r),
                                 callback_type="pr_norm")
        its += len(counter)
        rel = np.linalg.norm(b - A @ x) / bnorm
        trace.append((attempt, len(counter), flag, rel))
        if np.isfinite(rel) and rel <= tol:
            if info is not None:
                info.update(iterations=its, residual=rel)
            return x
        if not np.all(np.isfinite(x)):
            break
    raise LinearSolverError(f"Krylov solve stalled: relative residual {rel:.3e} > {tol:.1e}", trace)


# -- Newton ------------------------------------------------------------------------

@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norms: list
    iterates: list = field(default_factory=list)
    krylov_iterations: int = 0


def newton_solve(x0, system, config: SolverConfig | None = None, keep_iterates: bool = False):
    """Newton iteration on ``system.residual`` / ``system.jacobian``.

    Stops when the residual norm drops below ``newton_tol`` times the initial
    one, or below ``system.residual_floor`` when the system defines it.
    """
    config = config or SolverConfig()
    x = np.array(x0, dtype=float)
    r = system.residual(x)
    norms = [float(np.linalg.norm(r))]
    floor = getattr(system, "residual_floor", 0.0)
    target = max(config.newton_tol * norms[0], floor)
    iterates = [x.copy()] if keep_iterates else []
    krylov = 0
    it = 0
    while norms[-1] > target:
        if it >= config.newton_max:
            raise NewtonError(f"Newton did not converge in {config.newton_max} iterations "
                              f"(residual {norms[-1]:.3e}, target {target:.3e})", x, norms)
        J = system.jacobian(x)
        prec = system.preconditioner(J) if hasattr(system, "preconditioner") else None
        info = {}
        dx = solve_linear_system(J, -r, config, preconditioner=prec, info=info)
        if hasattr(system, "report_krylov"):
            system.report_krylov(info["iterations"])
        krylov += info["iterations"]
        x = x + dx
        it += 1
        r = system.residual(x)
        norms.append(float(np.linalg.norm(r)))
        if keep_iterates:
            iterates.append(x.copy())
        if not np.isfinite(norms[-1]):
            raise NewtonError("Newton produced a non-finite residual", x, norms)
    return NewtonResult(x, it, norms, iterates, krylov)


# -- semi-discrete system and BDF ---------------------------------------------------

BDF = {1: (1.0, (1.0,)), 2: (1.5, (2.0, -0.5))}


class SemiDiscreteSystem:
    """``M dθ/dt + A θ + r(θ) = f + s(t)`` with constrained nodes.

    ``values`` is an array or a callable ``t -> array`` aligned with ``dofs``.
    """

    def __init__(self, mass, stiffness, load=None, radiation=None, dofs=None, values=None,
                 source: Callable[[float], np.ndarray] | None = None, preconditioner="ilu"):
        self.mass = sp.csr_matrix(mass)
        self.stiffness = sp.csr_matrix(stiffness)
        n = self.mass.shape[0]
        self.n = n
        self.load = np.zeros(n) if load is None else np.asarray(load, dtype=float)
        self.radiation = radiation if (radiation is not None and radiation.active) else None
        self.dofs = np.zeros(0, dtype=int) if dofs is None else np.asarray(dofs, dtype=int)
        self._values = np.zeros(0) if values is None else values
        self.source = source
        self.preconditioner_kind = preconditioner
        keep = np.ones(n)
        keep[self.dofs] = 0.0
        self.keep = keep
        self._P = sp.diags(keep).tocsr()
        self._D = sp.diags(1.0 - keep).tocsr()
        self._linear = {}
        self._prec = {}
        self.refresh_after = 40

    def values(self, t):
        v = self._values(t) if callable(self._values) else self._values
        return np.asarray(v, dtype=float)

    def constrain(self, A):
        Ac = (self._P @ A @ self._P + self._D).tocsr()
        Ac.eliminate_zeros()
        return Ac

    def linear_part(self, a0, dt):
        key = (a0, dt)
        if key not in self._linear:
            L = (a0 / dt) * self.mass + self.stiffness
            self._linear[key] = (L.tocsr(), self.constrain(L))
        return self._linear[key]

    def level(self, history, dt, t_new, order):
        return TimeLevel(self, history, dt, t_new, order)


class TimeLevel:
    """Nonlinear system for one implicit step."""

    def __init__(self, system: SemiDiscreteSystem, history, dt, t_new, order):
        self.sys = system
        a0, coeffs = BDF[order]
        self.key = (a0, dt)
        self.L, self.Lc = system.linear_part(a0, dt)
        hist = sum(c * h.theta for c, h in zip(coeffs, history[::-1]))
        rhs = system.mass @ hist / dt + system.load
        if system.source is not None:
            rhs = rhs + system.source(t_new)
        self.rhs = rhs
        self.t = t_new
        scale = np.linalg.norm(rhs) + np.linalg.norm(self.L @ history[-1].theta)
        self.residual_floor = 1e-14 * scale

    def residual(self, x):
        r = self.L @ x - self.rhs
        if self.sys.radiation is not None:
            r = r + self.sys.radiation(x)[0]
        return r * self.sys.keep

    def jacobian(self, x):
        if self.sys.radiation is None:
            return self.Lc
        Jr = self.sys.radiation(x)[1]
        return (self.Lc + self.sys._P @ Jr @ self.sys._P).tocsr()

    def preconditioner(self, J):
        cache = self.sys._prec
        entry = cache.get(self.key)
        if entry is None or entry["stale"]:
            entry = {"op": make_preconditioner(J, self.sys.preconditioner_kind), "stale": False}
            cache[self.key] = entry
        self._entry = entry
        return entry["op"]

    def report_krylov(self, iterations):
        if iterations > self.sys.refresh_after:
            self._entry["stale"] = True


def bdf_advance(history, dt, system: SemiDiscreteSystem, config: SolverConfig,
                order: int | None = None, info: dict | None = None) -> ThermalState:
    """One implicit BDF step; BDF2 falls back to BDF1 with a single history state."""
    order = min(order or config.bdf_order, len(history))
    t_new = history[-1].t + dt
    level = system.level(history, dt, t_new, order)
    guess = history[-1].theta.copy()
    guess[system.dofs] = system.values(t_new)
    result = newton_solve(guess, level, config)
    if info is not None:
        info.update(newton_iterations=result.iterations, krylov_iterations=result.krylov_iterations,
                    residual=result.residual_norms[-1])
    return ThermalState(result.x, t_new)


def integrate(system, initial: ThermalState, dt, n_steps, config: SolverConfig, order=None):
    """Yield ``(state, info)`` for each of ``n_steps`` steps after ``initial``."""
    order = order or config.bdf_order
    history = [initial]
    for _ in range(n_steps):
        info = {}
        state = bdf_advance(history, dt, system, config, order, info)
        history = (history + [state])[-2:]
        yield state, info


# -- scenario runs --------------------------------------------------------------------

@dataclass
class Model:
    scenario: object
    network: object
    mesh: object
    edges: list
    bc: asm.SurfaceBC
    system: SemiDiscreteSystem
    inlet_node: int
    outlet_node: int

    def initial_state(self) -> ThermalState:
        return ThermalState(self.bc.profile(self.mesh.points[:, 2]), 0.0)


def build_model(scenario, radiation=True) -> Model:
    lx, ly, lz = scenario.domain
    network = build_layout(scenario.layout)
    mt = scenario.mesh
    mesh = mesh_for_network(network, lx, ly, lz, (mt.nx, mt.ny, mt.nz), mt.grading)
    edges = map_channel_to_edges(mesh, network)
    material = scenario.material
    bc = scenario.bc
    M = asm.assemble_mass(mesh, material, lumped=scenario.lumped_mass)
    K = asm.assemble_conduction(mesh, material)
    C = asm.assemble_channel_advection(
        mesh, edges, asm.ChannelCoupling(scenario.fluid.heat_capacity_rate, scenario.upwind))
    kz = float(np.mean(material.cell_conductivity(mesh.n_cells)[:, 2]))
    H, f = asm.assemble_surface_linear(mesh, bc, kz)
    rad = asm.RadiationOperator(mesh, bc) if radiation else None
    inlet = mesh.locate(network.nodes[network.inlet])
    outlet = mesh.locate(network.nodes[network.outlet])
    dofs, vals = asm.dirichlet_constraints(mesh, bc, inlet, scenario.theta_inlet)
    system = SemiDiscreteSystem(M, (K + C + H).tocsr(), f, rad, dofs, vals,
                                preconditioner=scenario.solver.preconditioner)
    return Model(scenario, network, mesh, edges, bc, system, inlet, outlet)


@dataclass
class RunResult:
    series: TimeSeries
    snapshots: dict          # t -> ThermalState
    final: ThermalState
    model: Model
    mst: dict = field(default_factory=dict)   # edge a -> list of K, one per record


def _mst_edges(model: Model):
    lx, ly, _ = model.scenario.domain
    c = model.network.nodes[model.network.outlet]
    keep = []
    for a in model.scenario.output.mst_edges:
        if c[0] - a / 2 >= 0 and c[0] + a / 2 <= lx and c[1] - a / 2 >= 0 and c[1] + a / 2 <= ly:
            keep.append(a)
        else:
            log.warning("MST region a=%g m leaves the footprint; skipped", a)
    return c, keep


def run_transient(scenario, out_dir=None, progress: Callable | None = None) -> RunResult:
    """Integrate a scenario from the depth-profile initial state to its final time."""
    from .scenario_io import write_timeseries_csv

    model = build_model(scenario)
    cfg = scenario.solver
    fl = scenario.fluid
    series = TimeSeries(fl.mass_flow_rate, fl.specific_heat, scenario.bc.ambient,
                        scenario.theta_inlet, scenario.hash[:12])
    state = model.initial_state()
    center, edges = _mst_edges(model)
    mst = {a: [] for a in edges}

    def record(st, diag):
        series.append(st.t, outlet_temperature(st.theta, model.outlet_node), diag)
        for a in edges:
            mst[a].append(mean_surface_temperature(st.theta, model.mesh, a, center))

    record(state, {})
    n_steps = cfg.n_steps
    wanted = sorted(scenario.output.snapshot_times)
    snapshots = {}
    if 0.0 in wanted:
        snapshots[0.0] = state
    try:
        for n, (state, info) in enumerate(integrate(model.system, state, cfg.dt, n_steps, cfg), 1):
            record(state, info)
            for ts in wanted:
                if ts not in snapshots and state.t >= ts - 1e-9 * cfg.dt:
                    snapshots[ts] = state
            if progress is not None:
                progress(n, n_steps, state, series.records[-1])
    except Exception as exc:
        if out_dir is not None and len(series):
            write_timeseries_csv(series, f"{out_dir}/series_partial.csv")
        raise SimulationError(f"step {len(series)} failed: {exc}", series) from exc
    snapshots[state.t] = state
    return RunResult(series, snapshots, state, model, mst)
