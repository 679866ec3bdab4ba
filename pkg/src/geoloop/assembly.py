"""Discrete operators of the Galerkin weak form on trilinear hexahedra.

All element integrals on the tensor grid factor into 1D mass and stiffness
pieces, which is what 2x2x2 Gauss quadrature computes exactly for
trilinear shape functions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import FACES, ChannelEdge, StructuredMesh

log = logging.getLogger(__name__)

STEFAN_BOLTZMANN = 5.67e-8  # W/(m^2 K^4)

DIRICHLET, NEUMANN, ROBIN = "dirichlet", "neumann", "convect_radiate"


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialField:
    density: float = 2500.0            # rho_s [kg/m3]
    specific_heat: float = 790.0       # c_s [J/(kg K)]
    conductivity: np.ndarray | float | tuple = 3.5   # scalar, (kx, ky, kz) or (n_cells, 3) [W/(m K)]

    def __post_init__(self):
        if not (self.density > 0 and self.specific_heat > 0):
            raise AssemblyError("density and specific heat must be positive")
        if np.any(np.asarray(self.conductivity, dtype=float) <= 0):
            raise AssemblyError("conductivity entries must be positive")

    @property
    def heat_capacity(self) -> float:
        return self.density * self.specific_heat

    def cell_conductivity(self, n_cells: int) -> np.ndarray:
        k = np.asarray(self.conductivity, dtype=float)
        if k.ndim == 0:
            return np.full((n_cells, 3), float(k))
        if k.shape == (3,):
            return np.broadcast_to(k, (n_cells, 3))
        if k.shape == (n_cells, 3):
            return k
        raise AssemblyError(f"conductivity shape {k.shape} does not match {n_cells} cells")


@dataclass(frozen=True)
class SurfaceBC:
    """Boundary tags and data. Depth-linear profile ``slope*z + ambient`` on Dirichlet faces."""

    faces: dict = field(default_factory=lambda: {
        "xmin": DIRICHLET, "xmax": DIRICHLET, "ymin": DIRICHLET,
        "ymax": DIRICHLET, "bottom": DIRICHLET, "top": ROBIN})
    slope: float = 0.03               # m [K/m]
    ambient: float = 303.15           # theta_amb [K]
    h_t: float = 0.5                  # [W/(m^2 K)]
    emissivity: float = 0.9
    neumann_flux: float | None = None  # q.n [W/m^2]; None -> flux of the linear profile
    sigma: float = STEFAN_BOLTZMANN

    def __post_init__(self):
        if set(self.faces) != set(FACES):
            raise AssemblyError(f"face tags must cover exactly {FACES}")
        bad = {f: t for f, t in self.faces.items() if t not in (DIRICHLET, NEUMANN, ROBIN)}
        if bad:
            raise AssemblyError(f"unknown face tags {bad}")
        if self.h_t < 0:
            raise AssemblyError("h_t must be >= 0")
        if not 0.0 <= self.emissivity <= 1.0:
            raise AssemblyError("emissivity must lie in [0, 1]")

    def profile(self, z):
        return self.slope * np.asarray(z, dtype=float) + self.ambient

    def faces_tagged(self, tag):
        return [f for f in FACES if self.faces[f] == tag]


@dataclass(frozen=True)
class ChannelCoupling:
    chi: float          # m_dot * c_f [W/K]
    upwind: float = 1.0  # blend beta in [0, 1]

    def __post_init__(self):
        if self.chi < 0:
            raise AssemblyError("heat capacity rate must be >= 0")
        if not 0.0 <= self.upwind <= 1.0:
            raise AssemblyError("upwind blend must lie in [0, 1]")


def _mass_1d(h):
    h = np.asarray(h)[:, None, None]
    return h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])


def _stiff_1d(h):
    h = np.asarray(h)[:, None, None]
    return 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])


_LOCAL = np.array([[di, dj, dk] for dk in (0, 1) for dj in (0, 1) for di in (0, 1)])


def _kron3(Ax, Ay, Az):
    """Per-element 8x8 tensor products with local node ``a = di + 2 dj + 4 dk``."""
    I, J, K = _LOCAL[:, 0], _LOCAL[:, 1], _LOCAL[:, 2]
    return (Ax[:, I[:, None], I[None, :]] * Ay[:, J[:, None], J[None, :]]
            * Az[:, K[:, None], K[None, :]])


def _scatter(conn, local, n):
    m = conn.shape[1]
    rows = np.repeat(conn, m, axis=1).ravel()
    cols = np.tile(conn, (1, m)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def element_mass(mesh: StructuredMesh, rho_c: float = 1.0) -> np.ndarray:
    h = mesh.cell_sizes
    return rho_c * _kron3(_mass_1d(h[:, 0]), _mass_1d(h[:, 1]), _mass_1d(h[:, 2]))


def element_conduction(mesh: StructuredMesh, k: np.ndarray) -> np.ndarray:
    h = mesh.cell_sizes
    Mx, My, Mz = (_mass_1d(h[:, a]) for a in range(3))
    Sx, Sy, Sz = (_stiff_1d(h[:, a]) for a in range(3))
    return (k[:, 0, None, None] * _kron3(Sx, My, Mz)
            + k[:, 1, None, None] * _kron3(Mx, Sy, Mz)
            + k[:, 2, None, None] * _kron3(Mx, My, Sz))


def assemble_mass(mesh: StructuredMesh, material: MaterialField, lumped: bool = False) -> sp.csr_matrix:
    Me = element_mass(mesh, material.heat_capacity)
    if lumped:
        diag = np.zeros(mesh.n_nodes)
        np.add.at(diag, mesh.cells, Me.sum(axis=2))
        return sp.diags(diag).tocsr()
    return _scatter(mesh.cells, Me, mesh.n_nodes)


def assemble_conduction(mesh: StructuredMesh, material: MaterialField) -> sp.csr_matrix:
    Ke = element_conduction(mesh, material.cell_conductivity(mesh.n_cells))
    return _scatter(mesh.cells, Ke, mesh.n_nodes)


def assemble_channel_advection(mesh: StructuredMesh, edges: list[ChannelEdge],
                               coupling: ChannelCoupling) -> sp.csr_matrix:
    """Edgewise ``chi_e * int N_i dN_j/ds`` plus the upwind blend.

    Each edge contributes ``chi_e/2 [[-1, 1], [-1, 1]] + beta chi_e/2 [[1, -1], [-1, 1]]``
    with local node 1 upstream; the edge length cancels for linear shape functions.
    """
    n = mesh.n_nodes
    if not edges:
        return sp.csr_matrix((n, n))
    a = np.array([e.a for e in edges])
    b = np.array([e.b for e in edges])
    if a.min() < 0 or max(a.max(), b.max()) >= n:
        raise AssemblyError("channel edge references a node outside the mesh")
    ia, ja, ka = mesh.ijk(a)
    ib, jb, kb = mesh.ijk(b)
    if np.any(np.abs(ia - ib) + np.abs(ja - jb) + np.abs(ka - kb) != 1):
        raise AssemblyError("channel edge is not a grid edge")
    chi = coupling.chi * np.array([e.flow_fraction for e in edges])
    beta = coupling.upwind
    central = np.array([[-1.0, 1.0], [-1.0, 1.0]])
    upwind = np.array([[1.0, -1.0], [-1.0, 1.0]])
    local = 0.5 * chi[:, None, None] * (central + beta * upwind)
    conn = np.column_stack([a, b])
    return _scatter(conn, local, n)


def _face_mass(hu, hv):
    Mu, Mv = _mass_1d(hu), _mass_1d(hv)
    U = np.array([0, 1, 0, 1])
    V = np.array([0, 0, 1, 1])
    return Mu[:, U[:, None], U[None, :]] * Mv[:, V[:, None], V[None, :]]


def assemble_surface_linear(mesh: StructuredMesh, bc: SurfaceBC, kz: float | None = None):
    """Convection matrix on convect/radiate faces and the matching load vector.

    The load holds ``h_T theta_amb int xi`` on convecting faces and
    ``-q_p int xi`` on Neumann faces.
    """
    n = mesh.n_nodes
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    for face in FACES:
        tag = bc.faces[face]
        if tag == DIRICHLET:
            continue
        conn, hu, hv = mesh.face_quads(face)
        Mf = _face_mass(hu, hv)
        load = Mf.sum(axis=2)  # int xi per local node
        if tag == ROBIN:
            if bc.h_t == 0.0:
                continue
            rows.append(np.repeat(conn, 4, axis=1).ravel())
            cols.append(np.tile(conn, (1, 4)).ravel())
            vals.append((bc.h_t * Mf).ravel())
            np.add.at(rhs, conn, bc.h_t * bc.ambient * load)
        else:
            np.add.at(rhs, conn, -neumann_flux(bc, face, kz) * load)
    if rows:
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
        A.sum_duplicates()
        A.eliminate_zeros()
    else:
        A = sp.csr_matrix((n, n))
    return A, rhs


def neumann_flux(bc: SurfaceBC, face: str, kz: float | None = None) -> float:
    """Outward normal flux ``q.n`` on a Neumann face.

    Unless ``bc.neumann_flux`` is set, this is the flux of the linear depth
    profile, ``-kz * slope * n_z``: zero on lateral faces, inward at the bottom.
    """
    if bc.neumann_flux is not None:
        return bc.neumann_flux
    nz = {"top": -1.0, "bottom": 1.0}.get(face, 0.0)
    if nz == 0.0:
        return 0.0
    if kz is None:
        raise AssemblyError(f"profile flux on face {face!r} needs the vertical conductivity")
    return -kz * bc.slope * nz


def radiation_flux(theta, emissivity, ambient, sigma=STEFAN_BOLTZMANN):
    return emissivity * sigma * (np.asarray(theta) ** 4 - ambient ** 4)


def radiation_flux_derivative(theta, emissivity, sigma=STEFAN_BOLTZMANN):
    return 4.0 * emissivity * sigma * np.asarray(theta) ** 3


class RadiationOperator:
    """Nonlinear radiation term on convect/radiate faces, 2x2 Gauss per quad."""

    _gp = np.array([-1.0, 1.0]) / np.sqrt(3.0) * 0.5 + 0.5

    def __init__(self, mesh: StructuredMesh, bc: SurfaceBC):
        self.n = mesh.n_nodes
        self.bc = bc
        conns, wts = [], []
        for face in bc.faces_tagged(ROBIN):
            conn, hu, hv = mesh.face_quads(face)
            conns.append(conn)
            wts.append(0.25 * hu * hv)  # Gauss weight times area, per point
        self.active = bool(conns) and bc.emissivity > 0.0
        if not conns:
            conns, wts = [np.zeros((0, 4), dtype=int)], [np.zeros(0)]
        self.conn = np.concatenate(conns)
        self.w = np.concatenate(wts)
        g = self._gp
        # N[q, a] at the 4 Gauss points, local node a = du + 2 dv
        pts = [(u, v) for v in g for u in g]
        self.N = np.array([[(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v] for u, v in pts])
        rows = np.repeat(self.conn, 4, axis=1).ravel()
        cols = np.tile(self.conn, (1, 4)).ravel()
        self._rows, self._cols = rows, cols
        self.nodes = np.unique(self.conn)

    def __call__(self, theta):
        """Residual ``int xi eps sigma (theta^4 - theta_amb^4)`` and its Jacobian."""
        n = self.n
        if not self.active:
            return np.zeros(n), sp.csr_matrix((n, n))
        th_nodes = theta[self.nodes]
        if np.any(~(th_nodes > 0)):
            raise AssemblyError("radiation requires positive surface temperatures")
        thq = theta[self.conn] @ self.N.T                          # (nq, 4 gauss)
        f = radiation_flux(thq, self.bc.emissivity, self.bc.ambient, self.bc.sigma)
        df = radiation_flux_derivative(thq, self.bc.emissivity, self.bc.sigma)
        res_local = (self.w[:, None] * f) @ self.N                  # (nq, 4 nodes)
        res = np.zeros(n)
        np.add.at(res, self.conn, res_local)
        jac_local = np.einsum("e,eq,qa,qb->eab", self.w, df, self.N, self.N)
        J = sp.coo_matrix((jac_local.ravel(), (self._rows, self._cols)), shape=(n, n)).tocsr()
        J.sum_duplicates()
        return res, J


def radiation_residual_jacobian(theta, mesh: StructuredMesh, bc: SurfaceBC):
    return RadiationOperator(mesh, bc)(np.asarray(theta, dtype=float))


def dirichlet_constraints(mesh: StructuredMesh, bc: SurfaceBC, inlet: int | None = None,
                          theta_inlet: float | None = None, values=None, t: float = 0.0):
    """Constrained node indices and values: profile on Dirichlet faces, inlet value last.

    ``values`` optionally replaces the depth profile by a callable ``f(points, t)``.
    """
    nodes = [mesh.face_nodes(f) for f in bc.faces_tagged(DIRICHLET)]
    dofs = np.unique(np.concatenate(nodes)) if nodes else np.zeros(0, dtype=int)
    pts = mesh.points[dofs]
    vals = bc.profile(pts[:, 2]) if values is None else np.asarray(values(pts, t), dtype=float)
    if inlet is not None:
        pos = np.searchsorted(dofs, inlet)
        if pos < dofs.size and dofs[pos] == inlet:
            if vals[pos] != theta_inlet:
                log.info("inlet node %d lies on a Dirichlet face; inlet value %.6g K takes "
                         "precedence over %.6g K", inlet, theta_inlet, vals[pos])
            vals[pos] = theta_inlet
        else:
            dofs = np.insert(dofs, pos, inlet)
            vals = np.insert(vals, pos, theta_inlet)
    return dofs, vals


def apply_dirichlet(A: sp.spmatrix, rhs: np.ndarray, dofs, values):
    """Row replacement by identity plus column elimination into the right-hand side."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=int)
    g = np.zeros(n)
    g[dofs] = values
    b = np.asarray(rhs, dtype=float) - A @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    P = sp.diags(keep)
    Ac = (P @ A @ P + sp.diags(1.0 - keep)).tocsr()
    Ac.eliminate_zeros()
    b[dofs] = values
    return Ac, b
