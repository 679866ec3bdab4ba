"""Graded tensor-product hexahedral grids that conform to the channel network."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import VascularNetwork


class MeshError(ValueError):
    pass


FACES = ("xmin", "xmax", "ymin", "ymax", "top", "bottom")


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Axis-aligned grid; node ``(i, j, k)`` has index ``i + nx*j + nx*ny*k``."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray   # z = depth; z[0] is the top surface

    def __post_init__(self):
        for name in ("x", "y", "z"):
            c = np.asarray(getattr(self, name), dtype=float)
            if c.ndim != 1 or c.size < 2 or np.any(np.diff(c) <= 0):
                raise MeshError(f"{name} coordinates must be strictly increasing with >= 2 entries")
            object.__setattr__(self, name, c)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.x.size, self.y.size, self.z.size

    @property
    def nx(self): return self.x.size

    @property
    def ny(self): return self.y.size

    @property
    def nz(self): return self.z.size

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def n_cells(self) -> int:
        return (self.nx - 1) * (self.ny - 1) * (self.nz - 1)

    @property
    def bounds(self):
        return (self.x[0], self.x[-1]), (self.y[0], self.y[-1]), (self.z[0], self.z[-1])

    def index(self, i, j, k):
        return i + self.nx * (j + self.ny * k)

    def ijk(self, n):
        n = np.asarray(n)
        return n % self.nx, (n // self.nx) % self.ny, n // (self.nx * self.ny)

    @cached_property
    def points(self) -> np.ndarray:
        """(n_nodes, 3) coordinates in lexicographic order."""
        Z, Y, X = np.meshgrid(self.z, self.y, self.x, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    @cached_property
    def cells(self) -> np.ndarray:
        """(n_cells, 8) node indices; local node ``a = di + 2*dj + 4*dk``."""
        nx, ny, nz = self.shape
        K, J, I = np.meshgrid(np.arange(nz - 1), np.arange(ny - 1), np.arange(nx - 1), indexing="ij")
        base = (I + nx * (J + ny * K)).ravel()
        offs = np.array([di + nx * (dj + ny * dk)
                         for dk in (0, 1) for dj in (0, 1) for di in (0, 1)])
        return base[:, None] + offs[None, :]

    @cached_property
    def cell_sizes(self) -> np.ndarray:
        """(n_cells, 3) edge lengths, matching the ordering of ``cells``."""
        hx, hy, hz = np.diff(self.x), np.diff(self.y), np.diff(self.z)
        HZ, HY, HX = np.meshgrid(hz, hy, hx, indexing="ij")
        return np.column_stack([HX.ravel(), HY.ravel(), HZ.ravel()])

    @property
    def volume(self) -> float:
        (x0, x1), (y0, y1), (z0, z1) = self.bounds
        return (x1 - x0) * (y1 - y0) * (z1 - z0)

    def face_nodes(self, face: str) -> np.ndarray:
        nx, ny, nz = self.shape
        I, J, K = (a.ravel() for a in np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"))
        sel = {
            "xmin": I == 0, "xmax": I == nx - 1,
            "ymin": J == 0, "ymax": J == ny - 1,
            "top": K == 0, "bottom": K == nz - 1,
        }[face]
        return np.sort(self.index(I[sel], J[sel], K[sel]))

    def face_quads(self, face: str):
        """Boundary quads of one face.

        Returns ``(conn, hu, hv)``: (n, 4) node indices ordered
        ``(u0v0, u1v0, u0v1, u1v1)`` and the two edge lengths per quad.
        """
        nx, ny, nz = self.shape
        axis, pos = {
            "xmin": (0, 0), "xmax": (0, nx - 1),
            "ymin": (1, 0), "ymax": (1, ny - 1),
            "top": (2, 0), "bottom": (2, nz - 1),
        }[face]
        coords = [self.x, self.y, self.z]
        u_ax, v_ax = [a for a in range(3) if a != axis]
        cu, cv = coords[u_ax], coords[v_ax]
        V, U = np.meshgrid(np.arange(cv.size - 1), np.arange(cu.size - 1), indexing="ij")
        U, V = U.ravel(), V.ravel()
        conn = []
        for dv in (0, 1):
            for du in (0, 1):
                ijk = [None, None, None]
                ijk[axis] = np.full_like(U, pos)
                ijk[u_ax] = U + du
                ijk[v_ax] = V + dv
                conn.append(self.index(*ijk))
        conn = np.column_stack([conn[0], conn[1], conn[2], conn[3]])
        return conn, np.diff(cu)[U], np.diff(cv)[V]

    def locate(self, point, tol: float = 1e-9):
        """Index of the grid node at ``point``; raises MeshError if off-grid."""
        ijk = []
        for c, p in zip((self.x, self.y, self.z), point):
            scale = max(c[-1] - c[0], 1.0)
            i = int(np.argmin(np.abs(c - p)))
            if abs(c[i] - p) > tol * scale:
                return None
            ijk.append(i)
        return int(self.index(*ijk))


def _allocate(lengths: np.ndarray, total: int) -> np.ndarray:
    """Split ``total`` cells over spans proportionally to length, at least one each."""
    n = len(lengths)
    if total < n:
        return np.ones(n, dtype=int)
    ideal = lengths / lengths.sum() * total
    counts = np.maximum(np.floor(ideal).astype(int), 1)
    while counts.sum() > total:
        over = np.where(counts > 1, counts - ideal, -np.inf)
        counts[int(np.argmax(over))] -= 1
    while counts.sum() < total:
        counts[int(np.argmax(ideal - counts))] += 1
    return counts


def _graded_span(a: float, b: float, n: int, ratio: float, refine_a: bool, refine_b: bool):
    """Interior points of [a, b] split into ``n`` cells growing by ``ratio`` away from refined ends."""
    idx = np.arange(n)
    if refine_a and refine_b:
        dist = np.minimum(idx, n - 1 - idx)
    elif refine_a:
        dist = idx
    elif refine_b:
        dist = n - 1 - idx
    else:
        dist = np.zeros(n)
    h = ratio ** dist.astype(float)
    edges = a + (b - a) * np.concatenate([[0.0], np.cumsum(h)]) / h.sum()
    return edges[1:-1]


def build_graded_grid_axis(length: float, required, n_target: int, ratio: float = 1.0,
                           refine=None) -> np.ndarray:
    """Coordinates on ``[0, length]`` containing every required plane verbatim.

    ``refine`` lists the planes toward which cells shrink; it defaults to the
    interior required planes.
    """
    if n_target < 2:
        raise MeshError(f"target cell count must be >= 2, got {n_target}")
    if ratio < 1.0:
        raise MeshError(f"grading ratio must be >= 1, got {ratio}")
    req = np.asarray(sorted(required), dtype=float)
    if req.size and (req[0] < 0.0 or req[-1] > length):
        raise MeshError(f"required planes {req.tolist()} outside [0, {length}]")
    if req.size != np.unique(req).size:
        raise MeshError(f"duplicate required planes {req.tolist()}")
    planes = np.unique(np.concatenate([[0.0, length], req]))
    if refine is None:
        refine = [p for p in req if 0.0 < p < length]
    refine = set(float(p) for p in refine)
    counts = _allocate(np.diff(planes), n_target)
    coords = [planes[:1]]
    for a, b, n in zip(planes[:-1], planes[1:], counts):
        coords.append(_graded_span(a, b, int(n), ratio, a in refine, b in refine))
        coords.append([b])
    return np.concatenate(coords)


def build_graded_grid(lx: float, ly: float, lz: float, required=((), (), ()),
                      counts=(2, 2, 2), ratio: float = 1.0, refine=None) -> StructuredMesh:
    refine = refine or (None, None, None)
    axes = [build_graded_grid_axis(L, r, n, ratio, f)
            for L, r, n, f in zip((lx, ly, lz), required, counts, refine)]
    return StructuredMesh(*axes)


def mesh_for_network(network: VascularNetwork, lx, ly, lz, counts, ratio=1.3) -> StructuredMesh:
    """Grid with a plane through every network node coordinate, graded toward the channels."""
    required = [sorted(set(network.nodes[:, a].tolist()) - {0.0, L})
                for a, L in enumerate((lx, ly, lz))]
    # the surface carries the inlet/outlet, so grade toward it too
    refine = [list(required[0]), list(required[1]), list(required[2]) + [0.0]]
    return build_graded_grid(lx, ly, lz, required, counts, ratio, refine)


@dataclass(frozen=True)
class ChannelEdge:
    a: int              # upstream node
    b: int              # downstream node
    length: float       # [m]
    flow_fraction: float
    segment: int


def map_channel_to_edges(mesh: StructuredMesh, network: VascularNetwork) -> list[ChannelEdge]:
    """Decompose every segment into consecutive grid edges, oriented along the flow."""
    coords = (mesh.x, mesh.y, mesh.z)
    edges = []
    for k, seg in enumerate(network.segments):
        p0, p1 = network.nodes[seg.start], network.nodes[seg.end]
        n0, n1 = mesh.locate(p0), mesh.locate(p1)
        if n0 is None or n1 is None:
            raise MeshError(f"segment {k} {p0.tolist()} -> {p1.tolist()} has an endpoint off the grid")
        (i0, j0, k0), (i1, j1, k1) = mesh.ijk(n0), mesh.ijk(n1)
        start, stop = np.array([i0, j0, k0]), np.array([i1, j1, k1])
        axis = int(np.flatnonzero(start != stop)[0])
        step = 1 if stop[axis] > start[axis] else -1
        cur = start.copy()
        while cur[axis] != stop[axis]:
            nxt = cur.copy()
            nxt[axis] += step
            L = abs(coords[axis][nxt[axis]] - coords[axis][cur[axis]])
            edges.append(ChannelEdge(int(mesh.index(*cur)), int(mesh.index(*nxt)), float(L),
                                     seg.flow_fraction, k))
            cur = nxt
    return edges
