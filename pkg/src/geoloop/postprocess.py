"""Derived quantities: outlet temperature, coefficient of performance, power, surface means."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .mesh import StructuredMesh


class PostprocessError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    t: float              # [s]
    theta_outlet: float   # [K]
    cop: float            # zeta [-]
    power: float          # [W]


@dataclass
class TimeSeries:
    mass_flow_rate: float          # [kg/s]
    specific_heat: float           # c_f [J/(kg K)]
    theta_amb: float               # [K]
    theta_inlet: float             # [K]
    scenario_id: str = ""
    records: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, t, theta_outlet, diagnostics=None):
        if self.records and not t > self.records[-1].t:
            raise PostprocessError("time stamps must increase strictly")
        if not np.isfinite(theta_outlet):
            raise PostprocessError(f"non-finite outlet temperature at t={t}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cop = coefficient_of_performance(self.theta_inlet, theta_outlet)
        p = instantaneous_power(self.mass_flow_rate, self.specific_heat, theta_outlet, self.theta_amb)
        self.records.append(Record(float(t), float(theta_outlet), cop, p))
        self.diagnostics.append(diagnostics or {})

    @property
    def t(self):
        return np.array([r.t for r in self.records])

    @property
    def theta_outlet(self):
        return np.array([r.theta_outlet for r in self.records])

    @property
    def power(self):
        return np.array([r.power for r in self.records])

    @property
    def cop(self):
        return np.array([r.cop for r in self.records])


def outlet_temperature(theta, outlet_node) -> float:
    if outlet_node is None:
        raise PostprocessError("outlet is not mapped to a mesh node")
    return float(np.asarray(theta)[outlet_node])


def coefficient_of_performance(theta_inlet: float, theta_outlet: float) -> float:
    """``1 - theta_inlet/theta_outlet``; negative values during start-up are kept, with a warning."""
    if not (theta_inlet > 0 and theta_outlet > 0):
        raise PostprocessError("temperatures must be positive kelvin values")
    zeta = 1.0 - theta_inlet / theta_outlet
    if zeta < 0:
        warnings.warn(f"outlet {theta_outlet} K below inlet {theta_inlet} K: negative COP",
                      RuntimeWarning, stacklevel=2)
    return zeta


def instantaneous_power(mass_flow_rate, specific_heat, theta_outlet, theta_amb) -> float:
    return mass_flow_rate * specific_heat * (theta_outlet - theta_amb)


def average_power(series) -> float:
    """Trapezoidal time average of power over the stored steps.

    Accepts a TimeSeries or a pair of arrays ``(t, power)``.
    """
    if isinstance(series, TimeSeries):
        t, p = series.t, series.power
    else:
        t, p = (np.asarray(a, dtype=float) for a in series)
    if t.size < 2:
        raise PostprocessError("average power needs at least two records")
    return float(np.trapezoid(p, t) / (t[-1] - t[0]))


def breakdown_time(t, theta_outlet, total_time=None, fraction=0.9):
    """Time of peak outlet temperature if it precedes ``fraction * total_time``, else None."""
    t = np.asarray(t, dtype=float)
    th = np.asarray(theta_outlet, dtype=float)
    if total_time is None:
        total_time = t[-1]
    k = int(np.argmax(th))
    return float(t[k]) if t[k] < fraction * total_time else None


def _bilinear_weights(u0, u1):
    """Integrals over [u0, u1] of the two 1D hat functions (1-u, u) on [0, 1]."""
    a = (u1 - u0) - 0.5 * (u1 ** 2 - u0 ** 2)
    b = 0.5 * (u1 ** 2 - u0 ** 2)
    return a, b


def mean_surface_temperature(theta, mesh: StructuredMesh, edge: float, center) -> float:
    """Mean of the bilinear top-surface field over an axis-aligned square.

    Partial cells contribute the exact integral over their clipped area.
    """
    if not edge > 0:
        raise PostprocessError("region edge length must be positive")
    cx, cy = center[0], center[1]
    x0, x1 = cx - 0.5 * edge, cx + 0.5 * edge
    y0, y1 = cy - 0.5 * edge, cy + 0.5 * edge
    if x0 < mesh.x[0] or x1 > mesh.x[-1] or y0 < mesh.y[0] or y1 > mesh.y[-1]:
        raise PostprocessError(f"region of edge {edge} m around {center} leaves the footprint")
    top = np.asarray(theta)[: mesh.nx * mesh.ny].reshape(mesh.ny, mesh.nx)
    total = 0.0
    area = 0.0
    ix = range(max(np.searchsorted(mesh.x, x0, "right") - 1, 0), min(np.searchsorted(mesh.x, x1), mesh.nx - 1))
    iy = range(max(np.searchsorted(mesh.y, y0, "right") - 1, 0), min(np.searchsorted(mesh.y, y1), mesh.ny - 1))
    for j in iy:
        ya, yb = mesh.y[j], mesh.y[j + 1]
        hy = yb - ya
        v0, v1 = (max(y0, ya) - ya) / hy, (min(y1, yb) - ya) / hy
        if v1 <= v0:
            continue
        wy = _bilinear_weights(v0, v1)
        for i in ix:
            xa, xb = mesh.x[i], mesh.x[i + 1]
            hx = xb - xa
            u0, u1 = (max(x0, xa) - xa) / hx, (min(x1, xb) - xa) / hx
            if u1 <= u0:
                continue
            wx = _bilinear_weights(u0, u1)
            cell = top[j:j + 2, i:i + 2]
            total += hx * hy * sum(wy[b] * wx[a] * cell[b, a] for a in (0, 1) for b in (0, 1))
            area += hx * hy * (u1 - u0) * (v1 - v0)
    if area <= 0:
        raise PostprocessError("region has zero area")
    return total / area


def interpolate(theta, mesh: StructuredMesh, points) -> np.ndarray:
    """Trilinear interpolation of a nodal field at arbitrary points."""
    from scipy.interpolate import RegularGridInterpolator

    grid = np.asarray(theta).reshape(mesh.nz, mesh.ny, mesh.nx)
    f = RegularGridInterpolator((mesh.z, mesh.y, mesh.x), grid)
    p = np.atleast_2d(points)
    return f(p[:, ::-1])


def normalized_length(x, alpha: float, spacing: float):
    return np.asarray(x) / spacing - (alpha + 0.5)


def line_profile_normalized(theta, mesh: StructuredMesh, depth_fraction: float, alpha: float,
                            spacing: float, depth: float, y=None, x=None):
    """Temperature along an x-line at ``depth_fraction * depth``.

    Returns a list of ``(normalized length, theta)`` sampled at the grid x
    coordinates unless ``x`` is given; ``y`` defaults to mid-footprint.
    """
    if not 0.0 <= depth_fraction <= 1.0:
        raise PostprocessError(f"depth fraction {depth_fraction} outside [0, 1]")
    xs = mesh.x if x is None else np.asarray(x, dtype=float)
    y = 0.5 * (mesh.y[0] + mesh.y[-1]) if y is None else y
    pts = np.column_stack([xs, np.full_like(xs, y), np.full_like(xs, depth_fraction * depth)])
    vals = interpolate(theta, mesh, pts)
    return list(zip(normalized_length(xs, alpha, spacing).tolist(), vals.tolist()))
