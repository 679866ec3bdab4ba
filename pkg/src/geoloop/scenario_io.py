"""Scenario configuration (TOML) and on-disk artifacts.

Every quantity is SI with temperatures in kelvin; the one exception is the
document key ``boundary.gradient_K_per_km``, converted to K/m on load.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .assembly import DIRICHLET, NEUMANN, ROBIN, MaterialField, SurfaceBC
from .geometry import GeometryError, LayoutSpec, build_layout
from .mesh import FACES
from .solver import SolverConfig


class ScenarioError(ValueError):
    pass


# Reference parameter set; depth/spacing defaults depend on the layout kind.
LAYOUT_DEFAULTS = {
    "U": {"depth": 5000.0, "spacing": 3000.0},
    "Comb": {"depth": 8000.0, "spacing": 900.0},
}

DEFAULTS = {
    "name": "",
    "domain": {"lx": 6000.0, "ly": 6000.0, "lz": 10000.0},
    "layout": {"kind": "U", "depth": None, "spacing": None,
               "lateral_length": 3000.0, "n_laterals": 4},
    "material": {"density": 2500.0, "specific_heat": 790.0, "conductivity": 3.5},
    "fluid": {"density": 1000.0, "specific_heat": 4183.0, "mass_flow_rate": 30.0},
    "boundary": {"variant": "dirichlet", "gradient_K_per_km": 30.0, "ambient": 303.15,
                 "inlet": 303.15, "h_t": 0.5, "emissivity": 0.9, "neumann_flux": None,
                 "faces": {}},
    "solver": {"dt": 1.0e6, "total_time": 2.0e9, "bdf_order": 2, "newton_tol": 1e-8,
               "newton_max": 20, "krylov_tol": 1e-9, "krylov_max": 1000,
               "preconditioner": "ilu", "upwind": 1.0, "lumped_mass": False},
    "mesh": {"nx": 24, "ny": 24, "nz": 40, "grading": 1.3},
    "output": {"snapshot_times": [], "mst_edges": [100.0, 200.0, 300.0, 450.0]},
}

FACE_TAGS = {"dirichlet": DIRICHLET, "neumann": NEUMANN, "convect_radiate": ROBIN}


@dataclass(frozen=True)
class Fluid:
    density: float = 1000.0         # rho_f [kg/m3]
    specific_heat: float = 4183.0   # c_f [J/(kg K)]
    mass_flow_rate: float = 30.0    # m_dot [kg/s]

    @property
    def heat_capacity_rate(self) -> float:
        return self.mass_flow_rate * self.specific_heat

    @property
    def volumetric_flow_rate(self) -> float:
        return self.mass_flow_rate / self.density


@dataclass(frozen=True)
class MeshTargets:
    nx: int = 24
    ny: int = 24
    nz: int = 40
    grading: float = 1.3


@dataclass(frozen=True)
class OutputSpec:
    snapshot_times: tuple = ()
    mst_edges: tuple = (100.0, 200.0, 300.0, 450.0)


@dataclass(frozen=True)
class Scenario:
    name: str
    domain: tuple             # (lx, ly, lz) [m]
    layout: LayoutSpec
    material: MaterialField
    fluid: Fluid
    bc: SurfaceBC
    theta_inlet: float
    solver: SolverConfig
    upwind: float
    lumped_mass: bool
    mesh: MeshTargets
    output: OutputSpec
    document: dict = field(repr=False, compare=False, default_factory=dict)   # resolved
    raw: dict = field(repr=False, compare=False, default_factory=dict)        # as given

    @property
    def hash(self) -> str:
        return scenario_hash(self.document)

    def with_overrides(self, overrides: dict) -> "Scenario":
        """New scenario with dotted-key overrides applied to the document as given,
        so a changed layout kind still picks up its own depth/spacing defaults."""
        doc = copy.deepcopy(self.raw)
        for path, value in overrides.items():
            set_path(doc, path, value)
        return scenario_from_dict(doc)


def _merge(defaults, doc, path=""):
    out = {}
    for key in doc:
        if key not in defaults:
            raise ScenarioError(f"{path}{key}: unknown key")
    for key, dval in defaults.items():
        if isinstance(dval, dict) and key != "faces":
            sub = doc.get(key, {})
            if not isinstance(sub, dict):
                raise ScenarioError(f"{path}{key}: expected a table")
            out[key] = _merge(dval, sub, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(doc.get(key, dval))
    return out


def set_path(doc: dict, path: str, value):
    keys = path.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def get_path(doc: dict, path: str):
    node = doc
    for k in path.split("."):
        node = node[k]
    return node


def _positive(doc, path, allow_zero=False):
    v = get_path(doc, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{path}: expected a number, got {v!r}")
    if not np.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        raise ScenarioError(f"{path}: must be {'>= 0' if allow_zero else '> 0'}, got {v}")
    return float(v)


def resolve(doc: dict) -> dict:
    """Fill defaults into a raw document and reject unknown keys."""
    full = _merge(DEFAULTS, doc)
    lay = full["layout"]
    if lay["kind"] not in LAYOUT_DEFAULTS:
        raise ScenarioError(f"layout.kind: must be 'U' or 'Comb', got {lay['kind']!r}")
    for k, v in LAYOUT_DEFAULTS[lay["kind"]].items():
        if lay[k] is None:
            lay[k] = v
    return full


def scenario_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def scenario_from_dict(doc: dict) -> Scenario:
    full = resolve(doc)
    for p in ("domain.lx", "domain.ly", "domain.lz", "layout.depth", "layout.spacing",
              "layout.lateral_length", "material.density", "material.specific_heat",
              "fluid.density", "fluid.specific_heat", "boundary.ambient", "boundary.inlet",
              "solver.dt", "solver.newton_tol", "solver.krylov_tol", "mesh.grading"):
        _positive(full, p)
    for p in ("boundary.gradient_K_per_km", "boundary.h_t", "boundary.emissivity",
              "solver.total_time", "solver.upwind"):
        _positive(full, p, allow_zero=True)
    mdot = _positive(full, "fluid.mass_flow_rate", allow_zero=True)
    if mdot > 1000.0:
        raise ScenarioError(f"fluid.mass_flow_rate: {mdot} exceeds the 1000 kg/s sanity bound")
    for p in ("mesh.nx", "mesh.ny", "mesh.nz", "layout.n_laterals", "solver.newton_max",
              "solver.krylov_max", "solver.bdf_order"):
        v = get_path(full, p)
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ScenarioError(f"{p}: must be a positive integer, got {v!r}")
    for p in ("mesh.nx", "mesh.ny", "mesh.nz"):
        if get_path(full, p) < 2:
            raise ScenarioError(f"{p}: needs at least 2 cells")
    if full["solver"]["bdf_order"] not in (1, 2):
        raise ScenarioError("solver.bdf_order: must be 1 or 2")
    for p in ("solver.newton_tol", "solver.krylov_tol"):
        if not get_path(full, p) < 1:
            raise ScenarioError(f"{p}: must lie in (0, 1)")
    if full["solver"]["preconditioner"] not in ("ilu", "diagonal"):
        raise ScenarioError("solver.preconditioner: must be 'ilu' or 'diagonal'")
    if not full["solver"]["upwind"] <= 1:
        raise ScenarioError("solver.upwind: must lie in [0, 1]")
    if not full["boundary"]["emissivity"] <= 1:
        raise ScenarioError("boundary.emissivity: must lie in [0, 1]")

    d = full["domain"]
    lay = full["layout"]
    if lay["depth"] > d["lz"]:
        raise ScenarioError(f"layout.depth: {lay['depth']} exceeds domain.lz={d['lz']}")
    layout = LayoutSpec(kind=lay["kind"], depth=float(lay["depth"]), spacing=float(lay["spacing"]),
                        lx=float(d["lx"]), ly=float(d["ly"]),
                        lateral_length=float(lay["lateral_length"]), n_laterals=lay["n_laterals"])
    try:
        build_layout(layout)
    except GeometryError as exc:
        raise ScenarioError(f"layout: {exc}") from exc
    if layout.depth == d["lz"]:
        raise ScenarioError("layout.depth: channels may not touch the bottom face")

    m = full["material"]
    k = m["conductivity"]
    if isinstance(k, list):
        if len(k) != 3:
            raise ScenarioError("material.conductivity: expected a number or [kx, ky, kz]")
        k = tuple(float(v) for v in k)
    if np.any(np.asarray(k, dtype=float) <= 0):
        raise ScenarioError("material.conductivity: entries must be > 0")
    material = MaterialField(float(m["density"]), float(m["specific_heat"]), k)

    b = full["boundary"]
    if b["variant"] not in ("dirichlet", "neumann"):
        raise ScenarioError("boundary.variant: must be 'dirichlet' or 'neumann'")
    lateral = DIRICHLET if b["variant"] == "dirichlet" else NEUMANN
    faces = {f: lateral for f in FACES}
    faces["top"] = ROBIN
    for f, tag in b["faces"].items():
        if f not in FACES:
            raise ScenarioError(f"boundary.faces.{f}: unknown face")
        if tag not in FACE_TAGS:
            raise ScenarioError(f"boundary.faces.{f}: tag must be one of {sorted(FACE_TAGS)}")
        faces[f] = FACE_TAGS[tag]
    bc = SurfaceBC(faces=faces, slope=b["gradient_K_per_km"] / 1000.0, ambient=float(b["ambient"]),
                   h_t=float(b["h_t"]), emissivity=float(b["emissivity"]),
                   neumann_flux=None if b["neumann_flux"] is None else float(b["neumann_flux"]))

    s = full["solver"]
    solver = SolverConfig(dt=float(s["dt"]), total_time=float(s["total_time"]),
                          bdf_order=s["bdf_order"], newton_tol=float(s["newton_tol"]),
                          newton_max=s["newton_max"], krylov_tol=float(s["krylov_tol"]),
                          krylov_max=s["krylov_max"], preconditioner=s["preconditioner"])
    if solver.total_time and solver.total_time < solver.dt:
        raise ScenarioError("solver.total_time: must be 0 or >= solver.dt")
    mt = full["mesh"]
    o = full["output"]
    for a in o["mst_edges"]:
        if not a > 0:
            raise ScenarioError(f"output.mst_edges: edge lengths must be > 0, got {a}")
    return Scenario(
        name=str(full["name"]),
        domain=(float(d["lx"]), float(d["ly"]), float(d["lz"])),
        layout=layout, material=material,
        fluid=Fluid(float(full["fluid"]["density"]), float(full["fluid"]["specific_heat"]), mdot),
        bc=bc, theta_inlet=float(b["inlet"]), solver=solver,
        upwind=float(s["upwind"]), lumped_mass=bool(s["lumped_mass"]),
        mesh=MeshTargets(mt["nx"], mt["ny"], mt["nz"], float(mt["grading"])),
        output=OutputSpec(tuple(float(t) for t in o["snapshot_times"]),
                          tuple(float(a) for a in o["mst_edges"])),
        document=full,
        raw=copy.deepcopy(doc),
    )


def load_scenario(document) -> Scenario:
    """Build a validated Scenario from TOML text, a path, or an already-parsed dict."""
    if isinstance(document, dict):
        return scenario_from_dict(document)
    if isinstance(document, Path) or (isinstance(document, str) and "\n" not in document
                                      and document.endswith(".toml")):
        text = Path(document).read_text(encoding="utf-8")
    else:
        text = document
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"malformed configuration: {exc}") from exc
    return scenario_from_dict(doc)


def preset_path(name: str) -> Path:
    return Path(__file__).parent / "presets" / f"{name}.toml"


# -- artifacts -----------------------------------------------------------------

SERIES_HEADER = ("t_s", "theta_outlet_K", "cop", "power_W")


def _fmt(v: float) -> str:
    return f"{v:.15g}"


def write_timeseries_csv(series, path) -> Path:
    if len(series) == 0:
        raise ValueError("cannot write an empty time series")
    path = Path(path)
    lines = [",".join(SERIES_HEADER)]
    for r in series.records:
        lines.append(",".join(_fmt(v) for v in (r.t, r.theta_outlet, r.cop, r.power)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_timeseries_csv(path):
    """Columns of a series file as a dict of float arrays."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SERIES_HEADER:
            raise ValueError(f"unexpected series header {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(-1, len(SERIES_HEADER))
    return {name: data[:, i] for i, name in enumerate(SERIES_HEADER)}


def write_field_snapshot(theta, mesh, path, title: str = "geoloop temperature field") -> Path:
    """Legacy-VTK ASCII structured grid with point scalar ``temperature_K``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mesh.n_nodes,):
        raise ValueError(f"field has {theta.size} values but mesh has {mesh.n_nodes} nodes")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_GRID\n")
        fh.write(f"DIMENSIONS {mesh.nx} {mesh.ny} {mesh.nz}\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for p in mesh.points:
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
        fh.write(f"POINT_DATA {mesh.n_nodes}\n")
        fh.write("SCALARS temperature_K double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for v in theta:
            fh.write(_fmt(v) + "\n")
    return path


def read_field_snapshot(path):
    """(points, scalars) from a snapshot written by ``write_field_snapshot``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    i = next(n for n, l in enumerate(lines) if l.startswith("POINTS"))
    npts = int(lines[i].split()[1])
    pts = np.array([[float(v) for v in l.split()] for l in lines[i + 1:i + 1 + npts]])
    j = next(n for n, l in enumerate(lines) if l.startswith("LOOKUP_TABLE"))
    vals = np.array([float(l) for l in lines[j + 1:j + 1 + npts]])
    return pts, vals


def write_mst_csv(times, mst: dict, path) -> Path:
    edges = sorted(mst)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["t_s"] + [f"mst_a{_fmt(a)}_K" for a in edges]) + "\n")
        for n, t in enumerate(times):
            fh.write(",".join([_fmt(t)] + [_fmt(mst[a][n]) for a in edges]) + "\n")
    return Path(path)


@dataclass
class RunArtifacts:
    series: Path | None = None
    snapshots: list = field(default_factory=list)
    extra: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def check(self):
        missing = [str(p) for p in [self.series, *self.snapshots, *self.extra]
                   if p is not None and not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"missing artifacts: {missing}")


def provenance(scenario: Scenario, started: float, finished: float) -> dict:
    return {
        "config_hash": scenario.hash,
        "code_version": __version__,
        "python": platform.python_version(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(finished)),
        "wall_seconds": round(finished - started, 3),
        "scenario": scenario.document,
    }


def write_provenance(prov: dict, path) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(prov, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Path(path)


PLOT_STUB = '''"""Plot the run artifacts in this directory (requires matplotlib)."""
import csv
import matplotlib.pyplot as plt

YEAR = 365.25 * 24 * 3600
with open("series.csv") as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["t_s"]) / YEAR for r in rows]
fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
a1.plot(t, [float(r["theta_outlet_K"]) for r in rows])
a1.set_xlabel("time [years]")
a1.set_ylabel("outlet temperature [K]")
a2.plot(t, [float(r["power_W"]) / 1e6 for r in rows])
a2.set_xlabel("time [years]")
a2.set_ylabel("power [MW]")
fig.tight_layout()
fig.savefig("series.png", dpi=150)
'''


def write_plot_stub(directory) -> Path:
    path = Path(directory) / "plot_series.py"
    path.write_text(PLOT_STUB, encoding="utf-8")
    return path


def default_run_dir(scenario: Scenario, root="runs") -> Path:
    return Path(root) / scenario.hash[:12]


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
