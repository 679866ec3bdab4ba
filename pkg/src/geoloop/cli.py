"""Command-line entry point: ``geoloop run|sweep|post|verify``."""
from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scenario_io as sio
from .postprocess import average_power, breakdown_time, line_profile_normalized

log = logging.getLogger("geoloop")

WORKERS_ENV = "GEOLOOP_WORKERS"
SUMMARY_HEADER = "layout,mdot_kg_s,avg_power_W,peak_theta_K,breakdown_time_s"
PROFILE_DEPTHS = (0.25, 0.5, 0.75, 1.0)   # fractions of the channel depth


class UsageError(Exception):
    pass


# -- config resolution ---------------------------------------------------------------

def config_path(ref: str, relative_to: Path | None = None) -> Path:
    """A file path, a path relative to ``relative_to``, or a bundled preset name."""
    candidates = [Path(ref)]
    if relative_to is not None:
        candidates.insert(0, relative_to / ref)
    candidates.append(sio.preset_path(Path(ref).stem))
    for c in candidates:
        if c.is_file():
            return c
    raise UsageError(f"configuration not found: {ref}")


def read_document(path: Path) -> dict:
    try:
        return sio.tomllib.loads(path.read_text(encoding="utf-8"))
    except sio.tomllib.TOMLDecodeError as exc:
        raise sio.ScenarioError(f"{path}: malformed configuration: {exc}") from exc


# -- single run ------------------------------------------------------------------------

def _tag(t: float) -> str:
    return f"{t:.6g}".replace("+", "")


def write_run(result, scenario, out: Path, started: float) -> sio.RunArtifacts:
    sio.ensure_dir(out)
    art = sio.RunArtifacts()
    art.series = sio.write_timeseries_csv(result.series, out / "series.csv")
    mesh = result.model.mesh
    for t, st in sorted(result.snapshots.items()):
        name = "snapshot_final.vtk" if st is result.final else f"snapshot_t{_tag(t)}s.vtk"
        art.snapshots.append(sio.write_field_snapshot(st.theta, mesh, out / name,
                                                      f"temperature at t={t:g} s"))
    if result.mst:
        art.extra.append(sio.write_mst_csv(result.series.t, result.mst, out / "mst.csv"))
    art.extra.append(write_profiles(result, out / "profiles.csv"))
    art.extra.append(sio.write_plot_stub(out))
    art.provenance = sio.provenance(scenario, started, time.time())
    art.extra.append(sio.write_provenance(art.provenance, out / "provenance.json"))
    art.check()
    return art


def write_profiles(result, path: Path) -> Path:
    """Final temperature along x through the outlet leg at several depth fractions."""
    net = result.model.network
    x_in, x_out = net.nodes[net.inlet][0], net.nodes[net.outlet][0]
    span = abs(x_out - x_in)
    alpha = min(x_in, x_out) / span
    depth = result.model.scenario.layout.depth
    y = net.nodes[net.outlet][1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("depth_fraction,normalized_length,theta_K\n")
        for f in PROFILE_DEPTHS:
            for s, th in line_profile_normalized(result.final.theta, result.model.mesh, f, alpha,
                                                 span, depth, y=y):
                fh.write(f"{f:g},{s:.15g},{th:.15g}\n")
    return Path(path)


def run_scenario(scenario, out: Path, quiet=True):
    from .solver import run_transient

    started = time.time()
    sio.ensure_dir(out)

    def progress(n, total, state, rec):
        if not quiet and (n % max(1, total // 20) == 0 or n == total):
            log.info("step %d/%d  t=%.3e s  outlet=%.3f K", n, total, rec.t, rec.theta_outlet)

    result = run_transient(scenario, out_dir=out, progress=progress)
    write_run(result, scenario, out, started)
    return result


def summary_row(scenario, series) -> dict:
    th = series.theta_outlet
    bt = breakdown_time(series.t, th, scenario.solver.total_time)
    return {"layout": scenario.layout.kind, "mdot_kg_s": scenario.fluid.mass_flow_rate,
            "avg_power_W": average_power(series), "peak_theta_K": float(th.max()),
            "breakdown_time_s": bt}


def cmd_run(args) -> int:
    path = config_path(args.config)
    scenario = sio.load_scenario(read_document(path))
    out = Path(args.out) if args.out else sio.default_run_dir(scenario)
    log.info("running %s -> %s", path, out)
    result = run_scenario(scenario, out, quiet=args.quiet)
    row = summary_row(scenario, result.series)
    print(f"wrote {out}")
    print(f"peak outlet {row['peak_theta_K']:.3f} K, average power {row['avg_power_W']:.6g} W")
    return 0


# -- sweeps ----------------------------------------------------------------------------

@dataclass
class SweepSpec:
    base: dict                 # raw base document
    axes: list                 # [(key path, sorted values)]
    output_root: Path
    max_jobs: int = 64


def _schema_has(path: str) -> bool:
    node = sio.DEFAULTS
    for k in path.split("."):
        if not isinstance(node, dict) or k not in node:
            return False
        node = node[k]
    return True


def _sort_key(v):
    return (0, v, "") if isinstance(v, (int, float)) and not isinstance(v, bool) else (1, 0, str(v))


def load_sweep(path) -> SweepSpec:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"sweep spec not found: {path}")
    doc = read_document(path)
    unknown = set(doc) - {"base", "axes", "output_root", "max_jobs"}
    if unknown:
        raise sio.ScenarioError(f"sweep: unknown keys {sorted(unknown)}")
    base = read_document(config_path(doc["base"], path.parent)) if "base" in doc else {}
    axes = []
    for ax in doc.get("axes", []):
        key, values = ax.get("key"), ax.get("values")
        if not isinstance(key, str) or not _schema_has(key):
            raise sio.ScenarioError(f"sweep axis key {key!r} is not a scenario setting")
        if not isinstance(values, list) or not values:
            raise sio.ScenarioError(f"sweep axis {key}: values must be a non-empty list")
        axes.append((key, sorted(values, key=_sort_key)))
    root = Path(doc.get("output_root", "sweeps"))
    return SweepSpec(base, axes, root, int(doc.get("max_jobs", 64)))


def expand_sweep(spec: SweepSpec):
    """Scenarios of the Cartesian product in lexicographic order of axis values."""
    n = int(np.prod([len(v) for _, v in spec.axes])) if spec.axes else 1
    if n > spec.max_jobs:
        raise sio.ScenarioError(f"sweep has {n} scenarios, cap is {spec.max_jobs}")
    jobs = []
    for combo in itertools.product(*[v for _, v in spec.axes]):
        doc = copy.deepcopy(spec.base)
        for (key, _), value in zip(spec.axes, combo):
            sio.set_path(doc, key, value)
        label = "_".join(f"{k.split('.')[-1]}={v}" for (k, _), v in zip(spec.axes, combo))
        jobs.append((sio.load_scenario(doc), label))
    return jobs


def _job_dir(root: Path, index: int, label: str) -> Path:
    safe = re.sub(r"[^A-Za-z0-9_.=-]", "-", label)
    return root / (f"{index:03d}_{safe}" if safe else f"{index:03d}")


def _sweep_job(payload):
    doc, out = payload
    scenario = sio.load_scenario(doc)
    result = run_scenario(scenario, Path(out))
    return summary_row(scenario, result.series)


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return max(1, min(n_jobs, os.cpu_count() or 1))
    try:
        w = int(raw)
    except ValueError as exc:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if w < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1")
    return min(w, n_jobs)


def write_summary(rows, path) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for r in rows:
            bt = "none" if r["breakdown_time_s"] is None else f"{r['breakdown_time_s']:.15g}"
            fh.write(f"{r['layout']},{r['mdot_kg_s']:.15g},{r['avg_power_W']:.15g},"
                     f"{r['peak_theta_K']:.15g},{bt}\n")
    return Path(path)


def run_sweep(spec: SweepSpec) -> Path:
    jobs = expand_sweep(spec)
    root = sio.ensure_dir(spec.output_root)
    payloads = [(sc.document, str(_job_dir(root, i, label))) for i, (sc, label) in enumerate(jobs)]
    workers = worker_count(len(payloads))
    log.info("sweep: %d scenarios on %d workers", len(payloads), workers)
    if workers == 1:
        rows = [_sweep_job(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_job, payloads))
    return write_summary(rows, root / "summary.csv")


def cmd_sweep(args) -> int:
    spec = load_sweep(args.spec)
    if args.out:
        spec.output_root = Path(args.out)
    path = run_sweep(spec)
    print(f"wrote {path}")
    return 0


# -- post ------------------------------------------------------------------------------

def post_summary(directory) -> dict:
    """Re-derive headline numbers from a run directory without touching it."""
    d = Path(directory)
    series_file = d / "series.csv"
    if not series_file.is_file():
        raise UsageError(f"no series.csv in {d}")
    cols = sio.read_timeseries_csv(series_file)
    t, th, p = cols["t_s"], cols["theta_outlet_K"], cols["power_W"]
    total = None
    prov = d / "provenance.json"
    if prov.is_file():
        total = json.loads(prov.read_text(encoding="utf-8"))["scenario"]["solver"]["total_time"]
    out = {"records": int(t.size), "peak_theta_K": float(th.max()),
           "peak_time_s": float(t[int(np.argmax(th))]),
           "breakdown_time_s": breakdown_time(t, th, total),
           "avg_power_W": average_power((t, p)) if t.size > 1 else None,
           "final_cop": float(cols["cop"][-1])}
    mst_file = d / "mst.csv"
    if mst_file.is_file():
        with open(mst_file, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array(rows[1:], dtype=float)
        for j, name in enumerate(rows[0][1:], 1):
            out[f"{name}_rise"] = float(data[:, j].max() - data[0, j])
    return out


def cmd_post(args) -> int:
    for k, v in post_summary(args.directory).items():
        print(f"{k}: {'none' if v is None else v}")
    return 0


# -- verify ----------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verify import format_report, run_checks

    checks = run_checks(quick=args.quick)
    print(format_report(checks))
    return 0 if all(c.passed for c in checks) else 1


# -- dispatch --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geoloop", description="Closed-loop geothermal heat extraction model")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config", help="TOML file or preset name (desk, desk_comb)")
    r.add_argument("--out", help="output directory (default runs/<hash>)")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("spec")
    s.add_argument("--out", help="override output_root")
    s.set_defaults(func=cmd_sweep)
    q = sub.add_parser("post", help="summarise an existing run directory (read-only)")
    q.add_argument("directory")
    q.set_defaults(func=cmd_post)
    v = sub.add_parser("verify", help="run the verification checks")
    v.add_argument("--quick", action="store_true", help="coarser convergence study")
    v.set_defaults(func=cmd_verify)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, sio.ScenarioError) as exc:
        print(f"geoloop {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"geoloop {args.command}: failed: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
