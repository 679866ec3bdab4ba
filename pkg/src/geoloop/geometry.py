"""Vascular layouts: U-shaped and comb-shaped closed-loop wellbore networks.

Coordinates are in metres with the origin on the top surface and ``z``
increasing downward, so depth and ``z`` coincide.
"""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    """Raised for layouts that are degenerate or do not fit the domain."""


@dataclass(frozen=True)
class LayoutSpec:
    kind: str                       # "U" or "Comb"
    depth: float                    # d [m]
    spacing: float                  # s [m]
    lx: float = 6000.0              # footprint [m]
    ly: float = 6000.0
    lateral_length: float = 3000.0  # Comb only [m]
    n_laterals: int = 4             # Comb only

    def validate(self):
        if self.kind not in ("U", "Comb"):
            raise GeometryError(f"layout.kind must be 'U' or 'Comb', got {self.kind!r}")
        if not self.depth > 0:
            raise GeometryError(f"layout.depth must be > 0 (zero-length vertical leg), got {self.depth}")
        if not self.spacing > 0:
            raise GeometryError(f"layout.spacing must be > 0, got {self.spacing}")
        if not (self.lx > 0 and self.ly > 0):
            raise GeometryError("domain footprint must be positive")
        if self.kind == "Comb":
            if int(self.n_laterals) != self.n_laterals or self.n_laterals < 1:
                raise GeometryError(f"layout.n_laterals must be a positive integer, got {self.n_laterals}")
            if not self.lateral_length > 0:
                raise GeometryError(f"layout.lateral_length must be > 0, got {self.lateral_length}")


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    flow_fraction: float = 1.0
    role: str = "leg"   # "leg", "horizontal", "manifold" or "lateral"


@dataclass(frozen=True)
class VascularNetwork:
    """Directed graph of axis-aligned channel segments, oriented along the flow."""

    nodes: np.ndarray                  # (n, 3) [m]
    segments: tuple[Segment, ...]
    inlet: int
    outlet: int
    kind: str = "U"
    n_laterals: int = 1
    _spine: tuple[int, ...] = field(default=(), repr=False, compare=False)

    def segment_vector(self, k: int) -> np.ndarray:
        seg = self.segments[k]
        return self.nodes[seg.end] - self.nodes[seg.start]

    def segment_length(self, k: int) -> float:
        return float(np.abs(self.segment_vector(k)).sum())

    def tangent(self, k: int) -> np.ndarray:
        v = self.segment_vector(k)
        return v / np.linalg.norm(v)

    @property
    def total_length(self) -> float:
        return sum(self.segment_length(k) for k in range(len(self.segments)))

    @property
    def spine(self) -> tuple[int, ...]:
        """Segment indices of the first inlet-to-outlet path (lowest index at each branch)."""
        return self._spine or _first_path(self)

    @property
    def spine_length(self) -> float:
        return sum(self.segment_length(k) for k in self.spine)

    def check(self):
        """Verify the structural invariants; raises GeometryError on violation."""
        n = len(self.nodes)
        indeg = np.zeros(n, dtype=int)
        outdeg = np.zeros(n, dtype=int)
        inflow = np.zeros(n)
        outflow = np.zeros(n)
        for k, seg in enumerate(self.segments):
            v = self.segment_vector(k)
            if np.count_nonzero(v) != 1:
                raise GeometryError(f"segment {k} is not axis-aligned with positive length")
            if not 0.0 < seg.flow_fraction <= 1.0:
                raise GeometryError(f"segment {k} flow fraction {seg.flow_fraction} outside (0, 1]")
            indeg[seg.end] += 1
            outdeg[seg.start] += 1
            outflow[seg.start] += seg.flow_fraction
            inflow[seg.end] += seg.flow_fraction
        if indeg[self.inlet] or outdeg[self.outlet]:
            raise GeometryError("inlet must have in-degree 0 and outlet out-degree 0")
        _check_connected(self)
        for i in range(n):
            if i in (self.inlet, self.outlet):
                continue
            if abs(inflow[i] - outflow[i]) > 1e-12:
                raise GeometryError(f"flow not conserved at node {i}: in {inflow[i]}, out {outflow[i]}")
        if abs(outflow[self.inlet] - 1.0) > 1e-12 or abs(inflow[self.outlet] - 1.0) > 1e-12:
            raise GeometryError("inlet and outlet legs must carry the full flow")


def _adjacency(network: VascularNetwork):
    out = defaultdict(list)
    for k, seg in enumerate(network.segments):
        out[seg.start].append(k)
    return out


def _check_connected(network: VascularNetwork):
    out = _adjacency(network)
    seen = {network.inlet}
    queue = deque([network.inlet])
    while queue:
        i = queue.popleft()
        for k in out[i]:
            j = network.segments[k].end
            if j not in seen:
                seen.add(j)
                queue.append(j)
    if network.outlet not in seen:
        raise GeometryError("network is disconnected: outlet not reachable from inlet")
    missing = sorted(set(range(len(network.nodes))) - seen)
    if missing:
        raise GeometryError(f"network is disconnected: nodes {missing} not reachable from inlet")


def _first_path(network: VascularNetwork) -> tuple[int, ...]:
    out = _adjacency(network)

    def walk(i, visited):
        if i == network.outlet:
            return []
        for k in sorted(out[i]):
            j = network.segments[k].end
            if j in visited:
                continue
            rest = walk(j, visited | {j})
            if rest is not None:
                return [k] + rest
        return None

    path = walk(network.inlet, {network.inlet})
    if path is None:
        raise GeometryError("network is disconnected: no inlet-to-outlet path")
    return tuple(path)


def build_u_layout(spec: LayoutSpec) -> VascularNetwork:
    """Two vertical legs joined by one horizontal channel, centred on the footprint."""
    spec.validate()
    if spec.kind != "U":
        raise GeometryError(f"build_u_layout needs kind 'U', got {spec.kind!r}")
    if not spec.spacing < spec.lx:
        raise GeometryError(f"spacing {spec.spacing} must be < domain length lx={spec.lx}")
    x_in = 0.5 * (spec.lx - spec.spacing)
    x_out = 0.5 * (spec.lx + spec.spacing)
    yc = 0.5 * spec.ly
    d = spec.depth
    nodes = np.array([[x_in, yc, 0.0], [x_in, yc, d], [x_out, yc, d], [x_out, yc, 0.0]])
    segments = (
        Segment(0, 1, 1.0, "leg"),
        Segment(1, 2, 1.0, "horizontal"),
        Segment(2, 3, 1.0, "leg"),
    )
    net = VascularNetwork(nodes, segments, inlet=0, outlet=3, kind="U", n_laterals=1)
    net.check()
    return net


def lateral_positions(n_laterals: int, spacing: float, ly: float) -> np.ndarray:
    """y-coordinates of the comb laterals, centred on ``ly/2`` and ``spacing`` apart."""
    offsets = (np.arange(n_laterals) - 0.5 * (n_laterals - 1)) * spacing
    return 0.5 * ly + offsets


def build_comb_layout(spec: LayoutSpec) -> VascularNetwork:
    """Ladder of ``n_laterals`` parallel laterals between two vertical legs.

    The inlet leg drops at ``(x_in, ly/2)`` into an inlet manifold running
    in y at depth ``d``; laterals run in +x for ``lateral_length`` to an
    outlet manifold that feeds the rising outlet leg at ``(x_out, ly/2)``.
    """
    spec.validate()
    if spec.kind != "Comb":
        raise GeometryError(f"build_comb_layout needs kind 'Comb', got {spec.kind!r}")
    n = int(spec.n_laterals)
    if not spec.lateral_length < spec.lx:
        raise GeometryError(
            f"lateral_length {spec.lateral_length} must be < domain length lx={spec.lx}")
    ys = lateral_positions(n, spec.spacing, spec.ly)
    if ys[0] <= 0.0 or ys[-1] >= spec.ly:
        raise GeometryError(
            f"laterals span y in [{ys[0]}, {ys[-1]}], outside the footprint (0, {spec.ly})")
    x_in = 0.5 * (spec.lx - spec.lateral_length)
    x_out = 0.5 * (spec.lx + spec.lateral_length)
    yc = 0.5 * spec.ly
    d = spec.depth

    manifold_ys = sorted(set(ys.tolist()) | {yc})
    nodes = [[x_in, yc, 0.0]]
    inlet_idx = {}
    outlet_idx = {}
    for y in manifold_ys:
        inlet_idx[y] = len(nodes)
        nodes.append([x_in, y, d])
    for y in manifold_ys:
        outlet_idx[y] = len(nodes)
        nodes.append([x_out, y, d])
    nodes.append([x_out, yc, 0.0])
    outlet = len(nodes) - 1

    segments = [Segment(0, inlet_idx[yc], 1.0, "leg")]
    # manifolds branch outward from the legs; walk each side away from yc
    below = [y for y in manifold_ys if y < yc][::-1]
    above = [y for y in manifold_ys if y > yc]
    for side in (below, above):
        prev = yc
        for y in side:
            segments.append(Segment(inlet_idx[prev], inlet_idx[y], 1.0, "manifold"))
            prev = y
    for y in ys:
        segments.append(Segment(inlet_idx[y], outlet_idx[y], 1.0, "lateral"))
    for side in (below, above):
        chain = [yc] + side
        for a, b in zip(chain[1:][::-1], chain[:-1][::-1]):
            segments.append(Segment(outlet_idx[a], outlet_idx[b], 1.0, "manifold"))
    segments.append(Segment(outlet_idx[yc], outlet, 1.0, "leg"))

    net = VascularNetwork(np.array(nodes, dtype=float), tuple(segments), inlet=0,
                          outlet=outlet, kind="Comb", n_laterals=n)
    net = flow_fractions(net)
    net.check()
    return net


def flow_fractions(network: VascularNetwork) -> VascularNetwork:
    """Assign per-segment flow fractions: equal split over laterals, conservation elsewhere."""
    _check_connected(network)
    segs = list(network.segments)
    n_lat = sum(1 for s in segs if s.role == "lateral")
    known: dict[int, float] = {}
    for k, s in enumerate(segs):
        if s.role == "lateral":
            known[k] = 1.0 / n_lat
        elif s.role in ("leg", "horizontal") or n_lat == 0:
            known[k] = 1.0
    incident = defaultdict(list)
    for k, s in enumerate(segs):
        incident[s.start].append((k, -1))   # outgoing
        incident[s.end].append((k, +1))     # incoming
    changed = True
    while changed and len(known) < len(segs):
        changed = False
        for node, items in incident.items():
            if node in (network.inlet, network.outlet):
                continue
            unknown = [(k, sign) for k, sign in items if k not in known]
            if len(unknown) != 1:
                continue
            k, sign = unknown[0]
            net_known = sum(sign * known[j] for j, sign in items if j in known)
            # incoming - outgoing = 0
            known[k] = -net_known / sign
            changed = True
    if len(known) < len(segs):
        raise GeometryError("flow fractions are underdetermined for this network")
    segs = [replace(s, flow_fraction=known[k]) for k, s in enumerate(segs)]
    return replace(network, segments=tuple(segs))


def build_layout(spec: LayoutSpec) -> VascularNetwork:
    if spec.kind == "U":
        return build_u_layout(spec)
    return build_comb_layout(spec)


def arclength_and_tangent(network: VascularNetwork, s_q: float,
                          path: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Point and unit tangent at arc length ``s_q`` measured from the inlet.

    ``path`` lists the segment indices to follow; it defaults to the spine
    (the lowest-index branch at every junction).
    """
    path = tuple(network.spine if path is None else path)
    lengths = [network.segment_length(k) for k in path]
    total = sum(lengths)
    if not 0.0 <= s_q <= total:
        raise GeometryError(f"arc length {s_q} outside [0, {total}]")
    start = 0.0
    for k, L in zip(path, lengths):
        if s_q <= start + L or k == path[-1]:
            t = network.tangent(k)
            p = network.nodes[network.segments[k].start] + (s_q - start) * t
            return p, t
        start += L
    raise AssertionError("unreachable")
