"""Property-based checks of the structural invariants."""
import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from geoloop import assembly as asm
from geoloop.geometry import LayoutSpec, build_layout
from geoloop.mesh import build_graded_grid, build_graded_grid_axis, map_channel_to_edges, mesh_for_network
from geoloop.postprocess import average_power, coefficient_of_performance, mean_surface_temperature

ratios = st.floats(1.0, 2.5)
lengths = st.floats(10.0, 1e4)


@settings(max_examples=40, deadline=None)
@given(L=lengths, fr=st.lists(st.floats(0.01, 0.99), max_size=4, unique=True),
       n=st.integers(2, 40), r=ratios)
def test_axis_keeps_required_planes(L, fr, n, r):
    req = sorted({round(f * L, 6) for f in fr})
    assume(all(b - a > 1e-6 * L for a, b in zip([0.0] + req, req + [L])))
    x = build_graded_grid_axis(L, req, n, r)
    assert np.all(np.diff(x) > 0)
    assert x[0] == 0.0 and x[-1] == L
    for p in req:
        assert p in x.tolist()
    assert x.size - 1 == max(n, len(req) + 1)


@settings(max_examples=25, deadline=None)
@given(counts=st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(2, 5)), r=ratios,
       k=st.tuples(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10)))
def test_conduction_annihilates_constants(counts, r, k):
    mesh = build_graded_grid(3.0, 2.0, 5.0, ([1.1], [0.7], [2.0]), counts, r)
    K = asm.assemble_conduction(mesh, asm.MaterialField(conductivity=k))
    assert np.max(np.abs(K @ np.ones(mesh.n_nodes))) <= 1e-12 * abs(K).max()


@settings(max_examples=20, deadline=None)
@given(kind=st.sampled_from(["U", "Comb"]), beta=st.floats(0.0, 1.0), mdot=st.floats(0.1, 100.0),
       r=st.floats(1.0, 2.0))
def test_channel_plus_conduction_annihilates_constants(kind, beta, mdot, r):
    depth, spacing = (5000.0, 3000.0) if kind == "U" else (8000.0, 900.0)
    net = build_layout(LayoutSpec(kind, depth, spacing))
    mesh = mesh_for_network(net, 6000.0, 6000.0, 10000.0, (10, 10, 12), r)
    A = (asm.assemble_conduction(mesh, asm.MaterialField())
         + asm.assemble_channel_advection(mesh, map_channel_to_edges(mesh, net),
                                          asm.ChannelCoupling(mdot * 4183.0, beta)))
    assert np.max(np.abs(A @ np.ones(mesh.n_nodes))) <= 1e-12 * abs(A).max()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), chi=st.floats(1.0, 1e6))
def test_upwind_channel_form_bounded_below(seed, chi):
    net = build_layout(LayoutSpec("Comb", 8000.0, 900.0))
    mesh = mesh_for_network(net, 6000.0, 6000.0, 10000.0, (10, 10, 12), 1.3)
    edges = map_channel_to_edges(mesh, net)
    C = asm.assemble_channel_advection(mesh, edges, asm.ChannelCoupling(chi, 1.0))
    w = np.random.default_rng(seed).normal(size=mesh.n_nodes)
    w[edges[0].a] = 0.0
    assert w @ C @ w >= 0.5 * chi * w[edges[-1].b] ** 2 * (1 - 1e-12) - 1e-12 * chi


@settings(max_examples=30, deadline=None)
@given(c=st.floats(200.0, 500.0), cx=st.floats(300.0, 700.0), cy=st.floats(250.0, 550.0),
       a=st.floats(1.0, 400.0))
def test_mst_of_constant_field(c, cx, cy, a):
    mesh = build_graded_grid(1000.0, 800.0, 100.0, ([300.0], [400.0], []), (6, 5, 2), 1.5)
    assume(cx - a / 2 >= 0 and cx + a / 2 <= 1000 and cy - a / 2 >= 0 and cy + a / 2 <= 800)
    assert np.isclose(mean_surface_temperature(np.full(mesh.n_nodes, c), mesh, a, (cx, cy)), c, rtol=1e-13)


@settings(max_examples=50, deadline=None)
@given(p=st.lists(st.floats(-1e8, 1e8), min_size=2, max_size=30),
       dt=st.lists(st.floats(1.0, 1e7), min_size=29, max_size=29))
def test_average_power_within_range(p, dt):
    t = np.concatenate([[0.0], np.cumsum(dt[: len(p) - 1])])
    avg = average_power((t, p))
    assert min(p) - 1e-6 * max(1, abs(min(p))) <= avg <= max(p) + 1e-6 * max(1, abs(max(p)))


@given(th_in=st.floats(250.0, 350.0), a=st.floats(250.0, 500.0), b=st.floats(250.0, 500.0))
def test_cop_monotone_in_outlet(th_in, a, b):
    assume(a < b and a >= th_in)
    assert coefficient_of_performance(th_in, a) <= coefficient_of_performance(th_in, b)


@settings(max_examples=20, deadline=None)
@given(th=st.floats(1.0, 1000.0), eps=st.floats(0.0, 1.0))
def test_radiation_jacobian_positive_semidefinite(th, eps):
    mesh = build_graded_grid(2.0, 2.0, 1.0, counts=(2, 2, 2))
    bc = asm.SurfaceBC(emissivity=eps)
    _, J = asm.radiation_residual_jacobian(np.full(mesh.n_nodes, th), mesh, bc)
    x = np.random.default_rng(0).normal(size=mesh.n_nodes)
    assert x @ J @ x >= -1e-12
