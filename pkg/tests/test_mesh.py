import numpy as np
import pytest

from geoloop.geometry import LayoutSpec, build_layout
from geoloop.mesh import (MeshError, StructuredMesh, build_graded_grid, build_graded_grid_axis,
                          map_channel_to_edges, mesh_for_network)


def test_uniform_axis():
    np.testing.assert_allclose(build_graded_grid_axis(10.0, [], 5), [0, 2, 4, 6, 8, 10])


def test_ratio_one_is_uniform_within_spans():
    x = build_graded_grid_axis(6000.0, [1500.0, 4500.0], 12, 1.0)
    h = np.diff(x)
    for lo, hi in ((0, 1500), (1500, 4500), (4500, 6000)):
        sel = (x[:-1] >= lo) & (x[1:] <= hi)
        assert np.ptp(h[sel]) < 1e-9


@pytest.mark.parametrize("ratio", [1.0, 1.3, 1.6, 2.0])
def test_required_planes_verbatim_and_growth_bounded(ratio):
    req = [1500.0, 3000.0, 4500.0]
    x = build_graded_grid_axis(6000.0, req, 24, ratio)
    for p in req:
        assert p in x.tolist()
    assert x.size == 25
    # the bound holds between neighbouring cells of one span
    for lo, hi in zip([0.0] + req, req + [6000.0]):
        h = np.diff(x[(x >= lo) & (x <= hi)])
        growth = np.maximum(h[1:] / h[:-1], h[:-1] / h[1:])
        assert growth.max() <= ratio + 1e-9


def test_graded_cells_shrink_toward_required_plane():
    x = build_graded_grid_axis(3000.0, [1500.0], 10, 1.5)
    h = np.diff(x)
    assert h[4] < h[0] and h[5] < h[9]


def test_axis_errors():
    with pytest.raises(MeshError):
        build_graded_grid_axis(10.0, [11.0], 4)
    with pytest.raises(MeshError):
        build_graded_grid_axis(10.0, [], 1)
    with pytest.raises(MeshError):
        build_graded_grid_axis(10.0, [], 4, ratio=0.5)


def test_node_numbering_and_cells():
    m = build_graded_grid(2.0, 3.0, 4.0, counts=(2, 3, 4))
    assert m.shape == (3, 4, 5)
    assert m.index(1, 2, 3) == 1 + 3 * (2 + 4 * 3)
    np.testing.assert_allclose(m.points[m.index(1, 2, 3)], [1, 2, 3])
    c0 = m.cells[0]
    np.testing.assert_allclose(m.points[c0[7]] - m.points[c0[0]], [1, 1, 1])
    assert m.cells.shape == (m.n_cells, 8)
    assert np.prod(m.cell_sizes, axis=1).sum() == pytest.approx(m.volume)


def test_face_quads_cover_face_area():
    m = build_graded_grid(2.0, 3.0, 4.0, counts=(2, 3, 4), ratio=1.0)
    for face, area in (("top", 6.0), ("xmin", 12.0), ("ymax", 8.0)):
        conn, hu, hv = m.face_quads(face)
        assert np.sum(hu * hv) == pytest.approx(area)
        assert set(np.unique(conn)) == set(m.face_nodes(face))


def test_locate():
    m = StructuredMesh(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0]), np.array([0.0, 5.0]))
    assert m.locate([2.0, 1.0, 5.0]) == m.index(2, 1, 1)
    assert m.locate([1.5, 0.0, 0.0]) is None


@pytest.mark.parametrize("kind,depth,spacing", [("U", 5000.0, 3000.0), ("Comb", 8000.0, 900.0)])
def test_channel_maps_to_grid_edges(kind, depth, spacing):
    net = build_layout(LayoutSpec(kind, depth, spacing))
    mesh = mesh_for_network(net, 6000.0, 6000.0, 10000.0, (24, 24, 40), 1.3)
    edges = map_channel_to_edges(mesh, net)
    assert sum(e.length * 1.0 for e in edges) == pytest.approx(net.total_length)
    for k in range(len(net.segments)):
        L = sum(e.length for e in edges if e.segment == k)
        assert L == pytest.approx(net.segment_length(k))
    # consecutive edges of one segment chain head to tail
    for a, b in zip(edges, edges[1:]):
        if a.segment == b.segment:
            assert a.b == b.a


def test_off_grid_channel_rejected():
    net = build_layout(LayoutSpec("U", 5000.0, 3000.0))
    mesh = build_graded_grid(6000.0, 6000.0, 10000.0, counts=(7, 7, 7))
    with pytest.raises(MeshError):
        map_channel_to_edges(mesh, net)
