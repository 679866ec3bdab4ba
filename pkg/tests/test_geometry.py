import numpy as np
import pytest

from geoloop.geometry import (GeometryError, LayoutSpec, arclength_and_tangent, build_comb_layout,
                              build_layout, build_u_layout, lateral_positions)


def u_spec(**kw):
    kw = {"kind": "U", "depth": 5000.0, "spacing": 3000.0, **kw}
    return LayoutSpec(**kw)


def comb_spec(**kw):
    kw = {"kind": "Comb", "depth": 8000.0, "spacing": 900.0, **kw}
    return LayoutSpec(**kw)


def test_u_total_length_is_two_legs_plus_spacing():
    net = build_u_layout(u_spec())
    assert net.total_length == pytest.approx(2 * 5000 + 3000)
    assert len(net.segments) == 3


def test_u_nodes_centred():
    net = build_u_layout(u_spec())
    np.testing.assert_allclose(net.nodes[net.inlet], [1500, 3000, 0])
    np.testing.assert_allclose(net.nodes[net.outlet], [4500, 3000, 0])
    assert [s.role for s in net.segments] == ["leg", "horizontal", "leg"]


def test_u_tangents_follow_flow():
    net = build_u_layout(u_spec())
    np.testing.assert_allclose(net.tangent(0), [0, 0, 1])
    np.testing.assert_allclose(net.tangent(1), [1, 0, 0])
    np.testing.assert_allclose(net.tangent(2), [0, 0, -1])


@pytest.mark.parametrize("bad", [{"depth": 0.0}, {"spacing": -1.0}, {"spacing": 6000.0},
                                 {"kind": "V"}])
def test_u_rejects_degenerate(bad):
    with pytest.raises(GeometryError):
        build_layout(u_spec(**bad))


def test_comb_four_laterals_equal_split():
    net = build_comb_layout(comb_spec())
    lats = [s for s in net.segments if s.role == "lateral"]
    assert len(lats) == 4
    assert all(s.flow_fraction == pytest.approx(0.25) for s in lats)
    legs = [s for s in net.segments if s.role == "leg"]
    assert all(s.flow_fraction == 1.0 for s in legs)
    net.check()


def test_comb_manifold_fractions_by_conservation():
    # legs centred between laterals 2 and 3: each manifold side carries half
    net = build_comb_layout(comb_spec())
    fr = sorted(round(s.flow_fraction, 12) for s in net.segments if s.role == "manifold")
    assert fr == [0.25, 0.25, 0.25, 0.25, 0.5, 0.5, 0.5, 0.5]


def test_comb_lateral_positions():
    ys = lateral_positions(4, 900.0, 6000.0)
    np.testing.assert_allclose(ys, [1650, 2550, 3450, 4350])


def test_comb_rejects_laterals_outside_footprint():
    with pytest.raises(GeometryError):
        build_comb_layout(comb_spec(spacing=2500.0))


def test_comb_single_lateral_is_a_u():
    net = build_comb_layout(comb_spec(n_laterals=1, lateral_length=3000.0))
    assert net.total_length == pytest.approx(2 * 8000 + 3000)


def test_spine_arclength_endpoints():
    net = build_u_layout(u_spec())
    p, t = arclength_and_tangent(net, 0.0)
    np.testing.assert_allclose(p, net.nodes[net.inlet])
    p, t = arclength_and_tangent(net, net.spine_length)
    np.testing.assert_allclose(p, net.nodes[net.outlet])
    p, t = arclength_and_tangent(net, 6500.0)
    np.testing.assert_allclose(p, [3000, 3000, 5000])
    np.testing.assert_allclose(t, [1, 0, 0])
    with pytest.raises(GeometryError):
        arclength_and_tangent(net, net.spine_length + 1.0)


def test_comb_spine_length():
    net = build_comb_layout(comb_spec())
    # lowest-index branching runs out to the outermost lateral below the legs
    assert net.spine_length == pytest.approx(8000 + 450 + 900 + 3000 + 900 + 450 + 8000)


def test_horizontal_cut_conservation():
    # flow crossing the horizontal plane mid-leg equals the full flow both ways
    for net in (build_u_layout(u_spec()), build_comb_layout(comb_spec())):
        z = 0.5 * net.nodes[:, 2].max()
        down = up = 0.0
        for k, s in enumerate(net.segments):
            a, b = net.nodes[s.start][2], net.nodes[s.end][2]
            if min(a, b) < z < max(a, b):
                if b > a:
                    down += s.flow_fraction
                else:
                    up += s.flow_fraction
        assert down == pytest.approx(1.0) and up == pytest.approx(1.0)
