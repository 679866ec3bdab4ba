import numpy as np
import pytest

from geoloop.mesh import build_graded_grid
from geoloop.postprocess import (PostprocessError, TimeSeries, average_power, breakdown_time,
                                 coefficient_of_performance, instantaneous_power, interpolate,
                                 line_profile_normalized, mean_surface_temperature,
                                 normalized_length, outlet_temperature)


def test_power_closed_form():
    assert instantaneous_power(30, 4183, 420, 303.15) == pytest.approx(14_663_506.5, abs=1e-6)


@pytest.mark.parametrize("th,zeta", [(420.0, 0.27821), (440.0, 0.31102)])
def test_cop_closed_form(th, zeta):
    assert coefficient_of_performance(303.15, th) == pytest.approx(zeta, abs=1e-5)


def test_cop_negative_kept_with_warning():
    with pytest.warns(RuntimeWarning):
        z = coefficient_of_performance(310.0, 305.0)
    assert z < 0
    with pytest.raises(PostprocessError):
        coefficient_of_performance(-1.0, 300.0)


def test_average_power_trapezoid():
    # (1 + 4) / 3 by hand
    assert average_power(([0.0, 1.0, 3.0], [0.0, 2.0, 2.0])) == pytest.approx(5 / 3)
    with pytest.raises(PostprocessError):
        average_power(([0.0], [1.0]))


def test_average_power_constant_equals_instantaneous():
    s = TimeSeries(30.0, 4183.0, 303.15, 303.15)
    for t in (0.0, 1e7, 3e7):
        s.append(t, 350.0)
    assert average_power(s) == pytest.approx(instantaneous_power(30, 4183, 350, 303.15))


def test_series_requires_increasing_time():
    s = TimeSeries(1.0, 1.0, 300.0, 300.0)
    s.append(0.0, 301.0)
    with pytest.raises(PostprocessError):
        s.append(0.0, 302.0)
    with pytest.raises(PostprocessError):
        s.append(1.0, float("nan"))


def test_breakdown_time():
    t = np.linspace(0, 100, 101)
    th = 300 + 10 * np.exp(-((t - 30) / 10) ** 2)
    assert breakdown_time(t, th, 100.0) == 30.0
    assert breakdown_time(t, 300 + t, 100.0) is None


def test_outlet_temperature_needs_node():
    assert outlet_temperature([1.0, 2.0], 1) == 2.0
    with pytest.raises(PostprocessError):
        outlet_temperature([1.0], None)


def surface_mesh():
    return build_graded_grid(1000.0, 800.0, 100.0, ([300.0, 550.0], [400.0], []), (9, 7, 2), 1.4)


def test_mst_of_linear_field_is_centre_value():
    mesh = surface_mesh()
    th = 300 + 0.01 * mesh.points[:, 0] - 0.02 * mesh.points[:, 1]
    c = (512.3, 377.7)
    assert mean_surface_temperature(th, mesh, 150.0, c) == pytest.approx(300 + 5.123 - 7.554, rel=1e-13)


def test_mst_matches_pixel_oracle():
    mesh = surface_mesh()
    rng = np.random.default_rng(4)
    th = 300 + rng.random(mesh.n_nodes) * 20
    c, a = (550.0, 400.0), 230.0
    m = 600
    u = (np.arange(m) + 0.5) / m * a - a / 2
    X, Y = np.meshgrid(c[0] + u, c[1] + u)
    pts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    brute = interpolate(th, mesh, pts).mean()
    assert mean_surface_temperature(th, mesh, a, c) == pytest.approx(brute, abs=2e-4)


def test_mst_region_errors():
    mesh = surface_mesh()
    th = np.full(mesh.n_nodes, 300.0)
    with pytest.raises(PostprocessError):
        mean_surface_temperature(th, mesh, 0.0, (500, 400))
    with pytest.raises(PostprocessError):
        mean_surface_temperature(th, mesh, 300.0, (100, 400))


def test_normalized_length_maps_legs_to_half():
    # legs at x = 1500 and 4500, spacing 3000, alpha = 0.5
    np.testing.assert_allclose(normalized_length([1500.0, 3000.0, 4500.0], 0.5, 3000.0), [-0.5, 0, 0.5])


def test_line_profile_samples_field():
    mesh = build_graded_grid(6000.0, 6000.0, 10000.0, ([1500.0, 4500.0], [3000.0], [5000.0]), (8, 8, 8))
    th = 300 + 0.03 * mesh.points[:, 2]
    prof = line_profile_normalized(th, mesh, 0.5, 0.5, 3000.0, 5000.0)
    assert len(prof) == mesh.nx
    assert all(v == pytest.approx(375.0) for _, v in prof)
    with pytest.raises(PostprocessError):
        line_profile_normalized(th, mesh, 1.5, 0.5, 3000.0, 5000.0)
