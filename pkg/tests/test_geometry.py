import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pharmlab.geometry import (
    adm_mass_estimate,
    euclidean,
    hawking_mass,
    make_radial_metric,
    profile,
    scalar_curvature,
    schwarzschild,
    sphere_geometry,
)


def test_euclidean_metric_is_flat():
    g = make_radial_metric("euclidean", r_min=1.0)
    assert g.adm_mass == 0.0
    np.testing.assert_array_equal(g.phi(np.linspace(1, 50, 7)), 1.0)


def test_schwarzschild_profile_value():
    g = make_radial_metric("schwarzschild", r_min=2.0, mass=1.0)
    assert g.phi(4.0) == pytest.approx(math.sqrt(2.0), rel=1e-15)
    assert g.adm_mass == 1.0


def test_profile_interpolates_and_uses_power_tail():
    g = make_radial_metric("profile", table=[(1.0, 1.2), (10.0, 1.01)], sigma=1.0)
    assert g.phi(1.0) == pytest.approx(1.2)
    assert g.phi(10.0) == pytest.approx(1.01)
    assert g.phi(100.0) == pytest.approx(1.001, rel=1e-14)
    assert g.adm_mass is None


@pytest.mark.parametrize("r", [1.0, 1.7, 3.3, 9.99, 10.0, 40.0])
def test_scalar_fast_path_matches_vector_phi(r):
    g = profile([(1.0, 1.3), (2.0, 1.15), (4.0, 1.05), (10.0, 1.01)], sigma=1.5)
    assert g.phi_at(r) == pytest.approx(g.phi(r), rel=1e-14)


@pytest.mark.parametrize(
    "kind, params, message",
    [
        ("euclidean", {"r_min": 0.0}, "positive"),
        ("euclidean", {"r_min": -1.0}, "positive"),
        ("schwarzschild", {"r_min": 1.5, "mass": 1.0}, "horizon"),
        ("profile", {"table": [(1.0, 1.1), (0.5, 1.0)]}, "increasing"),
        ("profile", {"table": [(1.0, 1.1)]}, "at least 2"),
        ("banana", {"r_min": 1.0}, "unknown"),
    ],
)
def test_invalid_metrics_rejected(kind, params, message):
    with pytest.raises(ValueError, match=message):
        make_radial_metric(kind, **params)


def test_evaluation_below_r_min_rejected():
    with pytest.raises(ValueError):
        scalar_curvature(euclidean(2.0), 1.0)
    with pytest.raises(ValueError):
        sphere_geometry(schwarzschild(1.0, 3.0), 2.5)


def test_scalar_curvature_flat_and_schwarzschild():
    assert scalar_curvature(euclidean(1.0), 3.0) == 0.0
    assert abs(scalar_curvature(schwarzschild(1.0), 3.0)) < 1e-15
    r = np.geomspace(2.001, 1e4, 100)
    assert np.max(np.abs(scalar_curvature(schwarzschild(1.0), r))) < 1e-10


def test_scalar_curvature_profile_against_finite_difference():
    # phi = (1 + 1/r)^2 tabulated densely; oracle uses an independent phi' stencil
    rr = np.linspace(1.0, 6.0, 4001)
    g = profile(np.column_stack([rr, (1 + 1 / rr) ** 2]), sigma=1.0)
    r, h = 2.0, 1e-4
    ph = (1 + 1 / r) ** 2
    dph_fd = ((1 + 1 / (r + h)) ** 2 - (1 + 1 / (r - h)) ** 2) / (2 * h)
    oracle = 2 / r**2 * (1 - ph**-2) + 4 * dph_fd / (r * ph**3)
    assert scalar_curvature(g, r) == pytest.approx(oracle, rel=1e-6)


def test_sphere_geometry_values():
    sd = sphere_geometry(euclidean(1.0), 1.0)
    assert (sd.area, sd.H, sd.K) == pytest.approx((4 * math.pi, 2.0, 1.0))
    assert sphere_geometry(schwarzschild(1.0), 2.0).H == 0.0
    h8 = sphere_geometry(schwarzschild(1.0), 8.0).H
    assert h8 == pytest.approx(0.25 * math.sqrt(0.75), rel=1e-15)


def test_mean_curvature_matches_area_variation():
    # d(area)/d(normal distance) = H * area, normal distance = int phi dr
    g = schwarzschild(1.0)
    r, h = 8.0, 1e-5
    darea = (4 * math.pi * ((r + h) ** 2 - (r - h) ** 2)) / (2 * h)
    assert darea / g.phi(r) == pytest.approx(sphere_geometry(g, r).H * 4 * math.pi * r * r, rel=1e-9)


@given(st.floats(1.0, 1e5), st.sampled_from(["euclidean", "schwarzschild", "profile"]))
@settings(max_examples=60, deadline=None)
def test_area_is_exact(r, kind):
    g = {"euclidean": euclidean(1.0), "schwarzschild": schwarzschild(0.5),
         "profile": profile([(1.0, 1.2), (3.0, 1.05)])}[kind]
    assert sphere_geometry(g, r).area == 4 * math.pi * r * r


def test_adm_mass_estimate_examples():
    assert adm_mass_estimate(euclidean(1.0), 100.0) == pytest.approx(0.0, abs=1e-12)
    assert adm_mass_estimate(schwarzschild(1.0), 100.0) == pytest.approx(100 * (1 - math.sqrt(0.98)), rel=1e-12)
    assert abs(adm_mass_estimate(schwarzschild(1.0), 1e4) - 1) < 1e-4
    with pytest.raises(ValueError):
        adm_mass_estimate(euclidean(1.0), 5.0)


@pytest.mark.parametrize("m", [0.5, 1.0, 2.0])
def test_adm_mass_error_decays_like_inverse_radius(m):
    for r in np.geomspace(1e2, 1e5, 13):
        r = max(r, 10 * 2 * m)
        err = abs(adm_mass_estimate(schwarzschild(m), r) - m)
        assert err * r <= 2 * m * m + 1e-6


@pytest.mark.parametrize("m", [0.5, 1.0, 3.0])
def test_hawking_mass_of_schwarzschild_spheres(m):
    g = schwarzschild(m)
    for r in np.geomspace(2 * m, 1e4, 25):
        sd = sphere_geometry(g, r)
        assert hawking_mass(sd.area, sd.H**2 * sd.area) == pytest.approx(m, abs=1e-10)


def test_round_trip_dict():
    for g in [euclidean(1.5), schwarzschild(2.0, 5.0), profile([(1.0, 1.2), (3.0, 1.05)], sigma=0.8)]:
        back = type(g).from_dict(g.to_dict())
        assert back == g
        assert back.phi(7.0) == pytest.approx(g.phi(7.0))
