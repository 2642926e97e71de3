import math

import pytest

from pharmlab.geometry import euclidean, schwarzschild
from pharmlab.levelsurf import (
    CSV_COLUMNS,
    LevelExtractionError,
    evolution_check,
    extract_level,
    extract_level_value,
    grid_surface_integral,
)
from pharmlab.pdesolve import make_grid, solve_regularized
from pharmlab.radial import level_radius, solve_radial


@pytest.fixture(scope="module")
def euclid_field():
    grid = make_grid(euclidean(1.0), 16.0, (128, 128))
    return solve_regularized(grid, 2.0, 0.0, (0.0, 1.0 - 1.0 / 16.0))


@pytest.fixture(scope="module")
def schw_field():
    grid = make_grid(schwarzschild(1.0), 32.0, (128, 128), spacing="sqrt")
    return solve_regularized(grid, 2.0, 0.0, (0.0, math.sqrt(1.0 - 2.0 / 32.0)))


@pytest.mark.parametrize("p", [1.5, 2.0])
@pytest.mark.parametrize("t", [3.0, 10.0, 50.0])
def test_radial_level_closed_forms_schwarzschild(p, t):
    pot = solve_radial(schwarzschild(1.0), p)
    lv = extract_level(pot, t)
    r = level_radius(pot, t)
    H = 2.0 / r * math.sqrt(1.0 - 2.0 / r)
    assert lv.area == pytest.approx(4 * math.pi * r * r, rel=1e-14)
    assert lv.int_H2 == pytest.approx(H * H * lv.area, rel=1e-12)
    assert lv.int_K == 4 * math.pi
    assert lv.int_gradp1 == pytest.approx(pot.C_p, rel=1e-12)
    assert lv.regular and lv.min_grad > 0


def test_radial_level_row_layout():
    lv = extract_level(solve_radial(euclidean(1.0), 2.0), 2.0)
    row = lv.as_row()
    assert len(row) == len(CSV_COLUMNS)
    assert row[CSV_COLUMNS.index("t")] == 2.0 and row[CSV_COLUMNS.index("area")] == lv.area


def test_radial_level_below_boundary_rejected():
    pot = solve_radial(euclidean(1.0), 2.0)
    with pytest.raises(LevelExtractionError, match="outside"):
        extract_level(pot, 0.5 * pot.boundary_level)


def test_grid_level_outside_range(euclid_field):
    with pytest.raises(LevelExtractionError, match="outside the grid range"):
        extract_level_value(euclid_field, 0.99)


@pytest.mark.parametrize("t", [2.0, 4.0])
def test_grid_level_matches_radial(euclid_field, schw_field, t):
    for field in (euclid_field, schw_field):
        exact = extract_level(solve_radial(field.grid.metric, 2.0), t)
        lv = extract_level(field, t)
        assert lv.regular
        for name in ("area", "int_H2", "int_gradH"):
            assert getattr(lv, name) == pytest.approx(getattr(exact, name), rel=2e-3)
        assert lv.int_grad2 == pytest.approx(exact.int_grad2, rel=5e-3)


def test_grid_flux_integral_is_capacity(euclid_field):
    # boundary data 1 - 1/r restricted to the annulus: unit flux constant
    exact = 4 * math.pi
    for s in (0.3, 0.6):
        assert grid_surface_integral(euclid_field, s, lambda g: g) == pytest.approx(exact, rel=0.01)


@pytest.mark.parametrize("n, tol", [(64, 1e-4), (128, 5e-6)])
def test_gauss_bonnet_axisymmetric(n, tol):
    grid = make_grid(euclidean(1.0), 16.0, (n, n))
    field = solve_regularized(grid, 2.0, 0.0, (0.0, 1.0 - 1.0 / 16.0))
    for s in (0.4, 0.7):
        assert extract_level_value(field, s).int_K == pytest.approx(4 * math.pi, rel=tol)


def test_three_dimensional_surface_closes_and_converges():
    errs = []
    for n in (9, 17):
        grid = make_grid(euclidean(1.0), 4.0, (17, n, n - 1))
        field = solve_regularized(grid, 2.0, 0.0, (0.0, 0.75))
        lv = extract_level_value(field, 0.45)
        # closed triangulated sphere: angle deficits sum to 4 pi exactly
        assert lv.int_K == pytest.approx(4 * math.pi, rel=1e-12)
        errs.append(abs(lv.area / (4 * math.pi / 0.55**2) - 1))
    # angular refinement dominates the area error; it drops fourfold per halving
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_three_dimensional_needs_even_phi_count():
    grid = make_grid(euclidean(1.0), 4.0, (9, 9, 7))
    field = solve_regularized(grid, 2.0, 0.0, (0.0, 0.75))
    with pytest.raises(LevelExtractionError, match="even"):
        extract_level_value(field, 0.45)


@pytest.mark.parametrize("p", [1.5, 2.0])
def test_evolution_second_order_schwarzschild(p):
    pot = solve_radial(schwarzschild(1.0), p)
    res = [evolution_check(pot, 0.4, h) for h in (2e-4, 1e-4)]
    for key in ("residual1", "residual2"):
        assert res[1][key] < 1e-5
        assert math.log2(res[0][key] / res[1][key]) == pytest.approx(2.0, abs=0.1)
    assert abs(res[1]["gap2_exact"]) < 1e-12


def test_evolution_exact_on_euclidean():
    # the integrals are polynomial in tau, so only round-off remains
    out = evolution_check(solve_radial(euclidean(1.0), 1.5), 0.5, 1e-4)
    assert out["residual1"] < 1e-9 and out["residual2"] < 1e-9


@pytest.mark.parametrize("tau, h, msg", [(0.999, 0.01, "lie in"), (0.5, -1e-3, "lie in"), (0.5, 0.45, "too large")])
def test_evolution_argument_errors(tau, h, msg):
    with pytest.raises(ValueError, match=msg):
        evolution_check(solve_radial(schwarzschild(1.0), 1.5), tau, h)
