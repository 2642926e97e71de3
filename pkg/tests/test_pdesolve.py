import math

import numpy as np
import pytest

from pharmlab.geometry import euclidean, schwarzschild
from pharmlab.pdesolve import (
    ConvergenceError,
    GridField,
    energy_and_gradient,
    make_grid,
    regularized_capacity,
    solve_regularized,
)
from pharmlab.radial import capacity, solve_radial


def fd_gradient_mismatch(grid, values, p, eps, nodes, step=1e-5):
    _, grad = energy_and_gradient(grid, values, p, eps)
    worst = 0.0
    for n in nodes:
        up, dn = values.copy(), values.copy()
        up[n] += step
        dn[n] -= step
        fd = (energy_and_gradient(grid, up, p, eps)[0] - energy_and_gradient(grid, dn, p, eps)[0]) / (2 * step)
        worst = max(worst, abs(fd - grad[n]) / abs(grad[n]))
    return worst


@pytest.mark.parametrize("p, eps, msg", [(1.5, 0.0, "only allowed"), (2.5, 0.1, "p must"), (1.0, 0.1, "p must"),
                                         (2.0, -1.0, "nonnegative")])
def test_parameter_errors(p, eps, msg):
    grid = make_grid(euclidean(1.0), 4.0, (8, 8))
    with pytest.raises(ValueError, match=msg):
        energy_and_gradient(grid, np.zeros(grid.n_nodes), p, eps)


@pytest.mark.parametrize("kwargs, msg", [
    (dict(r_out=0.5, resolution=(8, 8)), "must exceed"),
    (dict(r_out=4.0, resolution=(2, 8)), "too small"),
    (dict(r_out=4.0, resolution=(8,)), "2 or 3 entries"),
    (dict(r_out=4.0, resolution=(8, 8), spacing="cubic"), "spacing"),
])
def test_grid_errors(kwargs, msg):
    with pytest.raises(ValueError, match=msg):
        make_grid(euclidean(1.0), **kwargs)


def test_boundary_node_sets_disjoint_and_nonempty():
    grid = make_grid(euclidean(1.0), 4.0, (9, 7))
    inner, outer = set(grid.inner_nodes.tolist()), set(grid.outer_nodes.tolist())
    assert inner and outer and not inner & outer
    assert len(grid.free_nodes) == grid.n_nodes - len(inner) - len(outer)
    assert np.all(grid.weights > 0)


@pytest.mark.parametrize("p, eps", [(2.0, 0.0), (2.0, 0.3), (1.5, 0.2), (1.2, 0.05)])
def test_constant_field_energy(p, eps):
    grid = make_grid(euclidean(1.0), 8.0, (12, 9))
    E, grad = energy_and_gradient(grid, np.full(grid.n_nodes, 0.4), p, eps)
    assert E == pytest.approx(eps**p * grid.volume / p, rel=1e-12, abs=1e-300)
    assert np.max(np.abs(grad)) < 1e-14


def test_grid_volume_matches_shell_volume():
    grid = make_grid(euclidean(1.0), 8.0, (64, 33))
    exact = 4 * math.pi / 3 * (8**3 - 1)
    assert grid.volume == pytest.approx(exact, rel=2e-3)


@pytest.mark.parametrize("p", [1.5, 2.0])
@pytest.mark.parametrize("dim", [2, 3])
def test_gradient_matches_finite_differences(p, dim):
    res = (16, 12) if dim == 2 else (8, 7, 8)
    grid = make_grid(schwarzschild(1.0, r_min=2.5), 12.0, res)
    rng = np.random.default_rng(7)
    v = 1.0 - 2.5 / np.repeat(grid.r, grid.n_nodes // len(grid.r))
    v = v + 0.01 * rng.standard_normal(grid.n_nodes)
    nodes = rng.choice(grid.free_nodes, size=20, replace=False)
    assert fd_gradient_mismatch(grid, v, p, 1e-2, nodes) < 1e-6


def test_harmonic_restriction_gradient_vanishes_with_refinement():
    norms = []
    for n in (16, 32, 64):
        grid = make_grid(euclidean(1.0), 8.0, (n, n), spacing="uniform")
        v = 1.0 - 1.0 / np.repeat(grid.r, grid.n_nodes // len(grid.r))
        _, grad = energy_and_gradient(grid, v, 2.0, 0.0)
        # nodal gradient entries scale like the cell volume h^3, so normalise by it
        norms.append(np.max(np.abs(grad)) / (grid.volume / grid.n_nodes))
    assert norms[2] < norms[1] < norms[0]


def test_equal_boundary_data_gives_constant_field():
    grid = make_grid(euclidean(1.0), 4.0, (10, 8))
    field = solve_regularized(grid, 1.5, 1e-2, (0.3, 0.3))
    assert np.all(field.values == 0.3)
    assert regularized_capacity(field) == pytest.approx(0.0, abs=1e-12)


def test_log_spacing_loses_order_at_horizon():
    # u ~ sqrt(r - 2m) is not smooth in r, only in sqrt(r - 2m)
    errors = []
    for n in (17, 33):
        grid = make_grid(schwarzschild(1.0), 32.0, (n, n))
        field = solve_regularized(grid, 2.0, 0.0, (0.0, math.sqrt(1 - 2 / 32)))
        errors.append(np.max(np.abs(field.nodal() - np.sqrt(1 - 2 / grid.r)[:, None])))
    assert math.log2(errors[0] / errors[1]) < 1.0


def test_sqrt_spacing_stretch_finite_at_horizon():
    grid = make_grid(schwarzschild(1.0), 32.0, (9, 9), spacing="sqrt")
    r, A, dA = grid.stretch(grid.xi)
    assert grid.r[0] == 2.0 and np.all(np.isfinite(A)) and np.all(np.isfinite(dA))
    np.testing.assert_allclose(A[1:], grid.metric.phi(r[1:]) * grid.dr_dxi[1:], rtol=1e-12)
    assert A[0] == pytest.approx(2 * math.sqrt(2.0), rel=1e-15)


def test_p2_schwarzschild_second_order():
    pot = solve_radial(schwarzschild(1.0), 2.0)
    errors = []
    for n in (17, 33, 65):
        grid = make_grid(schwarzschild(1.0), 32.0, (n, n), spacing="sqrt")
        field = solve_regularized(grid, 2.0, 0.0, (0.0, math.sqrt(1 - 2 / 32)))
        exact = np.sqrt(1 - 2 / grid.r)
        errors.append(np.max(np.abs(field.nodal() - exact[:, None])))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders > 1.8)
    assert errors[-1] < 1e-3
    assert pot.u(32.0) == pytest.approx(math.sqrt(1 - 2 / 32), rel=1e-13)


def test_p15_solution_close_to_radial():
    grid = make_grid(euclidean(1.0), 16.0, (65, 33))
    field = solve_regularized(grid, 1.5, 1e-3, (0.0, 1 - 16.0**-3))
    exact = 1 - grid.r**-3.0
    err = np.max(np.abs(field.nodal() - exact[:, None]))
    assert err < 5e-3
    assert field.converged and field.residual < 1e-9
    assert field.eps_path[-1] == 1e-3


def test_maximum_principle_and_energy_decrease():
    grid = make_grid(euclidean(1.0), 8.0, (33, 17))
    field = solve_regularized(grid, 1.5, 1e-2, (0.0, 1.0))
    assert field.values.min() >= -1e-9 and field.values.max() <= 1 + 1e-9
    hist = np.array(field.energy_history)
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[1:]))
    V = field.nodal()
    assert np.all(V[0] == 0.0) and np.all(V[-1] == 1.0)


def test_capacity_finite_annulus():
    grid = make_grid(euclidean(1.0), 16.0, (128, 128))
    field = solve_regularized(grid, 2.0, 0.0, (0.0, 1.0))
    exact = 4 * math.pi / (1 - 1 / 16)
    assert regularized_capacity(field) == pytest.approx(exact, rel=0.02)
    # flux through interior level sets agrees with the boundary value
    for s in (0.2, 0.35, 0.5, 0.65, 0.8):
        assert regularized_capacity(field, level=s) == pytest.approx(exact, rel=0.03)


def test_capacity_eps_sweep_decreases_to_limit():
    grid = make_grid(euclidean(1.0), 16.0, (64, 64))
    cp = capacity(euclidean(1.0), 1.5)
    bc = (0.0, 1 - 16.0**-3)
    errs, prev = [], None
    for eps in (1e-1, 1e-2, 1e-3):
        field = solve_regularized(grid, 1.5, eps, bc, initial=prev)
        prev = field.values
        errs.append(abs(regularized_capacity(field) - cp))
    assert errs[0] > errs[1] > errs[2]


def test_non_convergence_is_reported():
    grid = make_grid(euclidean(1.0), 16.0, (33, 17))
    with pytest.raises(ConvergenceError) as info:
        solve_regularized(grid, 1.3, 1e-6, (0.0, 1.0), max_iters=1, continuation=False)
    assert info.value.residual > 0
    assert "did not converge" in str(info.value)


def test_three_dimensional_mode_matches_radial():
    grid = make_grid(euclidean(1.0), 4.0, (17, 9, 8))
    field = solve_regularized(grid, 2.0, 0.0, (0.0, 0.75))
    exact = 1 - 1 / grid.r
    assert np.max(np.abs(field.nodal() - exact[:, None, None])) < 2e-3
    assert regularized_capacity(field) == pytest.approx(4 * math.pi, rel=0.05)


def test_serialization_round_trip():
    grid = make_grid(schwarzschild(1.0, r_min=2.5), 10.0, (12, 9), spacing="uniform")
    field = solve_regularized(grid, 2.0, 0.0, (0.0, 1.0))
    back = GridField.from_dict(field.to_dict())
    assert back.grid.shape == grid.shape and back.grid.spacing == "uniform"
    np.testing.assert_array_equal(back.values, field.values)
    np.testing.assert_allclose(back.grid.weights, grid.weights, rtol=0, atol=0)
