"""Level surfaces of potentials and the surface integrals built on them.

Radial potentials have coordinate spheres as level sets, so every integral
is closed form.  Grid fields are contoured: the axisymmetric section by
marching squares (then revolved about the axis with the metric length and
circumference), the 3-D mode by marching cubes.  Field derivatives come from
centered differences on the nodes; the mean curvature of a level set is
``H = (Delta v - v_nu_nu) / |grad v|``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np
from scipy.ndimage import map_coordinates
from skimage import measure

from .geometry import RadialMetric, scalar_curvature
from .pdesolve import GridField
from .radial import RadialPotential, level_parameter, level_radius, level_value, solve_radial

__all__ = [
    "LevelSurfaceData",
    "LevelExtractionError",
    "REGULARITY_THRESHOLD",
    "extract_level",
    "extract_level_value",
    "grid_surface_integral",
    "evolution_check",
    "CSV_COLUMNS",
]

REGULARITY_THRESHOLD = 1e-6
CSV_COLUMNS = ("t", "s", "area", "int_gradp1", "int_grad2", "int_gradH", "int_H2", "int_K", "min_grad", "regular")


class LevelExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class LevelSurfaceData:
    t: float
    s: float
    area: float
    int_gradp1: float
    int_grad2: float
    int_gradH: float
    int_H2: float
    int_K: float
    regular: bool
    min_grad: float

    def as_row(self) -> list:
        d = asdict(self)
        return [d[c] for c in CSV_COLUMNS]


def _radial_level(pot: RadialPotential, t: float) -> LevelSurfaceData:
    s = level_value(pot, t)
    if not (0.0 <= s < 1.0) and not math.isclose(s, 0.0, abs_tol=1e-12):
        raise LevelExtractionError(f"potential value f(t)={s} outside [0, 1)")
    r = level_radius(pot, t)
    phi = float(pot.metric.phi(r))
    H = 0.0 if math.isinf(phi) else 2.0 / (r * phi)
    area = 4.0 * math.pi * r * r
    G = pot.grad(r)
    # |grad u|^(p-1) area = C_p by the flux law; written out to avoid G^(p-1) round-off
    gradp1 = 4.0 * math.pi * pot.flux_constant ** (pot.p - 1.0)
    return LevelSurfaceData(t=t, s=s, area=area, int_gradp1=gradp1, int_grad2=G * G * area,
                            int_gradH=G * H * area, int_H2=H * H * area, int_K=4.0 * math.pi,
                            regular=G > 0.0, min_grad=G)


@lru_cache(maxsize=64)
def _reference_potential(metric: RadialMetric, p: float) -> RadialPotential:
    return solve_radial(metric, p)


def extract_level(source: Union[RadialPotential, GridField], t: float,
                  reference: Optional[RadialPotential] = None) -> LevelSurfaceData:
    """Level-surface integrals of ``{u = f(t)}`` with ``f(t) = 1 - c t^(-a)``.

    For grid fields ``c`` and ``a`` come from ``reference`` (default: the radial
    potential of the grid metric at the field's ``p``).
    """
    if isinstance(source, RadialPotential):
        return _radial_level(source, t)
    ref = reference or _reference_potential(source.grid.metric, source.p)
    s = level_value(ref, t)
    return extract_level_value(source, s, t=t)


def extract_level_value(field: GridField, s: float, t: float = float("nan")) -> LevelSurfaceData:
    """Level-surface integrals of ``{v = s}`` for a grid field."""
    surf = _grid_surface(field, s)
    p = field.p
    g, H, K = surf["grad"], surf["H"], surf["int_K"]
    integrate = surf["integrate"]
    med = float(np.median(g))
    min_grad = float(np.min(g))
    return LevelSurfaceData(
        t=t, s=s,
        area=integrate(np.ones_like(g)),
        int_gradp1=integrate(g ** (p - 1.0)),
        int_grad2=integrate(g * g),
        int_gradH=integrate(g * H),
        int_H2=integrate(H * H),
        int_K=K,
        regular=bool(min_grad > REGULARITY_THRESHOLD * med),
        min_grad=min_grad,
    )


def grid_surface_integral(field: GridField, s: float, integrand: Callable[[np.ndarray], np.ndarray]) -> float:
    """``int_{v = s} integrand(|grad v|) dA`` for a grid field."""
    surf = _grid_surface(field, s)
    return surf["integrate"](integrand(surf["grad"]))


# --- grid derivative fields -------------------------------------------------

def _metric_factors(grid):
    """``r``, ``J = dr/dxi``, ``A = phi J`` and ``dA/dxi`` at the radial nodes."""
    r, A, dA = grid.stretch(grid.xi)
    return r, grid.dr_dxi, A, dA


def _pad_theta_2d(V):
    """Reflect across the poles: ``v(-theta) = v(theta)`` on an axisymmetric field."""
    return np.concatenate([V[:, 1:2], V, V[:, -2:-1]], axis=1)


def _derivative_fields_2d(grid, V):
    dxi = grid.xi[1] - grid.xi[0]
    dth = grid.theta[1] - grid.theta[0]
    r, J, A, dA = (x[:, None] for x in _metric_factors(grid))
    theta = grid.theta[None, :]
    v_x = np.gradient(V, dxi, axis=0, edge_order=2)
    v_xx = np.gradient(v_x, dxi, axis=0, edge_order=2)
    P = _pad_theta_2d(V)
    v_t = (P[:, 2:] - P[:, :-2]) / (2.0 * dth)
    v_tt = (P[:, 2:] - 2.0 * P[:, 1:-1] + P[:, :-2]) / dth**2
    v_xt = np.gradient(v_t, dxi, axis=0, edge_order=2)

    grad2 = (v_x / A) ** 2 + (v_t / r) ** 2
    grad = np.sqrt(grad2)
    # Delta v = (1/(A r^2)) d_xi(r^2 v_xi / A) + (v_tt + cot v_t) / r^2
    d_q = 2.0 * r * J / A - r * r * dA / A**2
    sin_t = np.sin(theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        angular = np.where(sin_t > 1e-12, v_tt + np.cos(theta) / sin_t * v_t, 2.0 * v_tt)
    lap = (r * r * v_xx / A + d_q * v_x) / (A * r * r) + angular / (r * r)
    # covariant Hessian of the meridian metric diag(A^2, r^2)
    h_xx = v_xx - dA / A * v_x
    h_tt = v_tt + r * J / A**2 * v_x
    h_xt = v_xt - J / r * v_t
    up_x, up_t = v_x / A**2, v_t / r**2
    with np.errstate(divide="ignore", invalid="ignore"):
        v_nn = (h_xx * up_x**2 + 2.0 * h_xt * up_x * up_t + h_tt * up_t**2) / grad2
        H = (lap - v_nn) / grad
    return grad, lap, v_nn, H


def _grid_surface(field: GridField, s: float) -> dict:
    grid = field.grid
    V = field.nodal()
    lo, hi = float(V.min()), float(V.max())
    if not (lo < s < hi):
        raise LevelExtractionError(f"level value {s} lies outside the grid range ({lo}, {hi})")
    if grid.dim == 2:
        return _surface_2d(grid, V, s)
    return _surface_3d(grid, V, s)


def _surface_2d(grid, V, s):
    contours = measure.find_contours(V, s)
    if not contours:
        raise LevelExtractionError(f"no contour found at level {s}")
    n_t = grid.shape[1]
    spanning = [c for c in contours if min(c[0, 1], c[-1, 1]) < 1e-9 and max(c[0, 1], c[-1, 1]) > n_t - 1 - 1e-9]
    if len(contours) != 1 or len(spanning) != 1:
        raise LevelExtractionError(
            f"level {s} gives {len(contours)} contour pieces ({len(spanning)} pole-to-pole); expected one")
    c = spanning[0]
    if c[0, 1] > c[-1, 1]:
        c = c[::-1]
    grad, lap, v_nn, H = _derivative_fields_2d(grid, V)
    coords = c.T

    def sample(F):
        return map_coordinates(F, coords, order=1, mode="nearest")

    dxi = grid.xi[1] - grid.xi[0]
    dth = grid.theta[1] - grid.theta[0]
    xi = grid.xi[0] + c[:, 0] * dxi
    th = c[:, 1] * dth
    r, A, _ = grid.stretch(xi)
    R = r * np.sin(th)
    R[0], R[-1] = 0.0, 0.0
    # metric length of each polyline segment (coefficients at the segment midpoint)
    A_mid = 0.5 * (A[1:] + A[:-1])
    r_mid = 0.5 * (r[1:] + r[:-1])
    dl = np.sqrt((A_mid * np.diff(xi)) ** 2 + (r_mid * np.diff(th)) ** 2)
    ell = np.concatenate([[0.0], np.cumsum(dl)])

    def integrate(f):
        fR = 2.0 * math.pi * np.asarray(f) * R
        return float(np.sum(0.5 * (fR[1:] + fR[:-1]) * dl))

    # int K dA = 2 pi (R'(start) - R'(end)) for a surface of revolution
    int_K = 2.0 * math.pi * (_end_slope(ell, R) - (-_end_slope(ell[-1] - ell[::-1], R[::-1])))
    fields = {"grad": sample(grad), "lap": sample(lap), "v_nn": sample(v_nn), "H": sample(H)}
    return {"integrate": integrate, "int_K": int_K, **fields}


def _end_slope(ell, R, npts: int = 5) -> float:
    """``dR/d ell`` at ``ell = 0`` from a cubic through the origin fitted to the first points."""
    x, y = ell[1:npts + 1], R[1:npts + 1]
    M = np.column_stack([x, x**2, x**3])
    coef, *_ = np.linalg.lstsq(M, y, rcond=None)
    return float(coef[0])


# --- 3-D mode ---------------------------------------------------------------

def _pad_3d(V):
    """Ghost layers: theta reflected through the pole (phi shifted by pi), phi periodic."""
    n_p = V.shape[2]
    half = n_p // 2
    north = np.roll(V[:, 1:2, :], half, axis=2)
    south = np.roll(V[:, -2:-1, :], half, axis=2)
    P = np.concatenate([north, V, south], axis=1)
    return np.concatenate([P[:, :, -1:], P, P[:, :, :1]], axis=2)


def _derivative_fields_3d(grid, V):
    if grid.shape[2] % 2:
        raise LevelExtractionError("3-D extraction needs an even number of phi nodes")
    dxi = grid.xi[1] - grid.xi[0]
    dth = grid.theta[1] - grid.theta[0]
    dph = 2.0 * math.pi / grid.shape[2]
    r, J, A, dA = (x[:, None, None] for x in _metric_factors(grid))
    theta = grid.theta[None, :, None]
    sin_t = np.sin(theta)
    pole = np.broadcast_to(sin_t < 1e-12, V.shape)

    def derivs(F):
        P = _pad_3d(F)
        c = P[:, 1:-1, 1:-1]
        f_x = np.gradient(F, dxi, axis=0, edge_order=2)
        f_t = (P[:, 2:, 1:-1] - P[:, :-2, 1:-1]) / (2.0 * dth)
        f_p = (P[:, 1:-1, 2:] - P[:, 1:-1, :-2]) / (2.0 * dph)
        f_tt = (P[:, 2:, 1:-1] - 2.0 * c + P[:, :-2, 1:-1]) / dth**2
        f_pp = (P[:, 1:-1, 2:] - 2.0 * c + P[:, 1:-1, :-2]) / dph**2
        return f_x, f_t, f_p, f_tt, f_pp

    v_x, v_t, v_p, v_tt, v_pp = derivs(V)
    v_xx = np.gradient(v_x, dxi, axis=0, edge_order=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ang_grad2 = np.where(pole, 0.0, (v_t / r) ** 2 + (v_p / (r * sin_t)) ** 2)
        # at a pole the tangential gradient is the theta derivative along the meridian through it
        pole_t = np.where(pole, (v_t / r) ** 2, 0.0)
        ang_grad2 = ang_grad2 + pole_t
        angular = np.where(pole, 0.0, v_tt + np.cos(theta) / sin_t * v_t + v_pp / sin_t**2)
    if np.any(pole):
        # surface Laplacian at the pole: mean second derivative over meridians, doubled
        mean_tt = np.broadcast_to(v_tt.mean(axis=2, keepdims=True), V.shape)
        angular = np.where(pole, 2.0 * mean_tt, angular)
    grad2 = (v_x / A) ** 2 + ang_grad2
    grad = np.sqrt(grad2)
    d_q = 2.0 * r * J / A - r * r * dA / A**2
    lap = (r * r * v_xx / A + d_q * v_x) / (A * r * r) + angular / (r * r)
    # v_nu_nu = <grad |grad v|, grad v> / |grad v|
    g_x, g_t, g_p, _, _ = derivs(grad)
    with np.errstate(divide="ignore", invalid="ignore"):
        dot = g_x * v_x / A**2 + g_t * v_t / r**2 + np.where(pole, 0.0, g_p * v_p / (r * sin_t) ** 2)
        v_nn = dot / grad
        H = (lap - v_nn) / grad
    return grad, lap, v_nn, H


def _surface_3d(grid, V, s):
    n_r, n_t, n_p = grid.shape
    Vw = np.concatenate([V, V[:, :, :1]], axis=2)  # close the phi seam
    try:
        verts, faces, _, _ = measure.marching_cubes(Vw, level=s)
    except (ValueError, RuntimeError) as exc:
        raise LevelExtractionError(f"marching cubes failed at level {s}: {exc}") from exc
    dxi = grid.xi[1] - grid.xi[0]
    dth = grid.theta[1] - grid.theta[0]
    dph = 2.0 * math.pi / n_p
    # marching cubes works in float32; snap angular indices onto grid lines so seam and pole vertices coincide
    verts = verts.astype(float)
    ang = verts[:, 1:]
    near = np.abs(ang - np.round(ang)) < 1e-4
    ang[near] = np.round(ang[near])
    verts[:, 2] = np.mod(verts[:, 2], n_p)
    xi = grid.xi[0] + verts[:, 0] * dxi
    th = verts[:, 1] * dth
    ph = verts[:, 2] * dph
    r = grid.stretch(xi)[0]
    X = np.column_stack([r * np.sin(th) * np.cos(ph), r * np.sin(th) * np.sin(ph), r * np.cos(th)])
    # merge vertices that coincide physically (phi seam, poles) so the mesh closes up
    key = np.round(X / (1e-9 * grid.r_out)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    faces = inverse[faces]
    faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])]
    X = X[first]
    vcoords = verts[first].T.copy()

    grad, lap, v_nn, H = _derivative_fields_3d(grid, V)

    def sample(F):
        Fw = np.concatenate([F, F[:, :, :1]], axis=2)
        return map_coordinates(Fw, vcoords, order=1, mode="nearest")

    # metric g = delta + (phi^2 - 1) xhat xhat^T in the Cartesian embedding
    rv = np.linalg.norm(X, axis=1)
    phi_v = grid.metric.phi(rv)
    xhat = X / rv[:, None]
    tri = X[faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    e3 = tri[:, 2] - tri[:, 1]
    cen_hat = xhat[faces].mean(axis=1)
    cen_hat /= np.linalg.norm(cen_hat, axis=1, keepdims=True)
    stretch = (phi_v[faces].mean(axis=1) ** 2 - 1.0)

    def ip(u, w):
        return np.einsum("ij,ij->i", u, w) + stretch * np.einsum("ij,ij->i", u, cen_hat) * np.einsum("ij,ij->i", w, cen_hat)

    l1, l2, l3 = np.sqrt(ip(e1, e1)), np.sqrt(ip(e2, e2)), np.sqrt(ip(e3, e3))
    tri_area = 0.5 * np.sqrt(np.maximum(ip(e1, e1) * ip(e2, e2) - ip(e1, e2) ** 2, 0.0))

    # angle defect from metric edge lengths (law of cosines)
    def angle(opp, s1, s2):
        return np.arccos(np.clip((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2), -1.0, 1.0))

    ang = np.column_stack([angle(l3, l1, l2), angle(l2, l1, l3), angle(l1, l2, l3)])
    angle_sum = np.bincount(faces.ravel(), ang.ravel(), minlength=len(X))
    used = np.unique(faces)
    int_K = float(np.sum(2.0 * math.pi - angle_sum[used]))

    fields = {"grad": sample(grad), "lap": sample(lap), "v_nn": sample(v_nn), "H": sample(H)}

    def integrate(f):
        f = np.asarray(f)
        return float(np.sum(tri_area * f[faces].mean(axis=1)))

    return {"integrate": integrate, "int_K": int_K, **fields}


# --- evolution identities ---------------------------------------------------

def evolution_check(pot: RadialPotential, tau: float, h: float) -> dict:
    """Finite-difference check of the first-variation formulas along ``{u = tau}``.

    ``residual1 = |d/dtau int |grad u|^2 - int (2 Delta u - |grad u| H)|`` and
    ``gap2 = int (K - 3/4 H^2 + H Delta u / |grad u|) - d/dtau int |grad u| H``,
    with ``d/dtau`` by central differences of step ``h`` and
    ``Delta u = ((2-p)/(1-p)) |grad u| H``.  ``gap2`` must be nonnegative; on
    round level sets it equals ``(1/2) int S`` (no traceless second
    fundamental form, no tangential gradient), reported as ``gap2_exact``.
    """
    if not (0.0 <= tau - h and tau + h < 1.0 and h > 0):
        raise ValueError(f"tau +- h must lie in [0, 1) with h > 0: tau={tau}, h={h}")
    p = pot.p

    def level(x):
        r = level_radius(pot, level_parameter(pot, x)) if x > 0 else pot.metric.r_min
        phi = float(pot.metric.phi(r))
        return r, pot.grad(r), 2.0 / (r * phi)

    def integrals(x):
        r, G, H = level(x)
        area = 4.0 * math.pi * r * r
        return G * G * area, G * H * area

    up, dn = integrals(tau + h), integrals(tau - h)
    d_grad2 = (up[0] - dn[0]) / (2.0 * h)
    d_gradH = (up[1] - dn[1]) / (2.0 * h)
    r, G, H = level(tau)
    area = 4.0 * math.pi * r * r
    lap = (2.0 - p) / (1.0 - p) * G * H
    rhs1 = (2.0 * lap - G * H) * area
    rhs2 = (1.0 / (r * r) - 0.75 * H * H + H * lap / G) * area
    gap2_exact = 0.5 * float(scalar_curvature(pot.metric, r)) * area
    residual1 = abs(d_grad2 - rhs1)
    scale = abs(rhs1) + abs(d_grad2)
    if residual1 > 1e-3 * scale:
        raise ValueError(f"step h={h} too large: finite-difference residual {residual1:.3e} "
                         f"exceeds 1e-3 of the integral scale {scale:.3e}")
    gap2 = rhs2 - d_gradH
    return {
        "tau": tau,
        "h": h,
        "radius": r,
        "residual1": residual1,
        "gap2": gap2,
        "gap2_exact": gap2_exact,
        "residual2": abs(gap2 - gap2_exact),
    }
