"""Regularized p-Laplace solver on discretized annuli.

The field minimizes the discrete energy

    E(v) = (1/p) sum_cells sum_gauss w_q (|grad v|^2 + eps^2)^(p/2) dV

with multilinear (Q1) elements on a structured grid in spherical
coordinates ``(xi, theta[, phi])`` where ``r = exp(xi)`` (log spacing),
``r = xi`` (uniform spacing) or ``r = r_min + xi^2`` (sqrt spacing, which
makes fields smooth in ``xi`` at a horizon where they behave like
``sqrt(r - r_min)``).  The metric ``phi(r)^2 dr^2 + r^2 g_S2`` enters
only through the volume weight and the diagonal inverse metric at the Gauss
points, so any :class:`RadialMetric` can be used.  Dirichlet data are
imposed on the inner and outer spheres; the polar axis is a natural
boundary.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .geometry import RadialMetric

__all__ = [
    "AnnulusGrid",
    "GridField",
    "ConvergenceError",
    "make_grid",
    "energy_and_gradient",
    "energy_hessian",
    "solve_regularized",
    "regularized_capacity",
]

EPS_STRIDE = 6
GAUSS_1D = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def _reference_element(dim: int):
    """Q1 shape-function gradients at the tensor Gauss points of the unit cell.

    Returns ``(offsets, points, weights, dN)`` with ``dN[q, i, a]`` the
    derivative of shape function ``a`` along axis ``i`` at point ``q``.
    """
    offsets = np.array(list(itertools.product((0, 1), repeat=dim)))
    points = np.array(list(itertools.product(GAUSS_1D, repeat=dim)))
    weights = np.full(len(points), 0.5**dim)
    dN = np.empty((len(points), dim, len(offsets)))
    for q, s in enumerate(points):
        for a, o in enumerate(offsets):
            factors = np.where(o == 1, s, 1.0 - s)
            for i in range(dim):
                dN[q, i, a] = np.prod(np.delete(factors, i)) * (1.0 if o[i] else -1.0)
    return offsets, points, weights, dN


@dataclass(frozen=True, eq=False)
class AnnulusGrid:
    """Structured spherical-coordinate grid on ``{r_min <= r <= r_out}``.

    Nodes are ordered radially slowest: ``index = (i * n_theta + j) * n_phi + l``
    (``n_phi = 1`` on the axisymmetric section).
    """

    metric: RadialMetric
    r_out: float
    shape: tuple
    spacing: str
    metric_quadrature: str
    xi: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    phi_angle: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    ginv: np.ndarray = field(repr=False)
    dN: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def r(self) -> np.ndarray:
        return _radial_coordinate(self.spacing, self.metric.r_min, self.xi)[0]

    @property
    def dr_dxi(self) -> np.ndarray:
        return _radial_coordinate(self.spacing, self.metric.r_min, self.xi)[1]

    def stretch(self, xi) -> tuple:
        """``(r, A, dA/dxi)`` with ``A = phi dr/dxi`` the radial line-element factor."""
        return _stretch(self.metric, self.spacing, xi)

    def node_index(self, i, j, l=0):
        n_t = self.shape[1]
        n_p = self.shape[2] if self.dim == 3 else 1
        return (np.asarray(i) * n_t + np.asarray(j)) * n_p + np.asarray(l)

    @property
    def inner_nodes(self) -> np.ndarray:
        return np.arange(self.n_nodes // self.shape[0])

    @property
    def outer_nodes(self) -> np.ndarray:
        per_shell = self.n_nodes // self.shape[0]
        return np.arange(self.n_nodes - per_shell, self.n_nodes)

    @property
    def free_nodes(self) -> np.ndarray:
        per_shell = self.n_nodes // self.shape[0]
        return np.arange(per_shell, self.n_nodes - per_shell)

    def nodal(self, values) -> np.ndarray:
        """Reshape a flat node vector to ``shape``."""
        return np.asarray(values).reshape(self.shape)

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    def to_dict(self) -> dict:
        return {"metric": self.metric.to_dict(), "r_out": self.r_out,
                "resolution": list(self.shape), "spacing": self.spacing,
                "metric_quadrature": self.metric_quadrature}

    @classmethod
    def from_dict(cls, d: dict) -> "AnnulusGrid":
        return make_grid(RadialMetric.from_dict(d["metric"]), d["r_out"], d["resolution"], d["spacing"],
                         d.get("metric_quadrature", "midpoint"))


SPACINGS = ("log", "uniform", "sqrt")


def _radial_coordinate(spacing: str, r_min: float, xi):
    """``(r, dr/dxi, d2r/dxi2)`` of the radial coordinate map."""
    xi = np.asarray(xi, dtype=float)
    if spacing == "log":
        r = np.exp(xi)
        return r, r, r
    if spacing == "uniform":
        return xi.copy(), np.ones_like(xi), np.zeros_like(xi)
    return r_min + xi * xi, 2.0 * xi, np.full_like(xi, 2.0)


def _xi_range(spacing: str, r_min: float, r_out: float) -> tuple:
    if spacing == "log":
        return math.log(r_min), math.log(r_out)
    if spacing == "uniform":
        return r_min, r_out
    return 0.0, math.sqrt(r_out - r_min)


def _stretch(metric: RadialMetric, spacing: str, xi):
    """``(r, A, dA/dxi)`` with ``A = phi(r) dr/dxi``.

    On a horizon boundary with sqrt spacing ``A = 2 sqrt(r)`` exactly, which
    stays finite where ``phi`` blows up.
    """
    r, J, dJ = _radial_coordinate(spacing, metric.r_min, xi)
    if spacing == "sqrt" and metric.singular_at_boundary:
        A = 2.0 * np.sqrt(r)
        return r, A, J / np.sqrt(r)
    phi, dphi = metric.phi(r), metric.dphi(r)
    return r, phi * J, dphi * J * J + phi * dJ


def make_grid(metric: RadialMetric, r_out: float, resolution: Sequence[int],
              spacing: str = "log", metric_quadrature: str = "midpoint") -> AnnulusGrid:
    """Build an annular grid.

    ``resolution`` gives node counts ``(n_r, n_theta)`` for the axisymmetric
    section or ``(n_r, n_theta, n_phi)`` for the 3-D mode (``phi`` periodic).
    Field gradients are always sampled at the tensor Gauss points (one point
    per cell would leave checkerboard modes with zero energy).  The metric
    factors are frozen at the cell midpoint (``"midpoint"``) or sampled at
    the same Gauss points (``"gauss"``).
    """
    resolution = tuple(int(n) for n in resolution)
    dim = len(resolution)
    if dim not in (2, 3):
        raise ValueError(f"resolution must have 2 or 3 entries, got {resolution}")
    if resolution[0] < 3 or resolution[1] < 3 or (dim == 3 and resolution[2] < 4):
        raise ValueError(f"resolution too small: {resolution}")
    if spacing not in SPACINGS:
        raise ValueError(f"spacing must be one of {SPACINGS}, got {spacing!r}")
    if metric_quadrature not in ("midpoint", "gauss"):
        raise ValueError(f"metric_quadrature must be 'midpoint' or 'gauss', got {metric_quadrature!r}")
    r0 = metric.r_min
    if not r_out > r0:
        raise ValueError(f"r_out={r_out} must exceed r_min={r0}")

    n_r, n_t = resolution[:2]
    n_p = resolution[2] if dim == 3 else 1
    xi = np.linspace(*_xi_range(spacing, r0, r_out), n_r)
    theta = np.linspace(0.0, math.pi, n_t)
    phi_angle = np.arange(n_p) * (2.0 * math.pi / n_p) if dim == 3 else np.zeros(1)
    dxi, dth = xi[1] - xi[0], theta[1] - theta[0]
    dph = 2.0 * math.pi / n_p

    offsets, points, gw, dN_ref = _reference_element(dim)
    steps = np.array([dxi, dth, dph][:dim])
    dN = dN_ref / steps[None, :, None]

    # cell lower-corner indices
    ci, cj = np.meshgrid(np.arange(n_r - 1), np.arange(n_t - 1), indexing="ij")
    if dim == 3:
        ci, cj, cl = np.meshgrid(np.arange(n_r - 1), np.arange(n_t - 1), np.arange(n_p), indexing="ij")
        cl = cl.ravel()
    ci, cj = ci.ravel(), cj.ravel()
    cols = []
    for o in offsets:
        if dim == 2:
            cols.append((ci + o[0]) * n_t + (cj + o[1]))
        else:
            cols.append(((ci + o[0]) * n_t + (cj + o[1])) * n_p + (cl + o[2]) % n_p)
    cells = np.stack(cols, axis=1)

    sample = points if metric_quadrature == "gauss" else np.full_like(points, 0.5)
    xq = xi[ci][:, None] + sample[None, :, 0] * dxi
    tq = theta[cj][:, None] + sample[None, :, 1] * dth
    rq, Aq, _ = _stretch(metric, spacing, xq)
    sin_t = np.sin(tq)
    sqrt_g = Aq * rq**2 * sin_t
    cell_measure = float(np.prod(steps)) * (2.0 * math.pi if dim == 2 else 1.0)
    weights = gw[None, :] * cell_measure * sqrt_g
    ginv = [1.0 / Aq**2, 1.0 / rq**2]
    if dim == 3:
        ginv.append(1.0 / (rq * sin_t) ** 2)
    ginv = np.stack(ginv, axis=-1)
    if not (np.all(np.isfinite(weights)) and np.all(weights > 0) and np.all(np.isfinite(ginv))):
        raise ValueError("metric factors must be finite and positive at every quadrature point")
    return AnnulusGrid(metric, float(r_out), resolution, spacing, metric_quadrature, xi, theta,
                       phi_angle, cells, weights, ginv, dN)


def _check_params(p: float, eps: float) -> None:
    if not (1.0 < p <= 2.0):
        raise ValueError(f"p must lie in (1, 2], got {p}")
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if eps == 0 and p < 2.0:
        raise ValueError("eps = 0 is only allowed for p = 2 (the energy is not smooth otherwise)")


def _gauss_gradients(grid: AnnulusGrid, values: np.ndarray):
    vloc = values[grid.cells]
    g = np.einsum("qia,ca->cqi", grid.dN, vloc)
    return g


def energy_and_gradient(grid: AnnulusGrid, values, p: float, eps: float):
    """Discrete energy and its derivative w.r.t. node values (zero on Dirichlet nodes)."""
    _check_params(p, eps)
    values = np.asarray(values, dtype=float)
    g = _gauss_gradients(grid, values)
    s = np.einsum("cqi,cqi->cq", grid.ginv, g * g) + eps * eps
    energy = float(np.sum(grid.weights * s ** (0.5 * p)) / p)
    coef = grid.weights * s ** (0.5 * p - 1.0)
    flux = coef[..., None] * grid.ginv * g
    local = np.einsum("cqi,qia->ca", flux, grid.dN)
    grad = np.bincount(grid.cells.ravel(), local.ravel(), minlength=grid.n_nodes)
    grad[grid.inner_nodes] = 0.0
    grad[grid.outer_nodes] = 0.0
    return energy, grad


def energy_hessian(grid: AnnulusGrid, values, p: float, eps: float) -> sp.csr_matrix:
    """Full (unreduced) Hessian of the discrete energy as a CSR matrix."""
    _check_params(p, eps)
    values = np.asarray(values, dtype=float)
    g = _gauss_gradients(grid, values)
    s = np.einsum("cqi,cqi->cq", grid.ginv, g * g) + eps * eps
    coef = grid.weights * s ** (0.5 * p - 1.0)
    K = np.einsum("cqi,qia,qib->cab", coef[..., None] * grid.ginv, grid.dN, grid.dN)
    if p != 2.0:
        h = np.einsum("cqi,qia->cqa", grid.ginv * g, grid.dN)
        K += (p - 2.0) * np.einsum("cq,cqa,cqb->cab", grid.weights * s ** (0.5 * p - 2.0), h, h)
    n_loc = grid.cells.shape[1]
    rows = np.repeat(grid.cells, n_loc, axis=1).ravel()
    cols = np.tile(grid.cells, (1, n_loc)).ravel()
    return sp.coo_matrix((K.ravel(), (rows, cols)), shape=(grid.n_nodes,) * 2).tocsr()


@dataclass(eq=False)
class GridField:
    grid: AnnulusGrid
    values: np.ndarray
    p: float
    eps: float
    bc: tuple
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0
    energy_history: list = field(default_factory=list)
    eps_path: list = field(default_factory=list)

    def nodal(self) -> np.ndarray:
        return self.grid.nodal(self.values)

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "values": self.values.tolist(), "p": self.p,
                "eps": self.eps, "bc": list(self.bc), "iterations": self.iterations,
                "residual": self.residual}

    @classmethod
    def from_dict(cls, d: dict) -> "GridField":
        grid = AnnulusGrid.from_dict(d["grid"])
        return cls(grid, np.asarray(d["values"], dtype=float), d["p"], d["eps"], tuple(d["bc"]),
                   iterations=d.get("iterations", 0), residual=d.get("residual", 0.0))


def _harmonic_guess(grid: AnnulusGrid, bc: tuple) -> np.ndarray:
    v = np.zeros(grid.n_nodes)
    v[grid.inner_nodes] = bc[0]
    v[grid.outer_nodes] = bc[1]
    H = energy_hessian(grid, v, 2.0, 0.0)
    free = grid.free_nodes
    rhs = -(H @ v)[free]
    v[free] = spsolve(H[free][:, free].tocsc(), rhs)
    return v


def _newton(grid, v, p, eps, spread, gtol, xtol, max_iters, history):
    """Damped Newton with backtracking. Returns (values, converged, iterations, residual).

    Steps are backtracked on the energy (Armijo) while the predicted decrease
    is resolvable in floating point; below that the gradient sup-norm is the
    merit function.
    """
    free = grid.free_nodes
    E, grad = energy_and_gradient(grid, v, p, eps)
    res = float(np.max(np.abs(grad)))
    for it in range(1, max_iters + 1):
        H = energy_hessian(grid, v, p, eps)[free][:, free].tocsc()
        step = np.zeros_like(v)
        step[free] = spsolve(H, -grad[free])
        slope = float(grad[free] @ step[free])
        energy_resolvable = -slope > 1e-12 * max(abs(E), 1e-300)
        alpha, accepted = 1.0, False
        for _ in range(40):
            trial = v + alpha * step
            E_t, grad_t = energy_and_gradient(grid, trial, p, eps)
            if energy_resolvable:
                accepted = E_t <= E + 1e-4 * alpha * slope
            else:
                accepted = np.max(np.abs(grad_t)) <= (1.0 - 1e-4 * alpha) * res
            if accepted:
                break
            alpha *= 0.5
        if not accepted:
            # no further decrease possible: converged only if already at the residual floor
            return v, res < gtol * spread, it, res
        step_size = alpha * float(np.max(np.abs(step)))
        v, E, grad = trial, E_t, grad_t
        history.append(E)
        res = float(np.max(np.abs(grad)))
        if res < gtol * spread and step_size < xtol * spread:
            return v, True, it, res
    return v, False, max_iters, res


def solve_regularized(grid: AnnulusGrid, p: float, eps: float, bc, initial=None,
                      gtol: float = 1e-9, xtol: float = 1e-11, max_iters: int = 60,
                      continuation: bool = True) -> GridField:
    """Minimize the regularized energy with Dirichlet data ``bc = (inner, outer)``.

    Starts from the harmonic field with the same data (or ``initial``).  For
    ``p < 2`` a failed direct solve falls back to continuation in ``eps``
    through ``2^-k`` values, warm-starting each stage from the previous one.
    """
    _check_params(p, eps)
    bc = (float(bc[0]), float(bc[1]))
    spread = abs(bc[1] - bc[0])
    if spread == 0.0:
        v = np.full(grid.n_nodes, bc[0])
        return GridField(grid, v, p, eps, bc)

    v = _harmonic_guess(grid, bc) if initial is None else np.array(initial, dtype=float)
    v[grid.inner_nodes] = bc[0]
    v[grid.outer_nodes] = bc[1]
    history: list = []
    if p == 2.0:
        v, ok, its, res = _newton(grid, v, p, eps, spread, gtol, xtol, max_iters, history)
        path = [eps]
    else:
        path, v, ok, its, res = _continuation(grid, v, p, eps, spread, gtol, xtol, max_iters,
                                              history, continuation)
    if not ok:
        raise ConvergenceError(f"regularized p-Laplace solve did not converge (p={p}, eps={eps})", res, its)
    lo, hi = min(bc), max(bc)
    tol = 1e-9 * spread
    if v.min() < lo - tol or v.max() > hi + tol:
        raise ConvergenceError("discrete maximum principle violated by the converged field",
                               float(max(lo - v.min(), v.max() - hi)), its)
    return GridField(grid, v, p, eps, bc, True, its, res, history, path)


def _continuation(grid, v, p, eps, spread, gtol, xtol, max_iters, history, enabled):
    """Solve at ``eps`` through the stages ``2^-1, 2^-(1+stride), ...``, warm-starting each.

    The stride starts at 6 (a factor 64 in eps per stage), halves when a
    stage fails and grows again after a success.
    """
    stages = [eps]
    if enabled:
        stages = [2.0**-j for j in range(1, 60) if 2.0**-j > eps] + [eps]
    last = len(stages) - 1
    idx, jump = -1, 1
    path, total, res = [], 0, float("inf")
    while idx < last:
        nxt = min(idx + jump, last)
        stage_history: list = []
        w, ok, its, res = _newton(grid, v, p, stages[nxt], spread, gtol, xtol, max_iters, stage_history)
        total += its
        if ok:
            v, idx = w, nxt
            path.append(stages[nxt])
            history[:] = stage_history
            jump = min(2 * jump, EPS_STRIDE) if idx > 0 else EPS_STRIDE
        elif jump == 1:
            return path, w, False, total, res
        else:
            jump = max(jump // 2, 1)
    return path, v, True, total, res


def regularized_capacity(field: GridField, level: Optional[float] = None) -> float:
    """``int |grad v|_eps^(p-2) |grad v| dA`` over the inner boundary or a level set.

    On the inner boundary the normal derivative uses the one-sided stencil
    ``(-3 v_0 + 4 v_1 - v_2) / (2 dxi)`` and the tangential derivatives are
    centered; nodal integrands are integrated against the exact angular
    measure of the piecewise-linear interpolant.  With ``level`` (a potential
    value) the flux is evaluated on ``{v = level}`` by contour extraction.
    """
    grid, p, eps = field.grid, field.p, field.eps
    if level is not None:
        from .levelsurf import grid_surface_integral

        return grid_surface_integral(field, level, lambda g: (g * g + eps * eps) ** (0.5 * (p - 2.0)) * g)
    V = field.nodal()
    dxi = grid.xi[1] - grid.xi[0]
    r0 = grid.r[0]
    scale = float(grid.stretch(grid.xi[:1])[1][0])
    dn = (-3.0 * V[0] + 4.0 * V[1] - V[2]) / (2.0 * dxi) / scale
    dt = np.gradient(V[0], grid.theta, axis=0) / r0
    grad2 = dn**2 + dt**2
    if grid.dim == 3:
        sin_t = np.sin(grid.theta)[:, None]
        dph = 2.0 * math.pi / grid.shape[2]
        dp = (np.roll(V[0], -1, axis=1) - np.roll(V[0], 1, axis=1)) / (2.0 * dph)
        with np.errstate(divide="ignore", invalid="ignore"):
            dp = np.where(sin_t > 0, dp / (r0 * sin_t), 0.0)
        grad2 = grad2 + dp**2
    integrand = (grad2 + eps * eps) ** (0.5 * (p - 2.0)) * np.sqrt(grad2)
    w_theta = _hat_sine_weights(grid.theta)
    if grid.dim == 2:
        return float(2.0 * math.pi * r0 * r0 * np.dot(w_theta, integrand))
    return float(r0 * r0 * (2.0 * math.pi / grid.shape[2]) * np.sum(w_theta[:, None] * integrand))


def _hat_sine_weights(theta: np.ndarray) -> np.ndarray:
    """``int hat_j(theta) sin(theta) d theta`` for the piecewise-linear hat functions on ``theta``."""
    w = np.zeros_like(theta)
    for j in range(len(theta) - 1):
        t0, t1 = theta[j], theta[j + 1]
        h = t1 - t0
        # int_{t0}^{t1} (t1 - t)/h sin t dt and int (t - t0)/h sin t dt
        w[j] += (-(math.sin(t1) - math.sin(t0)) / h + math.cos(t0))
        w[j + 1] += ((math.sin(t1) - math.sin(t0)) / h - math.cos(t1))
    return w
