"""Capacitary p-harmonic potentials of spherically symmetric metrics.

For ``g = phi^2 dr^2 + r^2 g_S2`` the p-harmonic function with ``u = 0`` on
``r = r_min`` and ``u -> 1`` at infinity is radial, and the conserved flux
``r^2 |grad u|^(p-1)`` reduces the problem to the single integral

    J(r) = int_r^inf phi(rho) rho^(-k) d rho,      k = 2 / (p - 1),

with ``u = 1 - J(r) / J(r_min)``.  All quantities are computed from the
scaled integral ``Jhat(r) = r^(k-1) J(r)``, which is O(1) for every ``p``
(``Jhat = 1/a`` on flat space), so nothing overflows as ``p -> 1`` where
``k`` is large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .geometry import RadialMetric

__all__ = [
    "RadialPotential",
    "scaled_tail_integral",
    "capacity",
    "solve_radial",
    "level_radius",
    "level_value",
    "level_parameter",
]

QUAD_EPSREL = 1e-13
TABLE_DECADES = 8
TABLE_SIZE = 161


def _check_p(p: float) -> None:
    if not (1.0 < p < 3.0):
        raise ValueError(f"p must lie in the open interval (1, 3), got {p}")


def _near_integrand(metric: RadialMetric, r: float, k: float):
    """Integrand in ``w`` after ``rho = r + w^2``, scaled by ``r^(k-1)``.

    The substitution absorbs the ``(rho - 2m)^(-1/2)`` singularity of the
    Schwarzschild profile at the horizon.
    """
    if metric.kind == "schwarzschild":
        d = r - 2.0 * metric.mass

        def f(w):
            w2 = w * w
            return 2.0 * w * math.sqrt((r + w2) / (d + w2)) * (1.0 + w2 / r) ** (-k) / r
    else:
        phi = metric.phi_at

        def f(w):
            w2 = w * w
            return 2.0 * w * phi(r + w2) * (1.0 + w2 / r) ** (-k) / r
    return f


def scaled_tail_integral(metric: RadialMetric, p: float, r: float) -> float:
    """``r^(k-1) int_r^inf phi(rho) rho^(-k) d rho`` with ``k = 2/(p-1)``.

    The integral is split at ``rho_s = r (1 + delta)``.  Near ``r`` the
    variable ``rho = r + w^2`` is used; beyond ``rho_s`` the variable
    ``x = r / rho`` maps the tail onto ``(0, r/rho_s]``.  ``delta`` shrinks
    like ``1/k`` so the near piece resolves the ``exp(-k (rho-r)/r)`` decay.
    """
    _check_p(p)
    k = 2.0 / (p - 1.0)
    a = k - 1.0
    if metric.kind == "euclidean":
        return 1.0 / a
    r = float(r)
    if metric.kind == "profile" and r >= metric.table_r[-1]:
        amp = (metric.table_phi[-1] - 1.0) * (metric.table_r[-1] / r) ** metric.sigma
        return 1.0 / a + amp / (metric.sigma + a)

    delta = min(1.0, 40.0 / k)
    rho_s = r * (1.0 + delta)
    w_s = math.sqrt(rho_s - r)
    near_pts = None
    if metric.kind == "profile":
        near_pts = [math.sqrt(q - r) for q in metric.table_r if r < q < rho_s]
    near, _ = quad(_near_integrand(metric, r, k), 0.0, w_s, points=near_pts or None,
                   epsabs=0.0, epsrel=QUAD_EPSREL, limit=400)

    x_s = r / rho_s
    if metric.kind == "schwarzschild":
        z = 2.0 * metric.mass / r

        def g(x):
            return 1.0 / math.sqrt(1.0 - z * x)
        if k < 2.0:
            far, _ = quad(g, 0.0, x_s, weight="alg", wvar=(k - 2.0, 0.0),
                          epsabs=0.0, epsrel=QUAD_EPSREL, limit=400)
        else:
            far, _ = quad(lambda x: g(x) * x ** (k - 2.0), 0.0, x_s,
                          epsabs=0.0, epsrel=QUAD_EPSREL, limit=400)
        return near + far

    # profile: closed-form power-law tail below x_last, quadrature between knots above it
    r_last = metric.table_r[-1]
    x_last = min(r / r_last, x_s)
    amp = (metric.table_phi[-1] - 1.0) * (r_last / r) ** metric.sigma
    far = x_last**a / a + amp * x_last ** (metric.sigma + a) / (metric.sigma + a)
    if x_last < x_s:
        phi = metric.phi_at
        far_pts = [r / q for q in metric.table_r if rho_s < q < r_last]
        mid, _ = quad(lambda x: phi(r / x) * x ** (k - 2.0), x_last, x_s, points=far_pts or None,
                      epsabs=0.0, epsrel=QUAD_EPSREL, limit=max(400, 4 * len(far_pts)))
        far += mid
    return near + far


def capacity(metric: RadialMetric, p: float) -> float:
    """p-capacity ``4 pi [int_{r_min}^inf phi r^(-2/(p-1)) dr]^(-(p-1))`` of the inner boundary."""
    _check_p(p)
    jhat0 = scaled_tail_integral(metric, p, metric.r_min)
    return 4.0 * math.pi * metric.r_min ** (3.0 - p) * jhat0 ** (-(p - 1.0))


@dataclass(frozen=True)
class RadialPotential:
    """Radial capacitary potential with its expansion constants.

    ``u(r) = 1 - (r/r_min)^(-a) Jhat(r) / Jhat(r_min)`` is evaluated by
    quadrature on demand; ``grad(r)`` uses the exact flux law.  ``u_table``
    holds a log-spaced sample ``(r, u)`` used for serialization and as a
    starting guess for :func:`level_radius`.
    """

    metric: RadialMetric
    p: float
    a: float
    C_p: float
    c: float
    jhat0: float
    u_table: tuple = field(repr=False)
    _log_inverse: Optional[PchipInterpolator] = field(default=None, repr=False, compare=False)

    @property
    def k(self) -> float:
        return 2.0 / (self.p - 1.0)

    @property
    def boundary_level(self) -> float:
        """``c^(1/a)``, the level parameter of the inner boundary."""
        return self.metric.r_min * (self.a * self.jhat0) ** (-1.0 / self.a)

    @property
    def flux_constant(self) -> float:
        """``(C_p / 4 pi)^(1/(p-1))`` so that ``|grad u| = flux_constant * r^(-k)``."""
        return self.metric.r_min**self.a / self.jhat0

    def jhat(self, r: float) -> float:
        return scaled_tail_integral(self.metric, self.p, r)

    def u(self, r):
        r_arr = np.asarray(r, dtype=float)
        self.metric._check(r_arr)
        flat = [1.0 - (x / self.metric.r_min) ** (-self.a) * self.jhat(x) / self.jhat0
                for x in r_arr.ravel()]
        out = np.array(flat).reshape(r_arr.shape)
        return float(out) if out.ndim == 0 else out

    def one_minus_u(self, r: float) -> float:
        """``1 - u(r)`` without cancellation for large ``r``."""
        return (r / self.metric.r_min) ** (-self.a) * self.jhat(r) / self.jhat0

    def grad(self, r):
        """``|grad u|(r) = (C_p / (4 pi r^2))^(1/(p-1))``."""
        r = np.asarray(r, dtype=float)
        out = self.flux_constant * r ** (-self.k)
        return float(out) if out.ndim == 0 else out

    def hessian_normal(self, r):
        """``grad^2 u(nu, nu) = -k |grad u| / (r phi)``."""
        r = np.asarray(r, dtype=float)
        out = -self.k * self.grad(r) / (r * self.metric.phi(r))
        return float(out) if np.ndim(out) == 0 else out

    def laplacian(self, r):
        """``Delta u = (2 - k) |grad u| / (r phi)``; equals ``(2-p) u_nu_nu``."""
        r = np.asarray(r, dtype=float)
        out = (2.0 - self.k) * self.grad(r) / (r * self.metric.phi(r))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        r_tab, u_tab = self.u_table
        return {
            "p": self.p,
            "a": self.a,
            "c": self.c,
            "C_p": self.C_p,
            "metric": self.metric.to_dict(),
            "u_table": [[float(x), float(y)] for x, y in zip(r_tab, u_tab)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RadialPotential":
        """Rebuild by re-solving; the stored constants are checked against the new solve."""
        pot = solve_radial(RadialMetric.from_dict(d["metric"]), d["p"])
        if not math.isclose(pot.C_p, d["C_p"], rel_tol=1e-10):
            raise ValueError(f"serialized C_p={d['C_p']} disagrees with re-solve {pot.C_p}")
        return pot


def solve_radial(metric: RadialMetric, p: float) -> RadialPotential:
    _check_p(p)
    a = (3.0 - p) / (p - 1.0)
    r0 = metric.r_min
    jhat0 = scaled_tail_integral(metric, p, r0)
    C_p = 4.0 * math.pi * r0 ** (3.0 - p) * jhat0 ** (-(p - 1.0))
    with np.errstate(over="ignore"):
        c = float(np.exp(a * math.log(r0) - math.log(a * jhat0)))

    r_tab = r0 * np.logspace(0.0, TABLE_DECADES, TABLE_SIZE)
    jh = np.array([jhat0] + [scaled_tail_integral(metric, p, x) for x in r_tab[1:]])
    u_tab = 1.0 - (r_tab / r0) ** (-a) * jh / jhat0
    # log(a J(r)) = -a log r + log(a Jhat) is strictly decreasing in log r
    g_tab = -a * np.log(r_tab) + np.log(a * jh)
    inv = PchipInterpolator(g_tab[::-1], np.log(r_tab)[::-1], extrapolate=False)
    return RadialPotential(metric, float(p), float(a), float(C_p), c, float(jhat0),
                           (tuple(r_tab), tuple(u_tab)), inv)


def level_value(pot: RadialPotential, t: float) -> float:
    """``f(t) = 1 - c t^(-a)``."""
    return 1.0 - (pot.boundary_level / t) ** pot.a


def level_parameter(pot: RadialPotential, s: float) -> float:
    """Inverse of :func:`level_value`: ``t = (c / (1 - s))^(1/a)``."""
    if not (s < 1.0):
        raise ValueError(f"potential value must be below 1, got {s}")
    return pot.boundary_level * (1.0 - s) ** (-1.0 / pot.a)


def level_radius(pot: RadialPotential, t: float, rtol: float = 1e-14) -> float:
    """Coordinate radius of ``{u = f(t)}``.

    Solves ``-a L + log(a Jhat(e^L)) + a log t = 0`` for ``L = log r`` by
    Newton's method (derivative ``-phi / Jhat``) started from the tabulated
    inverse, with a bracketing fallback.
    """
    tb = pot.boundary_level
    if t < tb * (1.0 - 1e-10):
        raise ValueError(f"level parameter t={t} is below the boundary value c^(1/a)={tb}")
    r0 = pot.metric.r_min
    if t <= tb:
        return r0
    a = pot.a
    metric = pot.metric
    if metric.kind == "euclidean":
        return float(t)
    target = -a * math.log(t)
    log_t = math.log(t)

    def resid(L):
        return -a * L + math.log(a * pot.jhat(math.exp(L))) + a * log_t

    L_min = math.log(r0)
    guess = float(pot._log_inverse(target)) if pot._log_inverse is not None else float("nan")
    L = guess if np.isfinite(guess) and guess > L_min else max(log_t, L_min)
    lo, hi = L_min, None
    for _ in range(30):
        r = math.exp(L)
        jh = pot.jhat(r)
        F = -a * L + math.log(a * jh) + a * log_t
        if F > 0:
            lo = max(lo, L)
        else:
            hi = L if hi is None else min(hi, L)
        try:
            step = F * jh / metric.phi_at(r)
        except (ZeroDivisionError, ValueError):
            break
        L_new = L + step
        if L_new <= lo or (hi is not None and L_new >= hi):
            break
        L = L_new
        if abs(step) <= rtol:
            return math.exp(L)
    if hi is None:
        hi = max(L, L_min) + 1.0
        while resid(hi) > 0:
            hi += 1.0
    L = brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return math.exp(L)
