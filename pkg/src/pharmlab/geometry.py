"""Spherically symmetric asymptotically flat metrics.

A metric here is ``g = phi(r)^2 dr^2 + r^2 * (round unit sphere)`` on
``r >= r_min``.  Coordinate spheres then have area ``4 pi r^2``, Gauss
curvature ``1/r^2`` and mean curvature ``2 / (r phi)`` with respect to the
normal pointing to infinity, so everything downstream can be written in
closed form once ``phi`` and ``phi'`` are known.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

__all__ = [
    "RadialMetric",
    "SphereData",
    "make_radial_metric",
    "euclidean",
    "schwarzschild",
    "profile",
    "scalar_curvature",
    "sphere_geometry",
    "adm_mass_estimate",
    "hawking_mass",
]

KINDS = ("euclidean", "schwarzschild", "profile")


@dataclass(frozen=True)
class RadialMetric:
    """Warped product metric ``phi(r)^2 dr^2 + r^2 g_S2`` on ``[r_min, inf)``.

    Use :func:`make_radial_metric` (or the shortcuts) rather than the raw
    constructor; it validates the parameters.
    """

    kind: str
    r_min: float
    mass: float = 0.0
    table_r: Optional[tuple] = None
    table_phi: Optional[tuple] = None
    sigma: float = 1.0
    _interp: Optional[PchipInterpolator] = field(default=None, repr=False, compare=False)

    @property
    def adm_mass(self) -> Optional[float]:
        if self.kind == "euclidean":
            return 0.0
        if self.kind == "schwarzschild":
            return self.mass
        return None

    @property
    def singular_at_boundary(self) -> bool:
        """True when ``phi`` blows up like ``(r - r_min)^(-1/2)`` at ``r_min``."""
        return self.kind == "schwarzschild" and np.isclose(self.r_min, 2.0 * self.mass, rtol=0, atol=1e-14 * self.r_min)

    @property
    def breakpoints(self) -> tuple:
        """Radii where ``phi`` is only C^1 (interpolation knots)."""
        if self.kind == "profile":
            return tuple(self.table_r)
        return ()

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r_min * (1 - 1e-13)):
            raise ValueError(f"radius below r_min={self.r_min}: min r = {float(np.min(r))}")
        return r

    def phi(self, r):
        r = self._check(r)
        if self.kind == "euclidean":
            return np.ones_like(r)
        if self.kind == "schwarzschild":
            with np.errstate(divide="ignore"):
                return 1.0 / np.sqrt(np.maximum(1.0 - 2.0 * self.mass / r, 0.0))
        r_last, phi_last = self.table_r[-1], self.table_phi[-1]
        inside = r <= r_last
        out = np.empty_like(r)
        out[inside] = self._interp(r[inside])
        rt = r[~inside]
        out[~inside] = 1.0 + (phi_last - 1.0) * (r_last / rt) ** self.sigma
        return out if out.ndim else float(out)

    def dphi(self, r):
        """Radial derivative ``d phi / dr``."""
        r = self._check(r)
        if self.kind == "euclidean":
            return np.zeros_like(r)
        if self.kind == "schwarzschild":
            m = self.mass
            with np.errstate(divide="ignore"):
                return -(m / r**2) * np.maximum(1.0 - 2.0 * m / r, 0.0) ** -1.5
        r_last, phi_last = self.table_r[-1], self.table_phi[-1]
        inside = r <= r_last
        out = np.empty_like(r)
        out[inside] = self._interp(r[inside], 1)
        rt = r[~inside]
        out[~inside] = -self.sigma * (phi_last - 1.0) * r_last**self.sigma * rt ** (-self.sigma - 1.0)
        return out if out.ndim else float(out)

    def phi_at(self, r: float) -> float:
        """Scalar fast path of :meth:`phi` for use inside quadrature loops (no checks)."""
        if self.kind == "euclidean":
            return 1.0
        if self.kind == "schwarzschild":
            return 1.0 / math.sqrt(1.0 - 2.0 * self.mass / r)
        r_last = self.table_r[-1]
        if r > r_last:
            return 1.0 + (self.table_phi[-1] - 1.0) * (r_last / r) ** self.sigma
        knots = self.table_r
        i = min(max(bisect.bisect_right(knots, r) - 1, 0), len(knots) - 2)
        c = self._interp.c
        dx = r - knots[i]
        return ((c[0, i] * dx + c[1, i]) * dx + c[2, i]) * dx + c[3, i]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "r_min": self.r_min}
        if self.kind == "schwarzschild":
            d["mass"] = self.mass
        if self.kind == "profile":
            d["table"] = [[float(a), float(b)] for a, b in zip(self.table_r, self.table_phi)]
            d["sigma"] = self.sigma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RadialMetric":
        kind = d["kind"]
        params = {"r_min": d["r_min"]}
        if kind == "schwarzschild":
            params["mass"] = d["mass"]
        elif kind == "profile":
            params["table"] = d["table"]
            params["sigma"] = d.get("sigma", 1.0)
        return make_radial_metric(kind, **params)


@dataclass(frozen=True)
class SphereData:
    r: float
    area: float
    H: float
    K: float


def make_radial_metric(kind: str, r_min: Optional[float] = None, mass: float = 0.0,
                       table=None, sigma: float = 1.0) -> RadialMetric:
    """Build and validate a :class:`RadialMetric`.

    ``profile`` metrics take ``table`` as a sequence of ``(r, phi)`` rows with
    strictly increasing ``r``; ``phi`` is interpolated by monotone cubic
    (PCHIP) splines and continued past the last row by the tail
    ``1 + (phi_last - 1) (r_last / r)^sigma``.  ``r_min`` defaults to the
    first tabulated radius.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown metric kind {kind!r}; expected one of {KINDS}")
    if kind == "profile":
        if table is None:
            raise ValueError("profile metric needs a table of (r, phi) rows")
        tab = np.asarray(table, dtype=float)
        if tab.ndim != 2 or tab.shape[1] != 2 or tab.shape[0] < 2:
            raise ValueError("profile table must have at least 2 rows of (r, phi)")
        tr, tp = tab[:, 0], tab[:, 1]
        if np.any(np.diff(tr) <= 0):
            raise ValueError("profile table radii must be strictly increasing")
        if np.any(tp <= 0):
            raise ValueError("profile phi values must be positive")
        if sigma <= 0:
            raise ValueError(f"AF tail exponent sigma must be positive, got {sigma}")
        if r_min is None:
            r_min = float(tr[0])
        if r_min < tr[0] or r_min >= tr[-1]:
            raise ValueError(f"r_min={r_min} must lie in the tabulated range [{tr[0]}, {tr[-1]})")
        interp = PchipInterpolator(tr, tp, extrapolate=False)
        metric = RadialMetric("profile", float(r_min), 0.0, tuple(tr), tuple(tp), float(sigma), interp)
    else:
        if r_min is None:
            raise ValueError("r_min is required")
        if kind == "schwarzschild":
            if mass <= 0:
                raise ValueError(f"schwarzschild mass must be positive, got {mass}")
            if r_min < 2.0 * mass:
                raise ValueError(f"r_min={r_min} is inside the horizon r=2m={2 * mass}")
        metric = RadialMetric(kind, float(r_min), float(mass) if kind == "schwarzschild" else 0.0)
    if metric.r_min <= 0:
        raise ValueError(f"r_min must be positive, got {metric.r_min}")
    return metric


def euclidean(r_min: float = 1.0) -> RadialMetric:
    return make_radial_metric("euclidean", r_min=r_min)


def schwarzschild(mass: float = 1.0, r_min: Optional[float] = None) -> RadialMetric:
    return make_radial_metric("schwarzschild", r_min=2.0 * mass if r_min is None else r_min, mass=mass)


def profile(table, sigma: float = 1.0, r_min: Optional[float] = None) -> RadialMetric:
    return make_radial_metric("profile", r_min=r_min, table=table, sigma=sigma)


def scalar_curvature(metric: RadialMetric, r):
    """Scalar curvature ``(2/r^2)(1 - phi^-2) + 4 phi' / (r phi^3)``."""
    r = np.asarray(r, dtype=float)
    ph = metric.phi(r)
    dph = metric.dphi(r)
    return 2.0 / r**2 * (1.0 - ph**-2) + 4.0 * dph / (r * ph**3)


def sphere_geometry(metric: RadialMetric, r: float) -> SphereData:
    r = float(r)
    ph = float(metric.phi(r))
    H = 0.0 if np.isinf(ph) else 2.0 / (r * ph)
    return SphereData(r=r, area=4.0 * np.pi * r * r, H=H, K=1.0 / (r * r))


def adm_mass_estimate(metric: RadialMetric, r: float) -> float:
    """``(4 pi r - int H + A/r) / (8 pi)`` on the coordinate sphere of radius ``r``.

    Requires ``r >= 10 r_min``; the value tends to the ADM mass with an
    ``O(1/r)`` error, so callers that need the limit should record ``r``.
    """
    if r < 10.0 * metric.r_min:
        raise ValueError(f"adm_mass_estimate needs r >= 10 r_min = {10 * metric.r_min}, got {r}")
    sd = sphere_geometry(metric, r)
    return (4.0 * np.pi * r - sd.H * sd.area + sd.area / r) / (8.0 * np.pi)


def hawking_mass(area: float, int_H2: float) -> float:
    return float(np.sqrt(area / (16.0 * np.pi)) * (1.0 - int_H2 / (16.0 * np.pi)))
