"""Boundary mass and capacity inequalities evaluated on computed potentials.

For a p-harmonic potential ``u`` (``u = 0`` on the boundary, ``u -> 1`` at
infinity) with boundary integrals ``IH = int |grad u| H`` and
``I2 = int |grad u|^2`` the checked inequalities are

    boundary_ratio:  4 pi + IH >= a^-2 (1 + 2a) I2
    mass_A:          c^(1/a) (8 pi - a^-1 IH) <= 4 pi (5 - p) m
    mass_B:          c^(1/a) (4 pi - a^-2 I2) <= 4 pi (3 - p) m

with slacks ``rhs - lhs`` oriented so that nonnegative means "holds".
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .geometry import RadialMetric, adm_mass_estimate, scalar_curvature
from .radial import RadialPotential, capacity, _check_p

__all__ = [
    "BoundaryData",
    "EQUALITY_TOL",
    "DEFAULT_P_SEQUENCE",
    "boundary_data",
    "model_mass",
    "hypothesis_flags",
    "boundary_inequalities",
    "willmore_mass_bound",
    "radial_region",
    "hmax_bounds",
    "capacity_p_limit",
]

EQUALITY_TOL = 1e-8
DEFAULT_P_SEQUENCE = (1.004, 1.002, 1.001, 1.0005)


@dataclass(frozen=True)
class BoundaryData:
    int_gradH: float
    int_grad2: float
    area: float
    W: float
    H_max: float
    C_p: float
    a: float
    c: float
    p: float

    def __post_init__(self):
        if self.W < 0:
            raise ValueError(f"Willmore energy must be nonnegative, got {self.W}")
        if self.area <= 0:
            raise ValueError(f"boundary area must be positive, got {self.area}")
        if self.C_p <= 0:
            raise ValueError(f"capacity must be positive, got {self.C_p}")

    def to_dict(self) -> dict:
        return asdict(self)


def boundary_data(pot: RadialPotential) -> BoundaryData:
    """Boundary integrals of a radial potential on the sphere ``r = r_min``."""
    metric = pot.metric
    r = metric.r_min
    area = 4.0 * math.pi * r * r
    grad = float(pot.grad(r))
    H = 0.0 if metric.singular_at_boundary else 2.0 / (r * float(metric.phi(r)))
    return BoundaryData(int_gradH=grad * H * area, int_grad2=grad * grad * area, area=area,
                        W=H * H * area / (16.0 * math.pi), H_max=H, C_p=pot.C_p, a=pot.a,
                        c=pot.c, p=pot.p)


def model_mass(metric: RadialMetric) -> tuple:
    """``(mass, radius)``: exact ADM mass for model metrics, otherwise the estimate at a far radius."""
    if metric.adm_mass is not None:
        return metric.adm_mass, None
    r = 1e4 * max(metric.r_min, metric.table_r[-1])
    return adm_mass_estimate(metric, r), r


def hypothesis_flags(metric: RadialMetric, n_samples: int = 400) -> dict:
    """Sample the scalar curvature on ``[r_min, 10^4 r_min]``."""
    lo = metric.r_min * (1.0 + 1e-9) if metric.singular_at_boundary else metric.r_min
    r = np.geomspace(lo, 1e4 * metric.r_min, n_samples)
    if metric.kind == "profile":
        r = np.union1d(r, [x for x in metric.table_r if x >= metric.r_min])
    S = scalar_curvature(metric, r)
    # curvature scales like r^-2; allow round-off at that scale
    neg = S < -1e-10 / r**2
    return {"scalar_curvature_nonnegative": not bool(np.any(neg)),
            "min_scalar_curvature": float(np.min(S)),
            "r_at_min": float(r[int(np.argmin(S))]),
            "samples": int(r.size)}


def _entry(ident: str, lhs: float, rhs: float, scale: float) -> dict:
    slack = rhs - lhs
    return {"id": ident, "lhs": lhs, "rhs": rhs, "slack": slack,
            "holds": slack >= -EQUALITY_TOL * scale, "equality": abs(slack) < EQUALITY_TOL * scale}


def boundary_inequalities(bd: BoundaryData, mass: float) -> dict:
    """Signed slacks of the three boundary inequalities and their sum identity.

    ``slack(mass_A) = (5-p)/(3-p) slack(mass_B) + c^(1/a)/a slack(boundary_ratio)``
    holds identically; its residual is reported as ``sum_identity_residual``.
    """
    a, c, p = bd.a, bd.c, bd.p
    IH, I2 = bd.int_gradH, bd.int_grad2
    ca = c ** (1.0 / a)
    ratio_scale = 4.0 * math.pi + abs(IH) + (1 + 2 * a) * I2 / a**2
    A_scale = ca * (8.0 * math.pi + abs(IH) / a) + 4.0 * math.pi * (5 - p) * abs(mass)
    B_scale = ca * (4.0 * math.pi + I2 / a**2) + 4.0 * math.pi * (3 - p) * abs(mass)
    e12 = _entry("boundary_ratio", (1 + 2 * a) * I2 / a**2, 4.0 * math.pi + IH, ratio_scale)
    e13 = _entry("mass_A", ca * (8.0 * math.pi - IH / a), 4.0 * math.pi * (5 - p) * mass, A_scale)
    e14 = _entry("mass_B", ca * (4.0 * math.pi - I2 / a**2), 4.0 * math.pi * (3 - p) * mass, B_scale)
    combined = (5 - p) / (3 - p) * e14["slack"] + ca / a * e12["slack"]
    return {"inequalities": [e12, e13, e14],
            "sum_identity_residual": abs(e13["slack"] - combined) / A_scale,
            "rigidity": all(e["equality"] for e in (e12, e13, e14)),
            "mass": mass}


def _willmore_bracket(W: float, a: float) -> float:
    """``a (sqrt(W) + sqrt(W + (1+2a)/a^2)) / (1+2a)``."""
    return a * (math.sqrt(W) + math.sqrt(W + (1 + 2 * a) / a**2)) / (1 + 2 * a)


def willmore_mass_bound(bd: BoundaryData, limit_capacity: Optional[float] = None,
                        mass: Optional[float] = None) -> dict:
    """Mass lower bounds from the capacity/Willmore inequality.

    ``1 <= a^(1/a) (4 pi / C_p)^(1/(3-p)) (3-p) m + bracket^2`` is solved for
    ``m``; the ``p -> 1`` form ``sqrt(C_1 / 16 pi) (1 - W)`` uses
    ``limit_capacity`` (default: the boundary area).  With ``mass`` given the
    slack ``mass - mass_lower_bound`` is reported too.
    """
    p, a = bd.p, bd.a
    if not 1.0 < p < 3.0:
        raise ValueError(f"p must lie in (1, 3) so that a is finite and positive, got {p}")
    coeff = a ** (1.0 / a) * (4.0 * math.pi / bd.C_p) ** (1.0 / (3.0 - p)) * (3.0 - p)
    willmore_term = _willmore_bracket(bd.W, a) ** 2
    cap1 = bd.area if limit_capacity is None else limit_capacity
    out = {"mass_lower_bound": (1.0 - willmore_term) / coeff,
           "coefficient": coeff, "willmore_term": willmore_term,
           "hawking_lower_bound": math.sqrt(cap1 / (16.0 * math.pi)) * (1.0 - bd.W),
           "limit_capacity": cap1}
    if mass is not None:
        out["slack"] = mass - out["mass_lower_bound"]
        out["equality"] = abs(out["slack"]) < EQUALITY_TOL * (1.0 + abs(mass))
    return out


def radial_region(metric: RadialMetric, p: float, r_inner: float, r_outer: float) -> dict:
    """Volume, width and exact p-capacity of the radial shell ``r_inner <= r <= r_outer``.

    The shell potential has constant flux ``r^2 |grad u|^(p-1)``, giving
    ``C_p = 4 pi (int phi r^(-2/(p-1)) dr)^(1-p)``.
    """
    _check_p(p)
    if not metric.r_min <= r_inner < r_outer:
        raise ValueError(f"need r_min <= r_inner < r_outer, got {r_inner}, {r_outer}")
    k = 2.0 / (p - 1.0)
    pts = [x for x in metric.breakpoints if r_inner < x < r_outer] or None
    kw = dict(epsabs=0.0, epsrel=1e-13, limit=200, points=pts)
    width = integrate.quad(metric.phi_at, r_inner, r_outer, **kw)[0]
    vol = integrate.quad(lambda r: 4.0 * math.pi * r * r * metric.phi_at(r), r_inner, r_outer, **kw)[0]
    resist = integrate.quad(lambda r: metric.phi_at(r) * r**-k, r_inner, r_outer, **kw)[0]
    return {"vol": vol, "L": width, "C_p_exact": 4.0 * math.pi * resist ** (1.0 - p)}


def hmax_bounds(bd: BoundaryData, mass: float, region: Optional[dict] = None) -> dict:
    """Slack of the ``H_max`` mass inequality and the localized positivity test.

    ``region`` holds ``vol`` and ``L`` (and optionally ``C_p_exact``); the
    test-function capacity bound ``L^-p vol`` then feeds the localized condition.
    """
    if bd.H_max < 0:
        raise ValueError(f"H_max = {bd.H_max} < 0 lies outside the theorem hypotheses")
    p, a = bd.p, bd.a
    bracket = _willmore_bracket(bd.W, a) ** (2.0 * (2.0 - p) / (3.0 - p))
    mass_term = a ** (1.0 / a) * (4.0 * math.pi / bd.C_p) ** (1.0 / (3.0 - p)) * (5.0 - p) * mass
    h_term = bd.H_max * a ** ((1.0 - p) / (3.0 - p)) * (bd.C_p / (4.0 * math.pi)) ** (1.0 / (3.0 - p)) * bracket
    rhs = mass_term + h_term
    out = {"id": "hmax_mass", "lhs": 2.0, "rhs": rhs, "slack": rhs - 2.0,
           "holds": rhs - 2.0 >= -EQUALITY_TOL * (2.0 + abs(rhs))}
    if region is not None:
        vol, L = float(region["vol"]), float(region["L"])
        if vol <= 0 or L <= 0:
            raise ValueError("region needs positive vol and L")
        lhs = bd.H_max * bracket
        cap_bound = L**-p * vol
        rhs_loc = 2.0 * (4.0 * math.pi * L**p / vol) ** (1.0 / (3.0 - p)) * a ** ((p - 1.0) / (3.0 - p))
        loc = {"capacity_test_bound": cap_bound, "lhs": lhs, "rhs": rhs_loc,
               "certifies_positive_mass": lhs <= rhs_loc}
        if "C_p_exact" in region:
            cap = float(region["C_p_exact"])
            loc["C_p_exact"] = cap
            loc["test_bound_holds"] = cap <= cap_bound * (1.0 + 1e-12)
            loc["rhs_exact_capacity"] = 2.0 * (4.0 * math.pi / cap) ** (1.0 / (3.0 - p)) * a ** ((p - 1.0) / (3.0 - p))
            loc["certifies_with_exact_capacity"] = lhs <= loc["rhs_exact_capacity"]
        out["localized"] = loc
    return out


def capacity_p_limit(metric: RadialMetric, p_sequence: Sequence[float] = DEFAULT_P_SEQUENCE) -> dict:
    """``lim_{p -> 1} C_p`` by quadratic extrapolation in ``p - 1`` through the last three entries."""
    ps = [float(p) for p in p_sequence]
    if len(ps) < 3:
        raise ValueError(f"need at least 3 p values for extrapolation, got {len(ps)}")
    if any(not 1.0 < p <= 2.0 for p in ps):
        raise ValueError("p values must lie in (1, 2]")
    if any(q >= p for p, q in zip(ps, ps[1:])):
        raise ValueError("p sequence must be strictly decreasing towards 1")
    caps = [capacity(metric, p) for p in ps]
    x = np.array(ps[-3:]) - 1.0
    coef = np.polyfit(x, np.array(caps[-3:]), 2)
    limit = float(np.polyval(coef, 0.0))
    area = 4.0 * math.pi * metric.r_min**2
    return {"p": ps, "C_p": caps, "extrapolated": limit, "boundary_area": area,
            "relative_gap": abs(limit - area) / area}
