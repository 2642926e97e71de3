"""Monotone level-set quantities F, A, B, D, G and their consistency checks.

With ``t`` the level parameter (``u = 1 - c t^(-a)`` on the level) and the
surface integrals ``I2 = int |grad u|^2``, ``IH = int |grad u| H``:

    F = 4 pi t - (ca)^-1 t^(a+1) IH + (ca)^-2 t^(2a+1) I2
    B = 4 pi t - (ca)^-2 t^(2a+1) I2
    A = 8 pi t - (ca)^-1 t^(a+1) IH
    D = 4 pi t^-a + c^-1 IH - (ca)^-2 (1+2a) t^a I2
    G = -4 a^2 pi c t^-a + (c t^-a)^-1 I2

They satisfy ``F = A - B``, ``D = t^(-a-1) ((1+2a) B - a A)`` and
``G = -c a^2 t^(-a-1) B`` identically, and ``D' = -a t^(-a-1) F'``,
``G' = c a^3 t^(-a-2) F`` along a family of regular levels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .geometry import hawking_mass
from .levelsurf import LevelExtractionError, LevelSurfaceData, extract_level, _reference_potential
from .pdesolve import GridField
from .radial import RadialPotential, level_radius, level_value

__all__ = [
    "QuantityRow",
    "QuantitySeries",
    "MONOTONE_TOL",
    "quantities_from_level",
    "quantity_series",
    "series_from_levels",
    "series_checks",
    "asymptotic_check",
    "green_quantity",
    "hawking_form_quantities",
    "SERIES_COLUMNS",
]

MONOTONE_TOL = 1e-7
SERIES_COLUMNS = ("t", "s", "F", "A", "B", "D", "G", "m_H", "regular")


@dataclass(frozen=True)
class QuantityRow:
    t: float
    s: float
    F: float
    A: float
    B: float
    D: float
    G: float
    m_H: float
    regular: bool

    def as_row(self) -> list:
        d = asdict(self)
        return [d[c] for c in SERIES_COLUMNS]


@dataclass
class QuantitySeries:
    p: float
    a: float
    c: float
    C_p: float
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def column(self, name: str, regular_only: bool = False) -> np.ndarray:
        rows = [r for r in self.rows if r.regular] if regular_only else self.rows
        return np.array([getattr(r, name) for r in rows], dtype=float)

    def to_dict(self) -> dict:
        return {"p": self.p, "a": self.a, "c": self.c, "C_p": self.C_p,
                "columns": list(SERIES_COLUMNS), "rows": [r.as_row() for r in self.rows],
                "skipped": self.skipped}


def quantities_from_level(level: LevelSurfaceData, a: float, c: float) -> QuantityRow:
    t, I2, IH = level.t, level.int_grad2, level.int_gradH
    ca = c * a
    B = 4.0 * math.pi * t - t ** (2.0 * a + 1.0) * I2 / ca**2
    A = 8.0 * math.pi * t - t ** (a + 1.0) * IH / ca
    F = 4.0 * math.pi * t - t ** (a + 1.0) * IH / ca + t ** (2.0 * a + 1.0) * I2 / ca**2
    D = 4.0 * math.pi * t**-a + IH / c - (1.0 + 2.0 * a) * t**a * I2 / ca**2
    G = -4.0 * a * a * math.pi * c * t**-a + I2 * t**a / c
    m_H = hawking_mass(level.area, level.int_H2)
    return QuantityRow(t=t, s=level.s, F=F, A=A, B=B, D=D, G=G, m_H=m_H, regular=bool(level.regular))


def series_from_levels(levels: Iterable[LevelSurfaceData], p: float, a: float, c: float,
                       C_p: float) -> QuantitySeries:
    series = QuantitySeries(p, a, c, C_p)
    for lv in levels:
        series.rows.append(quantities_from_level(lv, a, c))
    if not series.rows:
        raise ValueError("empty t grid")
    return series


def quantity_series(source: Union[RadialPotential, GridField], t_grid: Sequence[float],
                    reference: Optional[RadialPotential] = None) -> QuantitySeries:
    """Evaluate the five quantities and the Hawking mass on ``t_grid``.

    Grid sources use ``a``, ``c`` and ``C_p`` of ``reference`` (default: the
    radial potential of the grid metric); levels whose contour cannot be
    extracted are recorded in ``skipped`` and kept as non-regular NaN rows.
    """
    t_grid = [float(t) for t in t_grid]
    if not t_grid:
        raise ValueError("empty t grid")
    pot = source if isinstance(source, RadialPotential) else (
        reference or _reference_potential(source.grid.metric, source.p))
    tb = pot.boundary_level
    if min(t_grid) < tb * (1.0 - 1e-10):
        raise ValueError(f"t grid minimum {min(t_grid)} is below the boundary level c^(1/a) = {tb}")
    series = QuantitySeries(pot.p, pot.a, pot.c, pot.C_p)
    for t in t_grid:
        try:
            lv = extract_level(source, t, reference=pot)
        except LevelExtractionError as exc:
            series.skipped.append({"t": t, "reason": str(exc)})
            nan = float("nan")
            series.rows.append(QuantityRow(t, level_value(pot, t), nan, nan, nan, nan, nan, nan, False))
            continue
        series.rows.append(quantities_from_level(lv, pot.a, pot.c))
    return series


def _violations(values, t, kind, tol, direction):
    """Indices where consecutive values move against ``direction`` (+1 up, -1 down) beyond tol."""
    out = []
    for i in range(len(values) - 1):
        change = (values[i + 1] - values[i]) * direction
        if change < -tol * (abs(values[i]) + 1.0):
            out.append({"check": kind, "index": i + 1, "t": float(t[i + 1]),
                        "change": float(values[i + 1] - values[i])})
    return out


def _fd_residual(t, residual_fn):
    """Central-FD residual on the full grid and on every other point.

    ``residual_fn(idx)`` returns ``(residual, scale)`` on the interior points of
    the sub-grid ``t[idx]``.  The relative residual is normalised by the
    largest scale on the grid, so flat stretches where both sides vanish do
    not count as failures.  The observed order is the median of
    ``log2(coarse / fine)`` at shared points whose coarse residual is above
    round-off.
    """
    n = len(t)
    fine, fscale = residual_fn(np.arange(n))
    coarse, _ = residual_fn(np.arange(0, n, 2))
    # fine interior holds t[1..n-2]; coarse interior holds t[2], t[4], ...
    shared = 2 * (np.arange(len(coarse)) + 1)
    f_at = fine[shared - 1]
    c_at = coarse
    top = float(np.max(fscale))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = c_at / f_at
        good = np.isfinite(ratio) & (f_at > 0) & (c_at > 1e-10 * top)
        order = float(np.median(np.log2(ratio[good]))) if np.any(good) else float("nan")
    rel = float(np.max(fine)) / top if top > 0 else 0.0
    return {"max_abs": float(np.max(fine)), "max_rel": rel, "observed_order": order}


def series_checks(series: QuantitySeries, tol: float = MONOTONE_TOL) -> dict:
    """Algebraic, monotonicity, finite-difference and positivity checks on regular rows."""
    reg = [r for r in series.rows if r.regular]
    report = {"n_rows": len(series.rows), "n_regular": len(reg), "violations": [], "residual_norms": {},
              "observed_orders": {}}
    if len(reg) < 3:
        report["error"] = "fewer than 3 regular rows"
        return report
    a, c = series.a, series.c
    t = np.array([r.t for r in reg])
    col = {k: np.array([getattr(r, k) for r in reg]) for k in ("F", "A", "B", "D", "G")}
    F, A, B, D, G = (col[k] for k in ("F", "A", "B", "D", "G"))

    scale_t = 4.0 * math.pi * t
    scale_d = 4.0 * math.pi * t**-a + t ** (-a - 1.0) * ((1 + 2 * a) * np.abs(B) + a * np.abs(A))
    scale_g = 4.0 * math.pi * c * a * a * t**-a
    report["residual_norms"]["F=A-B"] = float(np.max(np.abs(F - (A - B)) / (scale_t + np.abs(A) + np.abs(B))))
    report["residual_norms"]["D=t^(-a-1)((1+2a)B-aA)"] = float(
        np.max(np.abs(D - t ** (-a - 1.0) * ((1 + 2 * a) * B - a * A)) / scale_d))
    report["residual_norms"]["G=-ca^2t^(-a-1)B"] = float(
        np.max(np.abs(G + c * a * a * t ** (-a - 1.0) * B) / scale_g))

    v = report["violations"]
    v += _violations(D, t, "D nonincreasing", tol, -1)
    v += _violations(B, t, "B nondecreasing", tol, +1)
    v += _violations(A, t, "A nondecreasing", tol, +1)
    v += _violations(F, t, "F nondecreasing", tol, +1)
    combo = (1 + 2 * a) * B - a * A
    for name, vals in (("D >= 0", D), ("(1+2a)B - aA >= 0", combo)):
        for i in np.nonzero(vals < -tol * (np.abs(vals) + 1.0))[0]:
            v.append({"check": name, "index": int(i), "t": float(t[i]), "value": float(vals[i])})

    if len(t) >= 5:
        def d_identity(idx):
            tt = t[idx]
            dD = np.gradient(D[idx], tt, edge_order=2)
            rhs = -a * tt ** (-a - 1.0) * np.gradient(F[idx], tt, edge_order=2)
            return np.abs(dD - rhs)[1:-1], (np.abs(dD) + np.abs(rhs))[1:-1]

        def g_identity(idx):
            tt = t[idx]
            dG = np.gradient(G[idx], tt, edge_order=2)
            rhs = c * a**3 * tt ** (-a - 2.0) * F[idx]
            return np.abs(dG - rhs)[1:-1], (np.abs(dG) + np.abs(rhs))[1:-1]

        for name, fn in (("D'+at^(-a-1)F'", d_identity), ("G'-ca^3t^(-a-2)F", g_identity)):
            fd = _fd_residual(t, fn)
            report["residual_norms"][name] = fd["max_rel"]
            report["observed_orders"][name] = fd["observed_order"]
    return report


def asymptotic_check(series: QuantitySeries, mass: float, tol: float = 1e-9,
                     window: float = 10.0) -> dict:
    """Upper bounds ``A <= 4 pi (5-p) m`` and ``B <= 4 pi (3-p) m`` on the rows with ``t >= t_max / window``.

    For ``p = 2`` the relative gaps to the limits ``12 pi m`` and ``4 pi m`` at
    the last row are reported as well.
    """
    p = series.p
    reg = [r for r in series.rows if r.regular]
    t_max = max(r.t for r in reg)
    tail = [r for r in reg if r.t >= t_max / window]
    bound_A = 4.0 * math.pi * (5.0 - p) * mass
    bound_B = 4.0 * math.pi * (3.0 - p) * mass
    out = {
        "t_from": min(r.t for r in tail), "t_max": t_max, "rows": len(tail),
        "bound_A": bound_A, "bound_B": bound_B,
        "max_A": max(r.A for r in tail), "max_B": max(r.B for r in tail),
    }
    out["A_ok"] = out["max_A"] <= bound_A + tol * (abs(bound_A) + 1.0)
    out["B_ok"] = out["max_B"] <= bound_B + tol * (abs(bound_B) + 1.0)
    if p == 2.0 and mass > 0:
        last = max(tail, key=lambda r: r.t)
        out["A_limit_relgap"] = abs(last.A - bound_A) / bound_A
        out["B_limit_relgap"] = abs(last.B - bound_B) / bound_B
    return out


def green_quantity(pot: RadialPotential, tau_grid: Sequence[float], tol: float = MONOTONE_TOL) -> dict:
    """``G(tau) = -4 a^2 pi tau + tau^-1 int_{1-u = tau} |grad u|^2`` and its monotonicity in ``tau``.

    ``tau = 1 - u = c t^(-a)`` runs over ``(0, 1]``; the same formula holds for
    any normalization ``c``.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if tau.size == 0:
        raise ValueError("empty tau grid")
    if np.any(tau <= 0) or np.any(tau > 1.0):
        raise ValueError("tau values must lie in (0, 1]")
    a = pot.a
    vals, ts = [], []
    for x in tau:
        t = pot.boundary_level * x ** (-1.0 / a)
        r = level_radius(pot, t)
        G = pot.grad(r)
        vals.append(-4.0 * a * a * math.pi * x + 4.0 * math.pi * r * r * G * G / x)
        ts.append(t)
    vals = np.array(vals)
    order = np.argsort(tau)
    v_sorted, tau_sorted = vals[order], tau[order]
    violations = _violations(v_sorted, tau_sorted, "G nonincreasing in tau", tol, -1)
    return {"tau": tau, "t": np.array(ts), "G": vals, "violations": violations}


def hawking_form_quantities(pot: RadialPotential, t: float) -> tuple:
    """``(A, B)`` recomputed from the mean-curvature form with ``U = (1-p) log(1-u)``.

    ``B = 4 pi t [1 - int (H + (p-1) U_nn/|grad U|)^2 / (4 pi (3-p)^2)]`` and
    ``A = 8 pi t [1 - int H (H + (p-1) U_nn/|grad U|) / (8 pi (3-p))]``,
    where ``U_nn`` is built from the Hessian of ``u``.
    """
    p = pot.p
    r = level_radius(pot, t)
    one_minus_u = (pot.boundary_level / t) ** pot.a
    G = pot.grad(r)
    H = 2.0 / (r * float(pot.metric.phi(r)))
    u_nn = pot.hessian_normal(r)
    grad_U = (p - 1.0) * G / one_minus_u
    U_nn = (p - 1.0) * (u_nn / one_minus_u + G * G / one_minus_u**2)
    w = H + (p - 1.0) * U_nn / grad_U
    area = 4.0 * math.pi * r * r
    B = 4.0 * math.pi * t * (1.0 - w * w * area / (4.0 * math.pi * (3.0 - p) ** 2))
    A = 8.0 * math.pi * t * (1.0 - H * w * area / (8.0 * math.pi * (3.0 - p)))
    return A, B
