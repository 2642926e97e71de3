"""Command-line front end: solves, scans, checks and report emission.

Exit codes: 0 success, 1 error (bad config, non-convergence, invalid
parameters), 2 computation finished but the theorem hypotheses (nonnegative
scalar curvature, ``1 < p <= 2``, ``H_max >= 0``) are violated.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry, identities, massbounds, monotone
from .geometry import RadialMetric, make_radial_metric
from .levelsurf import LevelExtractionError
from .pdesolve import ConvergenceError, make_grid, regularized_capacity, solve_regularized
from .radial import solve_radial

__all__ = ["main", "run", "RunConfig", "ConfigError", "read_profile_csv", "THREADS_ENV"]

THREADS_ENV = "PHARMLAB_THREADS"
COMMANDS = ("solve-radial", "solve-grid", "scan", "check-monotone", "check-mass",
            "capacity-sweep", "identity", "rigidity-gen")
EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESIS = 0, 1, 2

DEFAULTS = {
    "model": "euclidean", "mass": 1.0, "r0": None, "profile": None, "sigma": 1.0,
    "p": "2", "eps": None, "t": None, "t_spacing": "log",
    "resolution": "64x64", "r_out": None, "spacing": "log",
    "out": None, "report": None, "tol": monotone.MONOTONE_TOL, "timings": False,
    "region": None, "p_limit": False, "beta": None, "mode": "p-harmonic",
    "windows": None, "m_h": 2.0, "rho_min": None, "rho_max": None, "n_rows": 400,
}


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending field or line."""


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values) if k not in ("timings",)}


def read_profile_csv(path: str) -> list:
    """Rows ``(r, phi)`` from a two-column CSV; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                r, phi = float(rec[0]), float(rec[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise ConfigError(f"{path}:{lineno}: expected two numeric columns r, phi") from None
            rows.append((r, phi))
    return rows


def _floats(text, name: str) -> list:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, list):
        items = text
    else:
        items = [x for x in str(text).split(",") if x.strip()]
    try:
        return [float(x) for x in items]
    except (TypeError, ValueError):
        raise ConfigError(f"field '{name}': expected a number or comma-separated numbers, got {text!r}") from None


def _t_grid(spec, spacing: str) -> np.ndarray:
    if isinstance(spec, dict):
        lo, hi, n = spec.get("min"), spec.get("max"), spec.get("count")
        spacing = spec.get("spacing", spacing)
    else:
        parts = str(spec).split(":")
        if len(parts) != 3:
            raise ConfigError(f"field 't': expected min:max:count, got {spec!r}")
        lo, hi, n = parts
    try:
        lo, hi, n = float(lo), float(hi), int(n)
    except (TypeError, ValueError):
        raise ConfigError(f"field 't': non-numeric entry in {spec!r}") from None
    if n < 1 or hi < lo or lo <= 0:
        raise ConfigError(f"field 't': need 0 < min <= max and count >= 1, got {spec!r}")
    if spacing == "log":
        return np.geomspace(lo, hi, n)
    if spacing == "linear":
        return np.linspace(lo, hi, n)
    raise ConfigError(f"field 't_spacing': expected 'log' or 'linear', got {spacing!r}")


def _resolution(text) -> tuple:
    if isinstance(text, list):
        return tuple(int(x) for x in text)
    try:
        return tuple(int(x) for x in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"field 'resolution': expected e.g. 128x128, got {text!r}") from None


def _metric(cfg: RunConfig) -> RadialMetric:
    kind = cfg.model
    if kind == "profile":
        if not cfg.profile:
            raise ConfigError("field 'profile': profile model needs a CSV path")
        table = read_profile_csv(cfg.profile)
        return make_radial_metric("profile", r_min=cfg.r0, table=table, sigma=float(cfg.sigma))
    r0 = cfg.r0
    if r0 is None:
        r0 = 2.0 * float(cfg.mass) if kind == "schwarzschild" else 1.0
    return make_radial_metric(kind, r_min=float(r0), mass=float(cfg.mass) if kind == "schwarzschild" else 0.0)


def _single_p(cfg: RunConfig) -> float:
    ps = _floats(cfg.p, "p")
    if len(ps) != 1:
        raise ConfigError(f"field 'p': this command takes a single p, got {cfg.p!r}")
    return ps[0]


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"environment {THREADS_ENV}: expected an integer, got {raw!r}") from None


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _write_text(path: Optional[str], text: str) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _hypotheses(metric: RadialMetric, p: Optional[float]) -> dict:
    flags = massbounds.hypothesis_flags(metric)
    if p is not None:
        flags["p_in_theorem_range"] = 1.0 < p <= 2.0
    return flags


def _hypotheses_ok(flags: dict) -> bool:
    return all(v for k, v in flags.items() if isinstance(v, bool))


def _table(rows: list, headers: list) -> str:
    cells = [[str(h) for h in headers]] + [[_fmt(x) for x in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "yes" if x else "no"
    if isinstance(x, (float, np.floating)):
        return f"{x:.6g}"
    return str(x)


# -- subcommands -----------------------------------------------------------


def _cmd_solve_radial(cfg, timer):
    metric = _metric(cfg)
    p = _single_p(cfg)
    pot = timer("solve", lambda: solve_radial(metric, p))
    doc = pot.to_dict()
    if cfg.out:
        _write_text(cfg.out, _dump(doc))
    results = {"C_p": pot.C_p, "a": pot.a, "c": pot.c, "boundary_level": pot.boundary_level}
    if not cfg.out:
        results["potential"] = doc
    return results, [], EXIT_OK


def _cmd_solve_grid(cfg, timer):
    metric = _metric(cfg)
    p = _single_p(cfg)
    res = _resolution(cfg.resolution)
    r_out = float(cfg.r_out) if cfg.r_out is not None else 16.0 * metric.r_min
    grid = make_grid(metric, r_out, res, spacing=cfg.spacing)
    exact = massbounds.radial_region(metric, p, metric.r_min, r_out)["C_p_exact"]
    if cfg.eps is None:
        eps_list = [0.0] if p == 2.0 else [0.1, 0.01, 0.001]
    else:
        eps_list = _floats(cfg.eps, "eps")
    rows, initial = [], None
    for eps in sorted(eps_list, reverse=True):
        fld = timer(f"solve eps={eps:g}", lambda: solve_regularized(grid, p, eps, (0.0, 1.0), initial=initial))
        initial = fld.values
        cap = regularized_capacity(fld)
        rows.append({"eps": eps, "capacity": cap, "exact_annulus_capacity": exact,
                     "relative_error": abs(cap - exact) / exact, "iterations": fld.iterations,
                     "residual": fld.residual})
    if cfg.out:
        _write_text(cfg.out, _dump(fld.to_dict()))
    print(_table([[r["eps"], r["capacity"], r["relative_error"], r["iterations"]] for r in rows],
                 ["eps", "capacity", "rel_error", "iterations"]), end="", file=sys.stderr)
    return {"resolution": list(res), "r_out": r_out, "runs": rows}, [], EXIT_OK


def _series_csv(series: monotone.QuantitySeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(monotone.SERIES_COLUMNS)
    for row in series.rows:
        writer.writerow([repr(float(x)) if not isinstance(x, bool) else int(x) for x in row.as_row()])
    return buf.getvalue()


def _scan_series(cfg, timer):
    metric = _metric(cfg)
    p = _single_p(cfg)
    pot = timer("solve", lambda: solve_radial(metric, p))
    if cfg.t is None:
        tb = pot.boundary_level
        t = np.geomspace(tb, 1000.0 * tb, 200)
    else:
        t = _t_grid(cfg.t, cfg.t_spacing)
    tb = pot.boundary_level
    if t.min() < tb * (1.0 - 1e-10):
        raise ConfigError(f"field 't': minimum {t.min():g} is below the boundary level c^(1/a) = {tb:.12g}")
    chunks = np.array_split(t, min(_threads(), len(t)))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = timer("series", lambda: list(pool.map(lambda ch: monotone.quantity_series(pot, ch), chunks)))
    series = monotone.QuantitySeries(pot.p, pot.a, pot.c, pot.C_p)
    for part in parts:
        series.rows.extend(part.rows)
        series.skipped.extend(part.skipped)
    return metric, pot, series


def _cmd_scan(cfg, timer):
    metric, pot, series = _scan_series(cfg, timer)
    _write_text(cfg.out, _series_csv(series))
    return {"rows": len(series.rows), "skipped": series.skipped, "C_p": pot.C_p}, [], EXIT_OK


def _cmd_check_monotone(cfg, timer):
    metric, pot, series = _scan_series(cfg, timer)
    report = monotone.series_checks(series, tol=float(cfg.tol))
    mass, mass_radius = massbounds.model_mass(metric)
    asym = monotone.asymptotic_check(series, mass)
    flags = _hypotheses(metric, pot.p)
    if cfg.out:
        _write_text(cfg.out, _series_csv(series))
    violations = list(report["violations"])
    for key in ("A_ok", "B_ok"):
        if not asym[key]:
            violations.append({"check": f"asymptotic bound {key[0]}", "value": asym[f"max_{key[0]}"],
                               "bound": asym[f"bound_{key[0]}"]})
    rows = [[name, val] for name, val in report["residual_norms"].items()]
    rows += [[f"order {name}", val] for name, val in report["observed_orders"].items()]
    rows += [["violations", len(violations)], ["hypotheses hold", _hypotheses_ok(flags)]]
    print(_table(rows, ["check", "value"]), end="")
    results = {"checks": report, "asymptotic": asym, "mass": mass, "mass_radius": mass_radius,
               "hypotheses": flags}
    return results, violations, EXIT_OK if _hypotheses_ok(flags) else EXIT_HYPOTHESIS


def _cmd_check_mass(cfg, timer):
    metric = _metric(cfg)
    p = _single_p(cfg)
    pot = timer("solve", lambda: solve_radial(metric, p))
    bd = massbounds.boundary_data(pot)
    mass, mass_radius = massbounds.model_mass(metric)
    ineq = massbounds.boundary_inequalities(bd, mass)
    willmore = massbounds.willmore_mass_bound(bd, mass=mass)
    region = None
    if cfg.region:
        r_in, r_out = _floats(cfg.region, "region")
        region = massbounds.radial_region(metric, p, r_in, r_out)
    flags = _hypotheses(metric, p)
    flags["H_max_nonnegative"] = bd.H_max >= 0
    hmax = massbounds.hmax_bounds(bd, mass, region) if bd.H_max >= 0 else None
    entries = list(ineq["inequalities"])
    entries.append({"id": "willmore_mass", "lhs": willmore["mass_lower_bound"], "rhs": mass,
                    "slack": willmore["slack"], "holds": willmore["slack"] >= -massbounds.EQUALITY_TOL,
                    "equality": willmore["equality"]})
    if hmax is not None:
        entries.append({k: hmax[k] for k in ("id", "lhs", "rhs", "slack", "holds")})
    violations = [{"check": e["id"], "slack": e["slack"]} for e in entries if not e["holds"]]
    print(_table([[e["id"], e["lhs"], e["rhs"], e["slack"], e.get("equality", False)] for e in entries],
                 ["inequality", "lhs", "rhs", "slack", "equality"]), end="")
    results = {"boundary": bd.to_dict(), "mass": mass, "mass_radius": mass_radius, "inequalities": entries,
               "sum_identity_residual": ineq["sum_identity_residual"], "rigidity": ineq["rigidity"],
               "willmore": willmore, "hmax": hmax, "hypotheses": flags}
    return results, violations, EXIT_OK if _hypotheses_ok(flags) else EXIT_HYPOTHESIS


def _cmd_capacity_sweep(cfg, timer):
    metric = _metric(cfg)
    ps = _floats(cfg.p, "p")
    from .radial import capacity

    with ThreadPoolExecutor(max_workers=min(_threads(), len(ps))) as pool:
        caps = timer("capacities", lambda: list(pool.map(lambda p: capacity(metric, p), ps)))
    rows = [{"p": p, "C_p": c} for p, c in zip(ps, caps)]
    results = {"capacities": rows}
    if cfg.p_limit:
        results["p_limit"] = timer("p limit", lambda: massbounds.capacity_p_limit(metric))
    print(_table([[r["p"], r["C_p"]] for r in rows], ["p", "C_p"]), end="")
    return results, [], EXIT_OK


def _cmd_identity(cfg, timer):
    metric = _metric(cfg)
    p = _single_p(cfg)
    pot = timer("solve", lambda: solve_radial(metric, p))
    sol = timer("transform", lambda: identities.transform_field(pot, cfg.mode))
    betas = sol.betas if cfg.beta is None else tuple(_floats(cfg.beta, "beta"))
    lo = metric.r_min * (1.05 if metric.singular_at_boundary else 1.01)
    radii = np.geomspace(lo, 100.0 * metric.r_min, 100)
    if cfg.windows:
        vals = _floats(cfg.windows, "windows")
        if len(vals) % 2:
            raise ConfigError("field 'windows': expected pairs t1,t2,...")
        windows = list(zip(vals[::2], vals[1::2]))
    else:
        w0 = sol.w(metric.r_min * (1.0 + 1e-9) if metric.singular_at_boundary else metric.r_min)
        windows = [(1.05 * w0, 2.0 * w0), (1.5 * w0, 3.0 * w0), (2.0 * w0, 10.0 * w0)]
    per_beta, violations = [], []
    for beta in betas:
        point = [identities.identity_check(sol, beta, r=float(r)) for r in radii]
        integ = [identities.identity_check(sol, beta, levels=w) for w in windows]
        per_beta.append({"beta": beta,
                         "max_pointwise_relative": max(x["relative"] for x in point),
                         "R_alpha_ge_S_grad": all(x["R_alpha_ge_S_grad"] for x in point),
                         "integrated": integ})
        if not all(x["R_alpha_ge_S_grad"] for x in point):
            violations.append({"check": "R_alpha >= S |grad w|", "beta": beta})
    print(_table([[b["beta"], b["max_pointwise_relative"], max(x["gap"] for x in b["integrated"])]
                  for b in per_beta], ["beta", "pointwise_rel", "integrated_gap"]), end="")
    results = {"mode": sol.mode, "alpha": sol.alpha, "system_residual": sol.max_residual,
               "checks": per_beta}
    return results, violations, EXIT_OK


def _cmd_rigidity_gen(cfg, timer):
    m_h = float(cfg.m_h)
    rho_min = cfg.rho_min
    if rho_min is None:
        rho_min = 1.0 if m_h == 0 else 1.5 * m_h
    rho_min = float(rho_min)
    rho_max = float(cfg.rho_max) if cfg.rho_max is not None else 100.0 * rho_min
    metric = identities.rigidity_metric(m_h, 2, (rho_min, rho_max))
    rho = np.geomspace(rho_min, rho_max, int(cfg.n_rows))
    phi = metric.phi(rho)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["r", "phi"])
    for r, ph in zip(rho, phi):
        writer.writerow([repr(float(r)), repr(float(ph))])
    _write_text(cfg.out, buf.getvalue())
    sample = np.geomspace(rho_min, rho_max, 20)
    hm = [geometry.hawking_mass(4 * math.pi * r * r, geometry.sphere_geometry(metric, r).H ** 2 * 4 * math.pi * r * r)
          for r in sample]
    return {"metric": metric.to_dict(), "rows": len(rho), "hawking_mass": hm}, [], EXIT_OK


HANDLERS = {
    "solve-radial": _cmd_solve_radial, "solve-grid": _cmd_solve_grid, "scan": _cmd_scan,
    "check-monotone": _cmd_check_monotone, "check-mass": _cmd_check_mass,
    "capacity-sweep": _cmd_capacity_sweep, "identity": _cmd_identity, "rigidity-gen": _cmd_rigidity_gen,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; explicit flags override its fields")
    common.add_argument("--model", choices=geometry.KINDS)
    common.add_argument("--mass", type=float)
    common.add_argument("--r0", type=float, help="inner boundary radius r_min")
    common.add_argument("--profile", help="CSV of (r, phi) rows for --model profile")
    common.add_argument("--sigma", type=float, help="decay exponent of the profile tail")
    common.add_argument("--p", help="p value (comma list for capacity-sweep)")
    common.add_argument("--out", help="primary output file (CSV or JSON); stdout if omitted")
    common.add_argument("--report", help="JSON report file")
    common.add_argument("--timings", action="store_true", default=None, help="record wall-clock timings")

    parser = argparse.ArgumentParser(prog="pharmlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-radial", parents=[common], help="exact radial potential to JSON")
    g = sub.add_parser("solve-grid", parents=[common], help="regularized grid solve on an annulus")
    g.add_argument("--eps", help="comma list of regularization values")
    g.add_argument("--resolution", help="node counts, e.g. 128x128 or 32x16x16")
    g.add_argument("--r-out", dest="r_out", type=float)
    g.add_argument("--spacing", choices=("log", "uniform", "sqrt"))
    for name in ("scan", "check-monotone"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--t", help="t grid as min:max:count")
        s.add_argument("--t-spacing", dest="t_spacing", choices=("log", "linear"))
        if name == "check-monotone":
            s.add_argument("--tol", type=float, help="monotonicity tolerance factor")
    m = sub.add_parser("check-mass", parents=[common])
    m.add_argument("--region", help="r_inner,r_outer of a separating shell")
    c = sub.add_parser("capacity-sweep", parents=[common])
    c.add_argument("--p-limit", dest="p_limit", action="store_true", default=None,
                   help="also extrapolate C_p as p -> 1")
    i = sub.add_parser("identity", parents=[common])
    i.add_argument("--mode", choices=identities.MODES)
    i.add_argument("--beta", help="comma list; default: all admissible values")
    i.add_argument("--windows", help="t1,t2[,t1,t2...] level windows for the integrated form")
    r = sub.add_parser("rigidity-gen", parents=[common])
    r.add_argument("--m-h", dest="m_h", type=float)
    r.add_argument("--rho-min", dest="rho_min", type=float)
    r.add_argument("--rho-max", dest="rho_max", type=float)
    r.add_argument("--n-rows", dest="n_rows", type=int)
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    model = data.pop("model", None)
    if isinstance(model, dict):
        data.setdefault("model", model.get("kind"))
        for key in ("mass", "r0", "r_min", "sigma", "profile"):
            if key in model:
                data.setdefault("r0" if key == "r_min" else key, model[key])
    elif model is not None:
        data["model"] = model
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{path}: unknown field '{unknown[0]}'")
    return data


def _build_config(ns: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    if getattr(ns, "config", None):
        values.update(_load_config(ns.config))
    for key, val in vars(ns).items():
        if key in ("command", "config") or val is None:
            continue
        values[key] = val
    if values["model"] not in geometry.KINDS:
        raise ConfigError(f"field 'model': unknown kind {values['model']!r}")
    return RunConfig(ns.command, values)


def run(argv=None) -> int:
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    timings = {}

    def timer(label, fn):
        start = time.perf_counter()
        out = fn()
        timings[label] = time.perf_counter() - start
        return out

    try:
        cfg = _build_config(ns)
        results, violations, code = HANDLERS[ns.command](cfg, timer)
    except ConvergenceError as exc:
        print(f"error: {exc} (residual {exc.residual:.3e} after {exc.iterations} iterations)", file=sys.stderr)
        return EXIT_ERROR
    except (ConfigError, ValueError, LevelExtractionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = {"command": ns.command, "config_echo": cfg.echo(), "results": results,
              "violations": violations, "timings": timings if cfg.timings else None}
    if cfg.report:
        _write_text(cfg.report, _dump(report))
    elif ns.command in ("solve-radial", "solve-grid") and not cfg.out:
        _write_text(None, _dump(report))
    if code == EXIT_HYPOTHESIS:
        print("warning: theorem hypotheses violated; results are reported but not covered by the theorems",
              file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
