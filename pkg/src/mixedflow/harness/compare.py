"""Benchmark comparison report: model vs DRL vs no-control grids, FD, Pareto and lambda."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import ScenarioConfig
from ..game import (
    DomainError,
    NoEquilibriumError,
    ScalingParams,
    UnidentifiableError,
    cell_model,
    estimate_lambda,
    mean_speed_grid,
    nominals_from_config,
    one_pipe_speeds,
    solve_equilibrium,
)
from ..metrics import fundamental_diagram, pareto_check
from ..metrics.equilibrium import InsufficientDataError
from . import io
from .plots import plot_fd, plot_series
from .regression import lambda_regression
from .runner import load_run_records

log = logging.getLogger(__name__)

SOURCES = ("model", "drl", "baseline")
FIRST_HEADER = ["density_vpm", "av_penetration", "source", "rho_HV", "rho_AV", "u_star", "u_HV", "u_AV",
                "q_HV", "q_AV", "q_total"]
SECOND_HEADER = ["density_vpm", "av_penetration", "source", "du", "dq"]
IMPROVEMENT_HEADER = ["density_vpm", "av_penetration", "du_HV", "du_AV", "dq_HV", "dq_AV", "dq_total",
                      "d_max_flow"]
FALLBACK_LAMBDA = 0.5
IDENTITY_TOL = 1e-12


@dataclass
class CompareReport:
    out: Path
    lam: float
    lam_estimated: bool
    identities: dict
    missing: list
    fd_points: int
    pareto: list = field(default_factory=list)
    regression: dict | None = None

    @property
    def identities_ok(self) -> bool:
        return all(c["ok"] for c in self.identities.values())


def class_densities(cfg: ScenarioConfig) -> tuple[float, float]:
    """Per-lane HV / AV densities [veh/km] implied by the placed vehicle counts."""
    n_av = cfg.n_avs
    n_hv = cfg.n_vehicles - n_av
    lane_km = cfg.ring_length / 1000.0 * cfg.n_lanes
    return n_hv / lane_km, n_av / lane_km


def _class_flows(episodes: list[list]) -> dict:
    out = {}
    for label in ("HV", "AV"):
        q = [r.q_vph for recs in episodes for r in recs if r.cls == label]
        out[label] = float(np.mean(q)) if q else float("nan")
    return out


def _speed_grid_points(episodes: list[list]):
    """(rho_HV, rho_AV, u_HV, u_AV) per Edie cell shared by both classes."""
    pts = []
    for recs in episodes:
        by = {}
        for r in recs:
            by.setdefault((r.region_id, r.t), {})[r.cls] = r
        for key in sorted(by):
            d = by[key]
            if "HV" in d and "AV" in d:
                pts.append((d["HV"].rho_vpkm, d["AV"].rho_vpkm, d["HV"].u_mps, d["AV"].u_mps, key))
    return pts


def _num(entry: dict, mode: str, key: str) -> float:
    v = entry[mode][0].get(key) if mode in entry else None
    return float("nan") if v is None else float(v)


def _model_row(cfg, lam, nominals, scalings):
    r1, r2 = class_densities(cfg)
    try:
        sol = solve_equilibrium(r1, r2, lam, nominals, scalings)
    except (NoEquilibriumError, DomainError) as exc:
        log.warning("%s: no model solution (%s)", cfg.name, exc)
        nan = float("nan")
        return r1, r2, nan, nan, nan
    return r1, r2, sol.u_star, sol.u1, sol.u2


def model_fd_curves(penetration: float, nominals, scalings, lam: float, n: int = 80) -> dict:
    """q(rho) for HV-only, AV-only, 1-pipe and 2-pipe at the given AV share."""
    hv, av = nominals
    rho = np.linspace(0.5, min(hv.jam_density, av.jam_density) * 0.98, n)
    curves = {"HV": (rho, 3.6 * rho * hv.speed(rho)), "AV": (rho, 3.6 * rho * av.speed(rho))}
    r1, r2 = (1 - penetration) * rho, penetration * rho
    u, _, _ = one_pipe_speeds(r1, r2, nominals, scalings)
    curves["1-pipe"] = (rho, 3.6 * rho * u)
    cm = cell_model(r1, r2, nominals, scalings)
    two = []
    for k in range(n):
        if cm.two_pipe[k]:
            s = cm.surplus[k]
            p1 = cm.p1_star[k] + lam * s
            p2 = 1.0 - p1
            u1 = hv.speed(r1[k] / p1) if r1[k] > 0 else 0.0
            u2 = av.speed(r2[k] / p2) if r2[k] > 0 else 0.0
            two.append(3.6 * (r1[k] * u1 + r2[k] * u2))
        else:
            two.append(3.6 * rho[k] * u[k])
    curves["2-pipe"] = (rho, np.array(two))
    return curves


def _check(rows, lhs, rhs_fn) -> dict:
    err = 0.0
    for r in rows:
        a = io.parse(r[lhs])
        b = rhs_fn(r)
        if math.isnan(a) and math.isnan(b):
            continue
        err = max(err, abs(a - b)) if not (math.isnan(a) or math.isnan(b)) else math.inf
    return {"max_abs_error": err, "ok": err <= IDENTITY_TOL, "rows": len(rows)}


def identity_checks(out: Path) -> dict:
    """Re-read the written grids and confirm the arithmetic ties between them."""
    first = io.read_csv(out / "first_order.csv")
    second = io.read_csv(out / "second_order.csv")
    imp = io.read_csv(out / "improvement.csv")
    f = {(r["density_vpm"], r["av_penetration"], r["source"]): r for r in first}
    val = lambda r, k: io.parse(r[k])  # noqa: E731
    checks = {
        "q_total = q_HV + q_AV": _check(first, "q_total", lambda r: val(r, "q_HV") + val(r, "q_AV")),
        "du = u_HV - u_AV": _check(second, "du", lambda r: val(f[(r["density_vpm"], r["av_penetration"],
                                                                   r["source"])], "u_HV")
                                   - val(f[(r["density_vpm"], r["av_penetration"], r["source"])], "u_AV")),
        "dq = q_HV - q_AV": _check(second, "dq", lambda r: val(f[(r["density_vpm"], r["av_penetration"],
                                                                   r["source"])], "q_HV")
                                   - val(f[(r["density_vpm"], r["av_penetration"], r["source"])], "q_AV")),
    }
    for col, src in (("du_HV", "u_HV"), ("du_AV", "u_AV"), ("dq_HV", "q_HV"), ("dq_AV", "q_AV"),
                     ("dq_total", "q_total")):
        checks[f"{col} = drl - baseline"] = _check(
            imp, col, lambda r, s=src: val(f[(r["density_vpm"], r["av_penetration"], "drl")], s)
            - val(f[(r["density_vpm"], r["av_penetration"], "baseline")], s))
    return checks


def cmd_compare(root: str | Path, scenarios: list[ScenarioConfig], out: str | Path, lam: float | None = None,
                scalings: ScalingParams = ScalingParams(), taus=(0.0, 0.01, 0.04)) -> CompareReport:
    """Build the report from ``root/<scenario>/{evaluate,baseline}`` runs."""
    root = Path(root)
    out = Path(out)
    nominals = nominals_from_config(scenarios[0])
    data, missing = {}, []
    for cfg in scenarios:
        entry = {}
        for mode in ("evaluate", "baseline"):
            d = root / cfg.name / mode
            if (d / "summary.json").exists():
                entry[mode] = (io.read_json(d / "summary.json"), load_run_records(d))
            else:
                missing.append(f"{cfg.name}/{mode}")
        data[cfg.name] = entry

    # lambda from the DRL Edie cells
    pts = [p[:4] for cfg in scenarios if "evaluate" in data[cfg.name]
           for p in _speed_grid_points(data[cfg.name]["evaluate"][1])]
    est = None
    if pts:
        r1, r2, u1, u2 = (np.array(c) for c in zip(*pts))
        hv, av = nominals
        grid = mean_speed_grid(r1, r2, u1, u2, rho_max=(hv.jam_density, av.jam_density))
        try:
            est = estimate_lambda(grid, nominals, scalings)
        except (UnidentifiableError, NoEquilibriumError, DomainError) as exc:
            log.warning("lambda not identifiable from DRL data: %s", exc)
    lam_estimated = lam is None and est is not None
    if lam is None:
        lam = est.lam if est is not None else FALLBACK_LAMBDA

    with io.atomic_dir(out) as tmp:
        first, second, imp, pareto_rows = [], [], [], []
        fd_rows, fd_by_source = [], {"drl": {}, "baseline": {}}
        for cfg in scenarios:
            entry = data[cfg.name]
            key = (cfg.density_vpm, cfg.av_penetration)
            r1, r2, u_star, mu1, mu2 = _model_row(cfg, lam, nominals, scalings)
            rows = {"model": (mu1, mu2, 3.6 * r1 * mu1, 3.6 * r2 * mu2)}
            for src, mode in (("drl", "evaluate"), ("baseline", "baseline")):
                if mode in entry:
                    summ, eps = entry[mode]
                    q = _class_flows(eps)
                    rows[src] = (summ["speed_mps"]["HV"], summ["speed_mps"]["AV"], q["HV"], q["AV"])
                    for k, recs in enumerate(eps):
                        fd = fundamental_diagram(recs)
                        fd_by_source[src].setdefault(cfg.av_penetration, []).append(fd)
                        for rho, qq in zip(fd.rho, fd.q):
                            fd_rows.append((src, cfg.density_vpm, cfg.av_penetration, k, rho, qq))
                else:
                    rows[src] = (float("nan"),) * 4
            for src in SOURCES:
                uh, ua, qh, qa = (float("nan") if v is None else float(v) for v in rows[src])
                first.append((*key, src, r1, r2, u_star, uh, ua, qh, qa, qh + qa))
                second.append((*key, src, uh - ua, qh - qa))
            d, b = rows["drl"], rows["baseline"]
            d = [float("nan") if v is None else float(v) for v in d]
            b = [float("nan") if v is None else float(v) for v in b]
            d_mf = _num(entry, "evaluate", "max_flow_vph") - _num(entry, "baseline", "max_flow_vph")
            imp.append((*key, d[0] - b[0], d[1] - b[1], d[2] - b[2], d[3] - b[3],
                        (d[2] + d[3]) - (b[2] + b[3]), d_mf))
            for tau in taus:
                v = pareto_check({"HV": d[0], "AV": d[1]}, {"HV": b[0], "AV": b[1]}, tau)
                complete = len(v.per_class) == 2
                pareto_rows.append((*key, tau, v.per_class.get("HV", float("nan")),
                                    v.per_class.get("AV", float("nan")), v.passed if complete else float("nan"),
                                    "|".join(v.failing) if complete else "missing"))
        io.write_csv(tmp / "first_order.csv", FIRST_HEADER, first)
        io.write_csv(tmp / "second_order.csv", SECOND_HEADER, second)
        io.write_csv(tmp / "improvement.csv", IMPROVEMENT_HEADER, imp)
        io.write_csv(tmp / "pareto.csv", ["density_vpm", "av_penetration", "tau", "HV", "AV", "passed", "failing"],
                     pareto_rows)
        io.write_csv(tmp / "fd_scatter.csv", ["source", "density_vpm", "av_penetration", "episode", "rho_total",
                                              "q_total"], fd_rows)

        # FD model curves and per-penetration max flow
        curve_rows, maxflow_rows, svg_scatter, svg_curves = [], [], {}, {}
        for pen in sorted({c.av_penetration for c in scenarios}):
            curves = model_fd_curves(pen, nominals, scalings, lam)
            for label, (rho, q) in curves.items():
                curve_rows += [(pen, label, a, b) for a, b in zip(rho, q)]
            best = {}
            for src in ("drl", "baseline"):
                fds = fd_by_source[src].get(pen, [])
                best[src] = max((f.max_flow for f in fds if np.isfinite(f.max_flow)), default=float("nan"))
                rho = np.concatenate([f.rho for f in fds]) if fds else np.array([])
                q = np.concatenate([f.q for f in fds]) if fds else np.array([])
                svg_scatter[f"{src} p={pen:g}"] = (rho, q)
            maxflow_rows.append((pen, best["drl"], best["baseline"], best["drl"] - best["baseline"]))
            if not svg_curves:
                svg_curves = {f"{k} p={pen:g}": v for k, v in curves.items()}
        io.write_csv(tmp / "fd_model.csv", ["av_penetration", "curve", "rho_total", "q_total"], curve_rows)
        io.write_csv(tmp / "max_flow.csv", ["av_penetration", "drl", "baseline", "improvement"], maxflow_rows)
        plot_fd(tmp / "fd.svg", svg_scatter, svg_curves)

        if est is not None:
            io.write_csv(tmp / "lambda_loss.csv", ["lambda", "loss"], est.curve)
            plot_series(tmp / "lambda_loss.svg", est.curve[:, 0], est.curve[:, 1], "lambda", "loss")

        regression = None
        try:
            xs, ys, sizes = regression_points(root, scenarios, nominals, scalings)
            io.write_csv(tmp / "regression_points.csv", ["M_t_improvement", "surplus_pct", "rho_total"],
                         zip(xs, ys, sizes))
            regression = lambda_regression(xs, ys).to_dict()
        except (InsufficientDataError, FileNotFoundError) as exc:
            log.warning("lambda regression skipped: %s", exc)

        checks = identity_checks(tmp)
        io.write_json(tmp / "identity_checks.json", checks)
        summary = {
            "lambda": lam, "lambda_estimated": lam_estimated,
            "lambda_fit": None if est is None else {"lam": est.lam, "loss": est.loss, "mae_HV": est.mae1,
                                                    "mae_AV": est.mae2, "mae": est.mae, "cells": est.n_cells},
            "missing": missing, "identities_ok": all(c["ok"] for c in checks.values()),
            "fd_points": len(fd_rows), "regression": regression,
            "reference_full_scale": {"lambda": 0.6484, "max_flow_gain_vph": {"0.25": 90, "0.5": 130, "0.75": 98}},
        }
        io.write_json(tmp / "summary.json", summary)
    return CompareReport(out, lam, lam_estimated, checks, missing, len(fd_rows), pareto_rows, regression)


def regression_points(root: Path, scenarios, nominals, scalings):
    """One point per (scenario, episode, Edie cell): surplus % at the cell's class densities
    against the M_t improvement (DRL minus baseline, same seed) over the cell's time window."""
    xs, ys, sizes = [], [], []
    for cfg in scenarios:
        drl_dir, base_dir = root / cfg.name / "evaluate", root / cfg.name / "baseline"
        eps = sorted(p.name for p in drl_dir.glob("episode_*"))
        for name in eps:
            if not (base_dir / name).exists():
                continue
            md = io.read_spatial_csv(drl_dir / name / "spatial.csv")
            mb = io.read_spatial_csv(base_dir / name / "spatial.csv")
            n = min(len(md["t"]), len(mb["t"]))
            dM = md["M_t"][:n] - mb["M_t"][:n]
            t = md["t"][:n]
            recs = io.read_edie_csv(drl_dir / name / "edie.csv")
            pts = _speed_grid_points([recs])
            if not pts:
                continue
            dt = None
            ts = sorted({p[4][1] for p in pts})
            if len(ts) > 1:
                dt = ts[1] - ts[0]
            r1 = np.array([p[0] for p in pts])
            r2 = np.array([p[1] for p in pts])
            ok = (r1 > 0) & (r2 > 0)
            cm = cell_model(np.where(ok, r1, 1.0), np.where(ok, r2, 1.0), nominals, scalings)
            for k, p in enumerate(pts):
                if not (ok[k] and cm.feasible[k]):
                    continue
                t0 = p[4][1]
                sel = (t >= t0) & (t < t0 + (dt or 8.0))
                if not sel.any():
                    continue
                xs.append(float(np.nanmean(dM[sel])))
                ys.append(100.0 * float(cm.surplus[k]))
                sizes.append(r1[k] + r2[k])
    return np.array(xs), np.array(ys), np.array(sizes)
