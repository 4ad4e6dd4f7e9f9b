"""Batch experiment runner: parse a JSON config, run one named experiment
(or a list of them), and emit reproducible CSV/JSON artifacts plus figures.

Usage: wolfflab <experiment> --config cfg.json [--out DIR] [--jobs N]
[--no-figures].  Outputs are deterministic given (config, seed); the only
environment override is WOLFFLAB_OUT for the output directory.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys
import time
from typing import Optional

import numpy as np

from . import __version__
from .capacity import CapacityProblem, capacity_program
from .core import KernelSpec, Params, ReactionSpec
from .estimate import dini_profile, verify_two_sided
from .grid import build_lattice
from .measure import Measure, measure_from_json
from .potential import frac_max, riesz, wolff
from .solver import SolveConfig, lane_emden_exponential, lane_emden_power, sola_solve, solve_dirichlet

EXPERIMENTS = ("potential", "solve", "sola", "lane-emden", "verify", "capacity", "acceptance")


class ConfigError(ValueError):
    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing config field '{key}'", key)
    return cfg[key]


def _params_from(cfg: dict) -> Params:
    block = _require(cfg, "params")
    try:
        return Params(n=int(block["n"]), s=float(block["s"]), p=float(block["p"]),
                      lam=float(block.get("lambda", 1.0)))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid params block: {exc}", "params")


def _lattice_from(cfg: dict):
    block = _require(cfg, "lattice")
    try:
        return build_lattice((block["origin"], block["extent"]), float(block["h"]),
                             collar=int(block.get("collar", 2)),
                             trunc_factor=float(block.get("trunc_factor", 4.0)))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid lattice block: {exc}", "lattice")


def _measure_from(cfg: dict, base_dir: str) -> Measure:
    src = _require(cfg, "measure")
    try:
        if isinstance(src, str) and not src.lstrip().startswith("{"):
            path = src if os.path.isabs(src) else os.path.join(base_dir, src)
            if not os.path.exists(path):
                raise ConfigError(f"measure file not found: {path}", "measure")
            return measure_from_json(path)
        return measure_from_json(src)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"invalid measure: {exc}", "measure")


def _solve_cfg(cfg: dict) -> SolveConfig:
    return SolveConfig(tol=float(cfg.get("tol", 1e-8)),
                       max_sweeps=int(cfg.get("max_sweeps", 4000)))


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(path: str, header, rows) -> None:
    """CSV with a single timestamp comment row; the body is deterministic."""
    with open(path, "w") as fh:
        fh.write(f"# wolfflab {__version__} generated {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: str, payload: dict, cfg: dict) -> None:
    body = {"version": __version__, "config": cfg}
    body.update(payload)

    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, float) and not math.isfinite(o):
            return str(o)
        return str(o)

    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, default=default, allow_nan=True)
        fh.write("\n")


def _solution_rows(u):
    lat = u.lattice
    rows = []
    for i in range(lat.n_nodes):
        rows.append([i, *[float(c) for c in lat.nodes[i]], float(u.values[i])])
    return rows


def _run_potential(cfg: dict, out: str, base_dir: str, figures: bool) -> dict:
    prm = _params_from(cfg)
    m = _measure_from(cfg, base_dir)
    block = _require(cfg, "potential")
    kind = block.get("kind", "wolff")
    if kind not in ("wolff", "riesz", "fracmax"):
        raise ConfigError(f"unknown potential kind '{kind}'", "potential.kind")
    T = block.get("T", 1.0)
    T = math.inf if T in ("inf", "Infinity", None) else float(T)
    tol = float(block.get("tol", 1e-9))
    s_order = block.get("s_order")
    eta = float(block.get("eta", 0.0))
    if "points" in block:
        pts = np.asarray(block["points"], dtype=float)
    elif "grid" in block:
        g = block["grid"]
        origin = np.asarray(g["origin"], dtype=float)
        extent = np.asarray(g["extent"], dtype=float)
        num = int(g["num"])
        axes = [np.linspace(origin[k], origin[k] + extent[k], num)
                for k in range(len(origin))]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([mm.ravel() for mm in mesh], axis=-1)
    else:
        raise ConfigError("potential block needs 'points' or 'grid'", "potential")
    vals = np.empty(len(pts))
    for i, x in enumerate(pts):
        if kind == "wolff":
            vals[i] = wolff(m, x, prm, T, tol, s_order=s_order)
        elif kind == "riesz":
            vals[i] = riesz(m, x, prm, float(s_order if s_order is not None else prm.s), T, tol)
        else:
            vals[i] = frac_max(m, x, prm,
                               float(s_order if s_order is not None else prm.sp), eta, T)
    header = [f"x{k}" for k in range(pts.shape[1])] + ["kind", "T", "value"]
    rows = [[*map(float, x), kind, T, float(v)] for x, v in zip(pts, vals)]
    write_csv(os.path.join(out, "potential.csv"), header, rows)
    arts = ["potential.csv"]
    if figures and pts.shape[1] == 2:
        from .figures import save_scatter_values

        save_scatter_values(pts, vals, os.path.join(out, "potential.png"),
                            title=f"{kind} values")
        arts.append("potential.png")
    write_json(os.path.join(out, "report.json"),
               {"kind": kind, "T": T, "count": len(pts),
                "finite": int(np.sum(np.isfinite(vals))), "artifacts": arts}, cfg)
    return {"artifacts": arts + ["report.json"]}


def _run_solve(cfg: dict, out: str, base_dir: str, figures: bool) -> dict:
    prm = _params_from(cfg)
    kspec = KernelSpec(prm)
    lat = _lattice_from(cfg)
    m = _measure_from(cfg, base_dir)
    scfg = _solve_cfg(cfg.get("solve", {}))
    exterior = float(cfg.get("solve", {}).get("exterior", 0.0))
    res = solve_dirichlet(m, lat, kspec, exterior=exterior, cfg=scfg)
    write_csv(os.path.join(out, "solution.csv"), ["node", "x0", "x1", "value"][:2 + lat.ndim],
              _solution_rows(res.u))
    arts = ["solution.csv"]
    if figures:
        from .figures import save_grid_heatmap, save_trace

        save_grid_heatmap(res.u, os.path.join(out, "solution.png"), "solution")
        arts.append("solution.png")
        if len(res.energy_trace):
            save_trace(res.energy_trace, os.path.join(out, "energy_trace.png"), "energy")
            arts.append("energy_trace.png")
    write_json(os.path.join(out, "report.json"),
               {"converged": res.converged, "sweeps": res.sweeps,
                "final_sup_change": float(res.sup_changes[-1]) if len(res.sup_changes) else 0.0,
                "final_energy": float(res.energy_trace[-1]) if len(res.energy_trace) else None,
                "artifacts": arts}, cfg)
    return {"artifacts": arts + ["report.json"], "converged": res.converged}


def _run_sola(cfg: dict, out: str, base_dir: str, figures: bool) -> dict:
    prm = _params_from(cfg)
    kspec = KernelSpec(prm)
    lat = _lattice_from(cfg)
    m = _measure_from(cfg, base_dir)
    block = cfg.get("sola", {})
    schedule = [int(j) for j in block.get("schedule", [2, 4, 8])]
    q = block.get("q")
    rep = sola_solve(m, lat, kspec, schedule, q=q, cfg=_solve_cfg(block))
    rows = []
    for k, j in enumerate(rep.indices):
        rows.append([k, j, rep.stage_masses[k], rep.stage_seminorms[k],
                     rep.stage_distances[k - 1] if k > 0 else "",
                     rep.stages_converged[k]])
    write_csv(os.path.join(out, "stages.csv"),
              ["stage", "j", "mass", "seminorm", "distance_from_prev", "converged"], rows)
    write_csv(os.path.join(out, "solution.csv"), ["node", "x0", "x1", "value"][:2 + lat.ndim],
              _solution_rows(rep.final))
    arts = ["stages.csv", "solution.csv"]
    if figures and rep.stage_distances:
        from .figures import save_trace

        save_trace(rep.stage_distances, os.path.join(out, "sola_distances.png"),
                   "L^q stage distance", logy=True)
        arts.append("sola_distances.png")
    write_json(os.path.join(out, "report.json"),
               {"indices": rep.indices, "distances": rep.stage_distances,
                "seminorms": rep.stage_seminorms, "masses": rep.stage_masses,
                "q": rep.q, "distances_monotone": rep.distances_monotone,
                "stages_converged": rep.stages_converged, "artifacts": arts}, cfg)
    return {"artifacts": arts + ["report.json"]}


def _run_lane_emden(cfg: dict, out: str, base_dir: str, figures: bool) -> dict:
    prm = _params_from(cfg)
    kspec = KernelSpec(prm)
    lat = _lattice_from(cfg)
    m = _measure_from(cfg, base_dir)
    block = _require(cfg, "lane-emden")
    reaction = _require(block, "reaction")
    scfg = _solve_cfg(block)
    max_iters = int(block.get("max_iters", 60))
    if reaction.get("kind") == "power":
        rep = lane_emden_power(m, float(reaction["gamma"]), lat, kspec, cfg=scfg,
                               max_iters=max_iters)
    elif reaction.get("kind") == "exponential":
        rep = lane_emden_exponential(m, int(reaction["l"]), float(reaction["a"]),
                                     float(reaction["beta"]), lat, kspec, cfg=scfg,
                                     delta=block.get("delta"), max_iters=max_iters)
    else:
        raise ConfigError("reaction kind must be 'power' or 'exponential'",
                          "lane-emden.reaction")
    arts = []
    if rep.final is not None:
        write_csv(os.path.join(out, "solution.csv"),
                  ["node", "x0", "x1", "value"][:2 + lat.ndim], _solution_rows(rep.final))
        arts.append("solution.csv")
    if figures and rep.sup_trace:
        from .figures import save_trace

        save_trace(rep.sup_trace, os.path.join(out, "lane_emden_sup.png"),
                   "sup of iterate", logy=True)
        arts.append("lane_emden_sup.png")
    write_json(os.path.join(out, "report.json"),
               {"converged": rep.converged, "diverged": rep.diverged,
                "iterations": rep.iterations, "monotone": rep.monotone,
                "bound_factor": rep.bound_factor, "c0_emp": rep.c0_emp,
                "ratio_max": rep.ratio_max, "ratio_mean": rep.ratio_mean,
                "bound_violations": rep.bound_violations,
                "sup_increments": rep.sup_increments, "artifacts": arts}, cfg)
    return {"artifacts": arts + ["report.json"], "diverged": rep.diverged}


def _run_verify(cfg: dict, out: str, base_dir: str, figures: bool) -> dict:
    prm = _params_from(cfg)
    kspec = KernelSpec(prm)
    lat = _lattice_from(cfg)
    m = _measure_from(cfg, base_dir)
    block = cfg.get("verify", {})
    res = solve_dirichlet(m, lat, kspec, cfg=_solve_cfg(block))
    rep = verify_two_sided(res.u, m, prm, lat, tol=float(block.get("tol", 1e-8)))
    rows = []
    for k in range(len(rep.node_idx)):
        rows.append([int(rep.node_idx[k]), *[float(c) for c in rep.coords[k]],
                     float(rep.u_vals[k]), float(rep.w_lower[k]), float(rep.w_upper[k])])
    write_csv(os.path.join(out, "verify.csv"),
              ["node"] + [f"x{k}" for k in range(lat.ndim)] + ["u", "w_lower", "w_upper"],
              rows)
    arts = ["verify.csv"]
    if figures:
        from .figures import save_ratio_bands

        lo = np.where(rep.w_lower > 0, rep.u_vals / np.where(rep.w_lower > 0, rep.w_lower, 1.0), np.nan)
        up = np.where(rep.w_upper > 0, rep.u_vals / np.where(rep.w_upper > 0, rep.w_upper, 1.0), np.nan)
        save_ratio_bands(rep.coords, lo, up, os.path.join(out, "verify_bands.png"),
                         "two-sided reference ratios")
        arts.append("verify_bands.png")
    dini = dini_profile(m, prm, lat.nodes[lat.interior_idx][::max(1, len(lat.interior_idx) // 64)],
                        [lat.diameter / 2 ** k for k in range(1, 7)])
    write_json(os.path.join(out, "report.json"),
               {"converged": res.converged, "lower_band": list(rep.lower_band),
                "upper_band": list(rep.upper_band), "c0_emp": rep.c0_emp,
                "vacuous": rep.vacuous, "excluded_nodes": rep.excluded,
                "dini": dini, "artifacts": arts}, cfg)
    return {"artifacts": arts + ["report.json"], "c0_emp": rep.c0_emp}


def _run_capacity(cfg: dict, out: str, base_dir: str, figures: bool) -> dict:
    prm = _params_from(cfg)
    lat = _lattice_from(cfg)
    block = _require(cfg, "capacity")
    kernel = block.get("kernel", "riesz")
    order = float(block.get("kernel_order", prm.sp))
    integrand = block.get("integrand", "power")
    reaction = None
    if integrand == "conjugate":
        rb = _require(block, "reaction")
        reaction = ReactionSpec.exponential(int(rb["l"]), float(rb["a"]), float(rb["beta"]))
    tol = float(block.get("tol", 1e-3))
    sets_block = _require(block, "sets")
    specs = [{"ball": (b["x"], float(b["r"]))} for b in sets_block.get("balls", [])]
    specs += [{"box": (b[0], b[1])} for b in sets_block.get("boxes", [])]
    if not specs:
        raise ConfigError("capacity sets are empty", "capacity.sets")
    base = CapacityProblem(lat, [0], kernel=kernel, kernel_order=order,
                           integrand=integrand, q=float(block.get("q", 2.0)),
                           reaction=reaction, prm=prm)
    rows = []
    delta = block.get("delta")
    measure = _measure_from(cfg, base_dir) if "measure" in cfg else None
    from .capacity import _set_node_idx, _set_mass

    for spec in specs:
        idx = _set_node_idx(lat, spec)
        if not len(idx):
            raise ConfigError("a capacity set contains no lattice node", "capacity.sets")
        res = capacity_program(base.with_target(idx), tol)
        row = {"set": spec, "capacity": res.value, "certified": res.certified,
               "gap": res.gap, "nodes": int(len(idx))}
        if measure is not None:
            mass = _set_mass(measure, spec)
            row["mass"] = mass
            row["ratio"] = mass / res.value if res.value > 0 else math.inf
        rows.append(row)
    csv_rows = []
    for k, row in enumerate(rows):
        kind = "ball" if "ball" in row["set"] else "box"
        csv_rows.append([k, kind, row["capacity"], row.get("mass", ""),
                         row.get("ratio", ""), row["gap"], row["certified"]])
    write_csv(os.path.join(out, "capacity.csv"),
              ["set", "kind", "capacity", "mass", "ratio", "gap", "certified"], csv_rows)
    arts = ["capacity.csv"]
    ball_rows = [(spec["ball"][1], row["capacity"]) for spec, row in
                 zip(specs, rows) if "ball" in spec]
    if figures and len(ball_rows) > 1:
        from .figures import save_loglog

        rads, caps = zip(*sorted(ball_rows))
        save_loglog(rads, caps, os.path.join(out, "capacity_scaling.png"),
                    "radius", "capacity", "ball capacities")
        arts.append("capacity_scaling.png")
    payload = {"rows": rows, "artifacts": arts}
    if delta is not None and measure is not None:
        payload["condition"] = {"delta": float(delta),
                                "passed": bool(all(r.get("ratio", 0.0) <= float(delta)
                                                   for r in rows))}
    write_json(os.path.join(out, "report.json"), payload, cfg)
    return {"artifacts": arts + ["report.json"]}


def _run_acceptance(cfg: dict, out: str, base_dir: str, figures: bool) -> dict:
    from .acceptance import run_criteria

    wanted = cfg.get("acceptance", {}).get("criteria")
    results = run_criteria(wanted)
    for res in results:
        status = "PASS" if res["passed"] else "FAIL"
        print(f"{status} criterion {res['id']}: {res['name']}")
    write_json(os.path.join(out, "acceptance.json"),
               {"results": results,
                "passed": all(r["passed"] for r in results)}, cfg)
    return {"artifacts": ["acceptance.json"],
            "passed": all(r["passed"] for r in results)}


_RUNNERS = {
    "potential": _run_potential,
    "solve": _run_solve,
    "sola": _run_sola,
    "lane-emden": _run_lane_emden,
    "verify": _run_verify,
    "capacity": _run_capacity,
    "acceptance": _run_acceptance,
}


def run(experiment: str, config_path: str, out_dir: Optional[str] = None,
        jobs: int = 1, figures: bool = True) -> int:
    """Run one experiment (or a config's experiment list); returns exit status."""
    try:
        with open(config_path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        json.dump({"error": f"cannot read config: {exc}", "field": "config"},
                  sys.stderr, default=str)
        sys.stderr.write("\n")
        return 2
    base_dir = os.path.dirname(os.path.abspath(config_path))
    out = out_dir or os.environ.get("WOLFFLAB_OUT") or cfg.get("output") or "out"
    try:
        if "experiments" in cfg:
            subs = cfg["experiments"]
            os.makedirs(out, exist_ok=True)

            def one(k_sub):
                k, sub = k_sub
                name = sub.get("experiment", experiment)
                sub_out = os.path.join(out, f"sub_{k:03d}_{name}")
                os.makedirs(sub_out, exist_ok=True)
                return _RUNNERS[name](sub, sub_out, base_dir, figures)

            if jobs > 1:
                with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
                    list(pool.map(one, enumerate(subs)))
            else:
                for item in enumerate(subs):
                    one(item)
            return 0
        name = cfg.get("experiment", experiment)
        if name != experiment:
            raise ConfigError(f"config experiment '{name}' does not match "
                              f"subcommand '{experiment}'", "experiment")
        os.makedirs(out, exist_ok=True)
        result = _RUNNERS[experiment](cfg, out, base_dir, figures)
        if experiment == "acceptance" and not result.get("passed", True):
            return 1
        return 0
    except ConfigError as exc:
        json.dump({"error": str(exc), "field": exc.field}, sys.stderr, default=str)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:  # report, do not traceback-dump, for batch use
        json.dump({"error": f"{type(exc).__name__}: {exc}"}, sys.stderr, default=str)
        sys.stderr.write("\n")
        return 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wolfflab",
                                     description="nonlocal measure-data laboratory")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--no-figures", action="store_true")
    args = parser.parse_args(argv)
    return run(args.experiment, args.config, out_dir=args.out, jobs=args.jobs,
               figures=not args.no_figures)


if __name__ == "__main__":
    sys.exit(main())
