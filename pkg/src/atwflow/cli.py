"""Command-line entry points: run, levelset, verify, convergence.

Exit codes: 0 ok, 2 input error, 3 solver failure, 4 verification failure.
ATWFLOW_THREADS caps the worker count used when a ladder fans out runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import scenario as scenario_mod
from .distance import EikonalError
from .flow import FlowProblem, holder_report, refinement_study, run_flow, velocity_report
from .geometry import DegenerateSetError
from .io import (
    dump_field,
    read_diagnostics,
    save_trace,
    scenario_hash,
    write_csv,
    write_manifest,
    write_polylines,
)
from .levelset import run_levelset
from .relax import SolverError
from .scenario import Scenario, ScenarioError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ATWFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _load_scenario(path: str) -> Scenario:
    if not os.path.exists(path):
        raise ScenarioError("scenario", f"file not found: {path}")
    return scenario_mod.from_file(path)


def cmd_run(args) -> int:
    scn = _load_scenario(args.scenario)
    problem = FlowProblem(scn.grid, scn.phi, scn.psi, scn.forcing, scn.params)
    t0 = time.perf_counter()
    trace = run_flow(
        problem, scn.initial_state(), scn.h, scn.horizon,
        record_stride=scn.record_stride,
        el_stride=scn.doc.get("el_stride", 0),
    )
    save_trace(args.out, scn.doc, trace, time.perf_counter() - t0)
    if trace.aborted:
        print(f"aborted: {trace.aborted}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {len(trace.records)} steps to {args.out}")
    return EXIT_OK


def cmd_levelset(args) -> int:
    scn = _load_scenario(args.scenario)
    m = args.levels or (scn.ladder or {}).get("levels", 64)
    variant = args.variant or (scn.ladder or {}).get("variant", "minus")
    u0 = scn.initial_function()
    os.makedirs(args.out, exist_ok=True)
    variants = ("minus", "plus") if variant == "both" else (variant,)
    # a single-level ladder is the set flow of the zero superlevel set
    levels = np.array([0.0]) if m == 1 else None
    traces = {}
    t0 = time.perf_counter()
    for var in variants:
        traces[var] = run_levelset(
            scn.grid, u0, m, var, scn.phi, scn.psi, scn.forcing,
            scn.h, scn.horizon, scn.params, record_stride=scn.record_stride,
            levels=levels,
        )
    for var, tr in traces.items():
        for t, u in zip(tr.times, tr.functions):
            step = int(round(t / scn.h))
            dump_field(
                os.path.join(args.out, f"levelset_{var}_{step:06d}"),
                u, scn.grid, kind=f"levelset_{var}", t=t,
            )
        rows = [
            [r.t, r.nesting_corrections, r.plateau_cells] for r in tr.reports
        ]
        write_csv(
            os.path.join(args.out, f"ladder_{var}.csv"),
            ["t", "nesting_corrections", "plateau_cells"], rows,
        )
    code = EXIT_OK
    if len(variants) == 2:
        gaps = [
            float((traces["minus"].functions[k] - traces["plus"].functions[k]).max())
            for k in range(len(traces["minus"].functions))
        ]
        write_csv(
            os.path.join(args.out, "ordering_report.csv"),
            ["t", "max_minus_minus_plus"],
            [[t, gv] for t, gv in zip(traces["minus"].times, gaps)],
        )
        if max(gaps) > 1e-9:
            print("ordering violated: u_minus > u_plus somewhere", file=sys.stderr)
            code = EXIT_VERIFY
    write_manifest(
        os.path.join(args.out, "manifest.json"), scn.doc,
        time.perf_counter() - t0, {"levels": m, "variant": variant},
    )
    return code


def cmd_verify(args) -> int:
    if not os.path.isdir(args.trace):
        print(f"trace directory not found: {args.trace}", file=sys.stderr)
        return EXIT_INPUT
    try:
        rows = read_diagnostics(args.trace)
        with open(os.path.join(args.trace, "scenario.json")) as f:
            doc = json.load(f)
    except (OSError, ValueError) as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return EXIT_INPUT
    scn = scenario_mod.from_dict(doc)
    checks = args.checks.split(",") if args.checks else ["dissipation", "perimeter", "velocity"]
    report_rows = []
    failed = False
    p0 = None
    if rows:
        p0 = rows[0]["perimeter"]
    if "dissipation" in checks and rows:
        slack_tol = 0.02 * max(p0, 1e-12)
        worst = max(r["dissipation_slack"] for r in rows)
        ok = worst <= slack_tol
        failed |= not ok
        report_rows.append(["dissipation", "pass" if ok else "fail",
                            worst, slack_tol])
    if "perimeter" in checks and rows:
        fmax = 0.0
        try:
            fmax = float(np.max(np.abs(
                scn.forcing(*scn.grid.centers(), 0.0)
            )))
        except Exception:
            pass
        growth = (1.0 + 2.0 * scn.h * max(fmax, 1.0) ** 2) ** len(rows)
        worst = max(r["perimeter"] for r in rows)
        bound = p0 * growth * 1.10
        ok = worst <= bound
        failed |= not ok
        report_rows.append(["perimeter_envelope", "pass" if ok else "fail", worst, bound])
    if "velocity" in checks and rows:
        sup_scaled = max(r["sup_velocity"] for r in rows) * np.sqrt(scn.h)
        report_rows.append(["sup_velocity_sqrt_h", "measured", sup_scaled, ""])
    write_csv(
        os.path.join(args.trace, "verify_report.csv"),
        ["check", "status", "value", "bound"], report_rows,
    )
    for row in report_rows:
        print(" ".join(str(c) for c in row))
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_convergence(args) -> int:
    scn = _load_scenario(args.scenario)
    hs = [float(v) for v in args.ladder.split(",")]
    if sorted(hs, reverse=True) != hs:
        raise ScenarioError("ladder", "step sizes must be decreasing")
    problem = FlowProblem(scn.grid, scn.phi, scn.psi, scn.forcing, scn.params)
    n_rec = max(2, int(args.times))
    horizon = scn.horizon
    record_times = [horizon * (k + 1) / n_rec for k in range(n_rec)]
    t0 = time.perf_counter()
    study = refinement_study(problem, scn.initial_state(), hs, horizon, record_times)
    os.makedirs(args.out, exist_ok=True)
    keys = [k for k in study["table"][0] if k != "t"]
    write_csv(
        os.path.join(args.out, "convergence.csv"),
        ["t"] + keys,
        [[row["t"]] + [row[k] for k in keys] for row in study["table"]],
    )
    failed = False
    for k, tr in zip(hs, study["traces"]):
        worst = max((r.dissipation_slack for r in tr.records), default=0.0)
        if worst > 0.02 * max(tr.records[0].perimeter if tr.records else 1.0, 1e-12):
            failed = True
    write_manifest(
        os.path.join(args.out, "manifest.json"), scn.doc,
        time.perf_counter() - t0,
        {"ladder": hs, "monotone_decreasing": study["monotone_decreasing"]},
    )
    print(f"gaps monotone decreasing: {study['monotone_decreasing']}")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="atwflow",
        description="Minimizing-movements curvature flow on a grid",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a set-flow scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("levelset", help="run a level-set ladder scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--variant", choices=["plus", "minus", "both"], default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_levelset)

    p = sub.add_parser("verify", help="audit a saved trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--checks", default="")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("convergence", help="refinement study over a step ladder")
    p.add_argument("--scenario", required=True)
    p.add_argument("--ladder", required=True, help="comma-separated step sizes")
    p.add_argument("--times", default=4, help="number of common record times")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convergence)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, EikonalError, DegenerateSetError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
