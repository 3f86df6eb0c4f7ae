"""Command line entry point: ``hierpop <command> --scenario <file>``.

Exit status: 0 success, 1 usage or scenario error, 2 numerical
non-convergence, 3 assumption violation under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .dynamics import BlowUpError, SimulationOptions, simulate
from .gridfn import Grid, GridFunction, l1_norm
from .model import check_assumptions
from .scenario import SCHEMA_VERSION, Scenario, ScenarioError, load_scenario
from .stability import StabilityOptions, Window, classify, net_reproduction
from .steady import SolverDivergence, SolverOptions, SteadyState, check_existence, \
    decompose_beta, solve_fixed_point

COMMANDS = ("check", "steady", "simulate", "stability", "trivial", "all")
log = logging.getLogger("hierpop")


class UsageError(Exception):
    pass


class NonConvergence(Exception):
    pass


class StrictViolation(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row in rows:
            out.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


class Run:
    """Orchestrates one command; results accumulate in ``self.results``."""

    def __init__(self, sc: Scenario, out_dir: str, threads: int = 1, strict: bool = False):
        self.sc = sc
        self.out = out_dir
        self.threads = threads
        self.strict = strict
        self.grid = Grid(sc.ingredients.m, sc.grid["n"])
        self.results: dict = {}
        self.files: list = []
        self.wall: dict = {}
        self._steady: SteadyState | None = None

    def _file(self, name):
        os.makedirs(self.out, exist_ok=True)
        path = os.path.join(self.out, name)
        self.files.append(path)
        return path

    def _timed(self, key, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        finally:
            self.wall[key] = time.perf_counter() - t0

    # -- pieces --------------------------------------------------------------
    def assumptions(self):
        chk = self.sc.check
        rep = check_assumptions(self.sc.ingredients, chk["p_max"], chk["e_max"])
        self.results["assumptions"] = rep.as_dict()
        if not rep.ok:
            msg = "; ".join(v.message for v in rep.violations)
            if self.strict:
                raise StrictViolation(f"assumption check failed: {msg}")
            log.warning("assumption check: %s", msg)
        return rep

    def solver_options(self):
        s = self.sc.solver
        return SolverOptions(tol_fp=s["tol_fp"], theta=s["theta"], max_iter=int(s["max_iter"]),
                             seed_eps=s["seed_eps"])

    def steady(self) -> SteadyState:
        if self._steady is not None:
            return self._steady
        s = self.sc.solver
        try:
            ss = self._timed("steady", lambda: solve_fixed_point(
                self.sc.ingredients, self.grid, rank=s["rank"], anchor=s["anchor"],
                opts=self.solver_options()))
        except SolverDivergence as exc:
            raise NonConvergence(f"steady: {exc}") from None
        summary = ss.summary()
        summary["residual_ok"] = bool(ss.residual_ok())
        if not ss.trivial and ss.decomposition.mode == "user-separable" \
                and self.sc.ingredients.beta_split() is not None:
            summary["net_reproduction"] = net_reproduction(ss.p_star, self.sc.ingredients)
        self.results["steady"] = summary
        path = self._file("steady_state.csv")
        _write_csv(path, ["s", "p", "E"],
                   zip(self.grid.nodes, ss.p_star.values, ss.E_star.values))
        if not ss.converged:
            raise NonConvergence("steady: fixed-point iteration did not converge")
        self._steady = ss
        return ss

    def existence(self):
        dec = decompose_beta(self.sc.ingredients, self.grid.constant(0.0),
                             self.sc.solver["rank"],
                             "auto-piecewise" if self.sc.solver["rank"] else "user-separable",
                             self.sc.solver["anchor"])
        rep = check_existence(dec, self.sc.ingredients, radius=self.sc.check["p_max"],
                              e_max=self.sc.check["e_max"])
        self.results["existence"] = rep.as_dict()

    def simulate(self, persistence=False):
        d = self.sc.dynamics
        ing = self.sc.ingredients
        if persistence or d["initial"] == "steady":
            p0 = self.steady().p_star
        else:
            rate = self.sc.initial_rate()
            p0 = GridFunction(self.grid, rate(s=self.grid.nodes) + np.zeros(self.grid.n + 1))
        T = d["T"]
        if persistence:
            # T counts transit times m / max gamma at the steady state
            P = self._steady.P_star
            vmax = float(np.max(ing.gamma(self.grid.nodes, P)))
            T = d["T"] * ing.m / vmax
        opts = SimulationOptions(cfl=d["cfl"], mode=d["mode"],
                                 output_times=None if persistence else d["output_times"])
        try:
            tr = self._timed("simulate", lambda: simulate(p0, T, ing, opts))
        except BlowUpError as exc:
            raise NonConvergence(f"simulate: {exc}") from None
        prefix = "persistence_" if persistence else ""
        tr.write_csv(self._file(prefix + "trajectory.csv"), d["layout"])
        tr.write_diagnostics_csv(self._file(prefix + "diagnostics.csv"))
        res = {"T": T, "steps": int(tr.step_times.size - 1), "final_mass": float(tr.mass[-1]),
               "max_ledger_imbalance": float(np.max(np.abs(tr.imbalance))) if tr.imbalance.size else 0.0}
        if persistence:
            ss = self._steady
            res["relative_drift_l1"] = l1_norm(tr.snapshots[-1].values - ss.p_star.values,
                                               self.grid.h) / ss.mass
            self.results["persistence"] = res
        else:
            self.results["simulate"] = res
        return tr

    def stability_options(self):
        st = self.sc.stability
        win = st["window"]
        return StabilityOptions(window=None if win is None else Window(*win),
                                resolution=tuple(st["resolution"]), tol_spec=st["tol_spec"],
                                majorant=self.sc.pair("majorant"), lower=self.sc.pair("lower"),
                                upper=self.sc.pair("upper"), threads=self.threads)

    def stability(self, ss: SteadyState, key="stability"):
        rep = self._timed(key, lambda: classify(ss, self.sc.ingredients, self.stability_options()))
        self.results[key] = rep.as_dict()
        rows = [(z.real, z.imag, "characteristic") for z in rep.char_roots]
        rows += [(z.real, z.imag, "matrix") for z in rep.matrix_eigs]
        _write_csv(self._file(f"{key}_roots.csv"), ["re", "im", "source"], rows)
        with open(self._file(f"{key}.json"), "w") as fh:
            json.dump(self.results[key], fh, indent=2, default=_json_default)
            fh.write("\n")
        return rep

    # -- commands ------------------------------------------------------------
    def run(self, command):
        self.assumptions()
        if command == "check":
            self.existence()
        elif command == "steady":
            self.steady()
        elif command == "simulate":
            self.simulate()
        elif command == "stability":
            self.stability(self.steady())
        elif command == "trivial":
            self.stability(SteadyState.zero(self.grid), key="trivial")
        elif command == "all":
            self.existence()
            ss = self.steady()
            self.stability(ss)
            if not ss.trivial:
                self.simulate(persistence=True)
        else:
            raise UsageError(f"unknown command {command!r}")

    def report(self, command, status):
        return {
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "status": status,
            "version": {"hierpop": __version__, "numpy": np.__version__,
                        "python": sys.version.split()[0]},
            "started": self.started,
            "wall_times": self.wall,
            "scenario": self.sc.echo(),
            "results": self.results,
            "files": [os.path.basename(f) for f in self.files],
        }


def build_parser():
    ap = _Parser(prog="hierpop", description="Hierarchical size-structured population runs")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--scenario", required=True, help="scenario JSON file")
    ap.add_argument("--out", help="output directory (overrides the scenario)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for root scans")
    ap.add_argument("--strict", action="store_true",
                    help="treat assumption violations as errors (exit 3)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("hierpop: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        sc = load_scenario(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"hierpop: error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out or sc.output["dir"]
    run = Run(sc, out_dir, args.threads, args.strict)
    run.started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    code, status = 0, "ok"
    try:
        run.run(args.command)
    except StrictViolation as exc:
        print(f"hierpop {args.command}: {exc}", file=sys.stderr)
        return 3
    except NonConvergence as exc:
        print(f"hierpop {args.command}: {exc}", file=sys.stderr)
        code, status = 2, "non-convergence"
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"hierpop {args.command}: {exc}", file=sys.stderr)
        code, status = 2, "error"
    path = run._file("report.json")
    with open(path, "w") as fh:
        json.dump(run.report(args.command, status), fh, indent=2, default=_json_default)
        fh.write("\n")
    _print_summary(args.command, run.results, status)
    return code


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _print_summary(command, results, status):
    lines = [f"{command}: {status}"]
    if "steady" in results:
        st = results["steady"]
        lines.append(f"  steady: P* = {st['P_star']:.10g}, residual = {st['residual_l1']:.3e}, "
                     f"iterations = {st['iterations']}")
        if "net_reproduction" in st:
            lines.append(f"  R(p*) = {st['net_reproduction']:.10g}")
    for key in ("stability", "trivial"):
        if key in results:
            r = results[key]
            lines.append(f"  {key}: verdict = {r['verdict']} (characteristic: {r['char_verdict']}, "
                         f"matrix: {r['oracle_verdict']}, rightmost = {r['rightmost'][0]:.6g}"
                         f"{r['rightmost'][1]:+.6g}i)")
    if "persistence" in results:
        lines.append(f"  persistence drift (relative L1) = {results['persistence']['relative_drift_l1']:.3e}")
    if "simulate" in results:
        lines.append(f"  simulate: {results['simulate']['steps']} steps, "
                     f"final mass = {results['simulate']['final_mass']:.10g}")
    print("\n".join(lines))


if __name__ == "__main__":
    sys.exit(main())
