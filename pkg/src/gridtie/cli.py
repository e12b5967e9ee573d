"""Command-line front end.

Subcommands write their outputs into a staging directory and move them
into ``--out`` only once everything has succeeded, so a failed command
leaves no partial results behind. Each invocation writes ``manifest.json``
listing every file it produced.

CSV column orders:

* ``trace.csv``: ``time, v_ac, v_ac_1..v_ac_N, v_dc_1..v_dc_N``
* ``thd_sweep.csv``: ``n_agents, n_failed, n_operating, thd``
* ``dynamic_runs.csv``: ``run, seed, fail_agent, fail_time, thd,
  recovery_time, reconfig_latency, levels_pre, levels_post``
* ``dynamic_windows.csv``: ``window_start, mean_thd, run_1..run_K``
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DEFAULT_HARMONICS, count_levels, monte_carlo, plan_run, trace_thd
from .array import run
from .errors import GridTieError, ScenarioError
from .scenario import ArrayScenario, FaultEvent, Fidelity, dump_scenario, load_scenario

OUT_ENV = "GRIDTIE_OUT"
DEFAULT_OUT = "gridtie-out"


class _Staging:
    """Collects output files and publishes them atomically on success."""

    def __init__(self, out: Path):
        self.out = out
        self.dir = Path(tempfile.mkdtemp(prefix=".gridtie-"))
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def publish(self, manifest: dict) -> None:
        manifest["outputs"] = sorted(self.files + ["manifest.json"])
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.out.mkdir(parents=True, exist_ok=True)
        for name in manifest["outputs"]:
            shutil.move(str(self.dir / name), str(self.out / name))

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def _manifest(command: str, figure: str | None, scenario: ArrayScenario, started: float, **extra) -> dict:
    m = {
        "command": command,
        "tool_version": __version__,
        "scenario_hash": scenario.digest(),
        "seed": scenario.seed,
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    if figure:
        m["target_figure"] = figure
    m.update(extra)
    return m


def _template(args, n_agents: int | None = None) -> ArrayScenario:
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        if n_agents is None:
            raise ScenarioError([("--scenario", "a scenario file is required")])
        sc = ArrayScenario(n_agents)
    changes = {}
    if n_agents is not None:
        changes["n_agents"] = n_agents
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.fidelity is not None:
        changes["fidelity"] = Fidelity(args.fidelity)
    if args.periods is not None:
        changes["horizon"] = args.periods * sc.grid.T_ac
    return sc.with_(**changes) if changes else sc


def _plot(path: Path, x, ys: dict, xlabel: str, ylabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for label, y in ys.items():
        ax.plot(x, y, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(ys) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_simulate(args, stage: _Staging) -> dict:
    started = time.perf_counter()
    sc = _template(args)
    trace = run(sc)
    trace.to_csv(stage.path("trace.csv"))
    trace.to_json(stage.path("trace.json"))
    dump_scenario(sc, stage.path("scenario.yaml"))
    n_op = sc.n_agents - len(sc.static_failures)
    summary = {}
    if n_op > 0 and (trace.n_samples - 1) * trace.sample_period >= sc.grid.T_ac - 1e-12:
        summary["thd"] = trace_thd(trace, harmonics=args.harmonics).thd
        summary["levels"] = count_levels(trace.v_ac, sc.grid.v_peak / n_op)
    if args.plot:
        _plot(stage.path("trace.svg"), trace.times, {"v_ac": trace.v_ac}, "time [s]", "grid-side voltage [V]")
    print(json.dumps(summary, sort_keys=True))
    return _manifest("simulate", "multilevel output voltage of the array", sc, started, **summary)


def _parse_range(text: str, name: str) -> list[int]:
    try:
        parts = [int(p) for p in text.split(":")]
    except ValueError:
        raise ScenarioError([(name, f"expected 'a', 'a:b' or 'a:b:step', got {text!r}")]) from None
    if len(parts) == 1:
        parts = [parts[0], parts[0]]
    if len(parts) == 2:
        parts.append(1)
    a, b, step = parts
    if len(parts) != 3 or step < 1 or b < a:
        raise ScenarioError([(name, f"invalid range {text!r}")])
    return list(range(a, b + 1, step))


def cmd_thd_sweep(args, stage: _Staging) -> dict:
    started = time.perf_counter()
    ns = _parse_range(args.n, "--n")
    nfs = _parse_range(args.nf, "--nf")
    base = _template(args, n_agents=max(ns))
    rng = np.random.default_rng(base.seed)
    rows, rejected = [], []
    for n in ns:
        for nf in nfs:
            if n < 1 or nf < 0 or nf >= n:
                msg = f"N={n}, N_F={nf}: no operating agents" if nf >= n else f"N={n}, N_F={nf}: invalid"
                print(f"gridtie: row rejected: {msg}", file=sys.stderr)
                rejected.append(msg)
                continue
            failed = sorted(int(x) for x in rng.choice(np.arange(1, n + 1), size=nf, replace=False))
            sc = base.with_(n_agents=n, faults=tuple(FaultEvent(a) for a in failed))
            thd = trace_thd(run(sc), harmonics=args.harmonics).thd
            rows.append((n, nf, n - nf, thd))
    if not rows:
        raise ScenarioError([("--nf", "every requested row was rejected")])
    with open(stage.path("thd_sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_agents", "n_failed", "n_operating", "thd"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.10g}"])
    if args.plot:
        curves = {}
        for nf in sorted({r[1] for r in rows}):
            pts = [(r[0], 100 * r[3]) for r in rows if r[1] == nf]
            curves[f"N_F={nf}"] = pts
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4))
        for label, pts in curves.items():
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
        ax.set_xlabel("modules N")
        ax.set_ylabel("THD [%]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(stage.path("thd_sweep.svg"), format="svg", metadata={"Date": None})
        plt.close(fig)
    return _manifest("thd-sweep", "THD for different array configurations", base, started,
                     harmonics=args.harmonics, rejected_rows=rejected)


def cmd_dynamic(args, stage: _Staging) -> dict:
    started = time.perf_counter()
    if args.n is not None and args.n < 2:
        raise ScenarioError([("--n", "a dynamic failure needs at least two agents")])
    if args.runs < 1:
        raise ScenarioError([("--runs", "must be >= 1")])
    tmpl = _template(args, n_agents=args.n)
    if args.periods is None and not args.scenario:
        tmpl = tmpl.with_(horizon=4 * tmpl.grid.T_ac)
    T = tmpl.grid.T_ac
    if tmpl.horizon < 3 * T - 1e-12:
        raise ScenarioError([("--periods", "need at least 3 periods: fault in the second, recovery after")])
    summary = monte_carlo(tmpl, args.runs, harmonics=args.harmonics, workers=args.workers)
    cols = ["run", "seed", "fail_agent", "fail_time", "thd", "recovery_time", "reconfig_latency",
            "levels_pre", "levels_post"]
    with open(stage.path("dynamic_runs.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in summary.records:
            w.writerow([r.run + 1, r.seed, r.fail_agent, f"{r.fail_time:.10g}", f"{r.thd:.10g}",
                        f"{r.recovery_time:.10g}", f"{r.reconfig_latency:.10g}", r.levels_pre, r.levels_post])
    starts, mean = summary.mean_window_thd()
    with open(stage.path("dynamic_windows.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start", "mean_thd"] + [f"run_{r.run + 1}" for r in summary.records])
        for i, t0 in enumerate(starts):
            w.writerow([f"{t0:.10g}", f"{mean[i]:.10g}"] + [f"{r.window_thd[i]:.10g}" for r in summary.records])
    result = {
        "n_agents": tmpl.n_agents,
        "runs": summary.runs,
        "mean_thd": summary.mean_thd,
        "ci95": list(summary.ci95) if summary.ci95 else None,
        "ci_omitted": summary.ci95 is None,
        "reference_thd": summary.reference_thd,
        "max_recovery_time": max(r.recovery_time for r in summary.records),
        "max_reconfig_latency": max(r.reconfig_latency for r in summary.records),
    }
    if summary.ci95 is None:
        print("gridtie: single run, confidence interval omitted", file=sys.stderr)
    stage.path("dynamic_summary.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    if args.save_traces:
        for r in summary.records:
            run(plan_run(tmpl, r.seed, 1, (T, 2 * T))).to_csv(stage.path(f"trace_run{r.run + 1}.csv"))
    if args.plot:
        _plot(stage.path("dynamic_windows.svg"), starts, {"mean THD": 100 * mean}, "window start [s]", "THD [%]")
    print(json.dumps(result, sort_keys=True))
    return _manifest("dynamic", "averaged THD versus time after a dynamic failure", tmpl, started, **result)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridtie", description="Fault-tolerant multilevel grid-tie simulator")
    p.add_argument("--version", action="version", version=f"gridtie {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=False):
        sp.add_argument("--scenario", required=scenario_required, help="YAML scenario file")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--fidelity", choices=[f.value for f in Fidelity])
        sp.add_argument("--harmonics", type=int, default=DEFAULT_HARMONICS)
        sp.add_argument("--periods", type=float, help="simulated grid periods")
        sp.add_argument("--plot", action="store_true", help="also write SVG plots")

    s = sub.add_parser("simulate", help="simulate one scenario and write its trace")
    common(s, scenario_required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("thd-sweep", help="THD over array sizes and static failure counts")
    common(s)
    s.add_argument("--n", default="10:35", help="agent counts, a:b[:step]")
    s.add_argument("--nf", default="0:6", help="static failure counts, a:b[:step]")
    s.set_defaults(func=cmd_thd_sweep)

    s = sub.add_parser("dynamic", help="Monte Carlo of one dynamic failure per run")
    common(s)
    s.add_argument("--n", type=int, default=None, help="agent count (default 5 unless --scenario)")
    s.add_argument("--runs", type=int, default=20)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--save-traces", action="store_true")
    s.set_defaults(func=cmd_dynamic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "dynamic" and args.n is None and not args.scenario:
        args.n = 5
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    if args.harmonics < 2:
        print("gridtie: --harmonics: must be >= 2", file=sys.stderr)
        return 2
    stage = _Staging(out)
    try:
        manifest = args.func(args, stage)
        stage.publish(manifest)
    except ScenarioError as exc:
        for field_, msg in exc.problems:
            print(f"gridtie: {field_}: {msg}", file=sys.stderr)
        return 2
    except GridTieError as exc:
        print(f"gridtie: error: {exc}", file=sys.stderr)
        return 1
    finally:
        stage.discard()
    return 0


if __name__ == "__main__":
    sys.exit(main())
