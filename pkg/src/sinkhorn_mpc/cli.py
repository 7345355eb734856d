"""Command-line front end.

::

    sinkhorn-mpc simulate --config run.yaml --out runs/a [--plot]
    sinkhorn-mpc reproduce fig1 --out runs/fig1
    sinkhorn-mpc bench --sizes 150,500,800 --reps 10 --out bench.csv
    sinkhorn-mpc analyze equilibrium --config run.yaml --out runs/eq

Set ``SINKHORN_MPC_NUM_THREADS`` to cap BLAS threads.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import analysis, report
from .bench import run_bench, thread_cap, write_records
from .config import ConfigError, ExperimentConfig, load, load_preset
from .controller import Trajectory, simulate
from .errors import NumericalBreakdownError, UncontrollableError, UnderflowError

log = logging.getLogger("sinkhorn_mpc")


def _prepare_out(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(exp: ExperimentConfig, out: Path) -> str:
    digest = exp.digest()
    (out / "config.resolved.yaml").write_text(exp.to_yaml())
    (out / "config.sha256").write_text(digest + "\n")
    return digest


def run_experiment(exp: ExperimentConfig, out, plot: bool = False, epsilon: float | None = None) -> tuple[Trajectory, dict]:
    """Simulate ``exp`` and write the resolved config, CSV, summary and optional plot into ``out``."""
    out = _prepare_out(out)
    digest = _write_config(exp, out)
    swarm = exp.swarm(epsilon)
    traj = simulate(swarm, exp.initial_states, exp.steps)
    report.write_trajectory_csv(traj, out / exp.outputs["csv"])
    summary = report.run_summary(traj, exp.targets, digest, swarm.epsilon)
    report.write_json(summary, out / exp.outputs["summary"])
    if plot:
        report.plot_trajectories(traj, exp.targets, out / "trajectories.svg", title=f"{exp.name}, eps = {swarm.epsilon:g}")
    return traj, summary


def load_config(ref: str) -> ExperimentConfig:
    """A file path, or ``preset:<name>`` for a shipped preset."""
    if ref.startswith("preset:"):
        return load_preset(ref.split(":", 1)[1])
    return load(ref)


def cmd_simulate(args) -> int:
    exp = load_config(args.config)
    _, summary = run_experiment(exp, args.out, plot=args.plot)
    log.info("mean distance to matched targets: %.3g -> %.3g", summary["mean_initial_distance"], summary["mean_final_distance"])
    return 0


def reproduce_fig1(out, exp: ExperimentConfig | None = None) -> dict:
    exp = exp or load_preset("fig1")
    traj, summary = run_experiment(exp, out, plot=True)
    swarm = exp.swarm()
    bound = analysis.ultimate_bound(swarm.agents, swarm.r_upp, trajectory=traj)
    metrics = {
        "config_digest": summary["config_digest"],
        "assignment_is_permutation": summary["assignment_is_permutation"],
        "mean_initial_distance": summary["mean_initial_distance"],
        "mean_final_distance": summary["mean_final_distance"],
        "distance_ratio": summary["mean_final_distance"] / summary["mean_initial_distance"],
        "bound": bound.to_dict(),
    }
    report.write_json(metrics, Path(out) / "metrics.json")
    return metrics


def reproduce_fig2(out, exp: ExperimentConfig | None = None) -> dict:
    exp = exp or load_preset("fig2")
    out = _prepare_out(out)
    runs = {}
    metrics = {"config_digest": exp.digest(), "epsilons": {}}
    for eps in exp.analysis["epsilons"]:
        traj, _ = run_experiment(exp, out / f"eps_{eps:g}", epsilon=eps)
        runs[eps] = traj
        metrics["epsilons"][f"{eps:g}"] = {
            "stationary_offset": report.stationary_offset(traj, exp.targets),
            "max_overshoot": report.max_overshoot(traj),
        }
    report.plot_overlay_1d(runs, exp.targets, out / "trajectories.svg")
    report.write_json(metrics, out / "metrics.json")
    return metrics


def cmd_reproduce(args) -> int:
    fn = {"fig1": reproduce_fig1, "fig2": reproduce_fig2}[args.figure]
    fn(args.out)
    log.info("wrote %s", Path(args.out) / "metrics.json")
    return 0


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    records = run_bench(sizes, args.reps, phases=args.phases.split(","))
    write_records(records, args.out)
    for r in records:
        log.info("N=%d %-18s min %.3es median %.3es", r.N, r.phase, r.min_seconds, r.median_seconds)
    return 0


def analyze(exp: ExperimentConfig, what: str) -> dict:
    """Report dictionary for one analysis subcommand."""
    opts = exp.analysis
    swarm = exp.swarm()
    if what == "equilibrium":
        eq = analysis.find_equilibrium(swarm, tol=opts["tol"])
        return eq.to_dict()
    if what == "bound":
        traj = simulate(swarm, exp.initial_states, exp.steps)
        return analysis.ultimate_bound(swarm.agents, swarm.r_upp, nu=opts["nu"], delta=opts["delta"], trajectory=traj).to_dict()
    if what == "sweep":
        rows = analysis.epsilon_limit_probe(swarm, opts["epsilons"], tol=opts["tol"])
        out = {"rows": [r.to_dict() for r in rows]}
        if len(rows) >= 2 and all(r.distance > 0 for r in rows):
            out["log_distance_slope_vs_inverse_epsilon"] = analysis.fit_decay_rate(rows)
        return out
    if what == "stability":
        eq = analysis.find_equilibrium(swarm, tol=opts["tol"])
        res = analysis.stability_probe(
            swarm, eq, opts["radius"], steps=opts["stability_steps"], trials=opts["trials"], seed=opts["seed"],
            keep_trajectories=True,
        )
        lyap = [analysis.lyapunov_probe(t, eq, swarm, gamma=opts["gamma"]) for t in res.trajectories]
        out = res.to_dict()
        out["equilibrium"] = eq.to_dict()
        out["lyapunov"] = [
            {"gamma": r.gamma, "nonincreasing_from": r.nonincreasing_from, "initial": float(r.values[0]), "final": float(r.values[-1])}
            for r in lyap
        ]
        return out
    raise ValueError(f"unknown analysis {what!r}")


def cmd_analyze(args) -> int:
    exp = load_config(args.config)
    out = _prepare_out(args.out)
    digest = _write_config(exp, out)
    result = analyze(exp, args.analysis)
    result["config_digest"] = digest
    report.write_json(result, out / f"{args.analysis}.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sinkhorn-mpc", description="Sinkhorn MPC swarm simulations and diagnostics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one configured experiment")
    s.add_argument("--config", required=True, help="YAML file or preset:<name>")
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true", help="also write trajectories.svg")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reproduce", help="run a shipped figure preset")
    r.add_argument("figure", choices=["fig1", "fig2"])
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reproduce)

    b = sub.add_parser("bench", help="time Sinkhorn iterations against exact assignment")
    b.add_argument("--sizes", default="150,500,800")
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--phases", default="sinkhorn-iteration,lp-assignment,kernel-build")
    b.add_argument("--out", required=True, help=".csv for CSV, anything else for JSON")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("analyze", help="equilibria, bounds, epsilon sweeps, stability probes")
    a.add_argument("analysis", choices=["equilibrium", "bound", "sweep", "stability"])
    a.add_argument("--config", required=True, help="YAML file or preset:<name>")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with thread_cap():
            return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (UnderflowError, NumericalBreakdownError, UncontrollableError, RuntimeError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
