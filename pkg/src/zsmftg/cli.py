"""Command-line entry point.

Subcommands:
  solve-riccati      closed-loop and open-loop Riccati solutions with residuals
  saddle             closed-loop saddle profile, value decomposition and flags
  verify-connection  residuals of the open-loop / closed-loop identities
  check-conditions   single-player Riccati report for the convexity-concavity test
  train              AG or GDA training; writes iterates.csv and convergence.svg
  simulate           Monte-Carlo utility statistics (mean-field and N-agent)
  estimate-grad      sampled versus exact policy gradients

Every subcommand reads a config file (--config) or a preset (--preset,
default table1); ZSMFTG_<SECTION>_<KEY> environment variables override
config entries.  Results are printed as JSON and, with --out, also written to
<out>/<subcommand>.json.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .artifacts import average_logs, emit_csv, emit_plot
from .config import apply_env, load_config, preset
from .equilibrium import (
    check_convexity_concavity,
    closed_loop_saddle,
    verify_connection,
)
from .exceptions import ConditionFailedWarning, ConfigError, LeftStabilizingSet, ZSMFTGError
from .gradient import evaluate_cost, exact_gradient
from .model import PolicyProfile
from .optimize import IterateLog, record_iterate, train
from .simulator import (
    estimate_gradient_player,
    expected_truncated_utility,
    mkv_utilities,
    propagation_of_chaos,
    truncated_component_cost,
    truncation_tail,
)
from .solvers import solve_are_saddle, solve_open_loop_riccati


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, PolicyProfile):
        return _jsonable(obj.to_dict())
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _dump(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _load(args):
    cfg = load_config(args.config) if args.config else preset(args.preset)
    cfg = apply_env(cfg)
    if args.seed is not None:
        cfg.experiment["seed"] = int(args.seed)
    if args.jobs is not None:
        cfg.experiment["jobs"] = int(args.jobs)
    return cfg


# ------------------------------------------------------------- commands

def cmd_solve_riccati(cfg, args):
    m = cfg.build_model()
    doc = {}
    for variant, name in (("y", "P"), ("z", "Pbar")):
        sol = solve_are_saddle(m, variant)
        doc[name] = sol.P
        doc[f"{name}_residual"] = sol.residual_norm
        doc[f"{name}_iterations"] = sol.iterations
        doc[f"{name}_conditions"] = sol.conditions
    try:
        ol = solve_open_loop_riccati(m)
        doc.update({"P_o": ol.P_o.P, "P_o_residual": ol.P_o.residual_norm,
                    "Pbar_o": ol.Pbar_o.P, "Pbar_o_residual": ol.Pbar_o.residual_norm})
    except ZSMFTGError as exc:
        doc["open_loop_error"] = str(exc)
    return doc


def cmd_saddle(cfg, args):
    m = cfg.build_model()
    sol = closed_loop_saddle(m)
    return {"P": sol.P, "Pbar": sol.Pbar, "theta_star": sol.theta_star, "value": sol.value,
            "value_terms": sol.value_terms, "flags": sol.flags,
            "stationarity_residual": sol.stationarity}


def cmd_verify_connection(cfg, args):
    m = cfg.build_model()
    rep = verify_connection(m)
    return {"Pc_from_Po": rep.Pc_from_Po, "Pbar_c_from_Pbar_o": rep.Pbar_c_from_Pbar_o,
            "transform_residual_y": rep.transform_residual_y,
            "transform_residual_z": rep.transform_residual_z,
            "gain_identity_residual_y": rep.gain_identity_residual_y,
            "gain_identity_residual_z": rep.gain_identity_residual_z}


def cmd_check_conditions(cfg, args):
    m = cfg.build_model()
    rep = check_convexity_concavity(m)
    return {"holds": rep.holds, "details": rep.details}


def _train_spec(cfg, args, replication=0):
    tr = cfg.train
    if args.method:
        tr["method"] = args.method
    if args.mode:
        tr["mode"] = args.mode
    if args.crn:
        tr["crn"] = True
    return replace(cfg.train_spec(), replication=replication)


def cmd_train(cfg, args):
    m = cfg.build_model()
    sad = closed_loop_saddle(m, check_convexity=False, warn=False)
    reps = int(args.replications or cfg.experiment.get("replications", 1))
    out = Path(args.out or cfg.output.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    formats = cfg.output.get("formats", ["csv", "svg"])
    logs = []
    for r in range(reps):
        spec = _train_spec(cfg, args, r)
        try:
            log = train(m, spec, reference=sad.value)
        except LeftStabilizingSet as exc:
            if exc.log is not None and len(exc.log):
                emit_csv(exc.log, out / (f"iterates_rep{r}.csv" if reps > 1 else "iterates.csv"))
            raise
        logs.append(log)
        if reps > 1 and "csv" in formats:
            emit_csv(log, out / f"iterates_rep{r}.csv")
    log = logs[0] if reps == 1 else average_logs(logs)
    files = []
    if "csv" in formats:
        files.append(emit_csv(log, out / "iterates.csv").name)
    if reps > 1:
        mean_log = IterateLog(reference=sad.value)
        for rec in log:
            mean_log.append(record_iterate(rec.iter, rec.theta, m, sad.value))
        if "csv" in formats:
            files.append(emit_csv(mean_log, out / "iterates_mean_params.csv").name)
    if "svg" in formats:
        title = f"{spec.method.upper()} ({spec.mode})"
        files.append(emit_plot(log, out / "convergence.svg", target=sad.theta_star, title=title).name)
    final = log.final
    return {"method": spec.method, "mode": spec.mode, "replications": reps, "rows": len(log),
            "final_theta": final.theta, "final_cost": final.cost,
            "final_rel_error": final.rel_error, "reference_value": sad.value,
            "theta_star": sad.theta_star, "files": files}


def _theta0(cfg, m):
    spec = cfg.train_spec()
    return spec.theta0 if spec.theta0 is not None else PolicyProfile.zeros(m.ell, m.d)


def cmd_simulate(cfg, args):
    m = cfg.build_model()
    theta = _theta0(cfg, m)
    ex = cfg.experiment
    T = int(ex.get("mc_horizon", cfg.estimator.get("horizon", 50)))
    n = int(ex.get("n_samples", 100_000))
    u = mkv_utilities(theta, m, T, n, cfg.seed, n_jobs=ex.get("jobs"))
    cost = evaluate_cost(theta, m)
    doc = {"theta": theta, "horizon": T, "mkv": {
        "n_samples": n, "mean": float(u.mean()), "stderr": float(u.std(ddof=1) / np.sqrt(n)),
        "exact_cost": cost, "expected_truncated": expected_truncated_utility(theta, m, T),
        "truncation_tail": truncation_tail(theta, m, T)}}
    counts = ex.get("agent_counts", [10, 100, 1000])
    n_reps = int(ex.get("n_reps", 1000))
    stats = propagation_of_chaos(theta, m, T, counts, n_reps, cfg.seed)
    doc["n_agent"] = [{"n_agents": s.n_agents, "mean": s.mean_utility, "stderr": s.stderr,
                       "raw_error": s.raw_error, "paired_error": s.paired_error,
                       "paired_stderr": s.paired_stderr, "exact_bias": s.exact_bias}
                      for s in stats]
    doc["n_reps"] = n_reps
    return doc


def cmd_estimate_grad(cfg, args):
    m = cfg.build_model()
    theta = _theta0(cfg, m)
    sim = cfg.sim_spec()
    exact = exact_gradient(theta, m)
    doc = {"theta": theta, "n_perturbations": sim.n_perturbations, "horizon": sim.horizon,
           "radius": sim.radius, "players": {}}
    for player in (1, 2):
        est = estimate_gradient_player(theta, player, m, sim, sim.stream().child(player),
                                       crn=bool(args.crn), n_jobs=cfg.experiment.get("jobs"))
        dK, dL = exact.player(player)
        entry = {"sampled_dK": est.dK, "sampled_dL": est.dL, "exact_dK": dK, "exact_dL": dL,
                 "rel_error_dK": float(np.linalg.norm(est.dK - dK) / max(np.linalg.norm(dK), 1e-300)),
                 "rel_error_dL": float(np.linalg.norm(est.dL - dL) / max(np.linalg.norm(dL), 1e-300))}
        if m.d == 1 and m.ell == 1:
            entry["smoothed_dK"], entry["smoothed_dL"] = smoothed_scalar_gradient(theta, player, m, sim)
        doc["players"][str(player)] = entry
    return doc


def smoothed_scalar_gradient(theta, player, m, sim):
    """Expected value of the sphere estimator when gains are scalars.

    On the 0-sphere the estimator averages over +-tau, so its mean is the
    central difference of the truncated expected utility with step tau.
    """
    tau, T = sim.radius, sim.horizon
    K1, L1, K2, L2 = (float(b[0, 0]) for b in theta.blocks())

    def diff(variant, own, other):
        def c(v):
            G = np.array([[own + v]])
            O = np.array([[other]])
            pair = (G, O) if player == 1 else (O, G)
            return truncated_component_cost(*pair, m, variant, T)
        return (c(tau) - c(-tau)) / (2 * tau)

    if player == 1:
        return diff("y", K1, K2), diff("z", L1, L2)
    return diff("y", K2, K1), diff("z", L2, L1)


COMMANDS = {
    "solve-riccati": cmd_solve_riccati,
    "saddle": cmd_saddle,
    "verify-connection": cmd_verify_connection,
    "check-conditions": cmd_check_conditions,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "estimate-grad": cmd_estimate_grad,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsmftg", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--preset", default="table1", help="built-in configuration (default: table1)")
        src.add_argument("--config", metavar="PATH", help="configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides [experiment] seed)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--jobs", type=int, help="worker threads for Monte-Carlo chunks")
        if name in ("train", "estimate-grad"):
            p.add_argument("--crn", action="store_true", help="reuse noise across perturbations")
        if name == "train":
            p.add_argument("--method", choices=["ag", "gda"])
            p.add_argument("--mode", choices=["exact", "sampled"])
            p.add_argument("--replications", type=int, help="independent runs to average")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConditionFailedWarning)
            doc = COMMANDS[args.command](cfg, args)
        notes = sorted({str(w.message) for w in caught if issubclass(w.category, ConditionFailedWarning)})
        if notes:
            doc["warnings"] = notes
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ZSMFTGError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    text = _dump(doc)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.command}.json").write_text(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
