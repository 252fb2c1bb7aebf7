"""
Command-line entry point.

Exit codes: 0 success, 2 usage/config/artifact error, 3 bound violation.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..analysis import (AnalysisError, RegretReport, allowed_violations, check_bound,
                        disagreement_from_estimates, dynamic_regret, regret_from_estimates,
                        theorem1_bound)
from ..dynamics import DynamicsError, ExpansiveDynamicsWarning, read_trajectory, trajectory_to_csv
from ..engine import ConfigError, EngineError, run, tracking_path_length
from ..geometry import BregmanConstants, GeometryError
from ..losses import LossError, make_oracle
from ..network import NetworkError, validate
from . import io as aio
from .config import Settings, build_run_config, parse_overrides, read_config_file, resolve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VIOLATION = 3

USER_ERRORS = (ConfigError, aio.ArtifactError, AnalysisError, DynamicsError, GeometryError,
               LossError, NetworkError, FileNotFoundError, EngineError)


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="dmdtrack", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp, out=True):
        sp.add_argument("--config", help="INI config file with a [run] section")
        sp.add_argument("--preset", help="experiment preset name")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--seed", type=int, help="master seed")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("run", help="execute one run and write its artifacts")
    config_args(sp)

    sp = sub.add_parser("sweep", help="run a preset over a parameter grid and seeds")
    config_args(sp)
    sp.add_argument("--param", default="sigma_nu2", help="config key to sweep")
    sp.add_argument("--values", default="0.25,0.5,0.75,1", help="comma-separated values")
    sp.add_argument("--seeds", type=int, default=1, help="seeds per value (base seed, base+1, ...)")
    sp.add_argument("--stride", type=int, default=10, help="keep every stride-th round in sweep.csv")
    sp.add_argument("--jobs", type=int, default=1, help="runs executed in parallel")
    sp.add_argument("--keep-runs", action="store_true", help="write full artifacts for every run")

    sp = sub.add_parser("check", help="evaluate bounds on recorded artifacts")
    sp.add_argument("record_dir")
    sp.add_argument("--delta", type=float, default=0.1)

    sp = sub.add_parser("validate", help="validate the network and weight matrix")
    config_args(sp, out=False)

    sp = sub.add_parser("trajectory", help="write only the target trajectory")
    config_args(sp)
    return p


def _settings(args, extra=None) -> Settings:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if extra:
        overrides.update(extra)
    file_values = read_config_file(args.config) if args.config else {}
    return resolve(args.preset, file_values, overrides)


def _warn_hypotheses(cfg):
    if not cfg.dynamics.non_expansive:
        print(f"warning: ||A|| = {cfg.dynamics.spectral_norm:.4f} > 1; "
              "results are outside hypotheses", file=sys.stderr)
    if not cfg.fset.compact:
        print("warning: feasible set is not compact; bound constants use a bounding box", file=sys.stderr)


def cmd_run(args) -> int:
    settings = _settings(args)
    cfg = build_run_config(settings)
    _warn_hypotheses(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExpansiveDynamicsWarning)
        record = run(cfg)
    regret = dynamic_regret(record)
    aio.write_run(record, regret, args.out)
    print(f"T={cfg.T} n={cfg.n} seed={cfg.seed} sigma2={record.sigma2:.6f} "
          f"norm_regret={regret.normalized:.6g} clipped={record.clip_count} "
          f"wall_clock={record.wall_clock:.2f}s -> {args.out}")
    return EXIT_OK


def _sweep_job(job):
    values, stride, run_dir = job
    settings = resolve(None, {}, values)
    cfg = build_run_config(settings)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExpansiveDynamicsWarning)
        record = run(cfg)
    regret = dynamic_regret(record)
    norm = regret.normalized_series
    keep = [t for t in range(1, cfg.T + 1) if t == 1 or t % stride == 0 or t == cfg.T]
    bound_total, within = float("nan"), record.within_hypotheses
    if record.constants is not None and record.clip_L is not None:
        rep = theorem1_bound(record.constants, record.etas, record.trajectory, record.sigma2, cfg.n,
                             record.clip_L, 0.1, norm_ord=cfg.mirror.norm_ord)
        bound_total = rep.total
    if run_dir is not None:
        aio.write_run(record, regret, run_dir)
    return {
        "thinned": [(t, norm[t - 1]) for t in keep],
        "T": cfg.T, "cum": regret.cumulative, "norm": regret.normalized,
        "path_length": tracking_path_length(record), "bound_total_delta_0.1": bound_total,
        "within": within, "clip_count": record.clip_count,
    }


def cmd_sweep(args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("sweep needs a nonempty --values list")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if args.stride < 1:
        raise UsageError("--stride must be >= 1")
    base = _settings(args)
    if args.param not in base.values or args.param in ("preset", "seed"):
        raise ConfigError(f"cannot sweep over {args.param!r}")
    base_seed = int(base["seed"])
    jobs, keys = [], []
    out = Path(args.out)
    for value in values:
        for k in range(args.seeds):
            cfg_values = dict(base.values)
            cfg_values[args.param] = value
            cfg_values["seed"] = str(base_seed + k)
            # fail fast on a bad value before spending time on other runs
            build_run_config(resolve(None, {}, cfg_values))
            run_dir = out / "runs" / f"{args.param}={value}" / f"seed={base_seed + k}" if args.keep_runs else None
            jobs.append((cfg_values, args.stride, run_dir))
            keys.append((value, base_seed + k))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    sweep_rows, summary_rows = [], []
    for (value, seed), res in zip(keys, results):
        sweep_rows += [(args.param, value, seed, t, v) for t, v in res["thinned"]]
        summary_rows.append((args.param, value, seed, res["T"], res["cum"], res["norm"], res["path_length"],
                             res["bound_total_delta_0.1"], res["within"], res["clip_count"]))
    with aio.staging(out) as tmp:
        (tmp / aio.SWEEP).write_text(aio._csv(["param", "value", "seed", "t", "norm_regret"], sweep_rows))
        (tmp / aio.SUMMARY).write_text(aio._csv(
            ["param", "value", "seed", "T", "cum_regret", "norm_regret", "path_length",
             "bound_total_delta_0.1", "within_hypotheses", "clip_count"], summary_rows))
    for value in values:
        terminal = [r[5] for r in summary_rows if r[1] == value]
        print(f"{args.param}={value}: mean terminal norm_regret={np.mean(terminal):.6g} over {len(terminal)} run(s)")
    return EXIT_OK


def _manifest_settings(man) -> Settings:
    echo = {k[len("config."):]: v for k, v in man.items() if k.startswith("config.")}
    if not echo:
        raise aio.ArtifactError("manifest has no config echo")
    return resolve(None, {}, echo)


def _opt_float(text):
    return None if text == "none" else float(text)


def check_run(run_dir: Path, delta: float) -> dict:
    """Recompute regret and bounds for one run directory; writes its reports."""
    mpath = run_dir / aio.MANIFEST
    if not mpath.is_file():
        raise aio.ArtifactError(f"missing artifact {mpath}")
    man = aio.read_kv(mpath)
    try:
        cfg = build_run_config(_manifest_settings(man))
        T, n, d = int(man["T"]), int(man["n"]), int(man["d"])
        sigma2 = float(man["sigma2"])
        L = _opt_float(man["L"])
        Rsq, K = _opt_float(man["Rsq"]), _opt_float(man["K"])
    except (KeyError, ValueError) as exc:
        raise aio.ArtifactError(f"{mpath}: corrupt manifest ({exc})") from None
    if (T, n, d) != (cfg.T, cfg.n, cfg.d) or abs(sigma2 - cfg.weights.sigma2) > 1e-12:
        raise aio.ArtifactError(f"{mpath}: manifest disagrees with its config echo")
    traj = read_trajectory(run_dir / aio.TRAJECTORY, cfg.dynamics)
    if traj.T != T:
        raise aio.ArtifactError(f"{run_dir / aio.TRAJECTORY}: expected {T} rounds")
    if traj.residual() > 1e-12 * max(1.0, float(np.abs(traj.states).max())):
        raise aio.ArtifactError(f"{run_dir / aio.TRAJECTORY}: states do not follow the dynamics")
    regret_rows = aio.read_regret(run_dir / aio.REGRET)
    if regret_rows.shape[0] != T:
        raise aio.ArtifactError(f"{run_dir / aio.REGRET}: expected {T} rows")

    oracle = make_oracle(cfg.loss.family, traj, n, clip_L=L, mirror=cfg.mirror, **cfg.loss.params)
    est_path = run_dir / aio.ESTIMATES
    x = aio.read_estimates(est_path, T, n, d) if est_path.is_file() else None
    if x is not None:
        rep = regret_from_estimates(x, traj, oracle)
        recorded = regret_rows[:, 1]
        if np.max(np.abs(rep.cumulative_series - recorded) / np.maximum(1.0, np.abs(recorded))) > 1e-9:
            raise aio.ArtifactError(f"{run_dir / aio.REGRET}: does not match the recorded estimates")
    else:
        cum = regret_rows[:, 1]
        rep = RegretReport(np.diff(cum, prepend=0.0), np.full(T, np.nan), np.full(T, np.nan))
    if np.max(np.abs(regret_rows[:, 2] * np.arange(1, T + 1) - regret_rows[:, 1])
              / np.maximum(1.0, np.abs(regret_rows[:, 1]))) > 1e-9:
        raise aio.ArtifactError(f"{run_dir / aio.REGRET}: norm_regret is not cum_regret / t")

    etas = cfg.schedule.etas(T, sigma2)
    flags = {"compact": cfg.fset.compact, "non_expansive": cfg.dynamics.non_expansive}
    result = {"dir": str(run_dir), "measured": rep.cumulative, "within": all(flags.values()),
              "bound_holds": None, "disagreement_violations": None}
    if Rsq is not None and K is not None and L is not None:
        bound = theorem1_bound(BregmanConstants(Rsq, K), etas, traj, sigma2, n, L, delta,
                               norm_ord=cfg.mirror.norm_ord, schedule=cfg.schedule.describe())
        bound.measured = rep.cumulative
        bound.flags = flags
        bound.notes = {"bound_set": man.get("bound_set_source", ""), "L_source": man.get("L_source", "")}
        verdict = check_bound(None, bound)
        result["bound_holds"] = verdict.holds
        items = bound.as_dict()
        items["verdict"] = verdict.label
        if x is not None:
            dis = disagreement_from_estimates(x, etas, sigma2, L, cfg.mirror.norm_ord)
            items["disagreement_violations"] = dis.violations
            result["disagreement_violations"] = dis.violations
            (run_dir / aio.DISAGREEMENT).write_text(aio.disagreement_csv(dis))
        _atomic_write(run_dir / aio.BOUND, aio.kv_text(items))
        result["label"] = verdict.label
        result["total"] = bound.total
    else:
        result["label"] = "no bound constants recorded"
        _atomic_write(run_dir / aio.BOUND, aio.kv_text({"measured_regret": rep.cumulative,
                                                        "label": result["label"]}))
    return result


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _run_violates(res) -> bool:
    return res["within"] and (res["bound_holds"] is False or bool(res["disagreement_violations"]))


def cmd_check(args) -> int:
    root = Path(args.record_dir)
    if not 0.0 < args.delta < 1.0:
        raise UsageError("--delta must lie in (0, 1)")
    if not root.is_dir():
        raise aio.ArtifactError(f"record directory not found: {root}")
    if (root / aio.MANIFEST).is_file():
        res = check_run(root, args.delta)
        print(f"{root}: measured={res['measured']:.6g} {res['label']}"
              + (f" disagreement_violations={res['disagreement_violations']}" if res["disagreement_violations"] is not None else ""))
        if not res["within"]:
            print(f"warning: {root} is outside hypotheses", file=sys.stderr)
        return EXIT_VIOLATION if _run_violates(res) else EXIT_OK
    runs = sorted(p.parent for p in root.glob("runs/*/*/" + aio.MANIFEST))
    if not runs:
        raise aio.ArtifactError(f"{root}: no run artifacts (run `sweep --keep-runs` or `run` first)")
    results = [check_run(r, args.delta) for r in runs]
    within = [r for r in results if r["within"]]
    bound_viol = sum(1 for r in within if r["bound_holds"] is False)
    dis_viol = sum(1 for r in within if r["disagreement_violations"])
    allowed = allowed_violations(len(within), args.delta) if within else 0
    by_value = {}
    for r in results:
        by_value.setdefault(Path(r["dir"]).parent.name, []).append(r["measured"])
    lines = {
        "runs": len(results), "runs_within_hypotheses": len(within), "delta": args.delta,
        "bound_violations": bound_viol, "allowed_violations_95": allowed,
        "disagreement_violating_runs": dis_viol,
    }
    for key, vals in by_value.items():
        lines[f"mean_cum_regret.{key}"] = float(np.mean(vals))
    ok = bound_viol <= allowed and dis_viol == 0
    lines["verdict"] = "pass" if ok else "fail"
    _atomic_write(root / "check_summary.txt", aio.kv_text(lines))
    for r in results:
        print(f"{r['dir']}: measured={r['measured']:.6g} {r['label']}")
    print(f"{len(within)}/{len(results)} runs within hypotheses; bound violations {bound_viol} "
          f"(allowed {allowed} at delta={args.delta}); disagreement-violating runs {dis_viol}")
    if len(within) < len(results):
        print("warning: some runs are outside hypotheses", file=sys.stderr)
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_validate(args) -> int:
    settings = _settings(args)
    cfg = build_run_config(settings)
    report = validate(cfg.weights)
    print(f"topology {cfg.graph.name}, n={cfg.n}, weights={cfg.weights.method}, sigma2={cfg.weights.sigma2:.12g}")
    print(report)
    return EXIT_OK if report.ok else EXIT_USAGE


def cmd_trajectory(args) -> int:
    from .. import streams
    from ..dynamics import generate_trajectory
    settings = _settings(args)
    cfg = build_run_config(settings)
    x0 = np.zeros(cfg.d) if cfg.x0_target is None else cfg.x0_target
    traj = generate_trajectory(cfg.dynamics, x0, cfg.noise, cfg.T, streams.run_stream(cfg.seed), warn=False)
    with aio.staging(args.out) as tmp:
        (tmp / aio.TRAJECTORY).write_text(trajectory_to_csv(traj))
    print(f"wrote {cfg.T + 1} target states to {Path(args.out) / aio.TRAJECTORY}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check, "validate": cmd_validate,
            "trajectory": cmd_trajectory}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
