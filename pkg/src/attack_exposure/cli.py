"""Command-line surface: bounds calculator, episode runs, sweeps, and the
bundled UAV reproduction.

Subcommands and exit codes:

    bounds         print the shake-budget interval            0 ok / 2 infeasible
    run            run one episode, write trace + summary     0 ok
    sweep          sweep one scalar parameter over a grid     0 ok
    reproduce-uav  rerun the bundled case study end to end    0 ok / 3 criterion failed

Any usage or configuration problem exits with code 1. Trace CSVs have the
fixed column order k, x_true, x_hat, x_hat_a, u, u_shake, r, q, mode, frozen
(vectors expanded component-wise), giving 4 n_x + 2 n_u + 4 columns.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np
import yaml

from . import __version__
from .errors import AttackExposureError, ConfigError
from .exposure import BoundsParams, b_norm_value, feasible_interval
from .harness import (BatchResult, EpisodeTrace, ScenarioConfig, build_parts,
                      config_from_dict, config_to_dict, run_batch, run_episode,
                      uav_scenario)

SCHEMA_VERSION = 1


def load_config(path: str | None) -> ScenarioConfig:
    """Read a scenario file; ``None`` falls back to the bundled clean scenario."""
    if path is None:
        return uav_scenario()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path!r}: {exc}") from exc
    if not isinstance(doc, dict) or "scenario" not in doc:
        raise ConfigError(f"{path!r} must contain a top-level 'scenario' mapping")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    return config_from_dict(doc["scenario"])


def dump_config(cfg: ScenarioConfig) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "scenario": config_to_dict(cfg)}
    return yaml.safe_dump(doc, sort_keys=True)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trace_csv(trace: EpisodeTrace, path: str) -> None:
    """Fixed-schema per-step CSV; float formatting is shortest round-trip."""
    n_x = trace.x_true.shape[1]
    n_u = trace.u_nominal.shape[1]
    header = (["k"]
              + [f"x_true_{i}" for i in range(n_x)]
              + [f"x_hat_{i}" for i in range(n_x)]
              + [f"x_hat_a_{i}" for i in range(n_x)]
              + [f"u_{i}" for i in range(n_u)]
              + [f"u_shake_{i}" for i in range(n_u)]
              + [f"r_{i}" for i in range(n_x)]
              + ["q", "mode", "frozen"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(trace.n_steps):
            row = [str(int(trace.k[i]))]
            for block in (trace.x_true[i], trace.x_hat[i], trace.x_hat_a[i],
                          trace.u_nominal[i], trace.u_shake[i], trace.r[i]):
                row.extend(_fmt(v) for v in block)
            row.append(_fmt(trace.q[i]))
            row.append(str(trace.mode[i]))
            row.append("1" if trace.frozen[i] else "0")
            fh.write(",".join(row) + "\n")


def write_summary(summary, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in dataclasses.asdict(summary).items():
            fh.write(f"{key}={value}\n")


def write_manifest(cfg: ScenarioConfig, seeds: list[int], out_dir: str,
                   config_path: str | None, outputs: list[str]) -> None:
    manifest = {
        "artifact_version": __version__,
        "config_path": config_path,
        "seeds": seeds,
        "output_dir": out_dir,
        "outputs": outputs,
        "resolved_scenario": config_to_dict(cfg),
        "schema_version": SCHEMA_VERSION,
    }
    with open(os.path.join(out_dir, "manifest.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)


def _out_dir(args) -> str:
    out = args.out or os.environ.get("ATTACK_EXPOSURE_OUT", ".")
    os.makedirs(out, exist_ok=True)
    return out


# Reference filter gain (infinity norm) used by the suspect-threshold
# calculator for the bundled case study.
REFERENCE_GAIN_INF = 1.48


def _bounds_params(cfg: ScenarioConfig, convention: str) -> BoundsParams:
    parts = build_parts(dataclasses.replace(cfg, norm_convention=convention))
    return BoundsParams(
        c=parts.cert.c, rho=parts.cert.rho, k_exp=cfg.k_exp,
        T_bar=parts.detector_cfg.T_bar, w_bar=parts.model.noise_radius,
        B_norm=b_norm_value(parts.model.B, convention),
        epsilon_tol=cfg.epsilon_tol, norm_convention=convention,
        beta=cfg.attack.beta_target if cfg.attack else 0.05,
        K_inf=REFERENCE_GAIN_INF,
    )


def cmd_bounds(args) -> int:
    cfg = load_config(args.config)
    convention = args.norm_convention or cfg.norm_convention
    report = feasible_interval(_bounds_params(cfg, convention))
    lines = [
        f"norm_convention={report.norm_convention}",
        f"u_min={report.u_min:.6g}",
        f"u_max={report.u_max:.6g}",
        f"eps_min={report.eps_min:.6g}",
        f"eta_bar={report.eta_bar:.6g}",
        f"feasible={report.feasible}",
    ]
    text = "\n".join(lines)
    print(text)
    if args.out:
        out = _out_dir(args)
        with open(os.path.join(out, "bounds.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0 if report.feasible else 2


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.norm_convention:
        cfg = dataclasses.replace(cfg, norm_convention=args.norm_convention)
    trace, summary = run_episode(cfg)
    out = _out_dir(args)
    trace_path = os.path.join(out, "trace.csv")
    summary_path = os.path.join(out, "summary.txt")
    write_trace_csv(trace, trace_path)
    write_summary(summary, summary_path)
    write_manifest(cfg, [cfg.seed], out, args.config,
                   ["trace.csv", "summary.txt"])
    for key, value in dataclasses.asdict(summary).items():
        print(f"{key}={value}")
    for warning in trace.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


SWEEPABLE = {
    "u_bar": float, "intensity": float, "k_exp": int, "eta": float,
    "v_bar": float, "epsilon_tol": float, "eps_mask_max": float,
    "drift_rate": float,
}


def _apply_sweep_value(cfg: ScenarioConfig, name: str, value):
    if name == "intensity":
        if cfg.attack is None:
            raise ConfigError("cannot sweep intensity without an attack block")
        return dataclasses.replace(
            cfg, attack=dataclasses.replace(cfg.attack, intensity=value))
    return dataclasses.replace(cfg, **{name: value})


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.parameter not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter {args.parameter!r}; "
                          f"choose from {sorted(SWEEPABLE)}")
    cast = SWEEPABLE[args.parameter]
    grid = [cast(v) for v in args.grid.split(",") if v.strip() != ""]
    if not grid:
        raise ConfigError("empty sweep grid")
    rows = []
    for value in grid:
        point_cfg = _apply_sweep_value(cfg, args.parameter, value)
        result = run_batch(point_cfg, args.seeds)
        agg = result.aggregates
        rows.append((value, agg))
        print(f"{args.parameter}={value} exposure_rate={agg['exposure_rate']:.3f} "
              f"false_alarm_rate={agg['false_alarm_rate']:.3f} "
              f"latency_median={agg['latency_median']} "
              f"max_true_dev_mean={agg['max_true_deviation_mean']:.4f}")
    if args.out:
        out = _out_dir(args)
        with open(os.path.join(out, "sweep.csv"), "w", encoding="utf-8") as fh:
            fh.write(f"{args.parameter},exposure_rate,false_alarm_rate,"
                     "latency_median,max_true_deviation_mean\n")
            for value, agg in rows:
                fh.write(f"{value},{agg['exposure_rate']},{agg['false_alarm_rate']},"
                         f"{agg['latency_median']},{agg['max_true_deviation_mean']}\n")
    return 0


# Reference values and tolerances for the bundled case-study reproduction.
REPRO_BOUNDS = {
    "u_min_unit": (0.08418, 1e-4),
    "u_max_spectral": (0.0905, 5e-4),
    "eta_bar": (0.48, 1e-6),
}
REPRO_DEVIATION = {"A": 1.641, "B": 4.791}
DEVIATION_TOL = 0.25
REPRO_SEEDS = 100


def cmd_reproduce_uav(args) -> int:
    seeds = args.seeds or REPRO_SEEDS
    failures = []
    rows = []

    def check(name, measured, target, ok):
        rows.append((name, target, measured, "pass" if ok else "FAIL"))
        if not ok:
            failures.append(name)

    base = uav_scenario()
    unit = feasible_interval(_bounds_params(base, "unit"))
    spectral = feasible_interval(_bounds_params(base, "spectral"))
    ref, tol = REPRO_BOUNDS["u_min_unit"]
    check("u_min (unit-B)", f"{unit.u_min:.5f}", f"{ref} +/- {tol}",
          abs(unit.u_min - ref) <= tol)
    ref, tol = REPRO_BOUNDS["u_max_spectral"]
    check("u_max (spectral-B)", f"{spectral.u_max:.5f}", f"{ref} +/- {tol}",
          abs(spectral.u_max - ref) <= tol)
    ref, tol = REPRO_BOUNDS["eta_bar"]
    check("eta_bar(beta)", f"{unit.eta_bar:.5f}", f"{ref} +/- {tol}",
          abs(unit.eta_bar - ref) <= tol)

    for name in ("A", "B"):
        stealth_cfg = uav_scenario(attack=name, exposure_enabled=False)
        stealth = run_batch(stealth_cfg, seeds)
        alarms = sum(s.exposed or s.false_alarm for s in stealth.summaries)
        check(f"attack {name} stealth: alarms", f"{alarms}", "0", alarms == 0)
        target = REPRO_DEVIATION[name]
        lo, hi = target * (1 - DEVIATION_TOL), target * (1 + DEVIATION_TOL)
        devs = [s.max_true_deviation for s in stealth.summaries]
        check(f"attack {name} max x-deviation",
              f"mean {np.mean(devs):.3f} range [{min(devs):.3f}, {max(devs):.3f}]",
              f"[{lo:.3f}, {hi:.3f}]",
              all(lo <= d <= hi for d in devs))

        exposed_cfg = uav_scenario(attack=name, exposure_enabled=True)
        exposed = run_batch(exposed_cfg, seeds)
        eagg = exposed.aggregates
        latencies = [s.exposure_latency for s in exposed.summaries]
        stats = [s.alarm_statistic for s in exposed.summaries]
        check(f"attack {name} exposure rate", f"{eagg['exposure_rate']:.3f}",
              "1.0", eagg["exposure_rate"] == 1.0)
        check(f"attack {name} latency", f"max {eagg['latency_max']} "
              f"median {eagg['latency_median']}",
              f"<= {base.k_exp} all, median <= 3",
              all(l is not None and l <= base.k_exp for l in latencies)
              and eagg["latency_median"] <= 3)
        check(f"attack {name} alarm statistic", f"[{min(stats):.3f}, {max(stats):.3f}]",
              "[1, 5]", all(s is not None and 1.0 <= s <= 5.0 for s in stats))

    comp_cfg = uav_scenario(force_suspect_at=60)
    comp = run_batch(comp_cfg, seeds)
    tails = [s.tail_tracking_error for s in comp.summaries]
    check("compensability tail error", f"max {max(tails):.4f}",
          f"<= {comp_cfg.epsilon_tol}", max(tails) <= comp_cfg.epsilon_tol)
    check("compensability false alarms",
          f"{sum(s.false_alarm for s in comp.summaries)}", "0",
          not any(s.false_alarm for s in comp.summaries))

    width = max(len(r[0]) for r in rows) + 2
    print(f"{'criterion':<{width}} {'reference':<28} {'measured':<34} verdict")
    for name, target, measured, verdict in rows:
        print(f"{name:<{width}} {target:<28} {measured:<34} {verdict}")
    if failures:
        print(f"\n{len(failures)} criterion(s) failed: {', '.join(failures)}")
        return 3
    print("\nall criteria passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attack-exposure",
        description="Simulate and analyze active exposure of stealthy "
                    "sensor-deception attacks.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_bounds = sub.add_parser("bounds", help="shake-budget feasibility interval")
    p_run = sub.add_parser("run", help="run one episode and write its trace")
    p_sweep = sub.add_parser("sweep", help="sweep one scalar parameter")
    p_repro = sub.add_parser("reproduce-uav", help="rerun the bundled case study")

    for p in (p_bounds, p_run, p_sweep):
        p.add_argument("--config", default=None, help="scenario YAML path")
        p.add_argument("--norm-convention", choices=["unit", "spectral"],
                       default=None)
        p.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--parameter", required=True)
    p_sweep.add_argument("--grid", required=True,
                         help="comma-separated parameter values")
    p_sweep.add_argument("--seeds", type=int, default=20)
    p_repro.add_argument("--seeds", type=int, default=None,
                         help="episodes per batch (default 100)")
    p_repro.add_argument("--out", default=None)

    p_bounds.set_defaults(func=cmd_bounds)
    p_run.set_defaults(func=cmd_run)
    p_sweep.set_defaults(func=cmd_sweep)
    p_repro.set_defaults(func=cmd_reproduce_uav)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AttackExposureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
