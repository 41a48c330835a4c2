"""Command-line surface: validate, run, sweep, tune, report."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .defense import tune_weights
from .evaluation import SweepRow, SweepTable
from .runner import SWEEPABLE, run_experiment, run_sweep
from .scenario import ScenarioError, load_scenario, validate_scenario


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        print(f"error: no such scenario file: {path}", file=sys.stderr)
        raise SystemExit(2)
    except ScenarioError as e:
        print(f"error: {path}: {e}", file=sys.stderr)
        raise SystemExit(2)


def _apply_overrides(sc, args):
    if getattr(args, "trials", None) is not None:
        sc = replace(sc, trials=args.trials)
    if getattr(args, "seed", None) is not None:
        sc = replace(sc, base_seed=args.seed)
    return sc


def _onoff(value: str | None) -> bool | None:
    if value is None:
        return None
    return value == "on"


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    findings = validate_scenario(sc)
    if not findings:
        print(f"{sc.name}: no findings")
        return 0
    for f in findings:
        print(f"{sc.name}: {f.code}: {f.message}")
    return 1


def cmd_run(args) -> int:
    sc = _apply_overrides(_load(args.scenario), args)
    findings = validate_scenario(sc)
    for f in findings:
        # findings are advisories here; deliberately out-of-envelope schedules
        # are part of the experiment space
        print(f"warning: {f.code}: {f.message}", file=sys.stderr)
    summary = run_experiment(
        sc,
        attack_on=_onoff(args.attack),
        defense_on=_onoff(args.defense),
        out_dir=args.out,
        jobs=args.jobs,
    )
    summary.pop("_results", None)
    summary.pop("_features", None)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    sc = _apply_overrides(_load(args.scenario), args)
    if args.parameter == "shape":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
    else:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        print("error: empty sweep value list", file=sys.stderr)
        return 2
    rows = run_sweep(sc, args.parameter, values, tau=args.tau, out_dir=args.out, jobs=args.jobs)
    table = SweepTable(
        parameter=args.parameter,
        tau=args.tau,
        rows=tuple(
            SweepRow(r["value"], r["trials"], r["asr"], r["ape_max_mean"], r["ape_max_sd"])
            for r in rows
        ),
    )
    csv_text = table.to_csv()
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(csv_text)
    print(csv_text, end="")
    return 0


def cmd_tune(args) -> int:
    if args.trials < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return 2
    runs = []
    for path in args.scenarios:
        sc = _load(path)
        if sc.attack is None:
            print(f"error: {path}: tuning scenario needs an attack section", file=sys.stderr)
            return 2
        summary = run_experiment(
            sc, attack_on=True, defense_on=False, jobs=args.jobs, collect_features=True
        )
        runs.extend(summary["_features"])
    try:
        cfg = tune_weights(runs, trials=args.trials, seed=args.seed if args.seed is not None else 0)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    fragment = {
        "defense": {
            "w_ori": cfg.w_ori,
            "w_speed": cfg.w_speed,
            "threshold": cfg.threshold,
            "k_on": cfg.k_on,
            "k_off": cfg.k_off,
            "velocity_window_s": cfg.velocity_window_s,
            "stationary_floor_mps": cfg.stationary_floor,
        }
    }
    text = yaml.safe_dump(fragment, sort_keys=True)
    if args.out is not None:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    rows = []
    status = 0
    for d in args.dirs:
        mpath = Path(d) / "manifest.json"
        spath = Path(d) / "summary.json"
        try:
            manifest = json.loads(mpath.read_text())
            summary = json.loads(spath.read_text())
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: {d}: {e}", file=sys.stderr)
            status = 1
            continue
        rows.append(
            {
                "dir": str(d),
                "scenario": summary.get("scenario"),
                "scenario_hash": manifest.get("scenario_hash"),
                "attack": manifest.get("condition", {}).get("attack"),
                "defense": manifest.get("condition", {}).get("defense"),
                "trials": summary.get("trials"),
                "tau_m": summary.get("tau_m"),
                "asr_percent": summary.get("asr_percent"),
                "ape_max_mean_m": summary.get("ape_max_mean_m"),
                "ape_max_sd_m": summary.get("ape_max_sd_m"),
                "precision": summary.get("precision"),
                "recall": summary.get("recall"),
            }
        )
    header = list(rows[0]) if rows else []
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join("" if r[k] is None else str(r[k]) for k in header))
    csv_text = "\n".join(lines) + "\n"
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(csv_text)
        (out / "report.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    print(csv_text, end="")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spooflab", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file against the physical envelope")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    def common(sp, tau_default=None):
        sp.add_argument("--trials", type=int, default=None, help="override trial count")
        sp.add_argument("--seed", type=int, default=None, help="override base seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
        if tau_default is not None:
            sp.add_argument("--tau", type=float, default=tau_default, help="success threshold, metres")

    r = sub.add_parser("run", help="run all trials of a scenario under one condition")
    r.add_argument("scenario")
    r.add_argument("--attack", choices=("on", "off"), default=None)
    r.add_argument("--defense", choices=("on", "off"), default=None)
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="re-run a scenario across one parameter's values")
    s.add_argument("scenario")
    s.add_argument("--parameter", required=True, choices=SWEEPABLE)
    s.add_argument("--values", required=True, help="comma-separated values")
    common(s, tau_default=5.0)
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("tune", help="fit detector weights on attacked training scenarios")
    t.add_argument("scenarios", nargs="+")
    t.add_argument("--trials", type=int, default=300, help="random-search iterations")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=None, help="write the config fragment here")
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_tune)

    rep = sub.add_parser("report", help="join experiment summaries into one table")
    rep.add_argument("dirs", nargs="+")
    rep.add_argument("--out", default=None, help="output directory")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
