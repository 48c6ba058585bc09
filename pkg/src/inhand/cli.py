"""Command line entry point: ``inhand [global flags] {plan,execute,run,batch,inspect}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .io import read_jsonl, read_table, read_yaml, write_jsonl
from .scenario import (ConfigError, Fault, Scenario, StageError, builtin_config, format_summary, load_config,
                       load_plan, run_batch, run_execute, run_plan)

log = logging.getLogger("inhand")

OUT_DIR_ENV = "INHAND_OUT_DIR"
EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_PLANNING = 4
EXIT_TRIAL_FAILED = 5


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


def _error_line(kind: str, message: str, **extra) -> str:
    return "error: " + json.dumps({"kind": kind, "message": message, **extra}, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inhand", description="Plan and simulate in-hand manipulation with grasp changes.")
    p.add_argument("--version", action="version", version=f"inhand {__version__}")
    p.add_argument("--config", default=None, help="scenario YAML (default: packaged lift scenario)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out-dir", default=None, help=f"output directory (env {OUT_DIR_ENV}, default ./inhand-out)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", help="plan path, trajectory and grasp sequence; write artifacts")
    ex = sub.add_parser("execute", help="execute planned artifacts in the simulator")
    ex.add_argument("--plan-dir", default=None, help="directory with plan artifacts (default: out dir)")
    ex.add_argument("--fault-at", type=float, default=None, help="retract all fingers at this reference time (s)")
    rn = sub.add_parser("run", help="plan then execute")
    rn.add_argument("--fault-at", type=float, default=None)
    bt = sub.add_parser("batch", help="randomized start-pose robustness batch")
    bt.add_argument("--trials", type=int, default=None)
    ins = sub.add_parser("inspect", help="pretty-print an artifact")
    ins.add_argument("path")
    ins.add_argument("--rows", type=int, default=5, help="table rows to show")
    return p


def out_dir_of(args) -> Path:
    d = args.out_dir or os.environ.get(OUT_DIR_ENV) or "inhand-out"
    return Path(d)


def _config(args):
    path = args.config or builtin_config("lift")
    try:
        cfg = load_config(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, "file-not-found", str(exc))
    except (ConfigError, KeyError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc))
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _scenario(cfg):
    try:
        return Scenario(cfg)
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, "file-not-found", str(exc))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc))


def _plan(cfg, sc, out: Path):
    try:
        art = run_plan(cfg, out, scenario=sc)
    except StageError as exc:
        raise CliError(EXIT_PLANNING, "planning-failed", str(exc), stage=exc.stage)
    print(f"plan: {' '.join(art.plan.labels(sc.obj))}")
    print(f"cost: {art.plan.cost:.6g}  T: {art.trajectory.T:.3f} s  waypoints: {len(art.path)}")
    for k, f in sorted(art.files.items()):
        print(f"wrote {k}: {f}")
    return art


def _execute(cfg, sc, art, out: Path, fault_at):
    fault = None if fault_at is None else Fault(time=fault_at)
    res = run_execute(cfg, art, scenario=sc, fault=fault, telemetry=out / "telemetry.csv")
    write_jsonl(out / "result.jsonl", [res.to_dict()])
    status = "success" if res.success else f"failure ({res.cause})"
    print(f"trial: {status}  position error {res.position_error:.4g} m  orientation error "
          f"{res.orientation_error:.4g} rad  sim time {res.sim_time:.2f} s")
    if not res.success:
        raise CliError(EXIT_TRIAL_FAILED, "trial-failed", f"trial failed: {res.cause}", cause=res.cause)
    return res


def cmd_plan(args):
    cfg = _config(args)
    _plan(cfg, _scenario(cfg), out_dir_of(args))


def cmd_execute(args):
    cfg = _config(args)
    sc = _scenario(cfg)
    out = out_dir_of(args)
    plan_dir = Path(args.plan_dir) if args.plan_dir else out
    try:
        art = load_plan(sc, plan_dir)
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, "file-not-found", str(exc))
    out.mkdir(parents=True, exist_ok=True)
    _execute(cfg, sc, art, out, args.fault_at)


def cmd_run(args):
    cfg = _config(args)
    sc = _scenario(cfg)
    out = out_dir_of(args)
    art = _plan(cfg, sc, out)
    _execute(cfg, sc, art, out, args.fault_at)


def cmd_batch(args):
    cfg = _config(args)
    out = out_dir_of(args)
    if args.trials is not None and args.trials < 1:
        raise CliError(EXIT_CONFIG, "config", "--trials must be at least 1")
    res = run_batch(cfg, n_trials=args.trials, out_dir=out)
    print(format_summary(res.summary))
    print(f"wrote {out / 'batch.csv'}")
    print(f"wrote {out / 'summary.csv'}")


def inspect_text(path: Path, rows: int = 5) -> str:
    if not path.exists():
        raise CliError(EXIT_CONFIG, "file-not-found", f"file not found: {path}")
    lines = []
    if path.suffix == ".csv":
        schema, cols, data = read_table(path)
        lines.append(f"{path.name}: schema {schema}, {len(data)} rows, {len(cols)} columns")
        lines.append("columns: " + ", ".join(cols))
        for r in data[:rows]:
            lines.append("  " + ", ".join(_short(x) for x in r))
        if len(data) > rows:
            lines.append(f"  ... {len(data) - rows} more")
    elif path.suffix == ".jsonl":
        recs = read_jsonl(path)
        head = recs[0] if recs else {}
        if head.get("schema", "").startswith("inhand-plan"):
            lines.append(f"{path.name}: schema {head['schema']}, cost {head['cost']:.6g}, {len(recs) - 1} steps")
            start = head.get("start_label") or " ".join(f"{k[0]}:{k[2]}" for k in head["start"])
            lines.append(f"start grasp: {start}")
            for r in recs[1:]:
                lines.append(f"  m={r['m']:>2} {r['label']:<16} reward {r['reward']['total']:.4g}")
        else:
            lines += [json.dumps(r, sort_keys=True, indent=1) for r in recs]
    elif path.suffix in (".yaml", ".yml"):
        lines.append(json.dumps(read_yaml(path), indent=1, sort_keys=True, default=str))
    else:
        raise CliError(EXIT_CONFIG, "format", f"unknown artifact type: {path.suffix}")
    return "\n".join(lines)


def _short(x: str) -> str:
    try:
        return f"{float(x):.6g}"
    except ValueError:
        return x


def cmd_inspect(args):
    print(inspect_text(Path(args.path), args.rows))


COMMANDS = {"plan": cmd_plan, "execute": cmd_execute, "run": cmd_run, "batch": cmd_batch, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except CliError as exc:
        print(_error_line(exc.kind, str(exc), **exc.extra), file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
