"""Command-line entry point.

    medtour simulate --config baseline --reps 2 --seed 7 --out out/sim
    medtour doe gen --out out/doe
    medtour doe run --seed 1 --reps 1 --horizon-days 120 --out out/doe
    medtour analyze --results out/doe/results.csv --out out/analysis
    medtour recommend --results out/doe/results.csv --out out/analysis
    medtour compare --setting final --seed 3 --reps 2 --out out/compare

Exit status: 0 success, 1 usage, 2 configuration, 3 contract violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import math
import os
import sys

from medtour import __version__
from medtour.agents import ContractViolation
from medtour.config import DES_ONLY, HYBRID, MODES, ConfigError, ScenarioConfig, load_config, preset
from medtour.metrics import csv_header, csv_row

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_CONTRACT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, seed: bool = True, sim: bool = True) -> None:
    p.add_argument("--out", required=True, help="output directory")
    if seed:
        p.add_argument("--seed", type=int, required=True, help="master seed (required)")
    if sim:
        p.add_argument("--config", default="baseline", help="preset name or key = value file")
        p.add_argument("--reps", type=int, help="replications per scenario")
        p.add_argument("--horizon-days", type=float, help="reporting horizon after warm-up")
        p.add_argument("--warmup-days", type=float, help="warm-up length in days")
        p.add_argument("--mode", choices=MODES, help="hybrid or des-only")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="medtour", description="Hybrid hospital simulation and factor screening.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="run one scenario")
    _common(p)
    p.add_argument("--trace", action="store_true", help="also write transition and span traces")

    doe = sub.add_parser("doe", help="design generation and design runs")
    dsub = doe.add_subparsers(dest="doe_command", parser_class=_Parser)
    dsub.required = True
    g = dsub.add_parser("gen", help="write the 256-run design")
    _common(g, seed=False, sim=False)
    r = dsub.add_parser("run", help="simulate every design row")
    _common(r)
    r.add_argument("--design", help="design.csv to run (default: the generated design)")
    r.add_argument("--resume", action="store_true", help="continue an interrupted results.csv")
    r.add_argument("--runs", help="subset of run ids, e.g. 0-15 or 3,5,8")
    r.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    a = sub.add_parser("analyze", help="screening regressions and diagnostics")
    _common(a, seed=False, sim=False)
    a.add_argument("--results", required=True)
    a.add_argument("--interactions", choices=("table", "all", "none"), default="table")

    rec = sub.add_parser("recommend", help="factor-level recommendation only")
    _common(rec, seed=False, sim=False)
    rec.add_argument("--results", required=True)
    rec.add_argument("--interactions", choices=("table", "all", "none"), default="table")

    c = sub.add_parser("compare", help="hybrid vs des-only at one setting")
    _common(c)
    c.add_argument("--setting", default="final", help="preset used as the compared setting")
    return parser


def _scenario(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "reps", None) is not None:
        changes["replications"] = args.reps
    if getattr(args, "horizon_days", None) is not None:
        changes["horizon_days"] = args.horizon_days
    if getattr(args, "warmup_days", None) is not None:
        changes["warmup_days"] = args.warmup_days
    if getattr(args, "mode", None) is not None:
        changes["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    return dataclasses.replace(cfg, **changes)


def _manifest(args, out: str, outputs: list[str], started: str, cfg: ScenarioConfig | None = None) -> None:
    command = args.command + (f" {args.doe_command}" if getattr(args, "doe_command", None) else "")
    data = {
        "tool": "medtour",
        "version": __version__,
        "subcommand": command,
        "argv": args.argv,
        "master_seed": getattr(args, "seed", None),
        "config_hash": cfg.config_hash() if cfg is not None else None,
        "config": cfg.to_dict() if cfg is not None else None,
        "outputs": sorted(os.path.relpath(p, out) for p in outputs),
        "started": started,
        "finished": _now(),
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_rows(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_simulate(args) -> list[str]:
    from medtour.model import run_replication

    cfg = _scenario(args)
    os.makedirs(args.out, exist_ok=True)
    rows, outputs = [], []
    coded = cfg.coded_factors()
    for rep in range(cfg.replications):
        rv, trace = run_replication(cfg, rep, record_transitions=args.trace)
        rows.append(csv_row(0, rep, cfg.master_seed, coded, rv))
        if args.trace:
            tpath = os.path.join(args.out, f"transitions_rep{rep}.csv")
            _write_rows(tpath, ["time", "kind", "agent", "from", "to", "trigger"],
                        ([repr(t), k, a, s, d, trig] for t, k, a, s, d, trig in trace.transitions))
            spath = os.path.join(args.out, f"spans_rep{rep}.csv")
            _write_rows(spath, ["file_number", "queue", "start", "end", "tourist", "censored"],
                        ([fn, q, repr(s), repr(e), int(tr), int(c)] for fn, q, s, e, tr, c in trace.spans))
            outputs += [tpath, spath]
    path = os.path.join(args.out, "results.csv")
    _write_rows(path, csv_header(), rows)
    print(f"wrote {len(rows)} replication rows to {path}")
    return [path] + outputs, cfg


def _parse_runs(text: str | None):
    if not text:
        return None
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def cmd_doe(args):
    from medtour import doe

    os.makedirs(args.out, exist_ok=True)
    if args.doe_command == "gen":
        design = doe.generate_design()
        paths = doe.write_design(design, args.out)
        report = doe.verify_design(design)
        for line in report.lines():
            print(line)
        return list(paths), None
    cfg = _scenario(args)
    design = doe.read_design(args.design) if args.design else doe.generate_design()
    if not args.design:
        doe.write_design(design, args.out)
    path = os.path.join(args.out, "results.csv")
    n = doe.orchestrate(design, path, replications=cfg.replications, master_seed=args.seed, base=cfg,
                        resume=args.resume, runs=_parse_runs(args.runs), workers=args.workers,
                        progress=_progress)
    print(f"\nsimulated {n} replications; results in {path}")
    return [path], cfg


def _progress(i: int, n: int) -> None:
    if i == n or i % 16 == 0:
        print(f"\r{i}/{n} replications", end="", file=sys.stderr, flush=True)


def cmd_analyze(args):
    from medtour.analysis import analyze

    models = analyze(args.results, args.out, interactions=args.interactions)
    for r, m in models.items():
        print(f"{m.response}: R2={m.r2:.3f} adj={m.adj_r2:.3f}")
    outs = []
    for root, _, files in os.walk(args.out):
        outs += [os.path.join(root, f) for f in files if f != "manifest.json"]
    return outs, None


def cmd_recommend(args):
    from medtour.analysis import fit_all, format_recommendation, read_results, recommend_levels

    models = fit_all(read_results(args.results), args.interactions)
    text = format_recommendation(recommend_levels(models))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "recommendation.txt")
    with open(path, "w") as fh:
        fh.write(text)
    print(text, end="")
    return [path], None


COMPARE_ROWS = (
    ("Early dropout from the system", "min", "early_dropout", "patients"),
    ("Average waiting time in the system", "min", "avg_system_wait", "days"),
    ("Average waiting time in the hospital queue", "min", "avg_hospital_queue_wait", "days"),
    ("Average tourist hospital-queue wait", "min", "avg_tourist_hospital_queue_wait", "days"),
    ("Emergency patients before appointment", "min", "emergency_before_appointment", "patients"),
    ("Recovered patients", "max", "recovered", "patients"),
    *((f"Specialty {s} utilisation", "max", f"util_{s}", "percent") for s in range(1, 6)),
)


def compare_table(hybrid_rows: list[dict], des_rows: list[dict]) -> list[list[str]]:
    """Mean of each measure per mode and the des-only direction relative to hybrid."""
    out = []
    for label, goal, key, unit in COMPARE_ROWS:
        h = _mean([r[key] for r in hybrid_rows])
        d = _mean([r[key] for r in des_rows])
        if h is None or d is None or d == h:
            rel = "Equal" if h == d else "n/a"
        else:
            rel = "Higher" if d > h else "Lower"
        out.append([f"{label} ({goal}.)", unit, _fmt(h), _fmt(d), rel])
    return out


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def _fmt(v) -> str:
    return "" if v is None else f"{v:.3f}"


def cmd_compare(args):
    from medtour.model import run_replication

    args_cfg = _scenario(args)
    setting = preset(args.setting, args_cfg) if args.setting else args_cfg
    if args.horizon_days is None:
        setting = dataclasses.replace(setting, horizon_days=365.0)
    results = {}
    for mode in (HYBRID, DES_ONLY):
        cfg = dataclasses.replace(setting, mode=mode)
        rows = []
        for rep in range(cfg.replications):
            rv, _ = run_replication(cfg, rep)
            rows.append(rv.as_dict())
        results[mode] = rows
    table = compare_table(results[HYBRID], results[DES_ONLY])
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "compare.csv")
    _write_rows(path, ["measure", "unit", "hybrid", "des_only", "des_vs_hybrid"], table)
    width = max(len(r[0]) for r in table)
    print(f"{'Measure':<{width}}  {'Hybrid':>10}  {'DES only':>10}  DES vs hybrid")
    for r in table:
        print(f"{r[0]:<{width}}  {r[2]:>10}  {r[3]:>10}  {r[4]}")
    return [path], setting


COMMANDS = {
    "simulate": cmd_simulate,
    "doe": cmd_doe,
    "analyze": cmd_analyze,
    "recommend": cmd_recommend,
    "compare": cmd_compare,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    args.argv = list(sys.argv[1:] if argv is None else argv)
    started = _now()
    try:
        outputs, cfg = COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error in field '{exc.field}': {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # resume refusal and other input problems
        from medtour.doe import DesignError, ResumeError

        if isinstance(exc, (ResumeError, DesignError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        raise
    _manifest(args, args.out, outputs, started, cfg)
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
