"""Command line entry point: ``python -m pinchcut <command>``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .env import evaluate
from .harness import (ALGORITHMS, ResultRow, RunConfig, parse_algorithms, report,
                      run_testbed, trial_mean, trial_std)
from .search import PinchPlan, PolicyCache, VARIANTS, WorkPool, build_plan, derive_seed
from .trpo import executed
from .testbed import dumps_testbed, read_testbed, synthetic_entries, synthetic_testbed

log = logging.getLogger("pinchcut")


class CliError(Exception):
    pass


def read_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno <= len(text.splitlines()) else ""
        raise CliError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}\n  {line}") from None
    if not isinstance(doc, dict):
        raise CliError(f"{path}: config must be a JSON object")
    try:
        return RunConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from None


def resolve_config(args) -> RunConfig:
    cfg = read_config(args.config) if getattr(args, "config", None) else RunConfig()
    kw = {}
    if os.environ.get("PINCHCUT_OUTPUT_DIR"):
        kw["output_dir"] = os.environ["PINCHCUT_OUTPUT_DIR"]
    if os.environ.get("PINCHCUT_WORKERS"):
        try:
            kw["workers"] = int(os.environ["PINCHCUT_WORKERS"])
        except ValueError:
            raise CliError("PINCHCUT_WORKERS must be an integer") from None
    for name in ("seed", "trials", "workers"):
        if getattr(args, name, None) is not None:
            kw[name] = getattr(args, name)
    if getattr(args, "output", None) is not None:
        kw["output_dir"] = args.output
    return replace(cfg, **kw) if kw else cfg


def load_testbed(path):
    if path is None:
        return synthetic_testbed()
    try:
        return read_testbed(path)
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(str(exc)) from None


def format_summary(rows) -> str:
    lines = [f"{'contour':<10}{'algorithm':<10}{'mean':>8}{'std':>8}{'vs NTB':>10}"]
    for r in rows:
        imp = "n/a" if r.relative_improvement is None else f"{r.relative_improvement:.1f}%"
        lines.append(f"{r.contour_id:<10}{r.algorithm:<10}{r.mean:>8.2f}{r.std:>8.2f}{imp:>10}")
    return "\n".join(lines)


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    testbed = load_testbed(args.testbed)
    try:
        algos = parse_algorithms(args.algos)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if not algos:
        raise CliError("no algorithms selected")
    cache = PolicyCache(args.cache) if args.cache else None
    runs = run_testbed(testbed, algos, cfg, cache)
    rows = [r.row for r in runs]
    details = [{"contour": r.row.contour_id, "algorithm": r.row.algorithm, **r.details}
               for r in runs]
    paths = report(rows, cfg.output_dir, {"config": cfg.to_dict(), "details": details})
    print(format_summary(rows))
    for name, p in paths.items():
        print(f"wrote {name}: {p}")
    return 0


def _pick_contour(testbed, contour_id):
    by_id = {c.id: (c, m) for c, m in testbed}
    if contour_id is None:
        if len(by_id) != 1:
            raise CliError(f"choose a contour with --contour ({', '.join(by_id)})")
        return next(iter(by_id.values()))
    if contour_id not in by_id:
        raise CliError(f"no contour {contour_id!r} in testbed ({', '.join(by_id)})")
    return by_id[contour_id]


def cmd_plan(args) -> int:
    cfg = resolve_config(args)
    contour, m = _pick_contour(load_testbed(args.testbed), args.contour)
    search, train = cfg.seeded()
    with WorkPool(cfg.workers) as pool:
        plan = build_plan(contour, m, cfg.sheet, args.variant, train, search, pool,
                          blade_jitter=cfg.blade_jitter)
    out = Path(cfg.output_dir) / f"plan_{contour.id}_{args.variant}"
    path = plan.to_json(out)
    print(f"order {list(plan.order)}  pinch {plan.tension}  pins {list(plan.joint_pins)}  "
          f"score {plan.score:.2f}")
    print(f"wrote plan: {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    try:
        plan = PinchPlan.from_json(args.plan)
    except FileNotFoundError as exc:
        raise CliError(f"plan file not found: {exc.filename}") from None
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"{args.plan}: malformed plan: {exc}") from None
    scenario = plan.scenario(cfg.sheet, blade_jitter=cfg.blade_jitter)
    seeds = [derive_seed(cfg.seed, plan.contour.id, plan.variant, "eval-cli", k)
             for k in range(cfg.trials)]
    run = executed(plan.policies, cfg.search.greedy_eval)
    scores = [evaluate(scenario.with_seed(s), run, [s])[0] for s in seeds]
    row = ResultRow(plan.contour.id, plan.variant, scores)
    print(json.dumps({"contour": row.contour_id, "variant": row.algorithm, "trials": scores,
                      "mean": trial_mean(scores), "std": trial_std(scores)}))
    return 0


def cmd_gen_testbed(args) -> int:
    text = dumps_testbed(synthetic_entries())
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text)
        print(f"wrote testbed: {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinchcut", description="Pattern-cutting tensioning benchmark")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with RunConfig fields")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--output", help="output directory (env PINCHCUT_OUTPUT_DIR)")
        sp.add_argument("--workers", type=int, help="worker processes (env PINCHCUT_WORKERS)")

    r = sub.add_parser("run", help="run algorithms over a testbed and write reports")
    r.add_argument("--testbed", help="testbed JSON (default: bundled synthetic testbed)")
    r.add_argument("--algos", default=",".join(ALGORITHMS), help="comma-separated algorithm ids")
    r.add_argument("--trials", type=int, help="evaluation trials per contour")
    r.add_argument("--cache", help="directory for trained candidate policies")
    common(r)
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plan", help="build and save a pinch plan for one contour")
    pl.add_argument("--testbed", help="testbed JSON (default: bundled synthetic testbed)")
    pl.add_argument("--contour", help="contour id within the testbed")
    pl.add_argument("--variant", default="MDRLT2", choices=VARIANTS)
    common(pl)
    pl.set_defaults(func=cmd_plan)

    e = sub.add_parser("eval", help="evaluate a saved plan")
    e.add_argument("plan", help="path to plan.json")
    e.add_argument("--trials", type=int, help="evaluation trials")
    common(e)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen-testbed", help="write the bundled synthetic testbed")
    g.add_argument("--output", help="destination file (default: stdout)")
    g.set_defaults(func=cmd_gen_testbed)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"pinchcut: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"pinchcut: error: {exc}", file=sys.stderr)
        return 1
