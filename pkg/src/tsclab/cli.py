"""Command-line interface.

Exit codes: 0 ok, 1 validation error, 2 runtime error, 3 engine exhausted.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import statistics
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

from .baselines import FixedTimePlan, RandomController, fixed_time_controller, max_pressure_controller
from .caf import LogFormatError, analyze, read_decision_log, render_critique, write_decision_log
from .config import ConfigError, RunConfig, load_run_config
from .dsl import GRAMMAR, PolicyController, PolicyError, parse
from .engines import EngineConfigError, make_engine
from .evolution import Environment, evolve, history_lines, summarize_runs
from .scenarios import KINDS, ScenarioError, generate, parse_grid
from .sim import EpisodeAborted, run_episode, write_events
from .ssa import vocabulary_description

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_EXHAUSTED = 0, 1, 2, 3
BASELINES = ("random", "fixedtime", "maxpressure")


class ValidationError(Exception):
    pass


def write_atomic(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
    return path


def _json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _csv(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*map(str, r)) for r in rows]
    return "\n".join(lines) + "\n"


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if getattr(args, "scenario", None):
        cfg = replace(cfg, scenario=args.scenario, network_path=None, flows_path=None)
    if getattr(args, "seed", None):
        cfg = cfg.with_overrides(seeds=tuple(args.seed))
    if getattr(args, "out", None):
        cfg = cfg.with_overrides(output=Path(args.out))
    return cfg


def _policy_controller(path: str, env: Environment) -> Callable:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read policy: {exc}") from None
    try:
        program = parse(text, env.signature())
    except PolicyError as exc:
        raise ValidationError(f"{path}:{exc.diagnostic}") from None
    return lambda seed: PolicyController(program)


def controller_factory(spec: str, env: Environment, interval: int,
                       plan: FixedTimePlan | None = None) -> Callable[[int], Callable]:
    """``seed -> controller`` for a baseline name or ``policy:PATH``."""
    if spec == "maxpressure":
        return lambda seed: max_pressure_controller()
    if spec == "fixedtime":
        try:
            ctl = fixed_time_controller(plan, interval=interval, network=env.network, min_green=env.sim.min_green)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        return lambda seed: ctl
    if spec == "random":
        return RandomController
    if spec.startswith("policy:"):
        return _policy_controller(spec[len("policy:"):], env)
    raise ValidationError(f"unknown controller {spec!r}; use one of {BASELINES} or policy:PATH")


def _label(spec: str) -> str:
    return Path(spec[7:]).stem if spec.startswith("policy:") else spec


# --- subcommands -----------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    env = cfg.environment()
    make = controller_factory(args.controller, env, cfg.sim.decision_interval, cfg.fixed_time)
    out = cfg.output / "simulate"
    label = _label(args.controller)
    rows, table = [], []
    for seed in cfg.seeds:
        ep = run_episode(env.network, env.flows, make(seed), env.horizon, seed, env.sim, env.ssa)
        stem = f"{label}.seed{seed}"
        write_atomic(out / f"{stem}.events.jsonl", write_events(ep.events))
        write_atomic(out / f"{stem}.decisions.jsonl", write_decision_log(ep.decisions))
        write_atomic(out / f"{stem}.metrics.json", _json(ep.metrics.to_dict()))
        if not args.no_plots:
            from .plotting import plot_episode
            plot_episode(ep.events, env.horizon, out / f"{stem}.png")
        m = ep.metrics
        rows.append([seed, m.att, m.aql, m.awt, m.completed, m.remaining])
        table.append([str(seed), f"{m.att:.2f}", f"{m.aql:.2f}", f"{m.awt:.2f}", str(m.completed), str(m.remaining)])
    header = ["seed", "att", "aql", "awt", "completed", "remaining"]
    write_atomic(out / f"{label}.metrics.csv", _csv(header, rows))
    print(f"controller: {args.controller}")
    print(_table(header, table), end="")
    return EXIT_OK


def _stats(values: list[float]) -> dict[str, float]:
    return {"mean": statistics.fmean(values), "std": statistics.pstdev(values) if len(values) > 1 else 0.0}


def compare_rows(env: Environment, specs: list[str], seeds: tuple[int, ...], repeats: int, interval: int,
                 plan: FixedTimePlan | None = None) -> list[dict]:
    """Each repetition averages over ``seeds``; std is across repetitions.

    Only the random controller's stream changes between repetitions, so
    deterministic controllers report std exactly 0.
    """
    rows = []
    for spec in specs:
        make = controller_factory(spec, env, interval, plan)
        per_rep = {"att": [], "aql": [], "awt": []}
        for rep in range(repeats):
            ms = []
            for seed in seeds:
                ctl_seed = seed + 1000003 * rep
                ms.append(run_episode(env.network, env.flows, make(ctl_seed), env.horizon, seed, env.sim, env.ssa).metrics)
            for k in per_rep:
                per_rep[k].append(statistics.fmean(getattr(m, k) for m in ms))
        rows.append({"controller": _label(spec), **{k: _stats(v) for k, v in per_rep.items()}})
    return rows


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    env = cfg.environment()
    specs = list(BASELINES) + [f"policy:{p}" for p in args.policy or []]
    repeats = args.repeats if args.repeats is not None else cfg.evolution.runs
    if repeats < 1:
        raise ValidationError("--repeats must be >= 1")
    rows = compare_rows(env, specs, cfg.seeds, repeats, cfg.sim.decision_interval, cfg.fixed_time)
    out = cfg.output / "compare"
    header = ["controller", "att_mean", "att_std", "aql_mean", "aql_std", "awt_mean", "awt_std"]
    flat = [[r["controller"]] + [r[k][s] for k in ("att", "aql", "awt") for s in ("mean", "std")] for r in rows]
    write_atomic(out / "compare.csv", _csv(header, flat))
    notes = []
    if len(cfg.seeds) == 1:
        notes.append("single seed: every repetition sees one demand realization")
    if repeats == 1:
        notes.append("single repetition: std reported as 0")
    write_atomic(out / "compare.json", _json({"seeds": list(cfg.seeds), "repeats": repeats, "rows": rows, "notes": notes}))
    if not args.no_plots:
        from .plotting import plot_comparison
        plot_comparison(rows, out / "compare.png")
    pretty = [[r["controller"]] + [f"{r[k]['mean']:.2f} ± {r[k]['std']:.2f}" for k in ("att", "aql", "awt")] for r in rows]
    print(_table(["controller", "ATT (s)", "AQL (veh)", "AWT (s)"], pretty), end="")
    for n in notes:
        print(f"note: {n}")
    return EXIT_OK


def cmd_evolve(args) -> int:
    cfg = _load_config(args)
    evo = cfg.evolution
    overrides = {k: getattr(args, k) for k in ("runs", "iterations", "population") if getattr(args, k) is not None}
    if args.seed:
        overrides["eval_seeds"] = tuple(args.seed)
    if args.no_caf:
        overrides["use_caf"] = False
    try:
        evo = replace(evo, **overrides)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    engine_settings = cfg.engine if args.engine is None else replace(cfg.engine, kind=args.engine)
    ssa = replace(cfg.ssa, passthrough=True) if args.no_ssa else cfg.ssa
    env = replace(cfg.environment(), ssa=ssa)
    signature = env.signature(evo.max_rules, evo.max_depth)
    engines = [make_engine(engine_settings, signature, seed=engine_settings.seed + evo.seed + r)
               for r in range(evo.runs)]  # remote credentials are checked here, before any request

    out = cfg.output / "evolve"
    out.mkdir(parents=True, exist_ok=True)
    history_path = out / "history.jsonl"
    history_path.write_text("", encoding="utf-8")
    results = []
    with history_path.open("a", encoding="utf-8") as hist:
        for r in range(evo.runs):
            def sink(g, cands, r=r):
                hist.write(history_lines(r, cands))
                hist.flush()
                os.fsync(hist.fileno())
            res = evolve(env, engines[r], evo, run=r, on_generation=sink)
            results.append(res)
            write_atomic(out / f"best.run{r}.policy", res.best.canonical + "\n")
            print(f"run {r}: best fitness {res.best.fitness:.2f} after {len(res.best_trace) - 1} generations ({res.status})")

    summary = summarize_runs(results)
    best = min(results, key=lambda x: (x.best.fitness, x.run)).best
    write_atomic(out / "best.policy", best.canonical + "\n")
    write_atomic(out / "summary.json", _json(summary))
    header = ["run", "status", "best_fitness", "att", "aql", "awt", "starvation_defects"]
    rows = [[x.run, x.status, x.best.fitness, x.best.metrics.att, x.best.metrics.aql, x.best.metrics.awt,
             x.best.critique.counts["PhaseStarvation"]] for x in results]
    write_atomic(out / "summary.csv", _csv(header, rows))
    if not args.no_plots:
        from .plotting import plot_fitness_traces
        plot_fitness_traces([x.best_trace for x in results], out / "fitness.png")
    print(_table(header, [[str(c) if not isinstance(c, float) else f"{c:.2f}" for c in row] for row in rows]), end="")
    print(f"best fitness over {len(results)} run(s): {summary['mean']:.2f} ± {summary['std']:.2f}")
    print(f"best policy ({best.id}):\n{best.canonical}")
    return EXIT_EXHAUSTED if summary["status"] != "ok" else EXIT_OK


def cmd_analyze(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    path = Path(args.log)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read decision log: {exc}") from None
    try:
        log = read_decision_log(text)
    except LogFormatError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    critique = analyze(log, cfg.caf)
    target = Path(args.out) if args.out else path.with_name(path.name.removesuffix(".jsonl") + ".critique.json")
    write_atomic(target, _json(critique.to_dict()))
    print(render_critique(critique, log=log), end="")
    return EXIT_OK


def cmd_gen_scenario(args) -> int:
    rows, cols = parse_grid(args.grid)
    params = {"rows": rows, "cols": cols}
    if args.horizon is not None:
        params["horizon"] = args.horizon
    net, flows = generate(args.kind, args.seed, **params)
    name = args.name or f"{args.kind}_{rows}x{cols}"
    out = Path(args.out)
    a = write_atomic(out / f"{name}.network.json", json.dumps(net, indent=1) + "\n")
    b = write_atomic(out / f"{name}.flows.json", json.dumps(flows, indent=1) + "\n")
    print(f"wrote {a}\nwrote {b}")
    return EXIT_OK


def cmd_vocab(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    print(vocabulary_description(cfg.ssa))
    print()
    print(GRAMMAR)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsclab", description="Traffic signal control policy lab.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True, seeds=True, plots=True):
        sp.add_argument("--config", help="run configuration JSON")
        if scenario:
            sp.add_argument("--scenario", help="bundled scenario name (overrides the config)")
            sp.add_argument("--out", help="output directory (overrides the config)")
        if seeds:
            sp.add_argument("--seed", type=int, nargs="+", help="episode seeds (override the config)")
        if plots:
            sp.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    sp = sub.add_parser("simulate", help="run one episode per seed")
    common(sp)
    sp.add_argument("--controller", default="maxpressure", help=f"{'|'.join(BASELINES)}|policy:PATH")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="baselines and policies on identical seeds")
    common(sp)
    sp.add_argument("--policy", action="append", help="policy file to include (repeatable)")
    sp.add_argument("--repeats", type=int, help="repetitions for the std column (default: evolution.runs)")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("evolve", help="search for a policy")
    common(sp)
    sp.add_argument("--engine", choices=("mock", "remote"))
    sp.add_argument("--runs", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--population", type=int)
    sp.add_argument("--no-caf", action="store_true", help="replace critiques with bare fitness")
    sp.add_argument("--no-ssa", action="store_true", help="numeric features only")
    sp.set_defaults(func=cmd_evolve)

    sp = sub.add_parser("analyze", help="critique a decision log")
    common(sp, scenario=False, seeds=False, plots=False)
    sp.add_argument("log", help="decision log (JSON lines)")
    sp.add_argument("--out", help="critique JSON path (default: next to the log)")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("gen-scenario", help="write network and flow files")
    sp.add_argument("kind", choices=KINDS)
    sp.add_argument("--grid", default="1x1", help="RxC, 1x1 up to 4x4")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--name")
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_gen_scenario)

    sp = sub.add_parser("vocab", help="print the state vocabulary and policy grammar")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_vocab)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ConfigError, ScenarioError, EngineConfigError, PolicyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EpisodeAborted as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
