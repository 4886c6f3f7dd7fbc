"""Policy search: simulate, critique, propose, select, repeat."""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable

from .caf import CAFConfig, Critique, analyze, render_critique
from .dsl import GRAMMAR, Diagnostic, Policy, PolicyController, PolicyError, PolicySource, Signature, parse, render
from .network import Flow, RoadNetwork
from .prompt import DEFAULT_TASK, build_prompt
from .sim import EpisodeAborted, MetricsReport, SimConfig, run_episode
from .ssa import SSAConfig, vocabulary_description

METRICS = ("att", "aql", "awt")

# MaxPressure-equivalent, round-robin-like and queue-greedy starting points
INITIAL_SOURCES = (
    "ELSE argmax(pressure)",
    "ELSE argmax(starvation)",
    "ELSE argmax(queue)",
)


@dataclass(frozen=True)
class Environment:
    network: RoadNetwork
    flows: list[Flow]
    horizon: int = 3600
    sim: SimConfig = SimConfig()
    ssa: SSAConfig = SSAConfig()
    caf: CAFConfig = CAFConfig()

    def signature(self, max_rules: int = 16, max_depth: int = 12) -> Signature:
        counts = {ix.phase_count for ix in self.network.intersections}
        if len(counts) != 1:
            raise ValueError("policies need every intersection to have the same phase count")
        return Signature(counts.pop(), categorical=not self.ssa.passthrough,
                         max_depth=max_depth, max_rules=max_rules)


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 20
    elites: int = 3
    iterations: int = 20
    outer_iterations: int = 1
    runs: int = 3
    fitness: dict[str, float] = field(default_factory=lambda: {"att": 1.0})
    eval_seeds: tuple[int, ...] = (0, 1, 2)
    seed: int = 0
    retry_budget: int = 2
    max_idle_generations: int = 3
    use_caf: bool = True
    initial_sources: tuple[str, ...] = INITIAL_SOURCES
    max_prompt_chars: int = 12000
    max_rules: int = 16
    max_depth: int = 12
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("population", "elites", "iterations", "outer_iterations", "runs", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"evolution.{name} must be >= 1")
        if self.elites >= self.population:
            raise ValueError("evolution.elites must be below evolution.population")
        if not self.eval_seeds:
            raise ValueError("evolution.eval_seeds must be nonempty")
        if self.retry_budget < 0 or self.max_idle_generations < 0:
            raise ValueError("evolution retry counts must be >= 0")
        if not self.fitness or set(self.fitness) - set(METRICS):
            raise ValueError(f"evolution.fitness weights must use keys from {METRICS}")
        if not self.initial_sources:
            raise ValueError("evolution.initial_sources must be nonempty")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "EvolutionConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"evolution: unknown field(s) {sorted(unknown)}")
        doc = dict(doc)
        for key in ("eval_seeds", "initial_sources"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass
class Candidate:
    id: str
    source: PolicySource
    program: Policy | None
    status: str  # ok | rejected | aborted
    fitness: float = math.inf
    metrics: MetricsReport | None = None
    per_seed: list[MetricsReport] = field(default_factory=list)
    critique: Critique | None = None
    critique_text: str = ""
    diagnostic: Diagnostic | str | None = None
    generation: int = 0
    parent: str | None = None
    cached: bool = False

    @property
    def valid(self) -> bool:
        return self.status == "ok"

    @property
    def canonical(self) -> str | None:
        return render(self.program) if self.program is not None else None

    def to_record(self, run: int) -> dict[str, Any]:
        diag = self.diagnostic
        return {
            "run": run,
            "generation": self.generation,
            "id": self.id,
            "parent": self.parent,
            "status": self.status,
            "cached": self.cached,
            "source": self.source.text,
            "canonical": self.canonical,
            "fitness": self.fitness if math.isfinite(self.fitness) else None,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "per_seed": [m.to_dict() for m in self.per_seed],
            "defects": self.critique.counts if self.critique else None,
            "diagnostic": diag.to_dict() if isinstance(diag, Diagnostic) else diag,
        }


def mean_metrics(reports: list[MetricsReport]) -> MetricsReport:
    return MetricsReport(
        att=statistics.fmean(m.att for m in reports),
        aql=statistics.fmean(m.aql for m in reports),
        awt=statistics.fmean(m.awt for m in reports),
        completed=round(statistics.fmean(m.completed for m in reports)),
        remaining=round(statistics.fmean(m.remaining for m in reports)),
    )


def scalar_fitness(metrics: MetricsReport, weights: dict[str, float]) -> float:
    return sum(w * getattr(metrics, k) for k, w in weights.items())


def evaluate_candidate(
    source: PolicySource | str,
    env: Environment,
    seeds=(0, 1, 2),
    weights: dict[str, float] | None = None,
    signature: Signature | None = None,
    cid: str = "c0",
) -> Candidate:
    """Parse, simulate once per seed, and critique the first seed's log."""
    if isinstance(source, str):
        source = PolicySource(source)
    signature = signature or env.signature()
    weights = weights or {"att": 1.0}
    base = dict(id=cid, source=source, generation=source.generation, parent=source.parent)
    try:
        program = parse(source, signature)
    except PolicyError as exc:
        return Candidate(program=None, status="rejected", diagnostic=exc.diagnostic, **base)
    per_seed, first_log = [], None
    try:
        for seed in seeds:
            ep = run_episode(env.network, env.flows, PolicyController(program), env.horizon, seed,
                             env.sim, env.ssa)
            per_seed.append(ep.metrics)
            if first_log is None:
                first_log = ep.decisions
    except EpisodeAborted as exc:
        return Candidate(program=program, status="aborted", diagnostic=str(exc), **base)
    metrics = mean_metrics(per_seed)
    critique = analyze(first_log, env.caf)
    return Candidate(
        program=program, status="ok", fitness=scalar_fitness(metrics, weights), metrics=metrics,
        per_seed=per_seed, critique=critique, critique_text=render_critique(critique, metrics, first_log),
        **base,
    )


def _rank_key(c: Candidate) -> tuple:
    awt = c.metrics.awt if c.metrics else math.inf
    return (c.fitness, awt, c.generation)


def select_elites(population: list[Candidate], k: int) -> list[Candidate]:
    """Best ``k`` by scalar fitness, then lower AWT, then earlier generation."""
    if not population:
        raise ValueError("select_elites needs a nonempty population")
    return sorted(population, key=_rank_key)[:k]


@dataclass
class EvolutionResult:
    run: int
    best: Candidate
    history: list[Candidate]
    best_trace: list[float]
    status: str  # ok | engine-exhausted
    task: str

    def summary(self) -> dict[str, Any]:
        return {
            "run": self.run,
            "status": self.status,
            "best_id": self.best.id,
            "best_fitness": self.best.fitness,
            "best_metrics": self.best.metrics.to_dict() if self.best.metrics else None,
            "best_defects": self.best.critique.counts if self.best.critique else None,
            "best_policy": self.best.canonical,
            "best_trace": self.best_trace,
            "generations": len(self.best_trace) - 1,
            "candidates": len(self.history),
        }


def _evaluate_many(sources, env, config, signature, ids, pool):
    args = [(s, env, config.eval_seeds, config.fitness, signature, cid) for s, cid in zip(sources, ids)]
    if pool is None:
        return [evaluate_candidate(*a) for a in args]
    return list(pool.map(_evaluate_star, args))


def _evaluate_star(args):
    return evaluate_candidate(*args)


def _reuse(hit: Candidate, cid: str, source: PolicySource) -> Candidate:
    return replace(hit, id=cid, source=source, generation=source.generation, parent=source.parent, cached=True)


def _prompt_critiques(elites: list[Candidate], use_caf: bool) -> list[str]:
    if use_caf:
        return [e.critique_text for e in elites]
    return [f"Fitness: {e.fitness:.2f}\n" for e in elites]


def _unique_best(pool: list[Candidate], k: int) -> list[Candidate]:
    seen, unique = set(), []
    for c in sorted(pool, key=_rank_key):
        if c.canonical in seen:
            continue
        seen.add(c.canonical)
        unique.append(c)
    return select_elites(unique, k) if unique else []


def evolve(
    env: Environment,
    engine,
    config: EvolutionConfig = EvolutionConfig(),
    run: int = 0,
    on_generation: Callable[[int, list[Candidate]], None] | None = None,
) -> EvolutionResult:
    """One run of the search.

    ``on_generation(g, candidates)`` is called once per finished generation
    with that generation's records, so callers can persist history
    incrementally.
    """
    signature = env.signature(config.max_rules, config.max_depth)
    vocabulary = vocabulary_description(env.ssa)
    cache: dict[str, Candidate] = {}
    history: list[Candidate] = []
    counter = 0

    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        def evaluate_batch(sources: list[PolicySource], generation: int) -> list[Candidate]:
            """Simulate only sources whose canonical program has not been seen."""
            nonlocal counter
            out: list[Candidate | None] = []
            pending: dict[str, list[tuple[int, str, PolicySource]]] = {}
            for s in sources:
                s = replace(s, generation=generation)
                cid = f"r{run}g{generation}c{counter}"
                counter += 1
                try:
                    key = render(parse(s, signature))
                except PolicyError as exc:
                    out.append(Candidate(id=cid, source=s, program=None, status="rejected",
                                         diagnostic=exc.diagnostic, generation=generation, parent=s.parent))
                    continue
                if key in cache:
                    out.append(_reuse(cache[key], cid, s))
                else:
                    pending.setdefault(key, []).append((len(out), cid, s))
                    out.append(None)
            firsts = [slots[0] for slots in pending.values()]
            fresh = _evaluate_many([s for _, _, s in firsts], env, config, signature, [c for _, c, _ in firsts], pool)
            for (key, slots), cand in zip(pending.items(), fresh):
                cache[key] = cand
                out[slots[0][0]] = cand
                for slot, cid, s in slots[1:]:
                    out[slot] = _reuse(cand, cid, s)
            return out  # type: ignore[return-value]

        gen0 = evaluate_batch([PolicySource(t, name=f"seed-{i}") for i, t in enumerate(config.initial_sources)], 0)
        history.extend(gen0)
        if on_generation:
            on_generation(0, gen0)
        elites = _unique_best([c for c in gen0 if c.valid], config.elites)
        if not elites:
            raise ValueError("no initial policy is valid for this network: "
                             + "; ".join(str(c.diagnostic) for c in gen0))
        trace = [elites[0].fitness]
        task = DEFAULT_TASK
        status = "ok"
        idle = 0
        diagnostics: list[str] = []
        generation = 0

        for outer in range(config.outer_iterations):
            if outer > 0:
                prompt = build_prompt(elites, vocabulary, GRAMMAR, _prompt_critiques(elites, config.use_caf),
                                      task, max_chars=config.max_prompt_chars)
                task = engine.refine_prompt(prompt) or task
            for _ in range(config.iterations):
                generation += 1
                new: list[Candidate] = []
                wanted = config.population
                repairs = config.retry_budget
                while True:
                    prompt = build_prompt(elites, vocabulary, GRAMMAR, _prompt_critiques(elites, config.use_caf),
                                          task, diagnostics, config.max_prompt_chars)
                    sources = engine.propose(prompt, wanted)[:wanted]
                    batch = evaluate_batch(sources, generation)
                    new.extend(batch)
                    rejected = [c for c in batch if c.status == "rejected"]
                    diagnostics = [f"{c.source.text.strip()!r}: {c.diagnostic}" for c in rejected][-10:]
                    wanted = len(rejected)
                    if not rejected or repairs == 0:
                        break
                    repairs -= 1

                history.extend(new)
                if on_generation:
                    on_generation(generation, new)
                valid = [c for c in new if c.valid]
                idle = 0 if valid else idle + 1
                elites = _unique_best(elites + valid, config.elites)
                trace.append(elites[0].fitness)
                if idle > config.max_idle_generations:
                    status = "engine-exhausted"
                    break
            if status != "ok":
                break
        best = elites[0]
        return EvolutionResult(run, best, history, trace, status, task)
    finally:
        if pool is not None:
            pool.shutdown()


def evolve_runs(env: Environment, engine_factory: Callable[[int], Any], config: EvolutionConfig = EvolutionConfig(),
                on_generation: Callable[[int, int, list[Candidate]], None] | None = None) -> list[EvolutionResult]:
    """``config.runs`` independent runs; run r uses engine seed ``config.seed + r``."""
    results = []
    for r in range(config.runs):
        hook = (lambda g, cs, r=r: on_generation(r, g, cs)) if on_generation else None
        results.append(evolve(env, engine_factory(config.seed + r), config, run=r, on_generation=hook))
    return results


def summarize_runs(results: list[EvolutionResult]) -> dict[str, Any]:
    best = [r.best.fitness for r in results]
    awt = [r.best.metrics.awt for r in results]
    return {
        "runs": [r.summary() for r in results],
        "best_fitness": best,
        "mean": statistics.fmean(best),
        "std": statistics.pstdev(best),
        "awt_mean": statistics.fmean(awt),
        "awt_std": statistics.pstdev(awt),
        "status": "engine-exhausted" if any(r.status != "ok" for r in results) else "ok",
    }


def history_lines(run: int, candidates: list[Candidate]) -> str:
    return "".join(json.dumps(c.to_record(run), sort_keys=True) + "\n" for c in candidates)
