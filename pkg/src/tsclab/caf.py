"""Post-hoc defect analysis over an episode's decision log.

Three patterns are matched per intersection, where ``low(i, t)`` means
``queue[i] < eps_demand and pressure[i] < eps_demand`` in the facts logged
at decision ``t`` and ``high(i, t)`` means ``pressure[i] > high_demand``:

WastedGreenTime at t
    ``a_t = i``, ``low(i, t)``, and either some other phase is not low or the
    selection switched away from ``a_{t-1}``. Holding a phase while the whole
    intersection is empty is not a defect.

PhaseStarvation at t for phase i
    ``high(i, t)`` and ``a_k != i`` for every record k whose time lies in
    ``[time_t - tau_crit, time_t]``, with that window inside the log. Flagged
    decisions are merged into one defect per maximal run of decisions in
    which i was never selected.

PrematurePhaseSwitch at t
    ``i = a_{t-1}``, ``a_t = j != i``, neither decision deferred,
    ``high(i, t-1)`` and ``queue[i] > residual`` at t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .ssa import StructuredFacts

PATTERNS = ("WastedGreenTime", "PhaseStarvation", "PrematurePhaseSwitch")
PATTERN_TITLES = {
    "WastedGreenTime": "Wasted Green Time",
    "PhaseStarvation": "Phase Starvation",
    "PrematurePhaseSwitch": "Premature Phase Switch",
}
DIRECTIVES = {
    "PhaseStarvation": "add a fairness override ahead of the pressure rules, e.g. "
                       "IF starvation_risk[i] THEN i, or a starvation[i] threshold rule",
    "WastedGreenTime": "raise the demand thresholds that select a phase, or guard selections "
                       "with queue[i] > 0 so empty phases are not given green",
    "PrematurePhaseSwitch": "keep serving a phase while its queue is still long, e.g. "
                            "a rule that holds the current high-pressure phase",
}


@dataclass(frozen=True)
class DecisionRecord:
    t: int
    time: int
    facts: StructuredFacts
    action: int
    deferred: bool = False
    intersection: str = "I0"

    def to_dict(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "time": self.time,
            "intersection": self.intersection,
            "action": self.action,
            "deferred": self.deferred,
            "facts": self.facts.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "DecisionRecord":
        return cls(
            t=int(doc["t"]),
            time=int(doc["time"]),
            facts=StructuredFacts.from_dict(doc["facts"]),
            action=int(doc["action"]),
            deferred=bool(doc.get("deferred", False)),
            intersection=str(doc.get("intersection", "I0")),
        )


class LogFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def write_decision_log(records: Iterable[DecisionRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def read_decision_log(text: str) -> list[DecisionRecord]:
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(DecisionRecord.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise LogFormatError(n, f"malformed decision record ({exc})") from None
    return out


@dataclass(frozen=True)
class CAFConfig:
    tau_crit: float = 120.0
    eps_demand: float = 1.0
    high_demand: float = 8.0
    residual: float = 5.0
    decision_interval: float = 30.0
    top_k: int = 5

    def __post_init__(self) -> None:
        if self.tau_crit <= 0:
            raise ValueError("tau_crit must be > 0")
        if not self.eps_demand < self.high_demand:
            raise ValueError("eps_demand must be below high_demand")
        if self.decision_interval <= 0 or self.top_k < 0:
            raise ValueError("decision_interval must be > 0 and top_k >= 0")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "CAFConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"caf: unknown field(s) {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class Defect:
    pattern: str
    start: int
    end: int
    phase: int
    evidence: dict[str, Any]
    intersection: str = "I0"

    def to_dict(self) -> dict[str, Any]:
        return {"pattern": self.pattern, "intersection": self.intersection, "start": self.start,
                "end": self.end, "phase": self.phase, "evidence": self.evidence}


@dataclass
class Critique:
    defects: dict[str, list[Defect]] = field(default_factory=lambda: {p: [] for p in PATTERNS})
    decisions: int = 0
    decision_interval: float = 30.0
    top_k: int = 5

    @property
    def counts(self) -> dict[str, int]:
        return {p: len(self.defects[p]) for p in PATTERNS}

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def worst_starvation(self) -> float:
        return max((d.evidence["duration"] for d in self.defects["PhaseStarvation"]), default=0.0)

    @property
    def wasted_green_seconds(self) -> float:
        return len(self.defects["WastedGreenTime"]) * self.decision_interval

    def exemplars(self, pattern: str) -> list[Defect]:
        return sorted(self.defects[pattern], key=_severity)[: self.top_k]

    def to_dict(self) -> dict[str, Any]:
        return {
            "decisions": self.decisions,
            "counts": self.counts,
            "summary": {
                "worst_starvation_s": self.worst_starvation,
                "wasted_green_s": self.wasted_green_seconds,
            },
            "exemplars": {p: [d.to_dict() for d in self.exemplars(p)] for p in PATTERNS},
            "defects": {p: [d.to_dict() for d in self.defects[p]] for p in PATTERNS},
        }


def _severity(d: Defect) -> tuple:
    ev = d.evidence
    if d.pattern == "PhaseStarvation":
        return (-ev["duration"], d.intersection, d.start, d.phase)
    if d.pattern == "PrematurePhaseSwitch":
        return (-ev["residual_queue"], d.intersection, d.start, d.phase)
    return (-ev["other_demand"], d.intersection, d.start, d.phase)


def _by_intersection(log: list[DecisionRecord]) -> dict[str, list[DecisionRecord]]:
    groups: dict[str, list[DecisionRecord]] = {}
    for r in log:
        groups.setdefault(r.intersection, []).append(r)
    for recs in groups.values():
        recs.sort(key=lambda r: r.t)
    return groups


def analyze(log: list[DecisionRecord], config: CAFConfig = CAFConfig()) -> Critique:
    """Match the defect patterns over a whole decision log."""
    critique = Critique(decisions=len(log), decision_interval=config.decision_interval, top_k=config.top_k)
    eps, high = config.eps_demand, config.high_demand

    def low(f: StructuredFacts, i: int) -> bool:
        return f.queue[i] < eps and f.pressure[i] < eps

    for iid, recs in _by_intersection(log).items():
        if not recs:
            continue
        n = recs[0].facts.phase_count

        for k, r in enumerate(recs):
            i, f = r.action, r.facts
            if not low(f, i):
                continue
            demand_elsewhere = [j for j in range(n) if j != i and not low(f, j)]
            switched = k > 0 and recs[k - 1].action != i
            if demand_elsewhere or switched:
                critique.defects["WastedGreenTime"].append(Defect(
                    "WastedGreenTime", r.t, r.t, i,
                    {"queue": f.queue[i], "pressure": f.pressure[i],
                     "other_demand": len(demand_elsewhere), "switched": switched},
                    iid))

        t0 = recs[0].time
        for i in range(n):
            run_start = None
            lo = 0  # first record index inside the lookback window
            flagged: list[int] = []
            for k, r in enumerate(recs):
                if r.action == i:
                    _flush_starvation(critique, recs, run_start, flagged, i, iid, config)
                    run_start, flagged = None, []
                    continue
                if run_start is None:
                    run_start = k
                while recs[lo].time < r.time - config.tau_crit:
                    lo += 1
                window_ok = r.time - config.tau_crit >= t0 and lo >= run_start
                if window_ok and r.facts.pressure[i] > high:
                    flagged.append(k)
            _flush_starvation(critique, recs, run_start, flagged, i, iid, config)

        for k in range(1, len(recs)):
            prev, cur = recs[k - 1], recs[k]
            i, j = prev.action, cur.action
            if j == i or prev.deferred or cur.deferred:
                continue
            if prev.facts.pressure[i] > high and cur.facts.queue[i] > config.residual:
                critique.defects["PrematurePhaseSwitch"].append(Defect(
                    "PrematurePhaseSwitch", cur.t, cur.t, i,
                    {"to": j, "prior_pressure": prev.facts.pressure[i],
                     "residual_queue": cur.facts.queue[i]},
                    iid))

    for p in PATTERNS:
        critique.defects[p].sort(key=lambda d: (d.intersection, d.start, d.phase))
    return critique


def _flush_starvation(critique: Critique, recs: list[DecisionRecord], run_start: int | None,
                      flagged: list[int], phase: int, iid: str, config: CAFConfig) -> None:
    if run_start is None or not flagged:
        return
    first, last = recs[run_start], recs[flagged[-1]]
    critique.defects["PhaseStarvation"].append(Defect(
        "PhaseStarvation", first.t, last.t, phase,
        {"flagged": [recs[k].t for k in flagged],
         "pressure": [recs[k].facts.pressure[phase] for k in flagged],
         "duration": last.time - first.time + config.decision_interval},
        iid))


def _fmt(x: float) -> str:
    return f"{x:.0f}" if float(x).is_integer() else f"{x:.2f}"


def render_critique(critique: Critique, fitness=None, log: list[DecisionRecord] | None = None) -> str:
    """Deterministic text report for the mutation engine.

    ``fitness`` is a MetricsReport (or None). When the decision ``log`` is
    supplied, exemplars quote the structured facts recorded at the defect.
    """
    lines = []
    if fitness is not None:
        lines.append(
            f"Fitness: ATT {fitness.att:.2f} s | AQL {fitness.aql:.2f} veh | AWT {fitness.awt:.2f} s"
            f" | completed {fitness.completed}, remaining {fitness.remaining}"
        )
    if critique.total == 0:
        lines.append(f"Defect analysis over {critique.decisions} decisions: no defects matched.")
        return "\n".join(lines) + "\n"

    lines.append(f"Defect analysis over {critique.decisions} decisions: {critique.total} defects matched.")
    counts = critique.counts
    for p in PATTERNS:
        if not counts[p]:
            continue
        title = PATTERN_TITLES[p]
        if p == "PhaseStarvation":
            lines.append(f"  {title}: {counts[p]} (worst {_fmt(critique.worst_starvation)} s without green)")
        elif p == "WastedGreenTime":
            lines.append(f"  {title}: {counts[p]} ({_fmt(critique.wasted_green_seconds)} s of green on empty phases)")
        else:
            lines.append(f"  {title}: {counts[p]} (switched away with residual queue)")

    facts_at = {}
    if log is not None:
        facts_at = {(r.intersection, r.t): r.facts for r in log}
    lines.append("Exemplars:")
    for p in PATTERNS:
        for d in critique.exemplars(p):
            ev = d.evidence
            where = f"{d.intersection} phase {d.phase}"
            if p == "PhaseStarvation":
                peak = max(ev["pressure"])
                msg = (f"decisions {d.start}-{d.end}: never selected for {_fmt(ev['duration'])} s "
                       f"while pressure reached {_fmt(peak)}")
            elif p == "WastedGreenTime":
                msg = (f"decision {d.start}: selected with queue {_fmt(ev['queue'])}, "
                       f"pressure {_fmt(ev['pressure'])}; {ev['other_demand']} other phase(s) had demand")
            else:
                msg = (f"decision {d.start}: switched to phase {ev['to']} after pressure "
                       f"{_fmt(ev['prior_pressure'])}, leaving queue {_fmt(ev['residual_queue'])}")
            lines.append(f"  [{PATTERN_TITLES[p]}] {where}, {msg}")
            f = facts_at.get((d.intersection, d.end))
            if f is not None:
                lines.append(f"      facts: {'; '.join(f.predicates())}")
    lines.append("Directives:")
    for p in PATTERNS:
        if counts[p]:
            lines.append(f"  - {PATTERN_TITLES[p]}: {DIRECTIVES[p]}.")
    return "\n".join(lines) + "\n"
