"""Structured state abstraction.

Turns the numeric snapshot of one intersection plus a small set of
persistent timers into a closed vocabulary of categorical facts. Policies
read these facts (and the numeric companions carried alongside them); the
defect analyser reads them back out of the decision log.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

CONGESTION_LEVELS = ("Low", "Moderate", "High", "Critical")
URGENCY_LEVELS = ("Normal", "Critical")
IMBALANCE_LEVELS = ("None", "NS_Dominant", "EW_Dominant")
NUMERIC_FEATURES = ("pressure", "queue", "wait", "starvation")


@dataclass(frozen=True)
class SSAConfig:
    theta_demand: float = 5.0
    tau_critical: float = 120.0
    c_low: float = 5.0
    c_mod: float = 15.0
    c_high: float = 25.0
    c_crit: float = 40.0
    urgency_wait: float = 90.0
    imbalance_ratio: float = 1.5
    dominant_margin: float = 2.0
    # numeric features only; categorical slots pinned to their neutral value
    passthrough: bool = False

    def __post_init__(self) -> None:
        cuts = (self.c_low, self.c_mod, self.c_high, self.c_crit)
        if not all(a < b for a, b in zip(cuts, cuts[1:])):
            raise ValueError(f"congestion cut points must be strictly increasing, got {cuts}")
        if self.imbalance_ratio <= 1:
            raise ValueError("imbalance_ratio must be > 1")
        for name in ("theta_demand", "tau_critical", "c_low", "urgency_wait", "dominant_margin"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SSAConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"ssa: unknown field(s) {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class IntersectionView:
    """Numeric snapshot of one intersection at a decision boundary."""

    pressure: tuple[float, ...]
    queue: tuple[float, ...]
    wait: tuple[float, ...]
    axes: tuple[str | None, ...]
    active_phase: int
    dt: float = 30.0

    @property
    def phase_count(self) -> int:
        return len(self.pressure)


@dataclass(frozen=True)
class TemporalRegisters:
    starvation: tuple[float, ...]
    previous: "StructuredFacts | None" = None
    last_action: int | None = None

    @classmethod
    def fresh(cls, phase_count: int) -> "TemporalRegisters":
        return cls(starvation=(0.0,) * phase_count)


@dataclass(frozen=True)
class StructuredFacts:
    congestion: str
    dominant_flow: int | None
    starvation_risk: tuple[bool, ...]
    urgency: str
    imbalance: str
    pressure: tuple[float, ...]
    queue: tuple[float, ...]
    wait: tuple[float, ...]
    starvation: tuple[float, ...]

    @property
    def phase_count(self) -> int:
        return len(self.pressure)

    def feature(self, name: str) -> tuple[float, ...]:
        return getattr(self, name)

    def predicates(self) -> list[str]:
        """The categorical facts as display strings."""
        out = [f"Congestion: {self.congestion}"]
        if self.dominant_flow is not None:
            out.append(f"Dominant Flow: Phase {self.dominant_flow}")
        for i, risk in enumerate(self.starvation_risk):
            if risk:
                out.append(f"Starvation Risk: High (Phase {i})")
        out.append(f"Queue Urgency: {self.urgency}")
        out.append(f"Imbalance: {self.imbalance.replace('_', ' ')}")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "congestion": self.congestion,
            "dominant_flow": self.dominant_flow,
            "starvation_risk": list(self.starvation_risk),
            "urgency": self.urgency,
            "imbalance": self.imbalance,
            "pressure": list(self.pressure),
            "queue": list(self.queue),
            "wait": list(self.wait),
            "starvation": list(self.starvation),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "StructuredFacts":
        n = len(doc["pressure"])
        vectors = {}
        for name in NUMERIC_FEATURES:
            vec = tuple(float(x) for x in doc[name])
            if len(vec) != n:
                raise ValueError(f"facts.{name}: expected {n} entries, got {len(vec)}")
            vectors[name] = vec
        risk = tuple(bool(x) for x in doc["starvation_risk"])
        if len(risk) != n:
            raise ValueError(f"facts.starvation_risk: expected {n} entries")
        if doc["congestion"] not in CONGESTION_LEVELS:
            raise ValueError(f"facts.congestion: unknown level {doc['congestion']!r}")
        if doc["urgency"] not in URGENCY_LEVELS:
            raise ValueError(f"facts.urgency: unknown level {doc['urgency']!r}")
        if doc["imbalance"] not in IMBALANCE_LEVELS:
            raise ValueError(f"facts.imbalance: unknown level {doc['imbalance']!r}")
        dom = doc.get("dominant_flow")
        return cls(
            congestion=doc["congestion"],
            dominant_flow=None if dom is None else int(dom),
            starvation_risk=risk,
            urgency=doc["urgency"],
            imbalance=doc["imbalance"],
            **vectors,
        )


def congestion_level(max_pressure: float, config: SSAConfig) -> str:
    # c_low bounds the free-flow band inside "Low"; only three cuts split four levels
    if max_pressure >= config.c_crit:
        return "Critical"
    if max_pressure >= config.c_high:
        return "High"
    if max_pressure >= config.c_mod:
        return "Moderate"
    return "Low"


def dominant_flow(pressure: tuple[float, ...], margin: float) -> int | None:
    if not pressure:
        return None
    best = max(range(len(pressure)), key=lambda i: (pressure[i], -i))
    top = pressure[best]
    others = [p for i, p in enumerate(pressure) if i != best]
    second = max(others) if others else 0.0
    if top > 0 and top - second >= margin:
        return best
    return None


def imbalance_level(pressure: tuple[float, ...], axes: tuple[str | None, ...], ratio: float) -> str:
    ns = sum(max(p, 0.0) for p, a in zip(pressure, axes) if a == "NS")
    ew = sum(max(p, 0.0) for p, a in zip(pressure, axes) if a == "EW")
    if ns > ratio * ew:
        return "NS_Dominant"
    if ew > ratio * ns:
        return "EW_Dominant"
    return "None"


def abstract(
    view: IntersectionView,
    registers: TemporalRegisters,
    config: SSAConfig = SSAConfig(),
) -> tuple[StructuredFacts, TemporalRegisters]:
    """Map one intersection's numeric state and history to structured facts.

    Stage one advances every starvation timer by ``view.dt`` and resets the
    timer of the phase that acted during the elapsed interval. Stage two
    applies the predicate rules to the instantaneous aggregates and the
    updated timers.
    """
    n = view.phase_count
    if len(registers.starvation) != n:
        raise ValueError(f"registers track {len(registers.starvation)} phases, view has {n}")
    timers = tuple(
        0.0 if i == view.active_phase else registers.starvation[i] + view.dt for i in range(n)
    )

    if config.passthrough:
        congestion, dom, urgency, imbalance = "Low", None, "Normal", "None"
        risk = (False,) * n
    else:
        congestion = congestion_level(max(view.pressure, default=0.0), config)
        dom = dominant_flow(view.pressure, config.dominant_margin)
        risk = tuple(
            view.pressure[i] > config.theta_demand and timers[i] > config.tau_critical
            for i in range(n)
        )
        urgency = "Critical" if max(view.wait, default=0.0) > config.urgency_wait else "Normal"
        imbalance = imbalance_level(view.pressure, view.axes, config.imbalance_ratio)

    facts = StructuredFacts(
        congestion=congestion,
        dominant_flow=dom,
        starvation_risk=risk,
        urgency=urgency,
        imbalance=imbalance,
        pressure=tuple(view.pressure),
        queue=tuple(view.queue),
        wait=tuple(view.wait),
        starvation=timers,
    )
    return facts, replace(registers, starvation=timers, previous=facts)


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def vocabulary_description(config: SSAConfig = SSAConfig()) -> str:
    """Human-readable listing of every predicate and numeric feature."""
    c = config
    lines = ["Structured state vocabulary (one intersection, phases indexed from 0)", ""]
    lines.append("Numeric features (phase-indexed, use as NAME[i] or max/min/sum(NAME)):")
    lines.append("  pressure[i]    queued vehicles on phase i's approaches minus mean per-lane queue downstream")
    lines.append("  queue[i]       vehicles waiting at the stop line on phase i's lanes")
    lines.append("  wait[i]        longest current wait (seconds) among vehicles queued on phase i")
    lines.append("  starvation[i]  seconds since phase i last held the green")
    if c.passthrough:
        lines.append("")
        lines.append("Categorical predicates are disabled; only numeric features are available.")
        return "\n".join(lines) + "\n"
    lines.append("")
    lines.append("Categorical predicates:")
    lines.append(f"  Congestion: Critical     max(pressure) >= {_num(c.c_crit)}    (DSL: congestion == Critical)")
    lines.append(f"  Congestion: High         {_num(c.c_high)} <= max(pressure) < {_num(c.c_crit)}    (DSL: congestion == High)")
    lines.append(f"  Congestion: Moderate     {_num(c.c_mod)} <= max(pressure) < {_num(c.c_high)}    (DSL: congestion == Moderate)")
    lines.append(f"  Congestion: Low          max(pressure) < {_num(c.c_mod)}, free-flow below {_num(c.c_low)}    (DSL: congestion == Low)")
    lines.append(f"  Dominant Flow: Phase k   pressure[k] > 0 and exceeds every other phase by >= {_num(c.dominant_margin)}    (DSL: dominant_flow == k, dominant_flow == None)")
    lines.append(f"  Starvation Risk: High    for phase i when pressure[i] > {_num(c.theta_demand)} and starvation[i] > {_num(c.tau_critical)}    (DSL: starvation_risk[i])")
    lines.append(f"  Queue Urgency: Critical  max(wait) > {_num(c.urgency_wait)}, otherwise Normal    (DSL: urgency == Critical, urgency == Normal)")
    lines.append(f"  Imbalance: NS Dominant   NS-axis pressure > {_num(c.imbalance_ratio)} x EW-axis pressure    (DSL: imbalance == NS_Dominant)")
    lines.append(f"  Imbalance: EW Dominant   EW-axis pressure > {_num(c.imbalance_ratio)} x NS-axis pressure    (DSL: imbalance == EW_Dominant)")
    lines.append("  Imbalance: None          neither axis dominates    (DSL: imbalance == None)")
    return "\n".join(lines) + "\n"
