"""Discrete-time point-queue simulator.

Vehicles traverse a link in its free-flow time, then stack in a vertical
queue on the lane that serves their next movement. Each 1 s micro-tick:

1. vehicles finishing a link join their lane queue, or leave the network
   if the link ends at a boundary node;
2. signals advance (a pending switch completes once its yellow has run);
3. green lanes discharge up to the saturation flow, subject to room on
   the downstream lane;
4. new vehicles are generated and admitted onto their entry link, waiting
   in an origin backlog when it is full;
5. vehicles that joined a queue and were not discharged are marked stopped.

A decision step is ``decision_interval`` micro-ticks.
"""

from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple

from .caf import DecisionRecord
from .network import Flow, RoadNetwork
from .ssa import IntersectionView, SSAConfig, StructuredFacts, TemporalRegisters, abstract

EVENT_KINDS = (
    "vehicle-enter",
    "vehicle-exit",
    "vehicle-stop",
    "vehicle-go",
    "phase-switch",
    "phase-switch-deferred",
)

LaneKey = tuple[str, int]


@dataclass(frozen=True)
class SimConfig:
    decision_interval: int = 30
    saturation_flow: float = 1.0
    yellow: int | None = None  # overrides the network's per-intersection value
    min_green: int | None = None

    def __post_init__(self) -> None:
        if self.decision_interval < 1:
            raise ValueError("decision_interval must be >= 1")
        if self.saturation_flow <= 0:
            raise ValueError("saturation_flow must be > 0")
        if self.yellow is not None and self.yellow < 0:
            raise ValueError("yellow must be >= 0")
        if self.min_green is not None and self.min_green < 1:
            raise ValueError("min_green must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SimConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"sim: unknown field(s) {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True, slots=True)
class SimEvent:
    kind: str
    t: int
    id: str
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "t": self.t, "id": self.id, "detail": self.detail}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SimEvent":
        if doc.get("kind") not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {doc.get('kind')!r}")
        return cls(doc["kind"], int(doc["t"]), str(doc["id"]), dict(doc.get("detail", {})))


@dataclass(frozen=True)
class MetricsReport:
    att: float = 0.0
    aql: float = 0.0
    awt: float = 0.0
    completed: int = 0
    remaining: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"att": self.att, "aql": self.aql, "awt": self.awt,
                "completed": self.completed, "remaining": self.remaining}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "MetricsReport":
        return cls(float(doc["att"]), float(doc["aql"]), float(doc["awt"]),
                   int(doc["completed"]), int(doc["remaining"]))


class InvalidAction(ValueError):
    pass


@dataclass(slots=True)
class Vehicle:
    vid: str
    route: tuple[str, ...]
    lanes: tuple[LaneKey | None, ...]  # lane used on each route link; None on the exit link
    enter_time: int
    leg: int = 0
    stop_time: int | None = None
    stationary: int = 0


@dataclass(slots=True)
class SignalState:
    active: int = 0
    pending: int | None = None
    yellow_remaining: int = 0
    green_start: int = 0


@dataclass
class _PhasePlan:
    # lane -> outgoing links whose movement is green from that lane
    lanes: dict[LaneKey, frozenset[str]]


class SimState:
    """Mutable simulation state; ``step`` advances it in place."""

    def __init__(self, network: RoadNetwork, generation: list[tuple[int, int]],
                 routes: list[tuple[tuple[str, ...], tuple[LaneKey | None, ...]]],
                 config: SimConfig):
        self.network = network
        self.config = config
        self.clock = 0
        self.vehicles: dict[str, Vehicle] = {}
        self.queues: dict[LaneKey, deque[str]] = {}
        self.lane_load: dict[LaneKey, int] = {}
        self.exit_load: dict[str, int] = {}
        for link in network.links.values():
            if network.is_exit(link.id):
                self.exit_load[link.id] = 0
            else:
                for lane in range(link.lanes):
                    self.queues[(link.id, lane)] = deque()
                    self.lane_load[(link.id, lane)] = 0
        self.arrivals: dict[int, list[str]] = {}
        self.backlog: dict[LaneKey | str, deque[str]] = {}
        self._generation = generation  # sorted (time, flow index)
        self._gen_pos = 0
        self._routes = routes
        self.signals = [
            SignalState(active=0, green_start=-self.min_green(ix.id)) for ix in network.intersections
        ]
        self.credit: list[dict[LaneKey, float]] = [{} for _ in network.intersections]
        self.entered = 0
        self.exited = 0
        self.deferred: set[str] = set()
        self._next_vid = 0
        self._plans = [
            [
                _PhasePlan(
                    {
                        key: frozenset(
                            ix.movements[m].to_link
                            for m in ph.movements
                            if (ix.movements[m].from_link, ix.movements[m].lane) == key
                        )
                        for key in ix.phase_lanes(p)
                    }
                )
                for p, ph in enumerate(ix.phases)
            ]
            for ix in network.intersections
        ]

    def min_green(self, iid: str) -> int:
        if self.config.min_green is not None:
            return self.config.min_green
        return self.network.intersection(iid).min_green

    def yellow(self, iid: str) -> int:
        if self.config.yellow is not None:
            return self.config.yellow
        return self.network.intersection(iid).yellow

    def active_phase(self, iid: str) -> int:
        return self.signals[self.network.intersection_index(iid)].active

    def phase_elapsed(self, iid: str) -> int:
        return self.clock - self.signals[self.network.intersection_index(iid)].green_start

    def in_yellow(self, iid: str) -> bool:
        sig = self.signals[self.network.intersection_index(iid)]
        return sig.pending is not None

    def queue_length(self, link: str, lane: int) -> int:
        return len(self.queues[(link, lane)])

    def link_queue(self, link: str) -> int:
        if self.network.is_exit(link):
            return 0
        return sum(len(self.queues[(link, k)]) for k in range(self.network.links[link].lanes))

    def count_in_network(self) -> int:
        """Vehicles present, counted by walking every container."""
        travelling = sum(len(v) for v in self.arrivals.values())
        queued = sum(len(q) for q in self.queues.values())
        waiting = sum(len(b) for b in self.backlog.values())
        return travelling + queued + waiting

    def stationary_count(self) -> int:
        return sum(1 for v in self.vehicles.values() if v.stop_time is not None)


def _route_lanes(network: RoadNetwork, route: tuple[str, ...]) -> tuple[LaneKey | None, ...]:
    lanes: list[LaneKey | None] = []
    for a, b in zip(route, route[1:]):
        k, m = network.turn(a, b)
        mv = network.intersections[k].movements[m]
        lanes.append((mv.from_link, mv.lane))
    lanes.append(None)
    return tuple(lanes)


def _generation_schedule(flows: list[Flow], horizon: int, seed: int) -> list[tuple[int, int]]:
    out = []
    for idx, flow in enumerate(flows):
        end = horizon if flow.end is None else min(flow.end, horizon)
        if flow.times is not None:
            out.extend((t, idx) for t in flow.times if flow.start <= t < end)
            continue
        rng = random.Random(f"{seed}:{idx}")
        t = float(flow.start)
        while True:
            t += rng.expovariate(flow.rate)
            if t >= end:
                break
            out.append((int(math.floor(t)), idx))
    out.sort()
    return out


def initial_state(network: RoadNetwork, flows: list[Flow], horizon: int, seed: int,
                  config: SimConfig = SimConfig()) -> SimState:
    routes = [(f.route, _route_lanes(network, f.route)) for f in flows]
    return SimState(network, _generation_schedule(flows, horizon, seed), routes, config)


def _has_room(state: SimState, link: str, lane: LaneKey | None) -> bool:
    if lane is None:
        spec = state.network.links[link]
        return state.exit_load[link] < spec.lanes * spec.capacity
    return state.lane_load[lane] < state.network.links[link].capacity


def _enter_link(state: SimState, v: Vehicle, t: int) -> None:
    link = v.route[v.leg]
    lane = v.lanes[v.leg]
    if lane is None:
        state.exit_load[link] += 1
    else:
        state.lane_load[lane] += 1
    state.arrivals.setdefault(t + state.network.links[link].travel_time, []).append(v.vid)


def _go(state: SimState, v: Vehicle, t: int, events: list[SimEvent], detail: dict) -> None:
    if v.stop_time is not None:
        v.stationary += t - v.stop_time
        v.stop_time = None
        events.append(SimEvent("vehicle-go", t, v.vid, detail))


def _tick(state: SimState, events: list[SimEvent]) -> None:
    t = state.clock
    net = state.network
    fresh: list[tuple[Vehicle, int]] = []

    for vid in state.arrivals.pop(t, ()):
        v = state.vehicles[vid]
        link = v.route[v.leg]
        lane = v.lanes[v.leg]
        if lane is None:
            state.exit_load[link] -= 1
            state.exited += 1
            del state.vehicles[vid]
            events.append(SimEvent("vehicle-exit", t, vid, {"link": link}))
        else:
            state.queues[lane].append(vid)
            fresh.append((v, v.leg))

    sat = state.config.saturation_flow
    cap = max(1.0, sat)
    for k, ix in enumerate(net.intersections):
        sig = state.signals[k]
        if sig.pending is not None and sig.yellow_remaining == 0:
            if sig.pending != sig.active:
                events.append(SimEvent("phase-switch", t, ix.id, {"from": sig.active, "to": sig.pending}))
                sig.active = sig.pending
            sig.pending = None
            sig.green_start = t
            state.credit[k].clear()
        if sig.yellow_remaining > 0:
            sig.yellow_remaining -= 1
            continue
        credits = state.credit[k]
        for lane, outs in state._plans[k][sig.active].lanes.items():
            c = min(credits.get(lane, 0.0) + sat, cap)
            q = state.queues[lane]
            while c >= 1.0 and q:
                v = state.vehicles[q[0]]
                nxt = v.route[v.leg + 1]
                if nxt not in outs or not _has_room(state, nxt, v.lanes[v.leg + 1]):
                    break
                q.popleft()
                c -= 1.0
                state.lane_load[lane] -= 1
                _go(state, v, t, events, {"link": lane[0], "lane": lane[1], "intersection": ix.id})
                v.leg += 1
                _enter_link(state, v, t)
            credits[lane] = c

    while state._gen_pos < len(state._generation) and state._generation[state._gen_pos][0] <= t:
        _, idx = state._generation[state._gen_pos]
        state._gen_pos += 1
        route, lanes = state._routes[idx]
        vid = f"v{state._next_vid}"
        state._next_vid += 1
        v = Vehicle(vid, route, lanes, enter_time=t)
        state.vehicles[vid] = v
        state.entered += 1
        events.append(SimEvent("vehicle-enter", t, vid, {"link": route[0]}))
        key = lanes[0] if lanes[0] is not None else route[0]
        state.backlog.setdefault(key, deque()).append(vid)
    for key, waiting in state.backlog.items():
        while waiting:
            v = state.vehicles[waiting[0]]
            if not _has_room(state, v.route[0], v.lanes[0]):
                break
            waiting.popleft()
            _go(state, v, t, events, {"link": v.route[0], "backlog": True})
            _enter_link(state, v, t)
        for vid in waiting:
            v = state.vehicles[vid]
            if v.stop_time is None:
                v.stop_time = t
                events.append(SimEvent("vehicle-stop", t, vid, {"link": v.route[0], "backlog": True}))

    for v, leg in fresh:
        # still on the arrival leg means it was not discharged this tick
        if v.leg == leg and v.stop_time is None:
            lane = v.lanes[leg]
            v.stop_time = t
            events.append(SimEvent("vehicle-stop", t, v.vid, {"link": lane[0], "lane": lane[1]}))

    state.clock = t + 1


def step(
    state: SimState,
    actions: dict[str, int],
    config: SimConfig | None = None,
    observer: Callable[[SimState], None] | None = None,
) -> tuple[SimState, list[SimEvent]]:
    """Apply one decision per intersection and run one decision interval.

    ``state`` is advanced in place and returned. A switch requested before
    the active phase has held for its minimum green is deferred for the whole
    interval and logged as a ``phase-switch-deferred`` event. Intersections
    missing from ``actions`` hold their current phase.
    """
    config = config or state.config
    events: list[SimEvent] = []
    net = state.network
    t = state.clock
    state.deferred = set()
    for iid, action in actions.items():
        try:
            k = net.intersection_index(iid)
        except KeyError:
            raise InvalidAction(f"unknown intersection {iid!r}") from None
        ix = net.intersections[k]
        if isinstance(action, bool) or not isinstance(action, int) or not 0 <= action < ix.phase_count:
            raise InvalidAction(f"{iid}: invalid phase {action!r} (phase count {ix.phase_count})")
        sig = state.signals[k]
        if sig.pending is not None:
            sig.pending = action
            continue
        if action == sig.active:
            continue
        elapsed = t - sig.green_start
        if elapsed < state.min_green(iid):
            state.deferred.add(iid)
            events.append(SimEvent("phase-switch-deferred", t, iid,
                                   {"from": sig.active, "to": action, "elapsed": elapsed}))
            continue
        sig.pending = action
        sig.yellow_remaining = state.yellow(iid)
    for _ in range(config.decision_interval):
        _tick(state, events)
        if observer is not None:
            observer(state)
    return state, events


def phase_pressure(state: SimState, intersection: str | int, phase: int) -> float:
    """Sum over the phase's movements of upstream lane queue minus the
    downstream link's mean per-lane queue (zero for boundary exits)."""
    net = state.network
    ix = net.intersections[intersection] if isinstance(intersection, int) else net.intersection(intersection)
    if not 0 <= phase < ix.phase_count:
        raise IndexError(f"{ix.id}: phase {phase} out of range")
    total = 0.0
    for m in ix.phases[phase].movements:
        mv = ix.movements[m]
        up = len(state.queues[(mv.from_link, mv.lane)])
        down = 0.0
        if not net.is_exit(mv.to_link):
            down = state.link_queue(mv.to_link) / net.links[mv.to_link].lanes
        total += up - down
    return total


def observe(state: SimState, intersection: str | int, dt: float | None = None) -> IntersectionView:
    """Numeric view of one intersection for the abstraction layer."""
    net = state.network
    k = intersection if isinstance(intersection, int) else net.intersection_index(intersection)
    ix = net.intersections[k]
    pressure, queue, wait = [], [], []
    for p in range(ix.phase_count):
        pressure.append(phase_pressure(state, k, p))
        q = 0
        w = 0
        for lane in ix.phase_lanes(p):
            dq = state.queues[lane]
            q += len(dq)
            if dq:
                head = state.vehicles[dq[0]]
                if head.stop_time is not None:
                    w = max(w, state.clock - head.stop_time)
        queue.append(float(q))
        wait.append(float(w))
    sig = state.signals[k]
    return IntersectionView(
        pressure=tuple(pressure),
        queue=tuple(queue),
        wait=tuple(wait),
        axes=tuple(ph.axis for ph in ix.phases),
        active_phase=sig.active if sig.pending is None else sig.pending,
        dt=float(state.config.decision_interval if dt is None else dt),
    )


def compute_metrics(events: Iterable[SimEvent], horizon: int) -> MetricsReport:
    """ATT over completed vehicles; AQL as the time-average stationary count;
    AWT as mean stationary time over every vehicle that entered, with open
    stops closed at ``horizon``."""
    enter: dict[str, int] = {}
    travel: list[int] = []
    stopped_at: dict[str, int] = {}
    stationary = 0
    for ev in events:
        if ev.kind == "vehicle-enter":
            enter[ev.id] = ev.t
        elif ev.kind == "vehicle-exit":
            travel.append(ev.t - enter[ev.id])
        elif ev.kind == "vehicle-stop":
            stopped_at[ev.id] = ev.t
        elif ev.kind == "vehicle-go":
            stationary += ev.t - stopped_at.pop(ev.id)
    stationary += sum(max(horizon - t, 0) for t in stopped_at.values())
    completed = len(travel)
    entered = len(enter)
    return MetricsReport(
        att=sum(travel) / completed if completed else 0.0,
        aql=stationary / horizon if horizon > 0 else 0.0,
        awt=stationary / entered if entered else 0.0,
        completed=completed,
        remaining=entered - completed,
    )


@dataclass
class Observation:
    """What a controller sees at a decision boundary."""

    t: int
    time: int
    state: SimState
    facts: dict[str, StructuredFacts]

    @property
    def network(self) -> RoadNetwork:
        return self.state.network


Controller = Callable[[Observation], dict[str, int]]


class Episode(NamedTuple):
    decisions: list[DecisionRecord]
    events: list[SimEvent]
    metrics: MetricsReport


class EpisodeAborted(RuntimeError):
    """The controller raised; carries the partial logs."""

    def __init__(self, cause: BaseException, decisions: list[DecisionRecord], events: list[SimEvent]):
        super().__init__(f"controller failed at decision {len(decisions)}: {cause!r}")
        self.cause = cause
        self.decisions = decisions
        self.events = events


def run_episode(
    network: RoadNetwork,
    flows: list[Flow],
    controller: Controller,
    horizon: int,
    seed: int,
    config: SimConfig = SimConfig(),
    ssa_config: SSAConfig = SSAConfig(),
    observer: Callable[[SimState], None] | None = None,
) -> Episode:
    if horizon % config.decision_interval:
        raise ValueError(f"horizon {horizon} is not a multiple of the decision interval {config.decision_interval}")
    state = initial_state(network, flows, horizon, seed, config)
    registers = {ix.id: TemporalRegisters.fresh(ix.phase_count) for ix in network.intersections}
    decisions: list[DecisionRecord] = []
    events: list[SimEvent] = []
    for t in range(horizon // config.decision_interval):
        facts = {}
        for k, ix in enumerate(network.intersections):
            facts[ix.id], registers[ix.id] = abstract(observe(state, k), registers[ix.id], ssa_config)
        now = state.clock
        try:
            actions = controller(Observation(t, now, state, facts))
        except Exception as exc:
            raise EpisodeAborted(exc, decisions, events) from exc
        actions = {ix.id: actions.get(ix.id, state.signals[k].active)
                   for k, ix in enumerate(network.intersections)}
        state, ev = step(state, actions, config, observer)
        for ix in network.intersections:
            a = actions[ix.id]
            registers[ix.id] = TemporalRegisters(registers[ix.id].starvation, registers[ix.id].previous, a)
            decisions.append(DecisionRecord(t=t, time=now, facts=facts[ix.id], action=a,
                                            deferred=ix.id in state.deferred, intersection=ix.id))
        events.extend(ev)
    return Episode(decisions, events, compute_metrics(events, horizon))


def write_events(events: Iterable[SimEvent]) -> str:
    return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in events)


def read_events(text: str) -> list[SimEvent]:
    return [SimEvent.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
