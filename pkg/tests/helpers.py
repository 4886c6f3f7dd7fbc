"""Small hand-built networks and state builders shared by the tests."""

from __future__ import annotations

import random

from tsclab.caf import DecisionRecord
from tsclab.dsl import (
    AGGREGATES, CATEGORICAL, COMPARE_OPS, SELECTORS,
    Agg, BoolOp, CatTest, Compare, FeatureRef, Not, Num, PhaseLit, Policy, RiskTest, Rule, Select,
)
from tsclab.network import network_from_dict, flows_from_list
from tsclab.sim import SimConfig, Vehicle, initial_state
from tsclab.ssa import NUMERIC_FEATURES, IntersectionView, StructuredFacts

PHASE_COUNT = 4


def cross_doc(capacity: int = 30, travel_time: int = 10, yellow: int = 5, min_green: int = 10) -> dict:
    """One intersection, one lane per approach, two through movements and two phases."""
    links = []
    for src, dst in (("BN", "I0"), ("I0", "BS"), ("BE", "I0"), ("I0", "BW")):
        links.append({"id": f"{src}-{dst}", "from": src, "to": dst, "lanes": 1,
                      "travel_time": travel_time, "capacity": capacity})
    return {
        "intersections": [{
            "id": "I0", "min_green": min_green, "yellow": yellow,
            "movements": [{"id": "NS", "from": "BN-I0", "lane": 0, "to": "I0-BS"},
                          {"id": "EW", "from": "BE-I0", "lane": 0, "to": "I0-BW"}],
            "phases": [{"name": "ns", "axis": "NS", "movements": ["NS"]},
                       {"name": "ew", "axis": "EW", "movements": ["EW"]}],
        }],
        "links": links,
        "boundary": ["BN", "BS", "BE", "BW"],
        "conflicts": {"I0": [["NS", "EW"]]},
    }


def cross_network(**kw):
    return network_from_dict(cross_doc(**kw))


def cross_flows(net, ns_times=(), ew_times=()):
    doc = []
    if ns_times:
        doc.append({"route": ["BN-I0", "I0-BS"], "arrival": {"kind": "schedule", "times": list(ns_times)}})
    if ew_times:
        doc.append({"route": ["BE-I0", "I0-BW"], "arrival": {"kind": "schedule", "times": list(ew_times)}})
    return flows_from_list(doc, net)


def queue_on(state, link: str, lane: int, n: int, route: tuple[str, ...]) -> list[str]:
    """Place ``n`` stopped vehicles at the stop line of ``link``/``lane``."""
    from tsclab.sim import _route_lanes

    lanes = _route_lanes(state.network, route)
    ids = []
    for _ in range(n):
        vid = f"q{state._next_vid}"
        state._next_vid += 1
        v = Vehicle(vid, route, lanes, enter_time=state.clock, stop_time=state.clock)
        state.vehicles[vid] = v
        state.queues[(link, lane)].append(vid)
        state.lane_load[(link, lane)] += 1
        state.entered += 1
        ids.append(vid)
    return ids


def empty_state(net, horizon: int = 3600, config: SimConfig = SimConfig()):
    return initial_state(net, [], horizon, 0, config)


def random_facts(rng: random.Random, n: int = PHASE_COUNT) -> StructuredFacts:
    pressure = tuple(round(rng.uniform(-10, 50), 1) for _ in range(n))
    return StructuredFacts(
        congestion=rng.choice(("Low", "Moderate", "High", "Critical")),
        dominant_flow=rng.choice([None] + list(range(n))),
        starvation_risk=tuple(rng.random() < 0.3 for _ in range(n)),
        urgency=rng.choice(("Normal", "Critical")),
        imbalance=rng.choice(("None", "NS_Dominant", "EW_Dominant")),
        pressure=pressure,
        queue=tuple(float(rng.randint(0, 40)) for _ in range(n)),
        wait=tuple(float(rng.randint(0, 200)) for _ in range(n)),
        starvation=tuple(float(30 * rng.randint(0, 10)) for _ in range(n)),
    )


def _facts(pressure, queue) -> StructuredFacts:
    n = len(pressure)
    return StructuredFacts(
        congestion="Low", dominant_flow=None, starvation_risk=(False,) * n, urgency="Normal", imbalance="None",
        pressure=tuple(map(float, pressure)), queue=tuple(map(float, queue)), wait=(0.0,) * n,
        starvation=(0.0,) * n)


def random_decision_log(rng: random.Random, length: int | None = None, intersections=("I0",)) -> list[DecisionRecord]:
    """Sticky random actions over facts that straddle the defect thresholds."""
    out = []
    for iid in intersections:
        a = rng.randrange(PHASE_COUNT)
        for t in range(length if length is not None else rng.randint(1, 200)):
            if rng.random() < 0.3:
                a = rng.randrange(PHASE_COUNT)
            pressure = tuple(rng.choice([rng.uniform(-3, 1.5), rng.uniform(0, 25), 8.0, 0.0]) for _ in range(PHASE_COUNT))
            queue = tuple(float(rng.choice([0, 0, 1, 3, 5, 6, 12])) for _ in range(PHASE_COUNT))
            out.append(DecisionRecord(t, t * 30, _facts(pressure, queue), a, rng.random() < 0.1, iid))
    return out


# --- random policy programs covering every node type ----------------------

def gen_nexpr(rng, n):
    r = rng.random()
    if r < 0.4:
        return Num(rng.choice([float(rng.randint(-50, 200)), round(rng.uniform(-100, 100), 3)]))
    if r < 0.8:
        return FeatureRef(rng.choice(NUMERIC_FEATURES), rng.randrange(n))
    return Agg(rng.choice(AGGREGATES), rng.choice(NUMERIC_FEATURES))


def gen_bexpr(rng, n, budget):
    r = rng.random()
    if budget > 1 and r < 0.25:
        return BoolOp(rng.choice(("AND", "OR")), gen_bexpr(rng, n, budget - 1), gen_bexpr(rng, n, budget - 1))
    if budget > 1 and r < 0.35:
        return Not(gen_bexpr(rng, n, budget - 1))
    if r < 0.5:
        feat = rng.choice(sorted(CATEGORICAL))
        if feat == "dominant_flow":
            return CatTest(feat, rng.choice(["None", rng.randrange(n)]))
        return CatTest(feat, rng.choice(CATEGORICAL[feat]))
    if r < 0.6:
        return RiskTest(rng.randrange(n))
    return Compare(rng.choice(COMPARE_OPS), gen_nexpr(rng, n), gen_nexpr(rng, n))


def gen_pexpr(rng, n):
    if rng.random() < 0.5:
        return PhaseLit(rng.randrange(n))
    return Select(rng.choice(SELECTORS), rng.choice(NUMERIC_FEATURES))


def random_program(rng, n=4, max_rules=6):
    rules = tuple(Rule(gen_bexpr(rng, n, rng.randint(1, 6)), gen_pexpr(rng, n))
                  for _ in range(rng.randint(0, max_rules)))
    return Policy(rules, gen_pexpr(rng, n))


# --- SSA inputs -------------------------------------------------------------

AXES = ("NS", "NS", "EW", "EW")


def view(pressure=(0, 0, 0, 0), queue=None, wait=(0, 0, 0, 0), active=0, dt=30.0):
    queue = queue if queue is not None else tuple(max(p, 0) for p in pressure)
    return IntersectionView(tuple(map(float, pressure)), tuple(map(float, queue)), tuple(map(float, wait)),
                            AXES, active, dt)


def categorical(f: StructuredFacts):
    return (f.congestion, f.dominant_flow, f.starvation_risk, f.urgency, f.imbalance)


def random_view(rng: random.Random) -> IntersectionView:
    pressure = tuple(round(rng.uniform(-5, 50), 2) for _ in range(4))
    wait = tuple(float(rng.randint(0, 200)) for _ in range(4))
    return view(pressure, wait=wait, active=rng.randrange(4), dt=30.0)
