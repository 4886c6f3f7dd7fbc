"""Transportation baselines as simulator controllers."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .network import Intersection, RoadNetwork
from .sim import Observation, phase_pressure


@dataclass(frozen=True)
class FixedTimePlan:
    """Ordered (phase, green seconds) segments cycled regardless of state."""

    segments: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("fixed-time plan must have at least one segment")
        for phase, dur in self.segments:
            if phase < 0 or dur <= 0:
                raise ValueError(f"invalid plan segment ({phase}, {dur})")

    @property
    def cycle(self) -> int:
        return sum(d for _, d in self.segments)

    def validate(self, intersection: Intersection, min_green: int | None = None) -> None:
        mg = intersection.min_green if min_green is None else min_green
        for phase, dur in self.segments:
            if phase >= intersection.phase_count:
                raise ValueError(f"{intersection.id}: plan phase {phase} out of range")
            if dur < mg:
                raise ValueError(f"{intersection.id}: plan duration {dur} s below min green {mg} s")
        missing = set(range(intersection.phase_count)) - {p for p, _ in self.segments}
        if missing:
            raise ValueError(f"{intersection.id}: plan never serves phase(s) {sorted(missing)}")

    def phase_at(self, time: int) -> int:
        offset = time % self.cycle
        for phase, dur in self.segments:
            if offset < dur:
                return phase
            offset -= dur
        raise AssertionError("unreachable")

    @classmethod
    def round_robin(cls, phase_count: int, interval: int = 30) -> "FixedTimePlan":
        return cls(tuple((p, interval) for p in range(phase_count)))


class RandomController:
    """Uniform phase per intersection, from a private seeded stream."""

    def __init__(self, seed: int):
        self.rng = random.Random(seed)

    def __call__(self, obs: Observation) -> dict[str, int]:
        return {ix.id: self.rng.randrange(ix.phase_count) for ix in obs.network.intersections}


class FixedTimeController:
    def __init__(self, plan: FixedTimePlan | dict[str, FixedTimePlan] | None = None, interval: int = 30):
        self.plan = plan
        self.interval = interval

    def plan_for(self, ix: Intersection) -> FixedTimePlan:
        if self.plan is None:
            return FixedTimePlan.round_robin(ix.phase_count, self.interval)
        if isinstance(self.plan, dict):
            return self.plan[ix.id]
        return self.plan

    def validate(self, network: RoadNetwork, min_green: int | None = None) -> None:
        for ix in network.intersections:
            self.plan_for(ix).validate(ix, min_green)

    def __call__(self, obs: Observation) -> dict[str, int]:
        return {ix.id: self.plan_for(ix).phase_at(obs.t * self.interval) for ix in obs.network.intersections}


def argmax_lowest(values) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


class MaxPressureController:
    def __call__(self, obs: Observation) -> dict[str, int]:
        out = {}
        for k, ix in enumerate(obs.network.intersections):
            pressures = [phase_pressure(obs.state, k, p) for p in range(ix.phase_count)]
            out[ix.id] = argmax_lowest(pressures)
        return out


def random_controller(seed: int) -> RandomController:
    return RandomController(seed)


def fixed_time_controller(plan: FixedTimePlan | dict[str, FixedTimePlan] | None = None,
                          interval: int = 30, network: RoadNetwork | None = None,
                          min_green: int | None = None) -> FixedTimeController:
    """Cycle ``plan``; with ``network`` given the plan is validated up front."""
    ctl = FixedTimeController(plan, interval)
    if network is not None:
        ctl.validate(network, min_green)
    return ctl


def max_pressure_controller() -> MaxPressureController:
    return MaxPressureController()
