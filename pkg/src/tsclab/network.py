"""Road network and demand description.

A network is a set of signalised intersections joined by directed links.
Boundary nodes are where vehicles enter and leave. Each intersection lists
its movements (incoming link + lane -> outgoing link) and an ordered list of
phases, each a set of mutually non-conflicting movements.

Network file (JSON)::

    {
      "intersections": [
        {"id": "I0", "min_green": 10, "yellow": 5,
         "movements": [{"id": "N_T", "from": "L_BN0_I0", "lane": 1, "to": "L_I0_BS0"}, ...],
         "phases": [{"name": "NS-through", "axis": "NS", "movements": ["N_T", "S_T"]}, ...]}
      ],
      "links": [{"id": "L_BN0_I0", "from": "BN0", "to": "I0",
                 "lanes": 3, "travel_time": 20, "capacity": 30}, ...],
      "boundary": ["BN0", ...],
      "conflicts": {"I0": [["N_T", "E_T"], ...]}
    }

Phase and conflict entries may name movements by id or by index.

Flow file (JSON list)::

    [{"route": ["L_BN0_I0", "L_I0_BS0"],
      "arrival": {"kind": "poisson", "rate": 0.12},
      "start": 0, "end": 3600},
     {"route": [...], "arrival": {"kind": "schedule", "times": [0, 4, 9]}}]
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any

DEFAULT_MIN_GREEN = 10
DEFAULT_YELLOW = 5


class NetworkError(ValueError):
    """Raised when a network or flow document fails validation."""


@dataclass(frozen=True)
class Link:
    id: str
    source: str
    target: str
    lanes: int
    travel_time: int
    capacity: int


@dataclass(frozen=True)
class Movement:
    id: str
    from_link: str
    lane: int
    to_link: str


@dataclass(frozen=True)
class Phase:
    movements: tuple[int, ...]
    name: str = ""
    axis: str | None = None


@dataclass(frozen=True)
class Intersection:
    id: str
    movements: tuple[Movement, ...]
    phases: tuple[Phase, ...]
    min_green: int = DEFAULT_MIN_GREEN
    yellow: int = DEFAULT_YELLOW

    @property
    def phase_count(self) -> int:
        return len(self.phases)

    def phase_lanes(self, phase: int) -> list[tuple[str, int]]:
        """Distinct (link, lane) keys served by ``phase``, in movement order."""
        seen: list[tuple[str, int]] = []
        for m in self.phases[phase].movements:
            mv = self.movements[m]
            key = (mv.from_link, mv.lane)
            if key not in seen:
                seen.append(key)
        return seen


@dataclass
class RoadNetwork:
    intersections: tuple[Intersection, ...]
    links: dict[str, Link]
    boundary: tuple[str, ...]
    conflicts: dict[str, frozenset[frozenset[int]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._index = {ix.id: k for k, ix in enumerate(self.intersections)}
        # (from_link, to_link) -> (intersection index, movement index)
        self._turns: dict[tuple[str, str], tuple[int, int]] = {}
        for k, ix in enumerate(self.intersections):
            for m, mv in enumerate(ix.movements):
                self._turns.setdefault((mv.from_link, mv.to_link), (k, m))

    def intersection(self, iid: str) -> Intersection:
        return self.intersections[self._index[iid]]

    def intersection_index(self, iid: str) -> int:
        return self._index[iid]

    def turn(self, from_link: str, to_link: str) -> tuple[int, int] | None:
        return self._turns.get((from_link, to_link))

    def is_exit(self, link_id: str) -> bool:
        return self.links[link_id].target in self.boundary

    def is_entry(self, link_id: str) -> bool:
        return self.links[link_id].source in self.boundary

    def to_dict(self) -> dict[str, Any]:
        return {
            "intersections": [
                {
                    "id": ix.id,
                    "min_green": ix.min_green,
                    "yellow": ix.yellow,
                    "movements": [
                        {"id": mv.id, "from": mv.from_link, "lane": mv.lane, "to": mv.to_link}
                        for mv in ix.movements
                    ],
                    "phases": [
                        {k: v for k, v in (("name", ph.name), ("axis", ph.axis),
                                            ("movements", [ix.movements[m].id for m in ph.movements]))
                         if v is not None}
                        for ph in ix.phases
                    ],
                }
                for ix in self.intersections
            ],
            "links": [
                {"id": l.id, "from": l.source, "to": l.target, "lanes": l.lanes,
                 "travel_time": l.travel_time, "capacity": l.capacity}
                for l in self.links.values()
            ],
            "boundary": list(self.boundary),
            "conflicts": {
                iid: sorted(
                    sorted(self.intersection(iid).movements[m].id for m in pair)
                    for pair in pairs
                )
                for iid, pairs in self.conflicts.items()
            },
        }


def _require(doc: dict, key: str, where: str) -> Any:
    if not isinstance(doc, dict) or key not in doc:
        raise NetworkError(f"{where}: missing required field '{key}'")
    return doc[key]


def _int_field(doc: dict, key: str, where: str, minimum: int, default: int | None = None) -> int:
    if key not in doc and default is not None:
        return default
    value = _require(doc, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise NetworkError(f"{where}.{key}: expected an integer, got {value!r}")
    if value < minimum:
        raise NetworkError(f"{where}.{key}: must be >= {minimum}, got {value}")
    return int(value)


def _movement_ref(ref: Any, by_id: dict[str, int], count: int, where: str) -> int:
    if isinstance(ref, str):
        if ref not in by_id:
            raise NetworkError(f"{where}: unknown movement '{ref}'")
        return by_id[ref]
    if isinstance(ref, int) and not isinstance(ref, bool) and 0 <= ref < count:
        return ref
    raise NetworkError(f"{where}: invalid movement reference {ref!r}")


def network_from_dict(doc: dict[str, Any]) -> RoadNetwork:
    if not isinstance(doc, dict):
        raise NetworkError("network: document must be a JSON object")
    raw_links = _require(doc, "links", "network")
    raw_ix = _require(doc, "intersections", "network")
    boundary = _require(doc, "boundary", "network")
    raw_conflicts = doc.get("conflicts", {})
    if not isinstance(raw_links, list) or not raw_links:
        raise NetworkError("network.links: must be a nonempty list")
    if not isinstance(raw_ix, list) or not raw_ix:
        raise NetworkError("network.intersections: must be a nonempty list")
    if not isinstance(boundary, list) or not all(isinstance(b, str) for b in boundary):
        raise NetworkError("network.boundary: must be a list of node ids")
    if not isinstance(raw_conflicts, dict):
        raise NetworkError("network.conflicts: must be an object keyed by intersection id")

    ix_ids = []
    for k, rx in enumerate(raw_ix):
        iid = _require(rx, "id", f"intersections[{k}]")
        if not isinstance(iid, str):
            raise NetworkError(f"intersections[{k}].id: must be a string")
        ix_ids.append(iid)
    if len(set(ix_ids)) != len(ix_ids):
        raise NetworkError("network.intersections: duplicate intersection id")
    nodes = set(ix_ids) | set(boundary)
    if set(ix_ids) & set(boundary):
        raise NetworkError("network.boundary: node is also an intersection")

    links: dict[str, Link] = {}
    for k, rl in enumerate(raw_links):
        where = f"links[{k}]"
        lid = _require(rl, "id", where)
        src = _require(rl, "from", where)
        dst = _require(rl, "to", where)
        for name, node in (("from", src), ("to", dst)):
            if node not in nodes:
                raise NetworkError(f"{where}.{name}: unknown node '{node}'")
        if lid in links:
            raise NetworkError(f"{where}.id: duplicate link id '{lid}'")
        links[lid] = Link(
            id=lid,
            source=src,
            target=dst,
            lanes=_int_field(rl, "lanes", where, 1),
            travel_time=_int_field(rl, "travel_time", where, 1),
            capacity=_int_field(rl, "capacity", where, 1),
        )

    intersections = []
    conflicts: dict[str, frozenset[frozenset[int]]] = {}
    for k, rx in enumerate(raw_ix):
        where = f"intersections[{k}]"
        iid = ix_ids[k]
        raw_mv = _require(rx, "movements", where)
        if not isinstance(raw_mv, list) or not raw_mv:
            raise NetworkError(f"{where}.movements: must be a nonempty list")
        movements = []
        for m, rm in enumerate(raw_mv):
            mw = f"{where}.movements[{m}]"
            fl = _require(rm, "from", mw)
            tl = _require(rm, "to", mw)
            if fl not in links:
                raise NetworkError(f"{mw}.from: unknown link '{fl}'")
            if tl not in links:
                raise NetworkError(f"{mw}.to: unknown link '{tl}'")
            if links[fl].target != iid:
                raise NetworkError(f"{mw}.from: link '{fl}' does not end at {iid}")
            if links[tl].source != iid:
                raise NetworkError(f"{mw}.to: link '{tl}' does not start at {iid}")
            lane = _int_field(rm, "lane", mw, 0, default=0)
            if lane >= links[fl].lanes:
                raise NetworkError(f"{mw}.lane: lane {lane} out of range for link '{fl}'")
            movements.append(Movement(id=str(rm.get("id", m)), from_link=fl, lane=lane, to_link=tl))
        by_id = {mv.id: m for m, mv in enumerate(movements)}
        if len(by_id) != len(movements):
            raise NetworkError(f"{where}.movements: duplicate movement id")

        pairs = set()
        for c, pair in enumerate(raw_conflicts.get(iid, [])):
            cw = f"conflicts.{iid}[{c}]"
            if not isinstance(pair, list) or len(pair) != 2:
                raise NetworkError(f"{cw}: expected a pair of movements")
            a = _movement_ref(pair[0], by_id, len(movements), cw)
            b = _movement_ref(pair[1], by_id, len(movements), cw)
            pairs.add(frozenset((a, b)))
        conflicts[iid] = frozenset(pairs)

        raw_ph = _require(rx, "phases", where)
        if not isinstance(raw_ph, list) or not raw_ph:
            raise NetworkError(f"{where}.phases: must be a nonempty list")
        phases = []
        for p, rp in enumerate(raw_ph):
            pw = f"{where}.phases[{p}]"
            if isinstance(rp, list):
                rp = {"movements": rp}
            refs = _require(rp, "movements", pw)
            if not isinstance(refs, list) or not refs:
                raise NetworkError(f"{pw}.movements: must be a nonempty set of movements")
            idx = tuple(_movement_ref(r, by_id, len(movements), pw) for r in refs)
            if len(set(idx)) != len(idx):
                raise NetworkError(f"{pw}.movements: duplicate movement")
            for i, a in enumerate(idx):
                for b in idx[i + 1:]:
                    if frozenset((a, b)) in pairs:
                        raise NetworkError(
                            f"{pw}: conflicting movements {movements[a].id} and {movements[b].id}"
                        )
            axis = rp.get("axis")
            if axis is not None and axis not in ("NS", "EW"):
                raise NetworkError(f"{pw}.axis: must be 'NS' or 'EW'")
            phases.append(Phase(movements=idx, name=str(rp.get("name", "")), axis=axis))

        intersections.append(
            Intersection(
                id=iid,
                movements=tuple(movements),
                phases=tuple(phases),
                min_green=_int_field(rx, "min_green", where, 1, default=DEFAULT_MIN_GREEN),
                yellow=_int_field(rx, "yellow", where, 0, default=DEFAULT_YELLOW),
            )
        )

    net = RoadNetwork(tuple(intersections), links, tuple(boundary), conflicts)
    _check_connected(net)
    return net


def _check_connected(net: RoadNetwork) -> None:
    entries = [l for l in net.links.values() if l.source in net.boundary]
    if not entries:
        raise NetworkError("network: disconnected, no link leaves a boundary node")
    adj: dict[str, list[str]] = {}
    for l in net.links.values():
        adj.setdefault(l.source, []).append(l.target)
    seen = {l.source for l in entries}
    todo = deque(seen)
    while todo:
        node = todo.popleft()
        for nxt in adj.get(node, ()):
            if nxt in net.boundary:
                return
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    raise NetworkError("network: disconnected, no boundary exit reachable from any boundary entry")


def load_network(document: str) -> RoadNetwork:
    """Parse and validate a network document (JSON text)."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"network: invalid JSON ({exc})") from exc
    return network_from_dict(doc)


@dataclass(frozen=True)
class Flow:
    route: tuple[str, ...]
    rate: float | None = None  # vehicles per second, Poisson
    times: tuple[int, ...] | None = None  # deterministic entry schedule
    start: int = 0
    end: int | None = None

    @property
    def kind(self) -> str:
        return "schedule" if self.times is not None else "poisson"

    def to_dict(self) -> dict[str, Any]:
        arrival: dict[str, Any]
        if self.times is not None:
            arrival = {"kind": "schedule", "times": list(self.times)}
        else:
            arrival = {"kind": "poisson", "rate": self.rate}
        out: dict[str, Any] = {"route": list(self.route), "arrival": arrival, "start": self.start}
        if self.end is not None:
            out["end"] = self.end
        return out


FlowSpec = list[Flow]


def flows_from_list(doc: Any, network: RoadNetwork) -> list[Flow]:
    if not isinstance(doc, list):
        raise NetworkError("flows: document must be a JSON list")
    flows = []
    for k, entry in enumerate(doc):
        where = f"flows[{k}]"
        route = _require(entry, "route", where)
        if not isinstance(route, list) or len(route) < 2:
            raise NetworkError(f"{where}.route: must list at least two links")
        for lid in route:
            if lid not in network.links:
                raise NetworkError(f"{where}.route: unknown link '{lid}'")
        if not network.is_entry(route[0]):
            raise NetworkError(f"{where}.route: first link must leave a boundary node")
        if not network.is_exit(route[-1]):
            raise NetworkError(f"{where}.route: last link must reach a boundary node")
        for a, b in zip(route, route[1:]):
            if network.turn(a, b) is None:
                raise NetworkError(f"{where}.route: no movement from '{a}' to '{b}'")
        arrival = _require(entry, "arrival", where)
        kind = _require(arrival, "kind", f"{where}.arrival")
        start = _int_field(entry, "start", where, 0, default=0)
        end = entry.get("end")
        if end is not None:
            end = _int_field(entry, "end", where, 0)
            if start > end:
                raise NetworkError(f"{where}: start {start} is after end {end}")
        if kind == "poisson":
            rate = _require(arrival, "rate", f"{where}.arrival")
            if isinstance(rate, bool) or not isinstance(rate, (int, float)) or rate <= 0:
                raise NetworkError(f"{where}.arrival.rate: must be > 0, got {rate!r}")
            flows.append(Flow(tuple(route), rate=float(rate), start=start, end=end))
        elif kind == "schedule":
            times = _require(arrival, "times", f"{where}.arrival")
            if not isinstance(times, list) or not all(
                isinstance(t, int) and not isinstance(t, bool) and t >= 0 for t in times
            ):
                raise NetworkError(f"{where}.arrival.times: must be a list of integer seconds")
            flows.append(Flow(tuple(route), times=tuple(sorted(times)), start=start, end=end))
        else:
            raise NetworkError(f"{where}.arrival.kind: unknown kind {kind!r}")
    return flows


def load_flows(document: str, network: RoadNetwork) -> list[Flow]:
    """Parse and validate a flow document against ``network``."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"flows: invalid JSON ({exc})") from exc
    return flows_from_list(doc, network)


def flows_to_list(flows: list[Flow]) -> list[dict[str, Any]]:
    return [f.to_dict() for f in flows]
