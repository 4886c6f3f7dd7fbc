"""Synthetic grid scenarios: network and flow documents.

Every intersection is a 4-way junction with three lanes per approach
(0 left, 1 through, 2 right) and the four standard phases
NS-through, NS-left, EW-through, EW-left. Demand comes in three families:

symmetric   equal demand on every approach
asymmetric  north-south demand roughly three times east-west
surge       moderate demand whose north-south rates double inside a
            mid-episode window
"""

from __future__ import annotations

import json
import random
from importlib import resources
from typing import Any

from .network import RoadNetwork, Flow, flows_from_list, network_from_dict

KINDS = ("symmetric", "asymmetric", "surge")
MAX_GRID = 4

DIRS = ("N", "E", "S", "W")
OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
# approach side -> turn -> exit side
TURNS = {
    "N": {"L": "E", "T": "S", "R": "W"},
    "S": {"L": "W", "T": "N", "R": "E"},
    "E": {"L": "S", "T": "W", "R": "N"},
    "W": {"L": "N", "T": "E", "R": "S"},
}
LANE = {"L": 0, "T": 1, "R": 2}
AXIS = {"N": "NS", "S": "NS", "E": "EW", "W": "EW"}
PHASES = (
    ("NS-through", "NS", ("N_T", "S_T", "N_R", "S_R")),
    ("NS-left", "NS", ("N_L", "S_L")),
    ("EW-through", "EW", ("E_T", "W_T", "E_R", "W_R")),
    ("EW-left", "EW", ("E_L", "W_L")),
)

# vehicles/second per approach by (axis, turn)
RATES = {
    "symmetric": {"NS": {"T": 0.10, "L": 0.03, "R": 0.03}, "EW": {"T": 0.10, "L": 0.03, "R": 0.03}},
    "asymmetric": {"NS": {"T": 0.16, "L": 0.04, "R": 0.04}, "EW": {"T": 0.05, "L": 0.02, "R": 0.02}},
    "surge": {"NS": {"T": 0.09, "L": 0.03, "R": 0.03}, "EW": {"T": 0.07, "L": 0.025, "R": 0.025}},
}

DEFAULTS: dict[str, Any] = {
    "rows": 1,
    "cols": 1,
    "horizon": 3600,
    "lanes": 3,
    "travel_time": 20,
    "capacity": 30,
    "min_green": 10,
    "yellow": 5,
    "jitter": 0.1,
    "surge_start": None,  # default horizon / 3
    "surge_end": None,  # default 2 * horizon / 3
    "surge_factor": 2.0,
}


class ScenarioError(ValueError):
    pass


def _ix(r: int, c: int) -> str:
    return f"I{r}_{c}"


def _neighbour(r: int, c: int, side: str, rows: int, cols: int) -> str:
    if side == "N":
        return _ix(r - 1, c) if r > 0 else f"BN{c}"
    if side == "S":
        return _ix(r + 1, c) if r < rows - 1 else f"BS{c}"
    if side == "W":
        return _ix(r, c - 1) if c > 0 else f"BW{r}"
    return _ix(r, c + 1) if c < cols - 1 else f"BE{r}"


def _step(r: int, c: int, side: str) -> tuple[int, int]:
    return {"N": (r - 1, c), "S": (r + 1, c), "W": (r, c - 1), "E": (r, c + 1)}[side]


def grid_network(rows: int = 1, cols: int = 1, lanes: int = 3, travel_time: int = 20,
                 capacity: int = 30, min_green: int = 10, yellow: int = 5) -> dict[str, Any]:
    if not (1 <= rows <= MAX_GRID and 1 <= cols <= MAX_GRID):
        raise ScenarioError(f"unsupported grid size {rows}x{cols} (1x1 up to {MAX_GRID}x{MAX_GRID})")
    links: dict[str, dict] = {}
    intersections = []
    conflicts = {}
    for r in range(rows):
        for c in range(cols):
            me = _ix(r, c)
            for side in DIRS:
                nb = _neighbour(r, c, side, rows, cols)
                for src, dst in ((nb, me), (me, nb)):
                    lid = f"L_{src}_{dst}"
                    links.setdefault(lid, {"id": lid, "from": src, "to": dst, "lanes": lanes,
                                           "travel_time": travel_time, "capacity": capacity})
            movements = []
            for side in DIRS:
                src = _neighbour(r, c, side, rows, cols)
                for turn in ("L", "T", "R"):
                    dst = _neighbour(r, c, TURNS[side][turn], rows, cols)
                    movements.append({"id": f"{side}_{turn}", "from": f"L_{src}_{me}",
                                      "lane": LANE[turn], "to": f"L_{me}_{dst}"})
            pairs = []
            ids = [m["id"] for m in movements]
            for a_i, a in enumerate(ids):
                for b in ids[a_i + 1:]:
                    sa, ta = a.split("_")
                    sb, tb = b.split("_")
                    cross = AXIS[sa] != AXIS[sb]
                    opposing = OPPOSITE[sa] == sb and {ta, tb} in ({"L", "T"}, {"L", "R"})
                    if cross or opposing:
                        pairs.append([a, b])
            conflicts[me] = pairs
            intersections.append({
                "id": me,
                "min_green": min_green,
                "yellow": yellow,
                "movements": movements,
                "phases": [{"name": n, "axis": ax, "movements": list(ms)} for n, ax, ms in PHASES],
            })
    boundary = [f"BN{c}" for c in range(cols)] + [f"BE{r}" for r in range(rows)] \
        + [f"BS{c}" for c in range(cols)] + [f"BW{r}" for r in range(rows)]
    return {"intersections": intersections, "links": list(links.values()),
            "boundary": boundary, "conflicts": conflicts}


def _route(rows: int, cols: int, side: str, index: int, turn: str) -> list[str]:
    """Enter from boundary ``side`` at row/column ``index``; take ``turn`` at
    the first intersection, then drive straight to the far boundary."""
    if side == "N":
        r, c = 0, index
    elif side == "S":
        r, c = rows - 1, index
    elif side == "W":
        r, c = index, 0
    else:
        r, c = index, cols - 1
    prev = _neighbour(r, c, side, rows, cols)
    route = []
    out_side = TURNS[side][turn]
    while True:
        me = _ix(r, c)
        route.append(f"L_{prev}_{me}")
        nxt = _neighbour(r, c, out_side, rows, cols)
        if not nxt.startswith("I"):
            route.append(f"L_{me}_{nxt}")
            return route
        prev = me
        r, c = _step(r, c, out_side)


def generate(kind: str, seed: int = 0, **params: Any) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """Network and flow documents for one scenario family; deterministic in ``seed``."""
    if kind not in KINDS:
        raise ScenarioError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    unknown = set(params) - set(DEFAULTS)
    if unknown:
        raise ScenarioError(f"unknown scenario parameter(s) {sorted(unknown)}")
    p = {**DEFAULTS, **params}
    rows, cols, horizon = int(p["rows"]), int(p["cols"]), int(p["horizon"])
    network = grid_network(rows, cols, p["lanes"], p["travel_time"], p["capacity"], p["min_green"], p["yellow"])
    rng = random.Random(seed)
    s0 = p["surge_start"] if p["surge_start"] is not None else horizon // 3
    s1 = p["surge_end"] if p["surge_end"] is not None else (2 * horizon) // 3
    if kind == "surge" and not 0 <= s0 < s1 <= horizon:
        raise ScenarioError(f"surge window [{s0}, {s1}) must lie inside [0, {horizon}]")

    flows: list[dict[str, Any]] = []
    for side in DIRS:
        count = cols if side in ("N", "S") else rows
        for index in range(count):
            for turn in ("T", "L", "R"):
                base = RATES[kind][AXIS[side]][turn]
                rate = round(base * (1 + rng.uniform(-p["jitter"], p["jitter"])), 5)
                route = _route(rows, cols, side, index, turn)
                if kind == "surge" and AXIS[side] == "NS":
                    surged = round(rate * p["surge_factor"], 5)
                    for start, end, r in ((0, s0, rate), (s0, s1, surged), (s1, horizon, rate)):
                        if end > start:
                            flows.append({"route": route, "arrival": {"kind": "poisson", "rate": r},
                                          "start": start, "end": end})
                else:
                    flows.append({"route": route, "arrival": {"kind": "poisson", "rate": rate},
                                  "start": 0, "end": horizon})
    return network, flows


def parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ScenarioError(f"grid must look like RxC, got {text!r}") from None
    if not (1 <= rows <= MAX_GRID and 1 <= cols <= MAX_GRID):
        raise ScenarioError(f"unsupported grid size {text} (1x1 up to {MAX_GRID}x{MAX_GRID})")
    return rows, cols


BUNDLED = {
    "asymmetric_1x1": ("asymmetric", {}),
    "symmetric_1x1": ("symmetric", {}),
    "surge_1x1": ("surge", {}),
    "asymmetric_2x2": ("asymmetric", {"rows": 2, "cols": 2}),
}


def bundled_documents(name: str) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    if name not in BUNDLED:
        raise ScenarioError(f"unknown bundled scenario {name!r}; available: {sorted(BUNDLED)}")
    data = resources.files("tsclab") / "data"
    net = json.loads((data / f"{name}.network.json").read_text(encoding="utf-8"))
    flows = json.loads((data / f"{name}.flows.json").read_text(encoding="utf-8"))
    return net, flows


def bundled(name: str) -> tuple[RoadNetwork, list[Flow]]:
    """Load one of the scenarios shipped with the package."""
    net_doc, flow_doc = bundled_documents(name)
    net = network_from_dict(net_doc)
    return net, flows_from_list(flow_doc, net)
