"""Run configuration files.

A run configuration is one JSON object::

    {
      "scenario": "asymmetric_1x1",          # or "network" + "flows" paths
      "network": "net.json", "flows": "flows.json",
      "output": "runs/out",
      "horizon": 3600,
      "seeds": [0, 1, 2],
      "fixed_time": [[0, 30], [1, 30], [2, 30], [3, 30]],   # (phase, green s)
      "sim": {...}, "ssa": {...}, "caf": {...},
      "evolution": {...}, "engine": {...}
    }

Relative paths resolve against the configuration file's directory. Every
section is optional and validated by its own dataclass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .baselines import FixedTimePlan
from .caf import CAFConfig
from .engines import EngineSettings
from .evolution import Environment, EvolutionConfig
from .network import Flow, NetworkError, RoadNetwork, load_flows, load_network
from .scenarios import BUNDLED, ScenarioError, bundled
from .sim import SimConfig
from .ssa import SSAConfig

TOP_LEVEL = {"scenario", "network", "flows", "output", "horizon", "seeds", "fixed_time",
             "sim", "ssa", "caf", "evolution", "engine"}
DEFAULT_SCENARIO = "asymmetric_1x1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario: str | None = DEFAULT_SCENARIO
    network_path: Path | None = None
    flows_path: Path | None = None
    output: Path = Path("tsclab-out")
    horizon: int = 3600
    seeds: tuple[int, ...] = (0, 1, 2)
    sim: SimConfig = SimConfig()
    ssa: SSAConfig = SSAConfig()
    caf: CAFConfig = CAFConfig()
    evolution: EvolutionConfig = EvolutionConfig()
    engine: EngineSettings = EngineSettings()
    fixed_time: FixedTimePlan | None = None  # None: round-robin, one interval per phase

    def load_scenario(self) -> tuple[RoadNetwork, list[Flow]]:
        try:
            if self.network_path is not None:
                net = load_network(self.network_path.read_text(encoding="utf-8"))
                flows = load_flows(self.flows_path.read_text(encoding="utf-8"), net)
                return net, flows
            return bundled(self.scenario)
        except (NetworkError, ScenarioError) as exc:
            raise ConfigError(str(exc)) from None
        except OSError as exc:
            raise ConfigError(f"cannot read scenario file: {exc}") from None

    def environment(self) -> Environment:
        net, flows = self.load_scenario()
        caf = replace(self.caf, decision_interval=float(self.sim.decision_interval))
        return Environment(net, flows, self.horizon, self.sim, self.ssa, caf)

    def with_overrides(self, **kw: Any) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _section(cls, doc: dict[str, Any], key: str):
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected an object")
    try:
        return cls.from_dict(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def run_config_from_dict(doc: dict[str, Any], base: Path = Path(".")) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run configuration must be a JSON object")
    unknown = set(doc) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")

    network_path = flows_path = None
    scenario = doc.get("scenario")
    if "network" in doc or "flows" in doc:
        if scenario is not None:
            raise ConfigError("give either 'scenario' or 'network' + 'flows', not both")
        if "network" not in doc or "flows" not in doc:
            raise ConfigError("'network' and 'flows' must be given together")
        network_path = (base / doc["network"]).resolve()
        flows_path = (base / doc["flows"]).resolve()
        for p in (network_path, flows_path):
            if not p.is_file():
                raise ConfigError(f"file not found: {p}")
    else:
        scenario = scenario or DEFAULT_SCENARIO
        if scenario not in BUNDLED:
            raise ConfigError(f"unknown bundled scenario {scenario!r}; available: {sorted(BUNDLED)}")

    seeds = doc.get("seeds", [0, 1, 2])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: expected a nonempty list of integers")
    horizon = doc.get("horizon", 3600)
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("horizon: expected a positive integer")

    fixed_time = None
    if "fixed_time" in doc:
        try:
            fixed_time = FixedTimePlan(tuple((int(p), int(d)) for p, d in doc["fixed_time"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"fixed_time: expected [[phase, seconds], ...] ({exc})") from None

    sim = _section(SimConfig, doc, "sim")
    if horizon % sim.decision_interval:
        raise ConfigError(f"horizon {horizon} is not a multiple of the decision interval {sim.decision_interval}")
    evo_doc = dict(doc.get("evolution", {}))
    evo_doc.setdefault("eval_seeds", seeds)
    return RunConfig(
        scenario=scenario if network_path is None else None,
        network_path=network_path,
        flows_path=flows_path,
        output=(base / doc.get("output", "tsclab-out")),
        horizon=horizon,
        seeds=tuple(seeds),
        sim=sim,
        ssa=_section(SSAConfig, doc, "ssa"),
        caf=_section(CAFConfig, doc, "caf"),
        evolution=_section(EvolutionConfig, {"evolution": evo_doc}, "evolution"),
        engine=_section(EngineSettings, doc, "engine"),
        fixed_time=fixed_time,
    )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return run_config_from_dict(doc, path.parent)
