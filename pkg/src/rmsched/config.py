"""Scenario configuration: JSON schema, validation, defaults.

A scenario config describes one shop instance: the machine park (either an
explicit list or a count to be drawn), the job generator ranges, the planning
horizon, objective weights, and the feature toggles (reconfiguration /
negotiation).  Everything the simulator randomizes is driven by the seed
passed to ``new_scenario``, never by the config itself, so identical
(config, seed) pairs rebuild identical shops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional


class ConfigError(ValueError):
    """Raised when a scenario config fails validation."""


def _pair(value, name, kind=float):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{name} must be a [lo, hi] pair, got {value!r}")
    lo, hi = kind(value[0]), kind(value[1])
    if lo > hi:
        raise ConfigError(f"{name} has lo > hi: {value!r}")
    return (lo, hi)


@dataclass
class MachineSpec:
    """Explicit machine description (optional fields fall back to defaults)."""

    native: tuple
    reconfigurable: tuple
    setup_time: float
    flexibility: float = 0.85
    reliability: float = 0.9
    efficiency: float = 1.0
    reconfig_time: Optional[float] = None  # drawn from reconfig_range when None

    def validate(self, process_count: int, name: str) -> None:
        native = set(self.native)
        reconf = set(self.reconfigurable)
        if native & reconf:
            raise ConfigError(f"{name}: native and reconfigurable sets overlap")
        for p in native | reconf:
            if not (0 <= int(p) < process_count):
                raise ConfigError(f"{name}: process id {p} outside 0..{process_count - 1}")
        if not (2 <= len(native) <= 3):
            raise ConfigError(f"{name}: native set size must be 2..3, got {len(native)}")
        if not (2 <= len(reconf) <= 3):
            raise ConfigError(f"{name}: reconfigurable set size must be 2..3, got {len(reconf)}")
        if self.setup_time < 0:
            raise ConfigError(f"{name}: setup_time must be >= 0")
        if not (0.0 <= self.flexibility <= 1.0):
            raise ConfigError(f"{name}: flexibility must be in [0, 1]")
        if not (0.0 <= self.reliability <= 1.0):
            raise ConfigError(f"{name}: reliability must be in [0, 1]")
        if self.efficiency <= 0:
            raise ConfigError(f"{name}: efficiency must be > 0")
        if self.reconfig_time is not None and self.reconfig_time <= 0:
            raise ConfigError(f"{name}: reconfig_time must be > 0 when given")


@dataclass
class ScenarioConfig:
    machine_count: int = 5
    machines: Optional[list] = None          # list[MachineSpec] overrides machine_count
    job_count: int = 50
    process_count: int = 6
    view_size: int = 5
    horizon: float = 3000.0
    weights: tuple = (0.4, 0.3, 0.2, 0.1)    # makespan, tardiness, setup, wait
    reconfiguration: bool = True
    negotiation: bool = False
    breakdowns: list = field(default_factory=list)   # [(machine_id, time)]
    arrival_mode: str = "batch"              # "batch" | "poisson"
    arrival_rate: float = 0.1                # jobs per time unit, poisson mode only
    # job generator ranges
    ops_range: tuple = (3, 5)
    proc_time_range: tuple = (5.0, 15.0)
    priority_range: tuple = (1, 5)
    due_multiplier_range: tuple = (2.0, 4.0)
    # machine generator ranges (ignored for fields given explicitly)
    setup_range: tuple = (3.0, 7.0)
    reconfig_range: tuple = (3.0, 7.0)
    flexibility_range: tuple = (0.75, 0.95)
    reliability_range: tuple = (0.7, 0.99)
    efficiency: float = 1.0
    # reward / objective plumbing
    reward_clip: tuple = (-10.0, 10.0)
    utilization_term: str = "wait"           # "wait" | "squared_idle"
    machine_seed: Optional[int] = None       # pin the machine draw independently of the episode seed

    def validate(self) -> "ScenarioConfig":
        if self.machines is None and self.machine_count <= 0:
            raise ConfigError(f"machine_count must be > 0, got {self.machine_count}")
        if self.machines is not None and len(self.machines) == 0:
            raise ConfigError("explicit machine list is empty")
        if self.job_count <= 0:
            raise ConfigError(f"job_count must be > 0, got {self.job_count}")
        if self.process_count <= 0:
            raise ConfigError(f"process_count must be > 0, got {self.process_count}")
        if self.view_size <= 0:
            raise ConfigError(f"view_size must be > 0, got {self.view_size}")
        if self.horizon <= 0:
            raise ConfigError(f"horizon must be > 0, got {self.horizon}")
        if len(self.weights) != 4:
            raise ConfigError("weights must have exactly 4 entries")
        if any(w < 0 for w in self.weights):
            raise ConfigError(f"objective weights must be >= 0, got {self.weights}")
        if sum(self.weights) <= 0:
            raise ConfigError("objective weights must not all be zero")
        if self.arrival_mode not in ("batch", "poisson"):
            raise ConfigError(f"arrival_mode must be 'batch' or 'poisson', got {self.arrival_mode!r}")
        if self.arrival_mode == "poisson" and self.arrival_rate <= 0:
            raise ConfigError("arrival_rate must be > 0 in poisson mode")
        if self.utilization_term not in ("wait", "squared_idle"):
            raise ConfigError(f"utilization_term must be 'wait' or 'squared_idle', got {self.utilization_term!r}")
        if self.reward_clip[0] >= self.reward_clip[1]:
            raise ConfigError("reward_clip must be (lo, hi) with lo < hi")
        if self.machines is not None:
            for i, spec in enumerate(self.machines):
                spec.validate(self.process_count, f"machine[{i}]")
        else:
            # generated parks need enough native slots to cover every process,
            # and enough processes left over to fill each reconfigurable set
            if self.process_count > 3 * self.machine_count:
                raise ConfigError(
                    f"cannot cover {self.process_count} processes with "
                    f"{self.machine_count} machines (<= 3 native each)"
                )
            if self.process_count < 5:
                raise ConfigError(
                    "generated machine parks need process_count >= 5; "
                    "pass an explicit machine list for smaller shops"
                )
        for entry in self.breakdowns:
            m, t = entry
            if self.machines is not None:
                if not (0 <= int(m) < len(self.machines)):
                    raise ConfigError(f"breakdown machine id {m} out of range")
            elif not (0 <= int(m) < self.machine_count):
                raise ConfigError(f"breakdown machine id {m} out of range")
            if t < 0:
                raise ConfigError(f"breakdown time must be >= 0, got {t}")
        return self

    @property
    def n_machines(self) -> int:
        return len(self.machines) if self.machines is not None else self.machine_count

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        if not isinstance(doc, dict):
            raise ConfigError(f"config document must be a JSON object, got {type(doc).__name__}")
        cfg = cls()
        machines_doc = doc.get("machines", cfg.machine_count)
        if isinstance(machines_doc, int):
            cfg.machine_count = machines_doc
        elif isinstance(machines_doc, list):
            specs = []
            for i, m in enumerate(machines_doc):
                if not isinstance(m, dict):
                    raise ConfigError(f"machine[{i}] must be an object")
                try:
                    specs.append(MachineSpec(
                        native=tuple(int(p) for p in m["native"]),
                        reconfigurable=tuple(int(p) for p in m["reconfigurable"]),
                        setup_time=float(m["setup_time"]),
                        flexibility=float(m.get("flexibility", 0.85)),
                        reliability=float(m.get("reliability", 0.9)),
                        efficiency=float(m.get("efficiency", doc.get("efficiency", 1.0))),
                        reconfig_time=(float(m["reconfig_time"]) if "reconfig_time" in m else None),
                    ))
                except KeyError as exc:
                    raise ConfigError(f"machine[{i}] missing required field {exc}")
            cfg.machines = specs
        else:
            raise ConfigError("'machines' must be an integer count or a list of machine objects")

        jobs = doc.get("jobs", {})
        if not isinstance(jobs, dict):
            raise ConfigError("'jobs' must be an object")
        cfg.job_count = int(jobs.get("count", cfg.job_count))
        cfg.ops_range = _pair(jobs.get("ops_range", cfg.ops_range), "jobs.ops_range", int)
        cfg.proc_time_range = _pair(jobs.get("time_range", cfg.proc_time_range), "jobs.time_range")
        cfg.priority_range = _pair(jobs.get("priority_range", cfg.priority_range), "jobs.priority_range", int)
        cfg.due_multiplier_range = _pair(
            jobs.get("due_multiplier_range", cfg.due_multiplier_range), "jobs.due_multiplier_range")

        cfg.process_count = int(doc.get("process_count", cfg.process_count))
        cfg.view_size = int(doc.get("view_size", cfg.view_size))
        cfg.horizon = float(doc.get("horizon", cfg.horizon))
        if "weights" in doc:
            w = doc["weights"]
            if not isinstance(w, (list, tuple)) or len(w) != 4:
                raise ConfigError("'weights' must be a list of 4 numbers")
            cfg.weights = tuple(float(x) for x in w)

        toggles = doc.get("toggles", {})
        if not isinstance(toggles, dict):
            raise ConfigError("'toggles' must be an object")
        cfg.reconfiguration = bool(toggles.get("reconfiguration", cfg.reconfiguration))
        cfg.negotiation = bool(toggles.get("negotiation", cfg.negotiation))

        cfg.breakdowns = []
        for i, b in enumerate(doc.get("breakdowns", [])):
            if not isinstance(b, dict) or "machine" not in b or "time" not in b:
                raise ConfigError(f"breakdowns[{i}] must be an object with 'machine' and 'time'")
            cfg.breakdowns.append((int(b["machine"]), float(b["time"])))

        arrival = doc.get("arrival", {"mode": "batch"})
        if not isinstance(arrival, dict):
            raise ConfigError("'arrival' must be an object")
        cfg.arrival_mode = arrival.get("mode", "batch")
        cfg.arrival_rate = float(arrival.get("rate", cfg.arrival_rate))

        defaults = doc.get("machine_defaults", {})
        if not isinstance(defaults, dict):
            raise ConfigError("'machine_defaults' must be an object")
        cfg.setup_range = _pair(defaults.get("setup_range", cfg.setup_range), "setup_range")
        cfg.reconfig_range = _pair(defaults.get("reconfig_range", cfg.reconfig_range), "reconfig_range")
        cfg.flexibility_range = _pair(
            defaults.get("flexibility_range", cfg.flexibility_range), "flexibility_range")
        cfg.reliability_range = _pair(
            defaults.get("reliability_range", cfg.reliability_range), "reliability_range")
        cfg.efficiency = float(defaults.get("efficiency", cfg.efficiency))

        if "reward_clip" in doc:
            cfg.reward_clip = _pair(doc["reward_clip"], "reward_clip")
        cfg.utilization_term = doc.get("utilization_term", cfg.utilization_term)
        if "machine_seed" in doc and doc["machine_seed"] is not None:
            cfg.machine_seed = int(doc["machine_seed"])
        return cfg.validate()

    @classmethod
    def from_json(cls, path: str) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = {
            "machines": ([asdict(m) for m in self.machines]
                         if self.machines is not None else self.machine_count),
            "jobs": {
                "count": self.job_count,
                "ops_range": list(self.ops_range),
                "time_range": list(self.proc_time_range),
                "priority_range": list(self.priority_range),
                "due_multiplier_range": list(self.due_multiplier_range),
            },
            "process_count": self.process_count,
            "view_size": self.view_size,
            "horizon": self.horizon,
            "weights": list(self.weights),
            "toggles": {"reconfiguration": self.reconfiguration, "negotiation": self.negotiation},
            "breakdowns": [{"machine": m, "time": t} for m, t in self.breakdowns],
            "arrival": {"mode": self.arrival_mode, "rate": self.arrival_rate},
            "machine_defaults": {
                "setup_range": list(self.setup_range),
                "reconfig_range": list(self.reconfig_range),
                "flexibility_range": list(self.flexibility_range),
                "reliability_range": list(self.reliability_range),
                "efficiency": self.efficiency,
            },
            "reward_clip": list(self.reward_clip),
            "utilization_term": self.utilization_term,
        }
        if self.machine_seed is not None:
            doc["machine_seed"] = self.machine_seed
        return doc

    def replace(self, **kw) -> "ScenarioConfig":
        """Copy with fields overridden (used by the toggle-flipping harnesses)."""
        import copy
        out = copy.deepcopy(self)
        for k, v in kw.items():
            if not hasattr(out, k):
                raise ConfigError(f"unknown config field {k!r}")
            setattr(out, k, v)
        return out.validate()
