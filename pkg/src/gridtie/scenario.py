"""Experiment descriptions and their YAML file format.

A scenario file is a YAML mapping. Every key is optional except
``n_agents``; omitted keys take the nominal values of the reference array
(120 V rms / 60 Hz grid, 40 uH / 60 uF / 4 ohm converters switching at 4 us
from an 18.6 V panel)::

    schema_version: 1
    n_agents: 5
    grid: {v_rms: 120.0, f_ac: 60.0}
    converter: {L: 4.0e-5, C: 6.0e-5, R: 4.0, T_dc: 4.0e-6, V_sp: 18.6}
    tolerance: {L: 0.05, C: 0.05, R: 0.05, V_sp: 0.02}
    cyber: {heartbeat_period: 2.5e-4, detection_timeout: 5.0e-4,
            gossip_period: 2.5e-4, hop_delay: 1.0e-4}
    faults:
      - {agent: 2, kind: static}
      - {agent: 4, kind: dynamic, time: 0.021}
    periods: 2          # or ``horizon`` in seconds
    sample_period: 1.0e-6
    seed: 0
    fidelity: ideal     # or full
    cold_start: false
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .converter import ConverterParams
from .coordination import CyberTiming
from .errors import InvalidParameterError, ScenarioError

SCHEMA_VERSION = 1


class Fidelity(enum.Enum):
    FULL = "full"
    IDEAL = "ideal"


class FaultKind(enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class FaultEvent:
    agent: int
    time: float = 0.0
    kind: FaultKind = FaultKind.STATIC


@dataclass(frozen=True)
class GridSpec:
    v_rms: float = 120.0
    f_ac: float = 60.0

    @property
    def v_peak(self) -> float:
        return math.sqrt(2.0) * self.v_rms

    @property
    def T_ac(self) -> float:
        return 1.0 / self.f_ac


@dataclass(frozen=True)
class Tolerances:
    """Half-widths of the uniform per-agent spreads, as fractions of nominal."""

    L: float = 0.05
    C: float = 0.05
    R: float = 0.05
    V_sp: float = 0.02


@dataclass(frozen=True)
class ArrayScenario:
    n_agents: int
    grid: GridSpec = GridSpec()
    converter: ConverterParams = ConverterParams()
    tolerance: Tolerances = Tolerances()
    cyber: CyberTiming = CyberTiming()
    faults: tuple[FaultEvent, ...] = ()
    horizon: float | None = None
    sample_period: float = 1e-6
    seed: int = 0
    fidelity: Fidelity = Fidelity.IDEAL
    cold_start: bool = False

    def __post_init__(self):
        if self.horizon is None:
            object.__setattr__(self, "horizon", 2.0 * self.grid.T_ac)
        problems = validate(self)
        if problems:
            raise ScenarioError(problems)

    @property
    def static_failures(self) -> frozenset[int]:
        return frozenset(f.agent for f in self.faults if f.kind is FaultKind.STATIC)

    @property
    def dynamic_faults(self) -> tuple[FaultEvent, ...]:
        return tuple(sorted((f for f in self.faults if f.kind is FaultKind.DYNAMIC),
                            key=lambda f: (f.time, f.agent)))

    def with_(self, **changes) -> "ArrayScenario":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_agents": self.n_agents,
            "grid": {"v_rms": self.grid.v_rms, "f_ac": self.grid.f_ac},
            "converter": {k: getattr(self.converter, k) for k in ("L", "C", "R", "T_dc", "V_sp")},
            "tolerance": {k: getattr(self.tolerance, k) for k in ("L", "C", "R", "V_sp")},
            "cyber": {k: getattr(self.cyber, k) for k in
                      ("heartbeat_period", "detection_timeout", "gossip_period", "hop_delay")},
            "faults": [{"agent": f.agent, "time": f.time, "kind": f.kind.value} for f in self.faults],
            "horizon": self.horizon,
            "sample_period": self.sample_period,
            "seed": self.seed,
            "fidelity": self.fidelity.value,
            "cold_start": self.cold_start,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def validate(s: ArrayScenario) -> list[tuple[str, str]]:
    problems = []
    if not isinstance(s.n_agents, int) or isinstance(s.n_agents, bool) or s.n_agents < 1:
        problems.append(("n_agents", f"must be an integer >= 1, got {s.n_agents!r}"))
        return problems
    for name in ("v_rms", "f_ac"):
        v = getattr(s.grid, name)
        if not (math.isfinite(v) and v > 0):
            problems.append((f"grid.{name}", f"must be positive, got {v!r}"))
    for name in ("L", "C", "R", "V_sp"):
        v = getattr(s.tolerance, name)
        if not (0 <= v < 1):
            problems.append((f"tolerance.{name}", f"must lie in [0, 1), got {v!r}"))
    for name in ("heartbeat_period", "detection_timeout", "gossip_period", "hop_delay"):
        v = getattr(s.cyber, name)
        if not (math.isfinite(v) and v > 0):
            problems.append((f"cyber.{name}", f"must be positive, got {v!r}"))
    if not (math.isfinite(s.horizon) and s.horizon > 0):
        problems.append(("horizon", f"must be positive, got {s.horizon!r}"))
    if not (math.isfinite(s.sample_period) and s.sample_period > 0):
        problems.append(("sample_period", f"must be positive, got {s.sample_period!r}"))
    if not isinstance(s.seed, int) or s.seed < 0:
        problems.append(("seed", f"must be a non-negative integer, got {s.seed!r}"))
    seen = set()
    for i, f in enumerate(s.faults):
        key = f"faults[{i}]"
        if not 1 <= f.agent <= s.n_agents:
            problems.append((f"{key}.agent", f"must lie in 1..{s.n_agents}, got {f.agent!r}"))
        if f.agent in seen:
            problems.append((f"{key}.agent", f"agent {f.agent} already has a fault"))
        seen.add(f.agent)
        if f.kind is FaultKind.STATIC and f.time != 0:
            problems.append((f"{key}.time", "static faults occur at time 0"))
        if f.kind is FaultKind.DYNAMIC and not (0 <= f.time < s.horizon):
            problems.append((f"{key}.time", f"must lie in [0, horizon), got {f.time!r}"))
    return problems


_TOP_KEYS = {"schema_version", "n_agents", "grid", "converter", "tolerance", "cyber", "faults",
             "horizon", "periods", "sample_period", "seed", "fidelity", "cold_start"}


def _num(problems, where, value):
    # YAML 1.1 reads "4e-5" as a string
    try:
        if isinstance(value, bool):
            raise TypeError
        out = float(value)
    except (TypeError, ValueError):
        problems.append((where, f"expected a number, got {value!r}"))
        return None
    return out


def _section(problems, raw, name, allowed, defaults):
    sec = raw.get(name, {}) or {}
    if not isinstance(sec, dict):
        problems.append((name, "expected a mapping"))
        return dict(defaults)
    out = dict(defaults)
    for k, v in sec.items():
        if k not in allowed:
            problems.append((f"{name}.{k}", "unknown key"))
            continue
        n = _num(problems, f"{name}.{k}", v)
        if n is not None:
            out[k] = n
    return out


def scenario_from_dict(raw) -> ArrayScenario:
    """Build and validate a scenario, reporting every offending field at once."""
    problems: list[tuple[str, str]] = []
    if not isinstance(raw, dict):
        raise ScenarioError([("<root>", "expected a mapping")])
    for k in raw:
        if k not in _TOP_KEYS:
            problems.append((k, "unknown key"))
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        problems.append(("schema_version", f"unsupported version {version!r}"))
    n = raw.get("n_agents")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        problems.append(("n_agents", f"must be an integer >= 1, got {n!r}"))
    grid = _section(problems, raw, "grid", {"v_rms", "f_ac"}, {"v_rms": 120.0, "f_ac": 60.0})
    conv = _section(problems, raw, "converter", {"L", "C", "R", "T_dc", "V_sp"},
                    {k: getattr(ConverterParams(), k) for k in ("L", "C", "R", "T_dc", "V_sp")})
    tol = _section(problems, raw, "tolerance", {"L", "C", "R", "V_sp"}, Tolerances().__dict__)
    cyber = _section(problems, raw, "cyber", set(CyberTiming().__dict__), CyberTiming().__dict__)
    for k, v in conv.items():
        if not v > 0:
            problems.append((f"converter.{k}", f"must be positive, got {v!r}"))

    faults = []
    for i, f in enumerate(raw.get("faults", []) or []):
        if not isinstance(f, dict):
            problems.append((f"faults[{i}]", "expected a mapping"))
            continue
        agent = f.get("agent")
        if not isinstance(agent, int) or isinstance(agent, bool):
            problems.append((f"faults[{i}].agent", f"expected an integer, got {agent!r}"))
            continue
        try:
            kind = FaultKind(f.get("kind", "static"))
        except ValueError:
            problems.append((f"faults[{i}].kind", f"expected static or dynamic, got {f.get('kind')!r}"))
            continue
        t = _num(problems, f"faults[{i}].time", f.get("time", 0.0))
        if t is not None:
            faults.append(FaultEvent(agent, t, kind))

    f_ac = grid["f_ac"] if grid["f_ac"] > 0 else 60.0
    horizon = None
    if "horizon" in raw and "periods" in raw:
        problems.append(("horizon", "give either horizon or periods, not both"))
    elif "horizon" in raw:
        horizon = _num(problems, "horizon", raw["horizon"])
    elif "periods" in raw:
        p = _num(problems, "periods", raw["periods"])
        horizon = None if p is None else p / f_ac
    sample_period = _num(problems, "sample_period", raw.get("sample_period", 1e-6))
    seed = raw.get("seed", 0)
    try:
        fidelity = Fidelity(raw.get("fidelity", "ideal"))
    except ValueError:
        problems.append(("fidelity", f"expected full or ideal, got {raw.get('fidelity')!r}"))
        fidelity = Fidelity.IDEAL
    cold = raw.get("cold_start", False)
    if not isinstance(cold, bool):
        problems.append(("cold_start", f"expected a boolean, got {cold!r}"))
    if problems:
        raise ScenarioError(problems)
    try:
        return ArrayScenario(
            n_agents=n,
            grid=GridSpec(**grid),
            converter=ConverterParams(**conv),
            tolerance=Tolerances(**tol),
            cyber=CyberTiming(**cyber),
            faults=tuple(faults),
            horizon=horizon,
            sample_period=sample_period,
            seed=seed,
            fidelity=fidelity,
            cold_start=cold,
        )
    except InvalidParameterError as exc:
        raise ScenarioError([("converter", str(exc))]) from exc


def load_scenario(path: str | Path) -> ArrayScenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([("<file>", f"cannot read {path}: {exc.strerror or exc}")]) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError([("<file>", f"not valid YAML: {exc}")]) from exc
    return scenario_from_dict(raw)


def dump_scenario(s: ArrayScenario, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(s.to_dict(), sort_keys=False))
