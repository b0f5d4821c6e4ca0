"""Test scenarios: the sectioned line format, validation and emission.

A scenario file looks like::

    scenario aebs_stationary
    source 6.4
    vehicle model=sedan
    sensor radar pos=2.3,0.0,0.5 range=150
    pre map=straight_road ego_pos=0,0,0 ego_speed=30
    agent car pos=60,0,0 speed=0 heading=0
    weather precipitation=0
    post assert ego.speed = 0 eventually
    post outcome collision_avoided

Units are fixed: km/h for speeds, meters for positions, degrees for headings.
``emit_sim_config`` renders the canonical form of the same format, so
parse(emit(s)) == s for every valid scenario.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import SdvpipeError
from .regdoc import ClauseId, RegDocument

SENSOR_KINDS = ("radar", "camera", "lidar")
COMPARATORS = ("<", "<=", ">", ">=", "=")
WINDOWS = ("always", "eventually", "at_end")
OUTCOMES = ("collision_avoided", "warning_issued", "stopped")

_NUMBER_RE = re.compile(r"^[+-]?\d+(?:\.\d+)?$")


class ScenarioError(SdvpipeError):
    pass


class ScenarioSyntaxError(ScenarioError):
    pass


class UnknownKey(ScenarioError):
    pass


class RangeError(ScenarioError):
    pass


class UnresolvedPlaceholder(ScenarioError):
    pass


class InvalidScenario(ScenarioError):
    pass


@dataclass
class SensorSpec:
    kind: str
    position: tuple[float, float, float]
    params: dict[str, object] = field(default_factory=dict)


@dataclass
class VehicleDefinition:
    model: str
    sensors: list[SensorSpec] = field(default_factory=list)


@dataclass
class AgentSpec:
    id: str
    kind: str
    position: tuple[float, float, float]
    speed: float
    heading: float


@dataclass
class PreConditions:
    map_name: str
    ego_position: tuple[float, float, float]
    ego_speed: float
    agents: list[AgentSpec] = field(default_factory=list)
    weather: dict[str, object] = field(default_factory=dict)


@dataclass
class TelemetryAssertion:
    signal: str
    comparator: str
    threshold: float
    window: str


@dataclass
class PostConditions:
    assertions: list[TelemetryAssertion] = field(default_factory=list)
    outcomes: list[str] = field(default_factory=list)


@dataclass
class TestScenario:
    id: str
    source_clauses: list[ClauseId]
    vehicle: VehicleDefinition
    pre: PreConditions
    post: PostConditions


@dataclass(frozen=True)
class Finding:
    kind: str
    message: str


# ---------------------------------------------------------------------------
# Parsing helpers


def _number(raw: str, context: str) -> float:
    if not _NUMBER_RE.match(raw):
        raise ScenarioSyntaxError(f"{context}: not a number: {raw!r}")
    return float(raw)


def _value(raw: str) -> object:
    return float(raw) if _NUMBER_RE.match(raw) else raw


def _triple(raw: str, context: str) -> tuple[float, float, float]:
    parts = raw.split(",")
    if len(parts) != 3:
        raise ScenarioSyntaxError(f"{context}: expected x,y,z, got {raw!r}")
    return tuple(_number(p, context) for p in parts)  # type: ignore[return-value]


def _pairs(tokens: list[str], context: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for token in tokens:
        if "=" not in token:
            raise ScenarioSyntaxError(f"{context}: expected key=value, got {token!r}")
        key, _, value = token.partition("=")
        if not key:
            raise ScenarioSyntaxError(f"{context}: empty key in {token!r}")
        if key in out:
            raise ScenarioSyntaxError(f"{context}: duplicate key {key!r}")
        out[key] = value
    return out


def _take(pairs: dict[str, str], key: str, context: str) -> str:
    if key not in pairs:
        raise ScenarioSyntaxError(f"{context}: missing {key}=")
    return pairs.pop(key)


def _reject_unknown(pairs: dict[str, str], context: str) -> None:
    if pairs:
        raise UnknownKey(f"{context}: unknown key(s) {', '.join(sorted(pairs))}")


class _Builder:
    """Accumulates parsed lines and enforces invariants on build."""

    def __init__(self) -> None:
        self.id: str | None = None
        self.sources: list[ClauseId] = []
        self.model: str | None = None
        self.sensors: list[SensorSpec] = []
        self.pre: PreConditions | None = None
        self.agents: list[AgentSpec] = []
        self.weather: dict[str, object] = {}
        self.post = PostConditions()

    def handle(self, line: str) -> None:
        tokens = line.split()
        keyword = tokens[0]
        handler = getattr(self, f"_line_{keyword}", None)
        if handler is None:
            raise UnknownKey(f"unknown line keyword {keyword!r}")
        handler(tokens[1:], line)

    def _line_scenario(self, args: list[str], line: str) -> None:
        if self.id is not None:
            raise ScenarioSyntaxError("duplicate scenario line")
        if len(args) != 1:
            raise ScenarioSyntaxError(f"scenario line needs exactly one id: {line!r}")
        self.id = args[0]

    def _line_source(self, args: list[str], line: str) -> None:
        for arg in args:
            try:
                self.sources.append(ClauseId.parse(arg))
            except ValueError as exc:
                raise ScenarioSyntaxError(f"bad source clause id {arg!r}") from exc

    def _line_vehicle(self, args: list[str], line: str) -> None:
        if self.model is not None:
            raise ScenarioSyntaxError("duplicate vehicle line")
        pairs = _pairs(args, "vehicle")
        self.model = _take(pairs, "model", "vehicle")
        _reject_unknown(pairs, "vehicle")

    def _line_sensor(self, args: list[str], line: str) -> None:
        if not args:
            raise ScenarioSyntaxError("sensor line needs a kind")
        kind = args[0]
        if kind not in SENSOR_KINDS:
            raise RangeError(f"unknown sensor kind {kind!r}")
        pairs = _pairs(args[1:], "sensor")
        pos = _triple(_take(pairs, "pos", "sensor"), "sensor pos")
        params = {k: _value(v) for k, v in sorted(pairs.items())}
        self.sensors.append(SensorSpec(kind, pos, params))

    def _line_pre(self, args: list[str], line: str) -> None:
        if self.pre is not None:
            raise ScenarioSyntaxError("duplicate pre line")
        pairs = _pairs(args, "pre")
        map_name = _take(pairs, "map", "pre")
        ego_pos = _triple(_take(pairs, "ego_pos", "pre"), "pre ego_pos")
        ego_speed = _number(_take(pairs, "ego_speed", "pre"), "pre ego_speed")
        _reject_unknown(pairs, "pre")
        if ego_speed < 0:
            raise RangeError(f"ego speed must be >= 0, got {ego_speed}")
        self.pre = PreConditions(map_name, ego_pos, ego_speed)

    def _line_agent(self, args: list[str], line: str) -> None:
        if not args:
            raise ScenarioSyntaxError("agent line needs a kind")
        kind = args[0]
        pairs = _pairs(args[1:], "agent")
        pos = _triple(_take(pairs, "pos", "agent"), "agent pos")
        speed = _number(_take(pairs, "speed", "agent"), "agent speed")
        heading = _number(_take(pairs, "heading", "agent"), "agent heading")
        agent_id = pairs.pop("id", kind)
        _reject_unknown(pairs, "agent")
        if speed < 0:
            raise RangeError(f"agent speed must be >= 0, got {speed}")
        if not 0 <= heading < 360:
            raise RangeError(f"agent heading must be in [0, 360), got {heading}")
        if any(a.id == agent_id for a in self.agents):
            raise RangeError(f"duplicate agent id {agent_id!r}")
        self.agents.append(AgentSpec(agent_id, kind, pos, speed, heading))

    def _line_weather(self, args: list[str], line: str) -> None:
        pairs = _pairs(args, "weather")
        for key, raw in pairs.items():
            if key in self.weather:
                raise ScenarioSyntaxError(f"duplicate weather key {key!r}")
            value = _value(raw)
            if key == "precipitation" and not (
                isinstance(value, float) and 0 <= value <= 100
            ):
                raise RangeError(f"precipitation must be in [0, 100], got {raw!r}")
            self.weather[key] = value

    def _line_post(self, args: list[str], line: str) -> None:
        if not args:
            raise ScenarioSyntaxError("post line needs 'assert' or 'outcome'")
        if args[0] == "assert":
            if len(args) != 5:
                raise ScenarioSyntaxError(
                    f"post assert needs: signal comparator threshold window: {line!r}"
                )
            signal, comparator, threshold_raw, window = args[1:]
            if comparator not in COMPARATORS:
                raise RangeError(f"unknown comparator {comparator!r}")
            if window not in WINDOWS:
                raise RangeError(f"unknown window {window!r}")
            threshold = _number(threshold_raw, "post assert threshold")
            self.post.assertions.append(
                TelemetryAssertion(signal, comparator, threshold, window)
            )
        elif args[0] == "outcome":
            if len(args) != 2:
                raise ScenarioSyntaxError(f"post outcome needs one name: {line!r}")
            if args[1] not in OUTCOMES:
                raise RangeError(f"unknown outcome {args[1]!r}")
            if args[1] not in self.post.outcomes:
                self.post.outcomes.append(args[1])
        else:
            raise ScenarioSyntaxError(f"post line needs 'assert' or 'outcome': {line!r}")

    # Section builders --------------------------------------------------

    def build_vehicle(self) -> VehicleDefinition:
        if self.model is None:
            raise RangeError("missing vehicle line")
        if not self.sensors:
            raise RangeError("at least one sensor is required")
        return VehicleDefinition(self.model, self.sensors)

    def build_pre(self) -> PreConditions:
        if self.pre is None:
            raise RangeError("missing pre line")
        self.pre.agents = self.agents
        self.pre.weather = self.weather
        return self.pre

    def build_post(self) -> PostConditions:
        if not self.post.assertions and not self.post.outcomes:
            raise RangeError("post section must contain an assertion or an outcome")
        return self.post

    def build(self) -> TestScenario:
        if self.id is None:
            raise RangeError("missing scenario line")
        return TestScenario(
            self.id, self.sources, self.build_vehicle(), self.build_pre(), self.build_post()
        )


def _feed(builder: _Builder, text: str, allowed: tuple[str, ...] | None = None) -> None:
    for raw in text.split("\n"):
        line = raw.strip()
        if not line:
            continue
        keyword = line.split(None, 1)[0]
        if allowed is not None and keyword not in allowed:
            raise UnknownKey(f"line keyword {keyword!r} not allowed in this section")
        builder.handle(line)


def parse_scenario(text: str) -> TestScenario:
    """Parse a full scenario file; invariant breaches raise RangeError."""
    builder = _Builder()
    _feed(builder, text)
    return builder.build()


def parse_vehicle_section(text: str) -> VehicleDefinition:
    builder = _Builder()
    _feed(builder, text, allowed=("vehicle", "sensor"))
    return builder.build_vehicle()


def parse_pre_section(text: str) -> PreConditions:
    builder = _Builder()
    _feed(builder, text, allowed=("pre", "agent", "weather"))
    return builder.build_pre()


def parse_post_section(text: str) -> PostConditions:
    builder = _Builder()
    _feed(builder, text, allowed=("post",))
    return builder.build_post()


# ---------------------------------------------------------------------------
# Validation


def validate_scenario(s: TestScenario, doc: RegDocument | None = None) -> list[Finding]:
    """Invariant findings plus, when a document is given, provenance checks."""
    findings: list[Finding] = []
    if not s.id:
        findings.append(Finding("EmptyId", "scenario id is empty"))
    if doc is not None:
        for cid in s.source_clauses:
            if cid not in doc:
                findings.append(Finding("UnknownClause", f"source clause {cid} not in document"))

    if not s.vehicle.sensors:
        findings.append(Finding("MissingSensors", "vehicle defines no sensors"))
    for sensor in s.vehicle.sensors:
        if sensor.kind not in SENSOR_KINDS:
            findings.append(Finding("UnknownSensorKind", f"sensor kind {sensor.kind!r}"))
        if not all(math.isfinite(c) for c in sensor.position):
            findings.append(Finding("NonFinite", f"sensor position {sensor.position}"))

    if s.pre.ego_speed < 0:
        findings.append(Finding("NegativeSpeed", f"ego speed {s.pre.ego_speed}"))
    seen_agents: set[str] = set()
    for agent in s.pre.agents:
        if agent.id in seen_agents:
            findings.append(Finding("DuplicateAgent", f"agent id {agent.id!r} not unique"))
        seen_agents.add(agent.id)
        if agent.speed < 0:
            findings.append(Finding("NegativeSpeed", f"agent {agent.id} speed {agent.speed}"))
        if not 0 <= agent.heading < 360:
            findings.append(Finding("HeadingOutOfRange", f"agent {agent.id} heading {agent.heading}"))
    precipitation = s.pre.weather.get("precipitation")
    if isinstance(precipitation, float) and not 0 <= precipitation <= 100:
        findings.append(Finding("PrecipitationOutOfRange", f"precipitation {precipitation}"))

    if not s.post.assertions and not s.post.outcomes:
        findings.append(Finding("EmptyPost", "no assertions and no expected outcomes"))
    for assertion in s.post.assertions:
        if assertion.comparator not in COMPARATORS:
            findings.append(Finding("UnknownComparator", f"comparator {assertion.comparator!r}"))
        if assertion.window not in WINDOWS:
            findings.append(Finding("UnknownWindow", f"window {assertion.window!r}"))
        if not math.isfinite(assertion.threshold):
            findings.append(Finding("NonFinite", f"threshold {assertion.threshold}"))
    for outcome in s.post.outcomes:
        if outcome not in OUTCOMES:
            findings.append(Finding("UnknownOutcome", f"outcome {outcome!r}"))
    return findings


def format_findings(findings: list[Finding]) -> str:
    if not findings:
        return "valid: no findings\n"
    return "\n".join(f"{f.kind}: {f.message}" for f in findings) + "\n"


# ---------------------------------------------------------------------------
# Emission


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt_triple(triple: tuple[float, float, float]) -> str:
    return ",".join(repr(c) for c in triple)


def emit_vehicle_section(vehicle: VehicleDefinition) -> str:
    lines = [f"vehicle model={vehicle.model}"]
    for sensor in vehicle.sensors:
        params = "".join(
            f" {k}={_fmt(v)}" for k, v in sorted(sensor.params.items())
        )
        lines.append(f"sensor {sensor.kind} pos={_fmt_triple(sensor.position)}{params}")
    return "\n".join(lines) + "\n"


def emit_pre_section(pre: PreConditions) -> str:
    lines = [
        f"pre map={pre.map_name} ego_pos={_fmt_triple(pre.ego_position)} "
        f"ego_speed={repr(pre.ego_speed)}"
    ]
    for agent in pre.agents:
        ident = "" if agent.id == agent.kind else f" id={agent.id}"
        lines.append(
            f"agent {agent.kind} pos={_fmt_triple(agent.position)} "
            f"speed={repr(agent.speed)} heading={repr(agent.heading)}{ident}"
        )
    if pre.weather:
        pairs = " ".join(f"{k}={_fmt(v)}" for k, v in sorted(pre.weather.items()))
        lines.append(f"weather {pairs}")
    return "\n".join(lines) + "\n"


def emit_post_section(post: PostConditions) -> str:
    lines = [
        f"post assert {a.signal} {a.comparator} {repr(a.threshold)} {a.window}"
        for a in post.assertions
    ]
    lines.extend(f"post outcome {o}" for o in post.outcomes)
    return "\n".join(lines) + "\n"


def emit_sim_config(s: TestScenario) -> str:
    """Canonical scenario text; parse_scenario round-trips it."""
    parts = [f"scenario {s.id}\n"]
    if s.source_clauses:
        parts.append("source " + " ".join(str(c) for c in s.source_clauses) + "\n")
    parts.append(emit_vehicle_section(s.vehicle))
    parts.append(emit_pre_section(s.pre))
    parts.append(emit_post_section(s.post))
    return "".join(parts)


PLACEHOLDERS = ("map", "ego_spawn", "agents", "weather", "assertions")

_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")


def _render_ego_spawn(s: TestScenario) -> str:
    x, y, z = s.pre.ego_position
    lines = [
        f'ego = spawn_vehicle(world, "{s.vehicle.model}", x={x!r}, y={y!r}, z={z!r}, '
        f"speed_kmh={s.pre.ego_speed!r})"
    ]
    for sensor in s.vehicle.sensors:
        sx, sy, sz = sensor.position
        params = "".join(f", {k}={_fmt(v)}" for k, v in sorted(sensor.params.items()))
        lines.append(
            f'attach_sensor(ego, "{sensor.kind}", x={sx!r}, y={sy!r}, z={sz!r}{params})'
        )
    return "\n".join(lines)


def _render_agents(s: TestScenario) -> str:
    lines = []
    for agent in s.pre.agents:
        x, y, z = agent.position
        lines.append(
            f'spawn_agent(world, "{agent.kind}", id="{agent.id}", x={x!r}, y={y!r}, '
            f"z={z!r}, speed_kmh={agent.speed!r}, heading_deg={agent.heading!r})"
        )
    return "\n".join(lines) if lines else "pass  # no agents"


def _render_weather(s: TestScenario) -> str:
    if not s.pre.weather:
        return "pass  # default weather"
    pairs = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(s.pre.weather.items()))
    return f"set_weather(world, {pairs})"


def _render_assertions(s: TestScenario) -> str:
    lines = [
        f'check(telemetry, "{a.signal}", "{a.comparator}", {a.threshold!r}, '
        f'window="{a.window}")'
        for a in s.post.assertions
    ]
    lines.extend(f'expect_outcome(telemetry, "{o}")' for o in s.post.outcomes)
    return "\n".join(lines)


def emit_sim_script(s: TestScenario, template: str) -> str:
    """Substitute scenario values into a script template.

    Template placeholders must be a subset of PLACEHOLDERS; anything else
    raises UnresolvedPlaceholder.  The scenario must validate cleanly.
    """
    findings = validate_scenario(s)
    if findings:
        raise InvalidScenario(format_findings(findings).strip())
    values = {
        "map": s.pre.map_name,
        "ego_spawn": _render_ego_spawn(s),
        "agents": _render_agents(s),
        "weather": _render_weather(s),
        "assertions": _render_assertions(s),
    }
    unknown = {
        m.group(1) for m in _PLACEHOLDER_RE.finditer(template)
    } - set(PLACEHOLDERS)
    if unknown:
        raise UnresolvedPlaceholder(
            f"unknown placeholder(s): {', '.join(sorted(unknown))}"
        )
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template)
