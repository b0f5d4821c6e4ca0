"""Vehicle signal tooling: catalog parsing, experiment-to-signal mapping,
template-driven control-code emission and the event-bridge simulator.

The bridge models the simulation-to-controller link as an ordered event
timeline: telemetry events update per-signal state, control rules fire
edge-triggered commands, and the resulting command trace is the observable
output (the stand-in for messages leaving toward the vehicle network).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .chunking import tokenize
from .errors import SdvpipeError
from .scenario import TestScenario

DATATYPES = ("boolean", "int", "float", "string")
ROLE_ACTUATION = "actuation"
ROLE_TELEMETRY = "telemetry"
DEFAULT_FUZZY_THRESHOLD = 0.5

_NUMBER_RE = re.compile(r"^[+-]?\d+(?:\.\d+)?$")
_PATH_RE = re.compile(r"^[A-Za-z0-9]+(?:\.[A-Za-z0-9]+)*$")
_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")

CODE_PLACEHOLDERS = ("signal_declarations", "subscriptions", "handlers")


class VehicleCodeError(SdvpipeError):
    pass


class CatalogSyntaxError(VehicleCodeError):
    pass


class DuplicatePath(VehicleCodeError):
    pass


class BadRange(VehicleCodeError):
    pass


class NoMatch(VehicleCodeError):
    def __init__(self, phrase: str, candidates: list[str]):
        listing = f"; best candidates: {', '.join(candidates)}" if candidates else ""
        super().__init__(f"no signal mapping for phrase {phrase!r}{listing}")
        self.phrase = phrase
        self.candidates = candidates


class AmbiguousMapping(VehicleCodeError):
    def __init__(self, phrase: str, candidates: list[str]):
        super().__init__(
            f"phrase {phrase!r} maps equally to: {', '.join(candidates)}"
        )
        self.phrase = phrase
        self.candidates = candidates


class UnknownSignal(VehicleCodeError):
    pass


class ValueOutOfRange(VehicleCodeError):
    pass


class UnmappedSignalInRule(VehicleCodeError):
    pass


class UnresolvedPlaceholder(VehicleCodeError):
    pass


class UnsortedEvents(VehicleCodeError):
    pass


@dataclass(frozen=True)
class VssEntry:
    path: str
    datatype: str
    unit: str | None = None
    minimum: float | None = None
    maximum: float | None = None


@dataclass
class VssCatalog:
    entries: dict[str, VssEntry]

    def __contains__(self, path: str) -> bool:
        return path in self.entries


def parse_vss_catalog(text: str) -> VssCatalog:
    """Parse ``path;datatype[;unit[;min;max]]`` lines; ``#`` starts a comment."""
    entries: dict[str, VssEntry] = {}
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(";")
        if len(fields) not in (2, 3, 5):
            raise CatalogSyntaxError(f"line {line_no}: expected 2, 3 or 5 fields")
        path, datatype = fields[0].strip(), fields[1].strip()
        if not _PATH_RE.match(path):
            raise CatalogSyntaxError(f"line {line_no}: bad signal path {path!r}")
        if datatype not in DATATYPES:
            raise CatalogSyntaxError(f"line {line_no}: bad datatype {datatype!r}")
        if path in entries:
            raise DuplicatePath(f"line {line_no}: duplicate path {path}")
        unit = fields[2].strip() or None if len(fields) >= 3 else None
        minimum = maximum = None
        if len(fields) == 5:
            try:
                minimum, maximum = float(fields[3]), float(fields[4])
            except ValueError as exc:
                raise CatalogSyntaxError(f"line {line_no}: bad min/max") from exc
            if minimum > maximum:
                raise BadRange(f"line {line_no}: min {minimum} > max {maximum}")
        entries[path] = VssEntry(path, datatype, unit, minimum, maximum)
    return VssCatalog(entries)


def format_catalog(catalog: VssCatalog) -> str:
    lines = []
    for path in sorted(catalog.entries):
        e = catalog.entries[path]
        fields = [e.path, e.datatype]
        if e.minimum is not None:
            fields += [e.unit or "", repr(e.minimum), repr(e.maximum)]
        elif e.unit is not None:
            fields.append(e.unit)
        lines.append(";".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Experiment model and signal mapping


@dataclass(frozen=True)
class ActionDescriptor:
    phrase: str
    role: str  # ROLE_ACTUATION | ROLE_TELEMETRY


@dataclass
class ExperimentModel:
    scenario: TestScenario
    actions: list[ActionDescriptor]


def build_experiment(
    scenario: TestScenario,
    extras: tuple[ActionDescriptor, ...] = (),
) -> ExperimentModel:
    """Derive action phrases: telemetry from assertions, actuation from
    expected outcomes, plus explicit extras."""
    actions: list[ActionDescriptor] = []
    seen: set[tuple[str, str]] = set()

    def add(phrase: str, role: str) -> None:
        key = (phrase, role)
        if key not in seen:
            seen.add(key)
            actions.append(ActionDescriptor(phrase, role))

    for assertion in scenario.post.assertions:
        add(assertion.signal, ROLE_TELEMETRY)
    for outcome in scenario.post.outcomes:
        add(outcome, ROLE_ACTUATION)
    for extra in extras:
        add(extra.phrase, extra.role)
    return ExperimentModel(scenario, actions)


@dataclass(frozen=True)
class SignalMapping:
    phrase: str
    path: str
    score: float
    method: str  # exact | alias | fuzzy


def _path_tokens(path: str) -> set[str]:
    return set(tokenize(path))


def map_signals(
    exp: ExperimentModel,
    catalog: VssCatalog,
    aliases: dict[str, str] | None = None,
    threshold: float = DEFAULT_FUZZY_THRESHOLD,
) -> list[SignalMapping]:
    """Resolve each action phrase to a catalog path.

    Resolution order per phrase: exact path match, alias table, fuzzy token
    overlap.  A fuzzy match must be a unique maximum at or above the
    threshold; ties raise AmbiguousMapping and misses raise NoMatch.
    """
    if not catalog.entries:
        raise UnknownSignal("signal catalog is empty")
    aliases = aliases or {}
    mappings = []
    for action in exp.actions:
        phrase = action.phrase
        if phrase in catalog:
            mappings.append(SignalMapping(phrase, phrase, 1.0, "exact"))
            continue
        if phrase in aliases:
            target = aliases[phrase]
            if target not in catalog:
                raise NoMatch(phrase, [f"{target} (alias target missing from catalog)"])
            mappings.append(SignalMapping(phrase, target, 1.0, "alias"))
            continue
        phrase_tokens = set(tokenize(phrase))
        if not phrase_tokens:
            raise NoMatch(phrase, [])
        scored = sorted(
            (
                (len(phrase_tokens & _path_tokens(path)) / len(phrase_tokens), path)
                for path in catalog.entries
            ),
            key=lambda pair: (-pair[0], pair[1]),
        )
        best_score = scored[0][0]
        if best_score < threshold:
            raise NoMatch(phrase, [path for score, path in scored[:3] if score > 0])
        tied = [path for score, path in scored if score == best_score]
        if len(tied) > 1:
            raise AmbiguousMapping(phrase, tied)
        mappings.append(SignalMapping(phrase, tied[0], best_score, "fuzzy"))
    return mappings


def parse_aliases(text: str) -> dict[str, str]:
    """Alias file: one ``phrase=path`` per line; ``#`` comments."""
    aliases: dict[str, str] = {}
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CatalogSyntaxError(f"line {line_no}: expected phrase=path")
        phrase, _, path = line.partition("=")
        aliases[phrase.strip()] = path.strip()
    return aliases


def format_mappings(mappings: list[SignalMapping]) -> str:
    return "\n".join(
        f"{m.phrase};{m.path};{m.score!r};{m.method}" for m in mappings
    ) + ("\n" if mappings else "")


# ---------------------------------------------------------------------------
# Control rules and code emission


@dataclass(frozen=True)
class ControlRule:
    when_path: str
    comparator: str
    threshold: float
    then_path: str
    then_value: object
    edge_triggered: bool = True


_RULE_RE = re.compile(
    r"^when\s+(\S+)\s+(<=|>=|<|>|=)\s+(\S+)\s+then\s+(\S+)\s*=\s*(\S+)$"
)


def _coerce_signal_value(raw: str, entry: VssEntry) -> object:
    if entry.datatype == "boolean":
        if raw not in ("true", "false"):
            raise CatalogSyntaxError(f"expected true/false for {entry.path}, got {raw!r}")
        return raw == "true"
    if entry.datatype == "int":
        if not re.match(r"^[+-]?\d+$", raw):
            raise CatalogSyntaxError(f"expected int for {entry.path}, got {raw!r}")
        return int(raw)
    if entry.datatype == "float":
        if not _NUMBER_RE.match(raw):
            raise CatalogSyntaxError(f"expected float for {entry.path}, got {raw!r}")
        return float(raw)
    return raw


def parse_rules(text: str, catalog: VssCatalog) -> list[ControlRule]:
    """Rule file: ``when <path> <cmp> <num> then <path> = <value>`` lines."""
    rules = []
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _RULE_RE.match(line)
        if not m:
            raise CatalogSyntaxError(f"line {line_no}: bad rule syntax")
        when_path, comparator, threshold_raw, then_path, value_raw = m.groups()
        for path in (when_path, then_path):
            if path not in catalog:
                raise UnknownSignal(f"line {line_no}: {path} not in catalog")
        if not _NUMBER_RE.match(threshold_raw):
            raise CatalogSyntaxError(f"line {line_no}: bad threshold {threshold_raw!r}")
        entry = catalog.entries[then_path]
        value = _coerce_signal_value(value_raw, entry)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            if entry.minimum is not None and not entry.minimum <= value <= entry.maximum:
                raise ValueOutOfRange(
                    f"line {line_no}: {value} outside [{entry.minimum}, {entry.maximum}] for {then_path}"
                )
        rules.append(
            ControlRule(when_path, comparator, float(threshold_raw), then_path, value)
        )
    return rules


def _mangle(path: str) -> str:
    return path.replace(".", "_").upper()


def _render_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def emit_control_code(
    exp: ExperimentModel,
    mappings: list[SignalMapping],
    rules: list[ControlRule],
    template: str,
) -> str:
    """Render controller code from the template.

    One declaration per mapped signal, one subscription per distinct rule
    telemetry path, one handler per rule.  Every rule path must be covered by
    the mappings.
    """
    mapped_paths = {m.path for m in mappings}
    for rule in rules:
        for path in (rule.when_path, rule.then_path):
            if path not in mapped_paths:
                raise UnmappedSignalInRule(f"rule path {path} is not mapped")

    unknown = {m.group(1) for m in _PLACEHOLDER_RE.finditer(template)} - set(
        CODE_PLACEHOLDERS
    )
    if unknown:
        raise UnresolvedPlaceholder(f"unknown placeholder(s): {', '.join(sorted(unknown))}")

    declared: list[str] = []
    seen_paths: set[str] = set()
    for m in mappings:
        if m.path not in seen_paths:
            seen_paths.add(m.path)
            declared.append(
                f'constexpr auto SIG_{_mangle(m.path)} = "{m.path}";  // {m.phrase}'
            )

    subscriptions: list[str] = []
    seen_topics: set[str] = set()
    for rule in rules:
        if rule.when_path not in seen_topics:
            seen_topics.add(rule.when_path)
            subscriptions.append(
                f"  comapi::subscribe(SIG_{_mangle(rule.when_path)}, &on_event);"
            )

    handlers: list[str] = []
    for i, rule in enumerate(rules, start=1):
        handlers.append(
            "\n".join(
                [
                    f"void handle_rule_{i}(double value) {{",
                    f"  if (value {'==' if rule.comparator == '=' else rule.comparator} {rule.threshold!r}) {{",
                    f"    comapi::set(SIG_{_mangle(rule.then_path)}, {_render_value(rule.then_value)});",
                    "  }",
                    "}",
                ]
            )
        )

    values = {
        "signal_declarations": "\n".join(declared),
        "subscriptions": "\n".join(subscriptions),
        "handlers": "\n\n".join(handlers),
    }
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template)


# ---------------------------------------------------------------------------
# Event bridge simulation


@dataclass(frozen=True)
class BridgeEvent:
    time: float
    path: str
    value: object


def _render_command_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class CommandTrace:
    commands: list[tuple[float, str, object]]

    def format(self) -> str:
        lines = [
            f"{t!r};{path};{_render_command_value(v)}" for t, path, v in self.commands
        ]
        return "\n".join(lines) + ("\n" if lines else "")


def parse_events(text: str) -> list[BridgeEvent]:
    """Event file: ``time;path;value`` lines."""
    events = []
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(";")
        if len(fields) != 3:
            raise CatalogSyntaxError(f"line {line_no}: expected time;path;value")
        try:
            time = float(fields[0])
        except ValueError as exc:
            raise CatalogSyntaxError(f"line {line_no}: bad time {fields[0]!r}") from exc
        raw_value = fields[2].strip()
        value: object
        if _NUMBER_RE.match(raw_value):
            value = float(raw_value)
        elif raw_value in ("true", "false"):
            value = raw_value == "true"
        else:
            value = raw_value
        events.append(BridgeEvent(time, fields[1].strip(), value))
    return events


def _condition_state(rule: ControlRule, latest: dict[str, object]) -> bool | None:
    """True/False for a decided condition, None while the signal is unknown."""
    value = latest.get(rule.when_path)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        return None
    ops = {
        "<": value < rule.threshold,
        "<=": value <= rule.threshold,
        ">": value > rule.threshold,
        ">=": value >= rule.threshold,
        "=": value == rule.threshold,
    }
    return ops[rule.comparator]


def simulate_bridge(rules: list[ControlRule], events: list[BridgeEvent]) -> CommandTrace:
    """Replay events in order and collect edge-triggered rule firings.

    A rule fires when its condition transitions from false/unknown to true
    and re-arms only after its condition is observed false again.
    """
    for prev, cur in zip(events, events[1:]):
        if cur.time < prev.time:
            raise UnsortedEvents(f"event at {cur.time} after {prev.time}")
    latest: dict[str, object] = {}
    armed = [True] * len(rules)
    commands: list[tuple[float, str, object]] = []
    for event in events:
        latest[event.path] = event.value
        for i, rule in enumerate(rules):
            state = _condition_state(rule, latest)
            if state is True and armed[i]:
                commands.append((event.time, rule.then_path, rule.then_value))
                armed[i] = False
            elif state is False:
                armed[i] = True
    return CommandTrace(commands)
