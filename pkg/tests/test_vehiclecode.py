import random

import pytest

from sdvpipe.scenario import parse_scenario
from sdvpipe.templates import DEFAULT_CONTROL_TEMPLATE
from sdvpipe.vehiclecode import (
    ActionDescriptor,
    AmbiguousMapping,
    BadRange,
    BridgeEvent,
    CatalogSyntaxError,
    ControlRule,
    DuplicatePath,
    NoMatch,
    UnmappedSignalInRule,
    UnresolvedPlaceholder,
    UnsortedEvents,
    build_experiment,
    emit_control_code,
    map_signals,
    parse_aliases,
    parse_events,
    parse_rules,
    parse_vss_catalog,
    simulate_bridge,
)

from conftest import data_text

OBSTACLE = "Vehicle.ADAS.ObstacleDistance"
BRAKE = "Vehicle.Chassis.Brake.PedalPosition"

R1 = ControlRule(OBSTACLE, "<", 10.0, BRAKE, 100)


@pytest.fixture()
def catalog(catalog_text):
    return parse_vss_catalog(catalog_text)


@pytest.fixture()
def experiment(scenario_text):
    scenario = parse_scenario(scenario_text)
    extras = (
        ActionDescriptor("obstacle distance", "telemetry"),
        ActionDescriptor("brake", "actuation"),
    )
    return build_experiment(scenario, extras)


class TestCatalog:
    def test_fixture_entries(self, catalog):
        assert len(catalog.entries) == 4
        speed = catalog.entries["Vehicle.Speed"]
        assert (speed.datatype, speed.unit, speed.minimum, speed.maximum) == (
            "float",
            "km/h",
            0.0,
            300.0,
        )
        enabled = catalog.entries["Vehicle.ADAS.AEB.IsEnabled"]
        assert (enabled.datatype, enabled.unit, enabled.minimum) == ("boolean", None, None)

    def test_duplicate_path(self):
        with pytest.raises(DuplicatePath):
            parse_vss_catalog("A.B;int\nA.B;float\n")

    def test_bad_range(self):
        with pytest.raises(BadRange):
            parse_vss_catalog("X;float;;5;1\n")

    def test_comments_and_blanks(self):
        catalog = parse_vss_catalog("# header\n\nA.B;int\n")
        assert list(catalog.entries) == ["A.B"]

    def test_bad_datatype(self):
        with pytest.raises(CatalogSyntaxError):
            parse_vss_catalog("A.B;quaternion\n")

    def test_bad_field_count(self):
        with pytest.raises(CatalogSyntaxError):
            parse_vss_catalog("A.B;int;unit;5\n")


class TestExperiment:
    def test_actions_derived_from_post(self, experiment):
        assert [(a.phrase, a.role) for a in experiment.actions] == [
            ("ego.speed", "telemetry"),
            ("collision_avoided", "actuation"),
            ("obstacle distance", "telemetry"),
            ("brake", "actuation"),
        ]


class TestMapSignals:
    def test_fuzzy_brake(self, catalog):
        exp = _exp_with(["brake"])
        (mapping,) = map_signals(exp, catalog)
        assert (mapping.path, mapping.method, mapping.score) == (BRAKE, "fuzzy", 1.0)

    def test_exact_match(self, catalog):
        exp = _exp_with(["Vehicle.Speed"])
        (mapping,) = map_signals(exp, catalog)
        assert (mapping.path, mapping.method, mapping.score) == (
            "Vehicle.Speed",
            "exact",
            1.0,
        )

    def test_no_match(self, catalog):
        with pytest.raises(NoMatch) as err:
            map_signals(_exp_with(["banana"]), catalog)
        assert err.value.phrase == "banana"

    def test_alias(self, catalog):
        exp = _exp_with(["collision_avoided"])
        (mapping,) = map_signals(
            exp, catalog, {"collision_avoided": "Vehicle.ADAS.AEB.IsEnabled"}
        )
        assert mapping.method == "alias"

    def test_alias_to_missing_path(self, catalog):
        with pytest.raises(NoMatch):
            map_signals(_exp_with(["x"]), catalog, {"x": "No.Such.Path"})

    def test_ambiguous_tie(self, catalog):
        # "vehicle" appears in every path; all four tie at the same score
        with pytest.raises(AmbiguousMapping) as err:
            map_signals(_exp_with(["vehicle"]), catalog)
        assert len(err.value.candidates) == 4

    def test_threshold(self, catalog):
        exp = _exp_with(["ego.speed"])
        (mapping,) = map_signals(exp, catalog, threshold=0.5)
        assert mapping.path == "Vehicle.Speed" and mapping.score == 0.5
        with pytest.raises(NoMatch):
            map_signals(exp, catalog, threshold=0.6)

    def test_determinism(self, catalog, experiment):
        aliases = parse_aliases(data_text("aliases.txt"))
        first = map_signals(experiment, catalog, aliases)
        second = map_signals(experiment, catalog, aliases)
        assert first == second


def _exp_with(phrases):
    from sdvpipe.scenario import (
        PostConditions,
        PreConditions,
        SensorSpec,
        TestScenario,
        VehicleDefinition,
    )
    from sdvpipe.vehiclecode import ExperimentModel

    scenario = TestScenario(
        "t",
        [],
        VehicleDefinition("sedan", [SensorSpec("radar", (0.0, 0.0, 0.0), {})]),
        PreConditions("m", (0.0, 0.0, 0.0), 0.0, [], {}),
        PostConditions([], ["stopped"]),
    )
    return ExperimentModel(scenario, [ActionDescriptor(p, "telemetry") for p in phrases])


class TestRules:
    def test_parse_fixture_rule(self, catalog):
        (rule,) = parse_rules(data_text("rules.txt"), catalog)
        assert rule == R1

    def test_unknown_signal(self, catalog):
        from sdvpipe.vehiclecode import UnknownSignal

        with pytest.raises(UnknownSignal):
            parse_rules("when No.Such < 1 then Vehicle.Speed = 1\n", catalog)

    def test_value_out_of_range(self, catalog):
        from sdvpipe.vehiclecode import ValueOutOfRange

        with pytest.raises(ValueOutOfRange):
            parse_rules(f"when {OBSTACLE} < 10 then {BRAKE} = 150\n", catalog)

    def test_boolean_value(self, catalog):
        (rule,) = parse_rules(
            f"when {OBSTACLE} < 10 then Vehicle.ADAS.AEB.IsEnabled = true\n", catalog
        )
        assert rule.then_value is True


class TestEmitControlCode:
    def mappings(self, catalog, experiment):
        return map_signals(experiment, catalog, parse_aliases(data_text("aliases.txt")))

    def test_single_rule_renders_once(self, catalog, experiment):
        code = emit_control_code(
            experiment, self.mappings(catalog, experiment), [R1], DEFAULT_CONTROL_TEMPLATE
        )
        assert code.count("comapi::subscribe(") == 1
        assert code.count("void handle_rule_") == 1
        assert "{{" not in code

    def test_every_mapped_signal_declared(self, catalog, experiment):
        mappings = self.mappings(catalog, experiment)
        code = emit_control_code(experiment, mappings, [R1], DEFAULT_CONTROL_TEMPLATE)
        for mapping in mappings:
            assert f'"{mapping.path}"' in code

    def test_unmapped_rule_path(self, catalog, experiment):
        rule = ControlRule("Vehicle.Speed", ">", 50.0, BRAKE, 0)
        mappings = [
            m for m in self.mappings(catalog, experiment) if m.path != "Vehicle.Speed"
        ]
        with pytest.raises(UnmappedSignalInRule):
            emit_control_code(experiment, mappings, [rule], DEFAULT_CONTROL_TEMPLATE)

    def test_zero_rules_still_well_formed(self, catalog, experiment):
        code = emit_control_code(
            experiment, self.mappings(catalog, experiment), [], DEFAULT_CONTROL_TEMPLATE
        )
        assert "register_subscriptions" in code
        assert "{{" not in code

    def test_unknown_placeholder(self, catalog, experiment):
        with pytest.raises(UnresolvedPlaceholder):
            emit_control_code(
                experiment, self.mappings(catalog, experiment), [], "{{nonsense}}"
            )

    def test_subscriptions_deduplicated(self, catalog, experiment):
        second = ControlRule(OBSTACLE, "<", 5.0, BRAKE, 100)
        code = emit_control_code(
            experiment,
            self.mappings(catalog, experiment),
            [R1, second],
            DEFAULT_CONTROL_TEMPLATE,
        )
        assert code.count("comapi::subscribe(") == 1
        assert code.count("void handle_rule_") == 2


def events_at(*pairs):
    return [BridgeEvent(t, OBSTACLE, v) for t, v in pairs]


class TestBridge:
    def test_edge_trigger_no_refire(self):
        trace = simulate_bridge([R1], events_at((0.0, 50), (1.0, 8), (2.0, 7)))
        assert trace.commands == [(1.0, BRAKE, 100)]

    def test_rearm_after_false(self):
        trace = simulate_bridge([R1], events_at((1.0, 8), (2.0, 15), (3.0, 6)))
        assert trace.commands == [(1.0, BRAKE, 100), (3.0, BRAKE, 100)]

    def test_no_events(self):
        assert simulate_bridge([R1], []).commands == []

    def test_unsorted_events_rejected(self):
        with pytest.raises(UnsortedEvents):
            simulate_bridge([R1], events_at((2.0, 8), (1.0, 9)))

    def test_equal_times_processed_in_input_order(self):
        trace = simulate_bridge([R1], events_at((1.0, 8), (1.0, 50), (1.0, 7)))
        assert trace.commands == [(1.0, BRAKE, 100), (1.0, BRAKE, 100)]

    def test_unknown_signal_values_ignored(self):
        events = [BridgeEvent(0.0, "Other.Signal", 1.0), BridgeEvent(1.0, OBSTACLE, 3.0)]
        trace = simulate_bridge([R1], events)
        assert trace.commands == [(1.0, BRAKE, 100)]

    def test_non_numeric_value_is_unknown(self):
        events = [BridgeEvent(0.0, OBSTACLE, "garbage"), BridgeEvent(1.0, OBSTACLE, 2.0)]
        assert simulate_bridge([R1], events).commands == [(1.0, BRAKE, 100)]

    def test_trace_times_non_decreasing_and_causal(self):
        rng = random.Random(3)
        for _ in range(50):
            rules = _random_rules(rng)
            events = _random_events(rng)
            trace = simulate_bridge(rules, events)
            times = [t for t, _, _ in trace.commands]
            assert times == sorted(times)
            event_times = {e.time for e in events}
            assert all(t in event_times for t in times)

    def test_edge_trigger_law(self):
        rng = random.Random(4)
        for _ in range(100):
            rules = _random_rules(rng)
            events = _random_events(rng)
            trace = simulate_bridge(rules, events)
            assert_edge_trigger_law(rules, events, trace)

    def test_events_file_round_trip(self, catalog):
        events = parse_events(data_text("events.txt"))
        assert [e.time for e in events] == [0.0, 1.0, 2.0]
        trace = simulate_bridge([R1], events)
        assert trace.format() == f"1.0;{BRAKE};100\n"


def _random_rules(rng):
    signals = ["S.A", "S.B", "S.C"]
    rules = []
    for i in range(rng.randint(1, 3)):
        rules.append(
            ControlRule(
                rng.choice(signals),
                rng.choice(("<", "<=", ">", ">=")),
                float(rng.randint(0, 10)),
                f"Act.Out{i}",
                rng.randint(0, 100),
            )
        )
    return rules


def _random_events(rng):
    times = sorted(round(rng.uniform(0, 20), 2) for _ in range(rng.randint(0, 30)))
    return [
        BridgeEvent(t, rng.choice(["S.A", "S.B", "S.C"]), float(rng.randint(0, 12)))
        for t in times
    ]


def _condition_states(rule, events):
    """Post-event condition value (True/False/None) per event index."""
    latest = {}
    states = []
    for event in events:
        latest[event.path] = event.value
        value = latest.get(rule.when_path)
        state = None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            state = {
                "<": value < rule.threshold,
                "<=": value <= rule.threshold,
                ">": value > rule.threshold,
                ">=": value >= rule.threshold,
                "=": value == rule.threshold,
            }[rule.comparator]
        states.append(state)
    return states


def assert_edge_trigger_law(rules, events, trace):
    """Between two firings of one rule there is an observation making its
    condition false (independent re-scan of the event list)."""
    for rule in rules:
        states = _condition_states(rule, events)
        fired_indices = []
        armed = True
        for i, state in enumerate(states):
            if state is True and armed:
                fired_indices.append(i)
                armed = False
            elif state is False:
                armed = True
        # the production trace contains exactly these firing times for the rule
        produced = [t for t, path, _ in trace.commands if path == rule.then_path]
        for i in fired_indices:
            assert events[i].time in produced
        # law: consecutive firings separated by a falsifying observation
        for a, b in zip(fired_indices, fired_indices[1:]):
            assert any(
                states[k] is False for k in range(a + 1, b)
            ), "rule re-fired without an intervening false observation"
