import random

import pytest

from sdvpipe.regdoc import ClauseId
from sdvpipe.scenario import (
    InvalidScenario,
    PostConditions,
    RangeError,
    ScenarioSyntaxError,
    UnknownKey,
    UnresolvedPlaceholder,
    emit_sim_config,
    emit_sim_script,
    parse_post_section,
    parse_pre_section,
    parse_scenario,
    parse_vehicle_section,
    validate_scenario,
)
from sdvpipe.templates import DEFAULT_SIM_TEMPLATE

from generators import random_scenario


@pytest.fixture()
def aebs(scenario_text):
    return parse_scenario(scenario_text)


class TestParseScenario:
    def test_fixture(self, aebs):
        assert aebs.id == "aebs_stationary"
        assert aebs.source_clauses == [ClauseId((6, 4))]
        assert aebs.vehicle.model == "sedan"
        (sensor,) = aebs.vehicle.sensors
        assert sensor.kind == "radar"
        assert sensor.position == (2.3, 0.0, 0.5)
        assert sensor.params == {"range": 150.0}
        assert aebs.pre.ego_speed == 30.0
        (agent,) = aebs.pre.agents
        assert (agent.kind, agent.speed, agent.heading) == ("car", 0.0, 0.0)
        (assertion,) = aebs.post.assertions
        assert (assertion.signal, assertion.comparator, assertion.window) == (
            "ego.speed",
            "=",
            "eventually",
        )
        assert aebs.post.outcomes == ["collision_avoided"]

    def test_negative_ego_speed(self, scenario_text):
        with pytest.raises(RangeError):
            parse_scenario(scenario_text.replace("ego_speed=30", "ego_speed=-5"))

    def test_missing_post_section(self, scenario_text):
        stripped = "\n".join(
            line for line in scenario_text.split("\n") if not line.startswith("post")
        )
        with pytest.raises(RangeError):
            parse_scenario(stripped)

    def test_missing_sensor(self, scenario_text):
        stripped = "\n".join(
            line for line in scenario_text.split("\n") if not line.startswith("sensor")
        )
        with pytest.raises(RangeError):
            parse_scenario(stripped)

    def test_unknown_line_keyword(self):
        with pytest.raises(UnknownKey):
            parse_scenario("scenario s\nbanana yes\n")

    def test_unknown_key_in_line(self, scenario_text):
        with pytest.raises(UnknownKey):
            parse_scenario(scenario_text.replace("model=sedan", "model=sedan color=red"))

    def test_bad_heading(self, scenario_text):
        with pytest.raises(RangeError):
            parse_scenario(scenario_text.replace("heading=0", "heading=360"))

    def test_unknown_outcome(self, scenario_text):
        with pytest.raises(RangeError):
            parse_scenario(
                scenario_text.replace("outcome collision_avoided", "outcome exploded")
            )

    def test_unknown_sensor_kind(self, scenario_text):
        with pytest.raises(RangeError):
            parse_scenario(scenario_text.replace("sensor radar", "sensor sonar"))

    def test_duplicate_agent_id(self, scenario_text):
        doubled = scenario_text.replace(
            "agent car pos=60,0,0 speed=0 heading=0",
            "agent car pos=60,0,0 speed=0 heading=0\nagent car pos=80,0,0 speed=5 heading=0",
        )
        with pytest.raises(RangeError):
            parse_scenario(doubled)

    def test_distinct_agent_ids_allowed(self, scenario_text):
        doubled = scenario_text.replace(
            "agent car pos=60,0,0 speed=0 heading=0",
            "agent car pos=60,0,0 speed=0 heading=0\nagent car id=car2 pos=80,0,0 speed=5 heading=0",
        )
        scenario = parse_scenario(doubled)
        assert [a.id for a in scenario.pre.agents] == ["car", "car2"]

    def test_bad_position_triple(self):
        with pytest.raises(ScenarioSyntaxError):
            parse_scenario("scenario s\nvehicle model=m\nsensor radar pos=1,2\n")

    def test_precipitation_range(self, scenario_text):
        with pytest.raises(RangeError):
            parse_scenario(scenario_text.replace("precipitation=0", "precipitation=150"))


class TestSections:
    def test_vehicle_section(self):
        vehicle = parse_vehicle_section("vehicle model=suv\nsensor lidar pos=0,0,1.5\n")
        assert vehicle.model == "suv"

    def test_vehicle_section_rejects_foreign_lines(self):
        with pytest.raises(UnknownKey):
            parse_vehicle_section("vehicle model=suv\npre map=x ego_pos=0,0,0 ego_speed=1\n")

    def test_pre_section(self):
        pre = parse_pre_section("pre map=town ego_pos=1,2,3 ego_speed=10\nweather precipitation=20\n")
        assert pre.map_name == "town"
        assert pre.weather == {"precipitation": 20.0}

    def test_post_section(self):
        post = parse_post_section("post outcome stopped\n")
        assert post.outcomes == ["stopped"]

    def test_post_section_requires_content(self):
        with pytest.raises(RangeError):
            parse_post_section("\n")


class TestValidate:
    def test_clean_fixture(self, aebs, doc):
        assert validate_scenario(aebs, doc) == []

    def test_unknown_source_clause(self, aebs, doc):
        aebs.source_clauses.append(ClauseId((9, 9)))
        findings = validate_scenario(aebs, doc)
        assert [f.kind for f in findings] == ["UnknownClause"]

    def test_without_document_no_provenance_check(self, aebs):
        aebs.source_clauses.append(ClauseId((9, 9)))
        assert validate_scenario(aebs) == []

    def test_duplicate_agents_detected(self, aebs):
        aebs.pre.agents.append(aebs.pre.agents[0])
        kinds = {f.kind for f in validate_scenario(aebs)}
        assert "DuplicateAgent" in kinds

    def test_invariant_findings(self, aebs):
        aebs.vehicle.sensors.clear()
        aebs.pre.ego_speed = -1.0
        aebs.post.assertions.clear()
        aebs.post.outcomes.clear()
        kinds = {f.kind for f in validate_scenario(aebs)}
        assert {"MissingSensors", "NegativeSpeed", "EmptyPost"} <= kinds

    def test_seeded_violations_each_detected(self):
        rng = random.Random(5)
        mutations = [
            ("MissingSensors", lambda s: s.vehicle.sensors.clear()),
            ("NegativeSpeed", lambda s: setattr(s.pre, "ego_speed", -3.0)),
            ("HeadingOutOfRange", lambda s: setattr(s.pre.agents[0], "heading", 400.0)),
            ("DuplicateAgent", lambda s: s.pre.agents.append(s.pre.agents[0])),
            ("EmptyPost", lambda s: (s.post.assertions.clear(), s.post.outcomes.clear())),
            ("UnknownSensorKind", lambda s: setattr(s.vehicle.sensors[0], "kind", "sonar")),
            ("UnknownOutcome", lambda s: s.post.outcomes.append("exploded")),
            ("NonFinite", lambda s: setattr(s.post.assertions[0], "threshold", float("inf"))),
            (
                "PrecipitationOutOfRange",
                lambda s: s.pre.weather.__setitem__("precipitation", 200.0),
            ),
        ]
        for kind, mutate in mutations:
            scenario = random_scenario(rng)
            # make sure the parts the mutation touches exist
            if not scenario.pre.agents:
                from sdvpipe.scenario import AgentSpec

                scenario.pre.agents.append(AgentSpec("a", "car", (0.0, 0.0, 0.0), 0.0, 0.0))
            if not scenario.post.assertions:
                from sdvpipe.scenario import TelemetryAssertion

                scenario.post.assertions.append(
                    TelemetryAssertion("ego.speed", "<", 1.0, "at_end")
                )
            assert validate_scenario(scenario) == []
            mutate(scenario)
            kinds = {f.kind for f in validate_scenario(scenario)}
            assert kind in kinds, f"mutation {kind} not detected"


class TestEmission:
    def test_round_trip_fixture(self, aebs):
        assert parse_scenario(emit_sim_config(aebs)) == aebs

    def test_round_trip_random(self):
        rng = random.Random(17)
        for i in range(30):
            scenario = random_scenario(rng, i)
            assert parse_scenario(emit_sim_config(scenario)) == scenario

    def test_script_contains_fixture_values(self, aebs):
        script = emit_sim_script(aebs, DEFAULT_SIM_TEMPLATE)
        assert 'world.load_map("straight_road")' in script
        assert "x=2.3" in script  # sensor mount
        assert "speed_kmh=30.0" in script
        assert "{{" not in script

    def test_unknown_placeholder(self, aebs):
        with pytest.raises(UnresolvedPlaceholder):
            emit_sim_script(aebs, "{{bogus}}")

    def test_invalid_scenario_rejected(self, aebs):
        aebs.vehicle.sensors.clear()
        with pytest.raises(InvalidScenario):
            emit_sim_script(aebs, DEFAULT_SIM_TEMPLATE)

    def test_emission_totality(self):
        rng = random.Random(23)
        for i in range(20):
            scenario = random_scenario(rng, i)
            script = emit_sim_script(scenario, DEFAULT_SIM_TEMPLATE)
            assert script.count("attach_sensor(") == len(scenario.vehicle.sensors)
            assert script.count("spawn_agent(") == len(scenario.pre.agents)
            assert script.count("check(") == len(scenario.post.assertions)
            assert script.count("expect_outcome(") == len(scenario.post.outcomes)
            assert "{{" not in script

    def test_partial_template_allowed(self, aebs):
        assert emit_sim_script(aebs, "map is {{map}}") == "map is straight_road"
