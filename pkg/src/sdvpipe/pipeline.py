"""Stage orchestration: wires every module into one deterministic workflow.

The pipeline is a fixed, serialized DAG of eleven stages, from regulation
parsing through retrieval, generation, consistency checking and emission to
the bridge simulation.  Each stage writes exactly one artifact file into the
workspace (write-temp-then-rename); a failed stage skips everything
downstream.  Configuration is a flat ``key = value`` file with section
headers; paths resolve relative to the config file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import chunking, regdoc, retrieval, scenario as scn, vehiclecode as vc
from .consensus import (
    ConsensusPolicy,
    GenerationFailed,
    GeneratorBackend,
    MockBackend,
    Prompt,
    generate_and_select,
    make_validator,
)
from .errors import SdvpipeError
from .instance import check_conformance, parse_instance
from .metamodel import parse_plantuml, parse_metamodel, to_canonical
from .ocl import check_all, parse_ocl
from .templates import DEFAULT_CONTROL_TEMPLATE, DEFAULT_SIM_TEMPLATE

MOCK_DIR_ENV = "SDVPIPE_MOCK_DIR"

ARTIFACTS = (
    "01_regdoc.txt",
    "02_chunks.txt",
    "03_retrieval.txt",
    "04_scenario.txt",
    "05_scenario_report.txt",
    "06_metamodel.txt",
    "07_consistency.txt",
    "08_sim_script.txt",
    "09_mappings.txt",
    "10_control_code.txt",
    "11_trace.txt",
)

STAGE_NAMES = (
    "parse-regulation",
    "chunk",
    "retrieve",
    "scenario-generation",
    "scenario-validation",
    "metamodel",
    "consistency-check",
    "sim-script",
    "signal-mapping",
    "control-code",
    "bridge-simulation",
)

OK = "ok"
FAILED = "failed"
SKIPPED = "skipped"


class ConfigError(SdvpipeError):
    pass


@dataclass
class PipelineConfig:
    workspace: Path
    regulation: Path
    vss_catalog: Path
    constraints: Path
    rules: Path
    events: Path
    plantuml: Path | None = None
    instance: Path | None = None
    aliases: Path | None = None
    sim_template: Path | None = None
    code_template: Path | None = None
    backend: str = ""
    granularity: int = chunking.DEFAULT_GRANULARITY
    depth: int = chunking.DEFAULT_DEPTH_LIMIT
    budget: int = chunking.DEFAULT_MAX_TOKENS
    k: int = 5
    rerank: bool = True
    queries: list[str] = field(default_factory=list)
    scenario_name: str = "generated"
    threshold: float = vc.DEFAULT_FUZZY_THRESHOLD
    consensus_n: int = 5
    min_valid: int = 1
    extra_actions: list[tuple[str, str]] = field(default_factory=list)

    @classmethod
    def from_file(cls, path: str | Path, backend: str | None = None) -> PipelineConfig:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        parser = configparser.ConfigParser()
        try:
            parser.read_string(config_path.read_text(encoding="utf-8"))
        except configparser.Error as exc:
            raise ConfigError(f"bad config file: {exc}") from exc
        base = config_path.parent

        def resolve(section: str, key: str, required: bool = False) -> Path | None:
            raw = parser.get(section, key, fallback=None)
            if raw is None or not raw.strip():
                if required:
                    raise ConfigError(f"missing required config key [{section}] {key}")
                return None
            return (base / raw.strip()).resolve()

        def must_exist(p: Path | None, key: str) -> Path | None:
            if p is not None and not p.is_file():
                raise ConfigError(f"input path for {key} does not exist: {p}")
            return p

        workspace = resolve("run", "workspace", required=True)
        env_mock = os.environ.get(MOCK_DIR_ENV, "").strip()
        if backend:
            chosen_backend = backend
        elif env_mock:
            chosen_backend = f"mock:{env_mock}"
        else:
            chosen_backend = parser.get("run", "backend", fallback="")
            # config-file paths are relative to the config file
            if chosen_backend.startswith("mock:"):
                chosen_backend = f"mock:{(base / chosen_backend[5:]).resolve()}"

        params = parser["params"] if parser.has_section("params") else {}

        def param(key: str, default):
            raw = params.get(key) if key in params else None
            if raw is None:
                return default
            if isinstance(default, bool):
                return raw.strip().lower() in ("1", "true", "yes", "on")
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
            return raw

        queries = [
            q.strip() for q in params.get("queries", "").split("\n") if q.strip()
        ] if "queries" in params else []

        extra_actions = []
        if "extra_actions" in params:
            for item in params.get("extra_actions", "").split(","):
                item = item.strip()
                if not item:
                    continue
                role, _, phrase = item.partition(":")
                if role.strip() not in (vc.ROLE_ACTUATION, vc.ROLE_TELEMETRY) or not phrase.strip():
                    raise ConfigError(f"bad extra_actions entry {item!r}")
                extra_actions.append((role.strip(), phrase.strip()))

        cfg = cls(
            workspace=workspace,
            regulation=must_exist(resolve("inputs", "regulation", required=True), "regulation"),
            vss_catalog=must_exist(resolve("inputs", "vss_catalog", required=True), "vss_catalog"),
            constraints=must_exist(resolve("inputs", "constraints", required=True), "constraints"),
            rules=must_exist(resolve("inputs", "rules", required=True), "rules"),
            events=must_exist(resolve("inputs", "events", required=True), "events"),
            plantuml=must_exist(resolve("inputs", "plantuml"), "plantuml"),
            instance=must_exist(resolve("inputs", "instance"), "instance"),
            aliases=must_exist(resolve("inputs", "aliases"), "aliases"),
            sim_template=must_exist(resolve("inputs", "sim_template"), "sim_template"),
            code_template=must_exist(resolve("inputs", "code_template"), "code_template"),
            backend=chosen_backend,
            granularity=param("granularity", chunking.DEFAULT_GRANULARITY),
            depth=param("depth", chunking.DEFAULT_DEPTH_LIMIT),
            budget=param("budget", chunking.DEFAULT_MAX_TOKENS),
            k=param("k", 5),
            rerank=param("rerank", True),
            queries=queries,
            scenario_name=param("scenario_name", "generated"),
            threshold=param("threshold", vc.DEFAULT_FUZZY_THRESHOLD),
            consensus_n=param("consensus_n", 5),
            min_valid=param("min_valid", 1),
            extra_actions=extra_actions,
        )
        if cfg.backend:
            _make_backend(cfg.backend)  # fail fast on a bad selector
        return cfg


def _make_backend(selector: str) -> GeneratorBackend:
    kind, _, arg = selector.partition(":")
    if kind == "mock":
        mock_dir = Path(arg)
        if not mock_dir.is_dir():
            raise ConfigError(f"mock fixture directory does not exist: {mock_dir}")
        return MockBackend(mock_dir)
    raise ConfigError(f"unknown backend selector {selector!r}")


@dataclass
class StageResult:
    stage: str
    status: str
    artifacts: list[str] = field(default_factory=list)
    diagnostics: str = ""
    error_kind: str = ""  # "" | "check" | "generation"


def exit_code(results: list[StageResult]) -> int:
    if any(r.error_kind == "generation" for r in results):
        return 3
    if any(r.status == FAILED for r in results):
        return 1
    return 0


class _Run:
    """Mutable state threaded through the stage functions of one run."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.backend = _make_backend(config.backend) if config.backend else None
        self.doc = None
        self.graph = None
        self.chunks = None
        self.index = None
        self.top_hits = []
        self.scenario = None
        self.metamodel = None
        self.experiment = None
        self.mappings = None
        self.rules = None
        self.catalog = None

    # one method per stage; each returns the artifact text and may raise ---

    def parse_regulation(self) -> str:
        text = self.config.regulation.read_text(encoding="utf-8")
        self.doc = regdoc.parse_document(text)
        self.graph = regdoc.build_reference_graph(self.doc)
        return regdoc.dump_clauses(self.doc) + "\n\n" + regdoc.dump_references(self.graph) + "\n"

    def chunk(self) -> str:
        base = chunking.base_chunks(self.doc, self.config.granularity)
        budget = chunking.TokenBudget(self.config.budget)
        self.chunks = [
            chunking.expand_chunk(c, self.graph, self.doc, self.config.depth, budget)
            for c in base
        ]
        return chunking.format_chunks(self.chunks)

    def retrieve(self) -> str:
        self.index = retrieval.build_index(self.chunks)
        lookup = {c.id: c for c in self.chunks}
        blocks = []
        for query in self.config.queries:
            results = retrieval.retrieve(self.index, query, self.config.k)
            if self.config.rerank:
                results = retrieval.rerank(results, query, self.graph, lookup)
            if not self.top_hits:
                self.top_hits = results
            blocks.append(f"query: {query}\n" + retrieval.format_results(results))
        return "\n".join(blocks) if blocks else "no queries configured\n"

    def scenario_generation(self) -> str:
        if self.backend is None:
            raise ConfigError("scenario generation requires a backend (e.g. mock:DIR)")
        policy = ConsensusPolicy(self.config.consensus_n, self.config.min_valid)
        lookup = {c.id: c for c in self.chunks}
        context_text = "\n".join(
            lookup[hit.chunk_id].text for hit in self.top_hits[:3]
        )
        sections = []
        for stage in ("scenario_vehicle", "scenario_pre", "scenario_post"):
            prompt = Prompt(stage, self.config.scenario_name, context_text)
            winner, _ = generate_and_select(
                self.backend, prompt, make_validator(stage), policy
            )
            sections.append(winner.canonical or "")
        sources = ""
        if self.top_hits:
            top_chunk = lookup[self.top_hits[0].chunk_id]
            sources = "source " + " ".join(str(c) for c in top_chunk.member_clauses) + "\n"
        text = f"scenario {self.config.scenario_name}\n{sources}" + "".join(sections)
        self.scenario = scn.parse_scenario(text)
        return scn.emit_sim_config(self.scenario)

    def scenario_validation(self) -> str:
        findings = scn.validate_scenario(self.scenario, self.doc)
        if findings:
            raise _CheckFailure(scn.format_findings(findings))
        return scn.format_findings(findings)

    def metamodel_stage(self) -> str:
        if self.config.plantuml is not None:
            self.metamodel = parse_plantuml(
                self.config.plantuml.read_text(encoding="utf-8")
            )
        elif self.backend is not None:
            policy = ConsensusPolicy(self.config.consensus_n, self.config.min_valid)
            prompt = Prompt("metamodel", self.config.scenario_name, "")
            winner, _ = generate_and_select(
                self.backend, prompt, make_validator("metamodel"), policy
            )
            self.metamodel = parse_metamodel(winner.canonical or "")
        else:
            raise ConfigError("no plantuml input and no backend configured")
        return to_canonical(self.metamodel)

    def consistency_check(self) -> str:
        if self.config.instance is not None:
            inst = parse_instance(
                self.config.instance.read_text(encoding="utf-8"), self.metamodel
            )
        elif self.backend is not None:
            policy = ConsensusPolicy(self.config.consensus_n, self.config.min_valid)
            prompt = Prompt("instance", self.config.scenario_name, "")
            winner, _ = generate_and_select(
                self.backend, prompt, make_validator("instance", self.metamodel), policy
            )
            inst = parse_instance(winner.canonical or "", self.metamodel)
        else:
            raise ConfigError("no instance input and no backend configured")
        conformance = check_conformance(inst, self.metamodel)
        constraints = parse_ocl(self.config.constraints.read_text(encoding="utf-8"))
        report = check_all(constraints, inst, self.metamodel)
        text = (
            "== conformance ==\n"
            + conformance.format()
            + "== constraints ==\n"
            + report.format()
        )
        if not conformance.ok or not report.all_pass:
            raise _CheckFailure(text)
        return text

    def sim_script(self) -> str:
        template = (
            self.config.sim_template.read_text(encoding="utf-8")
            if self.config.sim_template is not None
            else DEFAULT_SIM_TEMPLATE
        )
        return scn.emit_sim_script(self.scenario, template)

    def signal_mapping(self) -> str:
        self.catalog = vc.parse_vss_catalog(
            self.config.vss_catalog.read_text(encoding="utf-8")
        )
        aliases = (
            vc.parse_aliases(self.config.aliases.read_text(encoding="utf-8"))
            if self.config.aliases is not None
            else {}
        )
        extras = tuple(
            vc.ActionDescriptor(phrase, role) for role, phrase in self.config.extra_actions
        )
        experiment = vc.build_experiment(self.scenario, extras)
        self.mappings = vc.map_signals(
            experiment, self.catalog, aliases, self.config.threshold
        )
        self.experiment = experiment
        return vc.format_mappings(self.mappings)

    def control_code(self) -> str:
        template = (
            self.config.code_template.read_text(encoding="utf-8")
            if self.config.code_template is not None
            else DEFAULT_CONTROL_TEMPLATE
        )
        self.rules = vc.parse_rules(
            self.config.rules.read_text(encoding="utf-8"), self.catalog
        )
        return vc.emit_control_code(self.experiment, self.mappings, self.rules, template)

    def bridge_simulation(self) -> str:
        events = vc.parse_events(self.config.events.read_text(encoding="utf-8"))
        trace = vc.simulate_bridge(self.rules, events)
        return trace.format()


class _CheckFailure(SdvpipeError):
    """A stage completed but its checks failed; artifact text is the report."""


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def run_pipeline(config: PipelineConfig) -> list[StageResult]:
    """Execute all stages in order; a failed stage skips the rest."""
    workspace = Path(config.workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    for name in ARTIFACTS:
        stale = workspace / name
        if stale.exists():
            stale.unlink()

    run = _Run(config)
    stage_fns = (
        run.parse_regulation,
        run.chunk,
        run.retrieve,
        run.scenario_generation,
        run.scenario_validation,
        run.metamodel_stage,
        run.consistency_check,
        run.sim_script,
        run.signal_mapping,
        run.control_code,
        run.bridge_simulation,
    )

    results: list[StageResult] = []
    failed = False
    for name, artifact, fn in zip(STAGE_NAMES, ARTIFACTS, stage_fns):
        if failed:
            results.append(StageResult(name, SKIPPED))
            continue
        try:
            text = fn()
        except _CheckFailure as exc:
            _write_atomic(workspace / artifact, str(exc))
            results.append(StageResult(name, FAILED, [artifact], str(exc), "check"))
            failed = True
        except GenerationFailed as exc:
            results.append(StageResult(name, FAILED, [], str(exc), "generation"))
            failed = True
        except SdvpipeError as exc:
            results.append(StageResult(name, FAILED, [], str(exc), "check"))
            failed = True
        else:
            _write_atomic(workspace / artifact, text)
            results.append(StageResult(name, OK, [artifact]))
    return results


def format_results(results: list[StageResult]) -> str:
    lines = []
    for r in results:
        line = f"{r.stage}: {r.status}"
        if r.artifacts:
            line += f" ({', '.join(r.artifacts)})"
        if r.diagnostics:
            first = r.diagnostics.strip().split("\n", 1)[0]
            line += f" - {first}"
        lines.append(line)
    lines.append(f"exit code: {exit_code(results)}")
    return "\n".join(lines) + "\n"
