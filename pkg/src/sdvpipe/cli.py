"""Command-line surface: thin, stateless wrappers over the module operations.

Every subcommand supports ``--format json|text``; diagnostics go to stderr,
results to stdout.  Exit codes: 0 success / all checks pass, 1 check failures,
2 usage or input errors, 3 generation failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import chunking, pipeline, regdoc, retrieval, scenario as scn, vehiclecode as vc
from .consensus import GenerationFailed
from .errors import SdvpipeError
from .instance import check_conformance, parse_instance
from .metamodel import MetaModel, parse_metamodel, parse_plantuml, to_canonical
from .ocl import check_all, parse_ocl
from .pipeline import MOCK_DIR_ENV
from .templates import DEFAULT_CONTROL_TEMPLATE, DEFAULT_SIM_TEMPLATE


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise SdvpipeError(f"file not found: {path}")
    return p.read_text(encoding="utf-8")


def load_metamodel(path: str) -> MetaModel:
    """Accept either PlantUML or the canonical metamodel form."""
    text = _read(path)
    if "@startuml" in text:
        return parse_plantuml(text)
    return parse_metamodel(text)


def _emit(payload: dict, text: str, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        sys.stdout.write(text)


def _build_chunks(args) -> tuple:
    doc = regdoc.parse_document(_read(args.regulation))
    graph = regdoc.build_reference_graph(doc)
    chunks = chunking.base_chunks(doc, args.granularity)
    return doc, graph, chunks


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_reg_parse(args) -> int:
    doc = regdoc.parse_document(_read(args.file))
    graph = regdoc.build_reference_graph(doc)
    payload = {
        "clauses": [
            {"id": str(cid), "text": doc.clauses[cid].text} for cid in doc.iter_tree()
        ],
        "references": [
            {
                "source": str(r.source),
                "target": str(r.target),
                "kind": r.kind,
                "resolved": r.resolved,
            }
            for r in graph.edges()
        ],
    }
    text = regdoc.dump_clauses(doc) + "\n\n" + regdoc.dump_references(graph) + "\n"
    _emit(payload, text, args.format)
    return 0


def _chunk_payload(chunks) -> dict:
    return {
        "chunks": [
            {
                "id": c.id,
                "depth": c.expansion_depth,
                "tokens": c.token_count,
                "members": [str(m) for m in c.member_clauses],
                "text": c.text,
            }
            for c in chunks
        ]
    }


def _cmd_chunk_build(args) -> int:
    _, _, chunks = _build_chunks(args)
    _emit(_chunk_payload(chunks), chunking.format_chunks(chunks), args.format)
    return 0


def _cmd_chunk_expand(args) -> int:
    doc, graph, chunks = _build_chunks(args)
    budget = chunking.TokenBudget(args.budget)
    if args.seed:
        chunks = [c for c in chunks if c.id == args.seed]
        if not chunks:
            raise SdvpipeError(f"no base chunk seeded at {args.seed!r}")
    expanded = [
        chunking.expand_chunk(c, graph, doc, args.depth, budget) for c in chunks
    ]
    _emit(_chunk_payload(expanded), chunking.format_chunks(expanded), args.format)
    return 0


def _cmd_retrieve(args) -> int:
    doc, graph, base = _build_chunks(args)
    budget = chunking.TokenBudget(args.budget)
    chunks = [chunking.expand_chunk(c, graph, doc, args.depth, budget) for c in base]
    index = retrieval.build_index(chunks)
    results = retrieval.retrieve(index, args.query, args.k)
    if args.rerank:
        results = retrieval.rerank(results, args.query, graph, {c.id: c for c in chunks})
    payload = {
        "query": args.query,
        "results": [
            {
                "id": r.chunk_id,
                "bm25": r.bm25,
                "rerank": r.rerank,
                "components": list(r.components) if r.components else None,
            }
            for r in results
        ],
    }
    _emit(payload, retrieval.format_results(results), args.format)
    return 0


def _cmd_mm_from_plantuml(args) -> int:
    canonical = to_canonical(parse_plantuml(_read(args.file)))
    _emit({"metamodel": canonical}, canonical, args.format)
    return 0


def _cmd_mm_validate(args) -> int:
    load_metamodel(args.file)
    _emit({"valid": True}, "valid\n", args.format)
    return 0


def _cmd_inst_validate(args) -> int:
    mm = load_metamodel(args.metamodel)
    inst = parse_instance(_read(args.file), mm)
    report = check_conformance(inst, mm)
    payload = {
        "violations": [
            {
                "object": v.object_id,
                "kind": v.kind,
                "feature": v.feature,
                "message": v.message,
            }
            for v in report.violations
        ]
    }
    _emit(payload, report.format(), args.format)
    return 0 if report.ok else 1


def _cmd_ocl_check(args) -> int:
    mm = load_metamodel(args.metamodel)
    inst = parse_instance(_read(args.instance), mm)
    constraints = parse_ocl(_read(args.constraints))
    report = check_all(constraints, inst, mm)
    payload = {
        "verdicts": [
            {
                "constraint": v.constraint_name,
                "context": v.context_class,
                "object": v.object_id,
                "outcome": v.outcome,
                "diagnostic": v.diagnostic,
            }
            for v in report.verdicts
        ],
        "summary": report.summary,
    }
    _emit(payload, report.format(), args.format)
    return 0 if report.all_pass else 1


def _cmd_scenario_validate(args) -> int:
    s = scn.parse_scenario(_read(args.file))
    doc = regdoc.parse_document(_read(args.regulation)) if args.regulation else None
    findings = scn.validate_scenario(s, doc)
    payload = {"findings": [{"kind": f.kind, "message": f.message} for f in findings]}
    _emit(payload, scn.format_findings(findings), args.format)
    return 0 if not findings else 1


def _cmd_scenario_emit_sim(args) -> int:
    s = scn.parse_scenario(_read(args.file))
    template = _read(args.template) if args.template else DEFAULT_SIM_TEMPLATE
    script = scn.emit_sim_script(s, template)
    _emit({"script": script}, script, args.format)
    return 0


def _cmd_vss_parse(args) -> int:
    catalog = vc.parse_vss_catalog(_read(args.file))
    payload = {
        "entries": [
            {
                "path": e.path,
                "datatype": e.datatype,
                "unit": e.unit,
                "min": e.minimum,
                "max": e.maximum,
            }
            for e in (catalog.entries[p] for p in sorted(catalog.entries))
        ]
    }
    _emit(payload, vc.format_catalog(catalog), args.format)
    return 0


def _parse_extras(raw: list[str]) -> tuple:
    extras = []
    for item in raw:
        role, _, phrase = item.partition(":")
        if role not in (vc.ROLE_ACTUATION, vc.ROLE_TELEMETRY) or not phrase:
            raise SdvpipeError(f"bad --extra value {item!r}, expected role:phrase")
        extras.append(vc.ActionDescriptor(phrase, role))
    return tuple(extras)


def _experiment_from_args(args):
    s = scn.parse_scenario(_read(args.scenario))
    catalog = vc.parse_vss_catalog(_read(args.catalog))
    aliases = vc.parse_aliases(_read(args.aliases)) if args.aliases else {}
    experiment = vc.build_experiment(s, _parse_extras(args.extra or []))
    mappings = vc.map_signals(experiment, catalog, aliases, args.threshold)
    return experiment, catalog, mappings


def _cmd_map_signals(args) -> int:
    _, _, mappings = _experiment_from_args(args)
    payload = {
        "mappings": [
            {"phrase": m.phrase, "path": m.path, "score": m.score, "method": m.method}
            for m in mappings
        ]
    }
    _emit(payload, vc.format_mappings(mappings), args.format)
    return 0


def _cmd_emit_code(args) -> int:
    experiment, catalog, mappings = _experiment_from_args(args)
    rules = vc.parse_rules(_read(args.rules), catalog)
    template = _read(args.template) if args.template else DEFAULT_CONTROL_TEMPLATE
    code = vc.emit_control_code(experiment, mappings, rules, template)
    _emit({"code": code}, code, args.format)
    return 0


def _cmd_bridge_simulate(args) -> int:
    catalog = vc.parse_vss_catalog(_read(args.catalog))
    rules = vc.parse_rules(_read(args.rules), catalog)
    events = vc.parse_events(_read(args.events))
    trace = vc.simulate_bridge(rules, events)
    payload = {
        "trace": [
            {"time": t, "path": path, "value": value} for t, path, value in trace.commands
        ]
    }
    _emit(payload, trace.format(), args.format)
    return 0


def _cmd_pipeline_run(args) -> int:
    config = pipeline.PipelineConfig.from_file(args.config, backend=args.backend)
    results = pipeline.run_pipeline(config)
    payload = {
        "stages": [
            {
                "stage": r.stage,
                "status": r.status,
                "artifacts": r.artifacts,
                "diagnostics": r.diagnostics,
            }
            for r in results
        ],
        "exit_code": pipeline.exit_code(results),
    }
    _emit(payload, pipeline.format_results(results), args.format)
    return pipeline.exit_code(results)


# ---------------------------------------------------------------------------
# parser wiring


def _add_format(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=("text", "json"), default="text")


def _add_corpus_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("regulation", help="regulation text file")
    parser.add_argument("--granularity", type=int, default=chunking.DEFAULT_GRANULARITY)
    parser.add_argument("--depth", type=int, default=chunking.DEFAULT_DEPTH_LIMIT)
    parser.add_argument("--budget", type=int, default=chunking.DEFAULT_MAX_TOKENS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdvpipe",
        description="Regulation-to-vehicle-code pipeline toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("reg", help="regulation document operations")
    reg_sub = reg.add_subparsers(dest="action", required=True)
    p = reg_sub.add_parser("parse", help="parse a regulation into clauses and references")
    p.add_argument("file")
    _add_format(p)
    p.set_defaults(fn=_cmd_reg_parse)

    chunk = sub.add_parser("chunk", help="build and expand retrieval chunks")
    chunk_sub = chunk.add_subparsers(dest="action", required=True)
    p = chunk_sub.add_parser("build", help="partition the clause tree into base chunks")
    p.add_argument("regulation")
    p.add_argument("--granularity", type=int, default=chunking.DEFAULT_GRANULARITY)
    _add_format(p)
    p.set_defaults(fn=_cmd_chunk_build)
    p = chunk_sub.add_parser("expand", help="expand chunks over the reference graph")
    _add_corpus_args(p)
    p.add_argument("--seed", help="expand only the chunk with this id")
    _add_format(p)
    p.set_defaults(fn=_cmd_chunk_expand)

    p = sub.add_parser("retrieve", help="rank chunks for a query")
    _add_corpus_args(p)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--rerank", action="store_true")
    _add_format(p)
    p.set_defaults(fn=_cmd_retrieve)

    mm = sub.add_parser("mm", help="metamodel operations")
    mm_sub = mm.add_subparsers(dest="action", required=True)
    p = mm_sub.add_parser("from-plantuml", help="transform PlantUML to the canonical form")
    p.add_argument("file")
    _add_format(p)
    p.set_defaults(fn=_cmd_mm_from_plantuml)
    p = mm_sub.add_parser("validate", help="parse and validate a metamodel file")
    p.add_argument("file")
    _add_format(p)
    p.set_defaults(fn=_cmd_mm_validate)

    inst = sub.add_parser("inst", help="model instance operations")
    inst_sub = inst.add_subparsers(dest="action", required=True)
    p = inst_sub.add_parser("validate", help="check instance conformance")
    p.add_argument("file")
    p.add_argument("--metamodel", required=True)
    _add_format(p)
    p.set_defaults(fn=_cmd_inst_validate)

    ocl = sub.add_parser("ocl", help="constraint checking")
    ocl_sub = ocl.add_subparsers(dest="action", required=True)
    p = ocl_sub.add_parser("check", help="evaluate constraints against an instance")
    p.add_argument("--metamodel", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--constraints", required=True)
    _add_format(p)
    p.set_defaults(fn=_cmd_ocl_check)

    sc = sub.add_parser("scenario", help="test scenario operations")
    sc_sub = sc.add_subparsers(dest="action", required=True)
    p = sc_sub.add_parser("validate", help="validate a scenario file")
    p.add_argument("file")
    p.add_argument("--regulation", help="check provenance against this regulation")
    _add_format(p)
    p.set_defaults(fn=_cmd_scenario_validate)
    p = sc_sub.add_parser("emit-sim", help="render the simulation script")
    p.add_argument("file")
    p.add_argument("--template", help="script template (default: shipped template)")
    _add_format(p)
    p.set_defaults(fn=_cmd_scenario_emit_sim)

    vss = sub.add_parser("vss", help="signal catalog operations")
    vss_sub = vss.add_subparsers(dest="action", required=True)
    p = vss_sub.add_parser("parse", help="parse and echo a signal catalog")
    p.add_argument("file")
    _add_format(p)
    p.set_defaults(fn=_cmd_vss_parse)

    p = sub.add_parser("map-signals", help="map experiment phrases to catalog signals")
    p.add_argument("--scenario", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--aliases")
    p.add_argument("--threshold", type=float, default=vc.DEFAULT_FUZZY_THRESHOLD)
    p.add_argument("--extra", action="append", metavar="ROLE:PHRASE")
    _add_format(p)
    p.set_defaults(fn=_cmd_map_signals)

    p = sub.add_parser("emit-code", help="render controller code for the rules")
    p.add_argument("--scenario", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--aliases")
    p.add_argument("--template")
    p.add_argument("--threshold", type=float, default=vc.DEFAULT_FUZZY_THRESHOLD)
    p.add_argument("--extra", action="append", metavar="ROLE:PHRASE")
    _add_format(p)
    p.set_defaults(fn=_cmd_emit_code)

    bridge = sub.add_parser("bridge", help="event bridge simulation")
    bridge_sub = bridge.add_subparsers(dest="action", required=True)
    p = bridge_sub.add_parser("simulate", help="replay events against control rules")
    p.add_argument("--rules", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--catalog", required=True)
    _add_format(p)
    p.set_defaults(fn=_cmd_bridge_simulate)

    pl = sub.add_parser("pipeline", help="full workflow runs")
    pl_sub = pl.add_subparsers(dest="action", required=True)
    p = pl_sub.add_parser(
        "run",
        help="run all stages from a config file",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Config file: flat key = value entries under section headers; paths\n"
            "resolve relative to the config file.\n"
            "  [inputs]  regulation, vss_catalog, constraints, rules, events\n"
            "            (required); plantuml, instance, aliases, sim_template,\n"
            "            code_template (optional; missing plantuml/instance are\n"
            "            generated through the backend)\n"
            "  [params]  granularity (1), depth (2), budget (512), k (5),\n"
            "            rerank (true), queries (one per line), scenario_name,\n"
            "            threshold (0.5), consensus_n (5), min_valid (1),\n"
            "            extra_actions (role:phrase, comma separated)\n"
            "  [run]     workspace (required), backend (e.g. mock:DIR)\n"
            f"The {MOCK_DIR_ENV} environment variable overrides the mock fixture\n"
            "directory; --backend overrides both."
        ),
    )
    p.add_argument("--config", required=True)
    p.add_argument("--backend", help="backend selector, e.g. mock:DIR")
    _add_format(p)
    p.set_defaults(fn=_cmd_pipeline_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except GenerationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SdvpipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
