"""Command-line entry point: ``dermflow <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import build_guideline_retriever, build_stack, load_config
from .evidence import ONTOLOGY_MODES, TOOL_IDS, Query
from .exceptions import DermflowError
from .harness import TASKS, ablate, run_eval
from .ontology import load_ontology
from .retrieval.cases import CaseIndex


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_ask(args) -> int:
    cfg = load_config(args.config)
    stack = build_stack(cfg)
    response = stack.orchestrator().run(Query(args.image, args.question))
    if args.trace:
        Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
        Path(args.trace).write_bytes(response.trace_bytes())
    print(response.answer)
    if response.citations:
        print("\nSources:")
        for c in response.citations:
            print(f"  {c}")
    print(f"\n[{response.status}; rounds used: {response.rounds_used}]", file=sys.stderr)
    return 0 if response.status == "success" else 3


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    report = run_eval(args.manifest, args.task, cfg, disable=args.disable or (), trace_dir=args.trace_dir,
                      strict=args.strict)
    _print_json(report.to_dict())
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    report = ablate(args.manifest, args.task, cfg, args.tool, strict=args.strict, trace_dir=args.trace_dir)
    _print_json(report.to_dict())
    return 0


def cmd_ingest_cases(args) -> int:
    cfg = load_config(args.config)
    onto = load_ontology(cfg["ontology"]["taxonomy"]) if args.validate_ontology else None
    index = CaseIndex.load(args.inp, ontology=onto)
    out = index.save(args.out)
    _print_json({"out": str(out), "count": len(index), "dimension": index.dimension,
                 "duplicates": index.n_duplicates_})
    return 0


def cmd_ingest_guidelines(args) -> int:
    cfg = load_config(args.config)
    cfg["guideline_retrieval"]["corpus"] = str(Path(args.inp).resolve())
    retriever = build_guideline_retriever(cfg)
    out = retriever.save(args.out)
    _print_json({"out": str(out), "count": len(retriever.chunks_), "dimension": retriever.dimension})
    return 0


def cmd_ontology(args) -> int:
    cfg = load_config(args.config)
    onto = load_ontology(args.taxonomy or cfg["ontology"]["taxonomy"])
    _print_json(onto.query(args.mode, args.name, cfg["ontology"].get("fuzzy_threshold", 0.4)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dermflow", description="Evidence-grounded dermatology tool orchestration.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("ask", help="answer one question about one image")
    p.add_argument("--image", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--config")
    p.add_argument("--trace", help="write the run trace (JSONL) here")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", help="score a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--disable", action="append", choices=TOOL_IDS, metavar="TOOL")
    p.add_argument("--config")
    p.add_argument("--trace-dir")
    p.add_argument("--strict", action="store_true", help="refuse to disable task-required tools")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="leave-one-out comparison for one tool")
    p.add_argument("--manifest", required=True)
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--tool", required=True)
    p.add_argument("--config")
    p.add_argument("--trace-dir")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ingest-cases", help="build a case index directory")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--validate-ontology", action="store_true")
    p.set_defaults(func=cmd_ingest_cases)

    p = sub.add_parser("ingest-guidelines", help="build a guideline index directory")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_ingest_guidelines)

    p = sub.add_parser("ontology", help="query the disease taxonomy")
    p.add_argument("--mode", required=True, choices=ONTOLOGY_MODES)
    p.add_argument("--name", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--config")
    p.set_defaults(func=cmd_ontology)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DermflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
