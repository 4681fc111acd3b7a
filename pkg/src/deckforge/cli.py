"""Batch command-line surface for the document-to-deck pipeline.

Configuration precedence: command-line flags, then environment variables,
then the ``deckforge.toml`` config file (flat ``key = value`` text). Exit
codes: 0 success / validation pass, 1 tool or input failure, 2 validation
errors present (or an empty store on ``ask``).
"""

from __future__ import annotations

import argparse
import os
import pathlib
import sys

from .agent import IterationLimitError, resume_agent, run_agent
from .deck_model import (
    Block,
    DeckSyntaxError,
    InputDeck,
    default_registry,
    parse_deck,
    serialize_deck,
)
from .intermediate_spec import (
    SchemaError,
    compile_spec,
    dump_spec,
    load_overrides,
    load_spec_file,
    merge_overrides,
)
from .knowledge_store import (
    EmptyStoreError,
    HashedBagEmbedder,
    KnowledgeStoreError,
    StoreSet,
    VectorStore,
    answer,
    ingest_directory,
)
from .metrics import MetricsError, load_manifest, summarize
from .providers import HttpChatProvider, MockChatProvider, ProviderFailure
from .topology import AmbiguousTraversal, TopologyError, check_closure, load_topology_json, to_components
from .validator import semantic_instructions, validate

CONFIG_NAME = "deckforge.toml"
STATIC_DIR_ENV = "DECKFORGE_STATIC_DIR"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_FINDINGS = 2


def load_config(path: pathlib.Path | None) -> dict:
    """Read the flat key = value config file (flat-TOML subset).

    Supported values: quoted strings, booleans, numbers. Unknown keys pass
    through; callers pick what they need. Credentials never live here, only
    the names of environment variables that hold them.
    """
    if path is None:
        candidate = pathlib.Path.cwd() / CONFIG_NAME
        if not candidate.exists():
            return {}
        path = candidate
    config: dict = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if value.startswith(("'", '"')) and value.endswith(value[0]) and len(value) >= 2:
            config[key] = value[1:-1]
        elif value in ("true", "false"):
            config[key] = value == "true"
        else:
            try:
                config[key] = int(value)
            except ValueError:
                try:
                    config[key] = float(value)
                except ValueError:
                    config[key] = value
    return config


def _static_dir(args, config) -> pathlib.Path | None:
    if getattr(args, "static_dir", None):
        return pathlib.Path(args.static_dir)
    if os.environ.get(STATIC_DIR_ENV):
        return pathlib.Path(os.environ[STATIC_DIR_ENV])
    if config.get("static_dir"):
        return pathlib.Path(config["static_dir"])
    return None


def _provider(args, config):
    script = getattr(args, "script", None) or config.get("mock_script")
    kind = config.get("provider", "mock")
    if script:
        skip = getattr(args, "_provider_skip", 0)
        return MockChatProvider.from_script(script, skip=skip)
    if kind == "http":
        endpoint = config.get("provider_endpoint")
        model = config.get("provider_model", "")
        if not endpoint:
            raise ProviderFailure("provider = http requires provider_endpoint")
        return HttpChatProvider(endpoint, model,
                                api_key_env=config.get("provider_key_env"))
    return MockChatProvider()


def _open_stores(workdir: pathlib.Path, static_dir, embedder) -> StoreSet:
    def open_or_empty(d):
        if d and pathlib.Path(d, "manifest.json").exists():
            return VectorStore.open(d, embedder)
        return VectorStore(dimension=embedder.dimension, provider_tag=embedder.name)

    return StoreSet(static_store=open_or_empty(static_dir),
                    dynamic_store=open_or_empty(workdir / "stores" / "dynamic"))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args, config) -> int:
    folder = pathlib.Path(args.directory)
    if not folder.is_dir():
        print(f"error: not a directory: {folder}", file=sys.stderr)
        return EXIT_FAILURE
    workdir = pathlib.Path(args.workdir)
    embedder = HashedBagEmbedder()
    if args.static:
        store_dir = _static_dir(args, config)
        if store_dir is None:
            print("error: no static store directory configured", file=sys.stderr)
            return EXIT_FAILURE
    elif args.images:
        store_dir = workdir / "stores" / "images"
    else:
        store_dir = workdir / "stores" / "dynamic"
    result = ingest_directory(folder, store_dir, embedder)
    for source, message in result.failures:
        print(f"failed: {source}: {message}", file=sys.stderr)
    print(f"{result.added} new chunks "
          f"({len(result.skipped_sources)} sources unchanged)")
    if result.failures and result.added == 0 and not result.skipped_sources:
        return EXIT_FAILURE
    return EXIT_OK


def cmd_ask(args, config) -> int:
    embedder = HashedBagEmbedder()
    stores = _open_stores(pathlib.Path(args.workdir), _static_dir(args, config),
                          embedder)
    provider = _provider(args, config)
    try:
        result = answer(stores, args.query, args.k, provider, embedder)
    except EmptyStoreError as exc:
        print(f"error: EmptyStore: {exc}", file=sys.stderr)
        return EXIT_FINDINGS
    print(result.markdown)
    return EXIT_OK


def cmd_topology_compile(args, config) -> int:
    try:
        graph = load_topology_json(args.graph)
    except (TopologyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    blocks = to_components(graph)
    deck = InputDeck(blocks=(Block(name="Components", children=tuple(blocks)),))
    text = serialize_deck(deck)
    if args.output:
        pathlib.Path(args.output).write_text(text, encoding="utf-8", newline="")
        print(f"wrote {len(blocks)} component definitions to {args.output}")
    else:
        print(text)
    try:
        report = check_closure(graph)
    except AmbiguousTraversal as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(report.summary())
    return EXIT_OK


def cmd_spec_compile(args, config) -> int:
    try:
        spec = load_spec_file(args.spec)
        result = compile_spec(spec, default_registry())
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    out = pathlib.Path(args.output)
    out.write_text(serialize_deck(result.deck), encoding="utf-8", newline="")
    trace_path = out.with_name(out.name + ".trace.json")
    trace_path.write_text(result.traceability_json() + "\n", encoding="utf-8")
    print(f"wrote {out} and {trace_path.name}")
    for gap in result.residual_gaps:
        print(f"gap: {gap.section}/{gap.key}: {gap.reason}", file=sys.stderr)
    return EXIT_OK


def cmd_spec_merge(args, config) -> int:
    try:
        spec = load_spec_file(args.spec)
        overrides = load_overrides(
            pathlib.Path(args.overrides).read_text(encoding="utf-8"))
        merged = merge_overrides(spec, overrides)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    text = dump_spec(merged)
    if args.output:
        pathlib.Path(args.output).write_text(text, encoding="utf-8")
        print(f"wrote {args.output}")
    else:
        print(text, end="")
    for record in merged.merge_audit:
        print(f"overridden: {record.section}/{record.key}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args, config) -> int:
    try:
        deck = parse_deck(pathlib.Path(args.deck).read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"error: cannot read {args.deck}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except DeckSyntaxError as exc:
        print(f"error: deck does not parse: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    topology = None
    if args.topology:
        try:
            topology = load_topology_json(args.topology)
        except (TopologyError, OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAILURE
    threshold = float(config.get("energy_threshold", 0.2))
    report = validate(deck, default_registry(), topology,
                      energy_threshold=threshold)
    if args.json:
        print(report.to_json())
    else:
        print(report.to_text())
        print()
        print(semantic_instructions(report))
    return EXIT_OK if report.passed else EXIT_FINDINGS


def cmd_agent_run(args, config) -> int:
    workdir = pathlib.Path(args.workdir)
    try:
        provider = _provider(args, config)
        transcript = run_agent(
            args.prompt, workdir, provider,
            max_iterations=args.max_iterations,
            auto_approve=args.auto_approve,
            static_store_dir=_static_dir(args, config),
            code_exec_enabled=bool(config.get("code_exec_enabled", False)))
    except (ProviderFailure, IterationLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if transcript.status == "awaiting-approval":
        spec_files = [a for a in transcript.artifacts if a.endswith(".spec.yaml")]
        print("halted at the human checkpoint.")
        print(f"review and edit: {workdir / spec_files[-1]}" if spec_files else "")
        print(f"then continue with: deckforge agent resume {workdir}")
        return EXIT_OK
    print(transcript.final_answer or "")
    print(f"artifacts: {', '.join(transcript.artifacts)}")
    return EXIT_OK


def cmd_agent_resume(args, config) -> int:
    workdir = pathlib.Path(args.workdir)
    try:
        from .agent import load_transcript

        previous = load_transcript(workdir)
        args._provider_skip = previous.rounds
        provider = _provider(args, config)
        transcript = resume_agent(
            workdir, provider, max_iterations=args.max_iterations,
            static_store_dir=_static_dir(args, config),
            code_exec_enabled=bool(config.get("code_exec_enabled", False)))
    except (ProviderFailure, IterationLimitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(transcript.final_answer or "")
    print(f"artifacts: {', '.join(transcript.artifacts)}")
    return EXIT_OK


def cmd_metrics(args, config) -> int:
    directory = pathlib.Path(args.directory)
    if not directory.is_dir():
        print(f"error: not a directory: {directory}", file=sys.stderr)
        return EXIT_FAILURE
    paths = sorted(directory.glob("*.json"))
    if not paths:
        print(f"error: no manifest files in {directory}", file=sys.stderr)
        return EXIT_FAILURE
    try:
        manifests = [load_manifest(p) for p in paths]
        summary = summarize(manifests)
    except MetricsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(summary.to_table())
    if args.json:
        if args.json == "-":
            print(summary.to_json())
        else:
            pathlib.Path(args.json).write_text(summary.to_json() + "\n",
                                               encoding="utf-8")
            print(f"json summary written to {args.json}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deckforge",
        description="Turn engineering documents into validated input decks.")
    parser.add_argument("--config", type=pathlib.Path, default=None,
                        help=f"config file (default: ./{CONFIG_NAME} if present)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build or update a knowledge store")
    p.add_argument("directory")
    p.add_argument("--images", action="store_true",
                   help="ingest into the image-description store")
    p.add_argument("--static", action="store_true",
                   help="ingest into the configured static store")
    p.add_argument("--workdir", default=".")
    p.add_argument("--static-dir", dest="static_dir", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("ask", help="answer a question over the stores")
    p.add_argument("query")
    p.add_argument("-k", type=int, default=4)
    p.add_argument("--workdir", default=".")
    p.add_argument("--static-dir", dest="static_dir", default=None)
    p.add_argument("--script", default=None,
                   help="mock provider decision script")
    p.set_defaults(func=cmd_ask)

    p_topo = sub.add_parser("topology", help="schematic topology operations")
    topo_sub = p_topo.add_subparsers(dest="subcommand", required=True)
    p = topo_sub.add_parser("compile",
                            help="emit component definitions and closure report")
    p.add_argument("graph")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_topology_compile)

    p_spec = sub.add_parser("spec", help="model-spec operations")
    spec_sub = p_spec.add_subparsers(dest="subcommand", required=True)
    p = spec_sub.add_parser("compile", help="compile a spec into a deck")
    p.add_argument("spec")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_spec_compile)
    p = spec_sub.add_parser("merge", help="apply structured overrides")
    p.add_argument("spec")
    p.add_argument("overrides")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_spec_merge)

    p = sub.add_parser("validate", help="run deterministic deck checks")
    p.add_argument("deck")
    p.add_argument("--topology", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)

    p_agent = sub.add_parser("agent", help="run the tool-calling agent")
    agent_sub = p_agent.add_subparsers(dest="subcommand", required=True)
    p = agent_sub.add_parser("run", help="start a run in a working directory")
    p.add_argument("prompt")
    p.add_argument("--workdir", required=True)
    p.add_argument("--auto-approve", action="store_true",
                   help="skip the human spec checkpoint (tests/CI)")
    p.add_argument("--max-iterations", type=int, default=20)
    p.add_argument("--script", default=None,
                   help="mock provider decision script")
    p.add_argument("--static-dir", dest="static_dir", default=None)
    p.set_defaults(func=cmd_agent_run)
    p = agent_sub.add_parser("resume", help="continue after the human checkpoint")
    p.add_argument("workdir")
    p.add_argument("--max-iterations", type=int, default=20)
    p.add_argument("--script", default=None)
    p.add_argument("--static-dir", dest="static_dir", default=None)
    p.set_defaults(func=cmd_agent_resume)

    p = sub.add_parser("metrics", help="coverage summary from manifests")
    p.add_argument("directory")
    p.add_argument("--json", default=None,
                   help="write the JSON summary here ('-' for stdout)")
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    try:
        return args.func(args, config)
    except (KnowledgeStoreError, SchemaError, ProviderFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
