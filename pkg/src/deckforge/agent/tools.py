"""The seven-tool registry behind the agent loop.

Tools: spreadsheet_reader, text_reader, pdf_query, image_query,
input_creator, input_validator, code_exec. Handlers are reentrant; each
takes simple keyword arguments and returns an observation string for the
transcript. The registry never holds more or fewer than the seven names.
"""

from __future__ import annotations

import csv
import json
import pathlib
import statistics
import subprocess
import sys
from dataclasses import dataclass, field

from ..deck_model import (
    BlockRegistry,
    DeckSyntaxError,
    default_registry,
    parse_deck,
    serialize_deck,
    upsert_param,
)
from ..intermediate_spec import Provenance, TraceRecord, compile_spec, load_spec_file
from ..knowledge_store import (
    HashedBagEmbedder,
    SidecarExtractor,
    StoreSet,
    VectorStore,
    answer,
)
from ..topology import load_topology_json
from ..validator import semantic_instructions, validate

__all__ = [
    "TOOL_NAMES",
    "ToolError",
    "TableParseError",
    "ToolDisabled",
    "ToolTimeout",
    "CheckpointNotApproved",
    "CreatorOutputUnparseable",
    "ToolSpec",
    "ToolRegistry",
    "AgentContext",
    "build_registry",
    "read_table",
    "TableSummary",
    "read_text_file",
    "APPROVAL_MARKER",
]

TOOL_NAMES = (
    "spreadsheet_reader",
    "text_reader",
    "pdf_query",
    "image_query",
    "input_creator",
    "input_validator",
    "code_exec",
)

APPROVAL_MARKER = ".spec-approved"


class ToolError(Exception):
    """Tool failure surfaced to the agent as an error observation."""


class TableParseError(ToolError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ToolDisabled(ToolError):
    pass


class ToolTimeout(ToolError):
    pass


class CheckpointNotApproved(ToolError):
    pass


class CreatorOutputUnparseable(ToolError):
    pass


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: dict
    handler: object

    def wire(self) -> dict:
        return {"name": self.name, "description": self.description,
                "parameters": self.parameters}


class ToolRegistry:
    """Exactly the seven tools; duplicates and strangers are rejected."""

    def __init__(self):
        self._tools: dict[str, ToolSpec] = {}

    def register(self, spec: ToolSpec) -> None:
        if spec.name not in TOOL_NAMES:
            raise ValueError(f"unknown tool name {spec.name!r}")
        if spec.name in self._tools:
            raise ValueError(f"tool {spec.name!r} already registered")
        self._tools[spec.name] = spec

    def get(self, name: str) -> ToolSpec:
        if name not in self._tools:
            raise ToolError(f"no such tool: {name!r}")
        return self._tools[name]

    def names(self) -> tuple[str, ...]:
        return tuple(self._tools)

    def wire_specs(self) -> list[dict]:
        return [self._tools[name].wire() for name in TOOL_NAMES
                if name in self._tools]

    def complete(self) -> bool:
        return set(self._tools) == set(TOOL_NAMES)


# ---------------------------------------------------------------------------
# Context shared by tool handlers
# ---------------------------------------------------------------------------

@dataclass
class AgentContext:
    """Working-directory state and policy flags for one agent run."""

    workdir: pathlib.Path
    provider: object = None
    registry: BlockRegistry = field(default_factory=default_registry)
    embedder: object = field(default_factory=HashedBagEmbedder)
    extractor: object = field(default_factory=SidecarExtractor)
    static_store_dir: pathlib.Path | None = None
    auto_approve: bool = False
    code_exec_enabled: bool = False
    code_exec_timeout: float = 10.0
    artifacts: list = field(default_factory=list)

    def __post_init__(self):
        self.workdir = pathlib.Path(self.workdir)

    def record_artifact(self, relpath: str) -> None:
        if relpath not in self.artifacts:
            self.artifacts.append(relpath)

    def has_spec_file(self) -> bool:
        return any(self.workdir.glob("*.spec.yaml"))

    def resolve(self, relpath: str) -> pathlib.Path:
        """Resolve a tool path argument inside the working directory."""
        p = (self.workdir / relpath).resolve()
        if not str(p).startswith(str(self.workdir.resolve())):
            raise ToolError(f"path {relpath!r} escapes the working directory")
        return p

    def _open_store(self, directory) -> VectorStore:
        d = pathlib.Path(directory)
        if d.joinpath("manifest.json").exists():
            return VectorStore.open(d, self.embedder)
        return VectorStore(dimension=self.embedder.dimension,
                           provider_tag=self.embedder.name)

    def text_stores(self) -> StoreSet:
        static = self._open_store(self.static_store_dir) \
            if self.static_store_dir else \
            VectorStore(dimension=self.embedder.dimension,
                        provider_tag=self.embedder.name)
        dynamic = self._open_store(self.workdir / "stores" / "dynamic")
        return StoreSet(static_store=static, dynamic_store=dynamic)

    def image_store(self) -> VectorStore:
        return self._open_store(self.workdir / "stores" / "images")

    def approved(self) -> bool:
        return self.auto_approve or (self.workdir / APPROVAL_MARKER).exists()


# ---------------------------------------------------------------------------
# Content parsing tools
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TableSummary:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    kinds: tuple[str, ...]
    stats: tuple[tuple[str, dict], ...]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    def to_text(self) -> str:
        lines = [f"columns ({self.n_cols}): " + ", ".join(
            f"{c} [{k}]" for c, k in zip(self.columns, self.kinds))]
        lines.append(f"rows: {self.n_rows}")
        if self.stats:
            lines.append("statistics:")
            for col, st in self.stats:
                lines.append(
                    f"  {col}: count={st['count']} min={st['min']:g} "
                    f"max={st['max']:g} mean={st['mean']:g} std={st['std']:g}")
        lines.append("data:")
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(row))
        return "\n".join(lines)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def read_table(path) -> TableSummary:
    """Parse a delimited table with a header row and summarize it.

    Per-numeric-column statistics use the population standard deviation.
    Raises TableParseError (with the line number) on ragged rows.
    """
    path = pathlib.Path(path)
    delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ToolError(f"cannot read {path.name!r}: {exc}") from exc
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise TableParseError("file is empty, expected a header row") from None
    header = [h.strip() for h in header]
    if not any(header):
        raise TableParseError("header row is blank", line=1)

    rows: list[tuple[str, ...]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise TableParseError(
                f"expected {len(header)} fields, found {len(row)}", line=lineno)
        rows.append(tuple(cell.strip() for cell in row))

    kinds = []
    stats = []
    for i, col in enumerate(header):
        values = [row[i] for row in rows if row[i] != ""]
        numeric = values and all(_is_number(v) for v in values)
        kinds.append("numeric" if numeric else "text")
        if numeric:
            floats = [float(v) for v in values]
            stats.append((col, {
                "count": len(floats),
                "min": min(floats),
                "max": max(floats),
                "mean": statistics.fmean(floats),
                "std": statistics.pstdev(floats),
            }))
    return TableSummary(columns=tuple(header), rows=tuple(rows),
                        kinds=tuple(kinds), stats=tuple(stats))


def read_text_file(path) -> tuple[str, dict]:
    path = pathlib.Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ToolError(f"cannot read {path.name!r}: {exc}") from exc
    content = data.decode("utf-8", errors="replace")
    return content, {"bytes": len(data), "lines": len(content.splitlines())}


# ---------------------------------------------------------------------------
# Instruction passing tools
# ---------------------------------------------------------------------------

_CREATOR_PROMPT = """You are generating a complete input deck for a 1-D system
thermal-hydraulics solver from a reviewed model specification.

The deterministic compiler produced this partial deck:

{deck}

These required values could not be sourced from any document
(section / key / reason):
{gaps}

Infer and synthesize all missing blocks, functions, boundary conditions, and
solver parameters using engineering best practice. Keep every compiled value
unchanged. The file must start with a header comment carrying a proper title
and a brief problem description, and internal comments should explain
non-obvious choices. Return only the deck text.
"""

_REPAIR_PROMPT = """The deck you returned failed to parse:

{error}

Return only the corrected deck text, no commentary.
"""


def _creator(ctx: AgentContext, spec: str, output: str = "model.i") -> str:
    spec_path = ctx.resolve(spec)
    if not spec_path.exists():
        raise CheckpointNotApproved(
            f"no model spec at {spec!r}; the spec checkpoint comes first")
    if not ctx.approved():
        raise CheckpointNotApproved(
            "the model spec awaits human approval; rerun with approval granted")

    model = load_spec_file(spec_path, registry=ctx.registry)
    result = compile_spec(model, ctx.registry)
    deck = result.deck
    trace = dict(result.traceability)
    filled: list[str] = []

    if result.residual_gaps:
        gap_lines = "\n".join(f"- {g.section} / {g.key} / {g.reason}"
                              for g in result.residual_gaps)
        prompt = _CREATOR_PROMPT.format(deck=serialize_deck(deck), gaps=gap_lines)
        reply = ctx.provider.complete_text(prompt)
        try:
            provided = parse_deck(reply)
        except DeckSyntaxError as first_error:
            reply = ctx.provider.complete_text(
                _REPAIR_PROMPT.format(error=first_error))
            try:
                provided = parse_deck(reply)
            except DeckSyntaxError as second_error:
                raise CreatorOutputUnparseable(
                    f"creator output failed to parse twice: {second_error}"
                ) from second_error

        compiled_paths = set(trace)
        deck, filled = _adopt_provider_params(deck, provided, compiled_paths, trace)

    if not _has_proper_header(deck):
        deck = _prepend_header(deck, model)

    out_path = ctx.resolve(output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(serialize_deck(deck), encoding="utf-8", newline="")
    trace_doc = {path: {"section": rec.section, "key": rec.key,
                        "assumed": rec.assumed,
                        "provenance": rec.provenance.to_doc()}
                 for path, rec in trace.items()}
    trace_path = out_path.with_name(out_path.name + ".trace.json")
    trace_path.write_text(json.dumps(trace_doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    ctx.record_artifact(out_path.relative_to(ctx.workdir.resolve()).as_posix())
    ctx.record_artifact(trace_path.relative_to(ctx.workdir.resolve()).as_posix())

    lines = [f"deck written to {output}",
             f"traceability map written to {trace_path.name}"]
    if filled:
        lines.append("creator-filled parameters (marked ASSUMED): "
                     + ", ".join(filled))
    else:
        lines.append("no residual gaps; deck is the deterministic compile output")
    return "\n".join(lines)


def _iter_param_paths(deck):
    def walk(block, prefix):
        path = f"{prefix}{block.name}"
        for p in block.params:
            yield f"{path}/{p.key}", p
        for c in block.children:
            yield from walk(c, path + "/")

    for b in deck.blocks:
        yield from walk(b, "")


def _adopt_provider_params(deck, provided, compiled_paths, trace):
    """Merge provider-added params into the compiled deck with ASSUMED marks."""
    filled = []
    for path, param in _iter_param_paths(provided):
        if path in compiled_paths:
            continue
        comment = param.comment or ""
        if not comment.startswith("ASSUMED"):
            comment = "ASSUMED: supplied by the creator tool" + (
                f"; {comment}" if comment else "")
        deck = upsert_param(deck, path, param.value,
                            unit_hint=param.unit_hint, comment=comment)
        trace[path] = TraceRecord(
            section=path.split("/", 1)[0], key=path.split("/", 1)[1],
            provenance=Provenance(kind="agent-assumption", source="input_creator",
                                  locator=None),
            assumed=True)
        filled.append(path)
    return deck, filled


def _has_proper_header(deck) -> bool:
    header = deck.header_comment or ""
    return len([l for l in header.splitlines() if l.strip()]) >= 2


def _prepend_header(deck, model):
    from ..deck_model import InputDeck

    lines = [model.title or "Generated model"]
    description = (model.description or "generated from the reviewed model spec")
    lines += description.strip().splitlines()
    return InputDeck(blocks=deck.blocks, header_comment="\n".join(lines))


def _validator(ctx: AgentContext, deck: str, topology: str | None = None) -> str:
    deck_path = ctx.resolve(deck)
    try:
        parsed = parse_deck(deck_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ToolError(f"cannot read {deck!r}: {exc}") from exc
    except DeckSyntaxError as exc:
        raise ToolError(f"deck does not parse: {exc}") from exc
    graph = None
    if topology:
        graph = load_topology_json(ctx.resolve(topology))
    report = validate(parsed, ctx.registry, graph)
    return report.to_text() + "\n\n" + semantic_instructions(report)


def _code_exec(ctx: AgentContext, script: str, timeout: float | None = None) -> str:
    if not ctx.code_exec_enabled:
        raise ToolDisabled("code_exec is disabled by configuration")
    scratch = ctx.workdir / "scratch"
    scratch.mkdir(parents=True, exist_ok=True)
    limit = timeout if timeout is not None else ctx.code_exec_timeout
    try:
        proc = subprocess.run([sys.executable, "-c", script], cwd=scratch,
                              capture_output=True, text=True, timeout=limit)
    except subprocess.TimeoutExpired:
        raise ToolTimeout(f"script exceeded {limit} s") from None
    return json.dumps({"stdout": proc.stdout, "stderr": proc.stderr,
                       "exit_code": proc.returncode})


# ---------------------------------------------------------------------------
# Registry assembly
# ---------------------------------------------------------------------------

def _obj(props: dict, required: list[str]) -> dict:
    return {"type": "object", "properties": props, "required": required}


def build_registry(ctx: AgentContext) -> ToolRegistry:
    registry = ToolRegistry()

    registry.register(ToolSpec(
        name="spreadsheet_reader",
        description="Read a delimited data table: column names, full rows, and "
                    "descriptive statistics for numeric columns.",
        parameters=_obj({"file": {"type": "string"}}, ["file"]),
        handler=lambda file: read_table(ctx.resolve(file)).to_text()))

    def _text_reader(file: str) -> str:
        content, meta = read_text_file(ctx.resolve(file))
        return f"bytes={meta['bytes']} lines={meta['lines']}\n---\n{content}"

    registry.register(ToolSpec(
        name="text_reader",
        description="Return the full contents of a text file with size metadata.",
        parameters=_obj({"file": {"type": "string"}}, ["file"]),
        handler=_text_reader))

    registry.register(ToolSpec(
        name="pdf_query",
        description="Answer a question from the ingested document stores "
                    "(solver manuals plus task documents) with citations.",
        parameters=_obj({"query": {"type": "string"},
                         "k": {"type": "integer", "default": 4}}, ["query"]),
        handler=lambda query, k=4: answer(ctx.text_stores(), query, int(k),
                                          ctx.provider, ctx.embedder).markdown))

    registry.register(ToolSpec(
        name="image_query",
        description="Answer a question from ingested image descriptions "
                    "(schematics, layouts) with citations.",
        parameters=_obj({"query": {"type": "string"},
                         "k": {"type": "integer", "default": 4}}, ["query"]),
        handler=lambda query, k=4: answer(ctx.image_store(), query, int(k),
                                          ctx.provider, ctx.embedder).markdown))

    registry.register(ToolSpec(
        name="input_creator",
        description="Compile the reviewed model spec into a deck; residual "
                    "gaps are filled through the chat provider and marked "
                    "ASSUMED. Requires the approved spec checkpoint.",
        parameters=_obj({"spec": {"type": "string"},
                         "output": {"type": "string", "default": "model.i"}},
                        ["spec"]),
        handler=lambda spec, output="model.i": _creator(ctx, spec, output)))

    registry.register(ToolSpec(
        name="input_validator",
        description="Run the deterministic completeness, reference, boundary, "
                    "geometry, and plausibility checks on a deck file.",
        parameters=_obj({"deck": {"type": "string"},
                         "topology": {"type": "string"}}, ["deck"]),
        handler=lambda deck, topology=None: _validator(ctx, deck, topology)))

    registry.register(ToolSpec(
        name="code_exec",
        description="Execute a Python script in a scratch directory with a "
                    "wall-clock timeout. Disabled unless configuration "
                    "enables it.",
        parameters=_obj({"script": {"type": "string"},
                         "timeout": {"type": "number"}}, ["script"]),
        handler=lambda script, timeout=None: _code_exec(ctx, script, timeout)))

    assert registry.complete()
    return registry
