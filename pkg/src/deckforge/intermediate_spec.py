"""The human-auditable model spec: load, merge overrides, compile to a deck.

A model spec is the checkpoint artifact between document extraction and deck
generation. It is a key-tree file (YAML-compatible subset: maps, sequences,
scalars) with one section per deck block, per-entry provenance, and explicit
gap records for values nobody could source. Compilation is deterministic and
never invents values; residual gaps are handed to the agent's creator tool.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, replace

import yaml

from .deck_model import (
    Block,
    BlockRegistry,
    InputDeck,
    Param,
    ParamValue,
    default_registry,
    param_value_from,
)
from .topology import TopologyGraph, load_topology_json, to_components

__all__ = [
    "SchemaError",
    "CompileError",
    "Provenance",
    "SpecEntry",
    "GapRecord",
    "MergeRecord",
    "ModelSpec",
    "CompileResult",
    "TraceRecord",
    "load_spec",
    "load_spec_file",
    "load_overrides",
    "merge_overrides",
    "compile_spec",
    "spec_to_document",
    "dump_spec",
]

PROVENANCE_KINDS = (
    "structured-file",
    "pdf-page",
    "image",
    "agent-assumption",
    "user-override",
)

OVERRIDE_KINDS = ("structured-file", "user-override")


class SchemaError(ValueError):
    """Schema validation failure carrying every violating path."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = tuple(problems)
        lines = [f"{path}: {msg}" for path, msg in problems]
        super().__init__("spec schema violations:\n" + "\n".join(lines))


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class Provenance:
    kind: str
    source: str
    locator: str | int | None = None

    def __post_init__(self):
        if self.kind not in PROVENANCE_KINDS:
            raise ValueError(f"unknown provenance kind {self.kind!r}")

    def to_doc(self) -> dict:
        doc = {"kind": self.kind, "source": self.source}
        if self.locator is not None:
            doc["locator"] = self.locator
        return doc


@dataclass(frozen=True)
class SpecEntry:
    key: str
    value: ParamValue
    provenance: Provenance
    units: str | None = None
    assumed: bool = False
    rationale: str | None = None

    def to_doc(self) -> dict:
        doc: dict = {"key": self.key, "value": _value_to_doc(self.value)}
        if self.units:
            doc["units"] = self.units
        doc["provenance"] = self.provenance.to_doc()
        if self.assumed:
            doc["assumed"] = True
            doc["rationale"] = self.rationale
        return doc


@dataclass(frozen=True)
class GapRecord:
    section: str
    key: str
    reason: str


@dataclass(frozen=True)
class MergeRecord:
    """Audit trail entry: the losing value an override displaced."""

    section: str
    key: str
    replaced: SpecEntry


@dataclass(frozen=True)
class ModelSpec:
    title: str
    description: str = ""
    sections: tuple[tuple[str, tuple[SpecEntry, ...]], ...] = ()
    topology: TopologyGraph | None = None
    topology_source: str | None = None
    gaps: tuple[GapRecord, ...] = ()
    merge_audit: tuple[MergeRecord, ...] = ()

    def section(self, name: str) -> tuple[SpecEntry, ...]:
        for sec, entries in self.sections:
            if sec == name:
                return entries
        return ()

    def section_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.sections)


def _value_to_doc(value: ParamValue):
    if value.kind in ("real-vector", "string-vector"):
        return list(value.payload)
    return value.payload


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_spec(text: str, *, base_dir: str | pathlib.Path = ".",
              registry: BlockRegistry | None = None) -> ModelSpec:
    """Parse and validate a model-spec document.

    Collects every schema violation before failing, so one SchemaError lists
    all offending paths. ``base_dir`` anchors a relative topology file
    reference.
    """
    registry = registry or default_registry()
    problems: list[tuple[str, str]] = []
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError([("$", f"not parseable: {exc}")]) from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise SchemaError([("$", "document must be a mapping")])

    known_top = {"title", "description", "sections", "topology", "gaps"}
    for key in doc:
        if key not in known_top:
            problems.append((str(key), "unknown top-level key"))

    title = doc.get("title")
    if not isinstance(title, str) or not title.strip():
        problems.append(("title", "required nonempty string"))
        title = ""
    description = doc.get("description", "")
    if not isinstance(description, str):
        problems.append(("description", "must be a string"))
        description = ""

    sections: list[tuple[str, tuple[SpecEntry, ...]]] = []
    raw_sections = doc.get("sections", {})
    if not isinstance(raw_sections, dict):
        problems.append(("sections", "must be a mapping of section name to entry list"))
        raw_sections = {}
    for raw_name, raw_entries in raw_sections.items():
        path = f"sections.{raw_name}"
        canon = registry.canonical_name(str(raw_name))
        if canon is None:
            problems.append((path, f"unknown section name {raw_name!r}"))
            continue
        if raw_entries is None:
            raw_entries = []
        if not isinstance(raw_entries, list):
            problems.append((path, "must be a list of entries"))
            continue
        entries = []
        seen_keys = set()
        for i, raw in enumerate(raw_entries):
            entry = _load_entry(raw, f"{path}[{i}]", problems)
            if entry is None:
                continue
            if entry.key in seen_keys:
                problems.append((f"{path}[{i}].key",
                                 f"duplicate key {entry.key!r} in section"))
                continue
            seen_keys.add(entry.key)
            entries.append(entry)
        sections.append((canon, tuple(entries)))

    gaps: list[GapRecord] = []
    raw_gaps = doc.get("gaps", [])
    if not isinstance(raw_gaps, list):
        problems.append(("gaps", "must be a list"))
        raw_gaps = []
    for i, raw in enumerate(raw_gaps):
        path = f"gaps[{i}]"
        if not isinstance(raw, dict):
            problems.append((path, "must be a mapping"))
            continue
        section = raw.get("section")
        key = raw.get("key")
        reason = raw.get("reason", "")
        canon = registry.canonical_name(str(section)) if section else None
        if canon is None and section != "topology":
            problems.append((f"{path}.section", f"unknown section {section!r}"))
            continue
        gaps.append(GapRecord(section=canon or "topology", key=str(key),
                              reason=str(reason)))

    for gap in gaps:
        if any(e.key == gap.key for e in dict(sections).get(gap.section, ())):
            problems.append((f"gaps.{gap.section}.{gap.key}",
                             "key appears both as an entry and a gap"))

    topology = None
    topology_source = None
    raw_topology = doc.get("topology")
    if raw_topology is not None:
        try:
            topology, topology_source = _load_topology_ref(raw_topology, base_dir)
        except Exception as exc:
            problems.append(("topology", str(exc)))

    if problems:
        raise SchemaError(problems)
    return ModelSpec(title=title.strip(), description=description,
                     sections=tuple(sections), topology=topology,
                     topology_source=topology_source, gaps=tuple(gaps))


def _load_topology_ref(raw, base_dir):
    if isinstance(raw, str):
        path = pathlib.Path(base_dir) / raw
        return load_topology_json(path), str(raw)
    if isinstance(raw, dict) and "file" in raw:
        rel = str(raw["file"])
        path = pathlib.Path(base_dir) / rel
        return load_topology_json(path), rel
    if isinstance(raw, dict):
        return load_topology_json(json.dumps(raw), source="inline"), "inline"
    raise ValueError("topology must be a file path or an inline graph mapping")


_ENTRY_KEYS = {"key", "value", "units", "provenance", "assumed", "rationale"}


def _load_entry(raw, path, problems) -> SpecEntry | None:
    if not isinstance(raw, dict):
        problems.append((path, "entry must be a mapping"))
        return None
    bad = False
    for k in raw:
        if k not in _ENTRY_KEYS:
            problems.append((f"{path}.{k}", "unknown entry field"))
            bad = True

    key = raw.get("key")
    if not isinstance(key, str) or not key.strip():
        problems.append((f"{path}.key", "required nonempty string"))
        bad = True
    elif not all(seg for seg in key.split("/")):
        problems.append((f"{path}.key", f"malformed key path {key!r}"))
        bad = True

    value = None
    if "value" not in raw:
        problems.append((f"{path}.value", "required"))
        bad = True
    else:
        try:
            value = param_value_from(raw["value"])
        except ValueError as exc:
            problems.append((f"{path}.value", str(exc)))
            bad = True

    units = raw.get("units")
    if units is not None and not isinstance(units, str):
        problems.append((f"{path}.units", "must be a string"))
        bad = True

    provenance = _load_provenance(raw.get("provenance"), f"{path}.provenance", problems)
    if provenance is None:
        bad = True

    assumed = raw.get("assumed", False)
    if not isinstance(assumed, bool):
        problems.append((f"{path}.assumed", "must be a boolean"))
        bad = True
        assumed = False
    rationale = raw.get("rationale")
    if rationale is not None and not isinstance(rationale, str):
        problems.append((f"{path}.rationale", "must be a string"))
        bad = True
        rationale = None
    if assumed:
        if provenance is not None and provenance.kind != "agent-assumption":
            problems.append((f"{path}.provenance.kind",
                             "assumed entries require kind agent-assumption"))
            bad = True
        if not rationale or not rationale.strip():
            problems.append((f"{path}.rationale",
                             "assumed entries require a rationale"))
            bad = True

    if bad:
        return None
    return SpecEntry(key=key.strip(), value=value, units=units,
                     provenance=provenance, assumed=assumed, rationale=rationale)


def _load_provenance(raw, path, problems) -> Provenance | None:
    if raw is None:
        problems.append((path, "required"))
        return None
    if not isinstance(raw, dict):
        problems.append((path, "must be a mapping"))
        return None
    kind = raw.get("kind")
    source = raw.get("source")
    locator = raw.get("locator")
    ok = True
    if kind not in PROVENANCE_KINDS:
        problems.append((f"{path}.kind",
                         f"must be one of {', '.join(PROVENANCE_KINDS)}"))
        ok = False
    if not isinstance(source, str) or not source.strip():
        problems.append((f"{path}.source", "required nonempty string"))
        ok = False
    if kind == "pdf-page":
        page = locator
        if isinstance(page, str) and page.isdigit():
            page = int(page)
        if not isinstance(page, int) or isinstance(page, bool) or page < 1:
            problems.append((f"{path}.locator",
                             "pdf-page provenance requires a page number >= 1"))
            ok = False
        else:
            locator = page
    if not ok:
        return None
    return Provenance(kind=kind, source=source, locator=locator)


def load_spec_file(path, registry: BlockRegistry | None = None) -> ModelSpec:
    p = pathlib.Path(path)
    return load_spec(p.read_text(encoding="utf-8"), base_dir=p.parent,
                     registry=registry)


def load_overrides(text: str, *, registry: BlockRegistry | None = None
                   ) -> list[tuple[str, SpecEntry]]:
    """Flatten an overrides document into (section, entry) pairs.

    Same sections layout as a spec file, but entries must carry
    structured-file or user-override provenance (they are the corrective
    channel, not new extraction).
    """
    registry = registry or default_registry()
    problems: list[tuple[str, str]] = []
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise SchemaError([("$", f"not parseable: {exc}")]) from None
    if not isinstance(doc, dict):
        raise SchemaError([("$", "document must be a mapping")])
    raw_sections = doc.get("sections", doc)
    if not isinstance(raw_sections, dict):
        raise SchemaError([("sections", "must be a mapping")])

    out: list[tuple[str, SpecEntry]] = []
    for raw_name, raw_entries in raw_sections.items():
        if raw_name in ("title", "description"):
            continue
        path = f"sections.{raw_name}"
        canon = registry.canonical_name(str(raw_name))
        if canon is None:
            problems.append((path, f"unknown section name {raw_name!r}"))
            continue
        for i, raw in enumerate(raw_entries or []):
            entry = _load_entry(raw, f"{path}[{i}]", problems)
            if entry is None:
                continue
            if entry.provenance.kind not in OVERRIDE_KINDS:
                problems.append(
                    (f"{path}[{i}].provenance.kind",
                     "overrides must be structured-file or user-override"))
                continue
            out.append((canon, entry))
    if problems:
        raise SchemaError(problems)
    return out


# ---------------------------------------------------------------------------
# Merge
# ---------------------------------------------------------------------------

def merge_overrides(spec: ModelSpec,
                    overrides: list[tuple[str, SpecEntry]]) -> ModelSpec:
    """Apply user-provided overrides; the override wins on key collision.

    The displaced entry lands in the merge audit; an override that matches
    the existing entry exactly is a no-op, which makes the merge idempotent.
    Overrides that fill a gap remove the gap record.
    """
    sections = {name: list(entries) for name, entries in spec.sections}
    gaps = list(spec.gaps)
    audit = list(spec.merge_audit)

    for section, entry in overrides:
        if entry.provenance.kind not in OVERRIDE_KINDS:
            raise SchemaError([(f"{section}.{entry.key}.provenance.kind",
                                "overrides must be structured-file or user-override")])
        entries = sections.setdefault(section, [])
        idx = next((i for i, e in enumerate(entries) if e.key == entry.key), None)
        if idx is not None:
            if entries[idx] == entry:
                continue
            audit.append(MergeRecord(section=section, key=entry.key,
                                     replaced=entries[idx]))
            entries[idx] = entry
        else:
            entries.append(entry)
        gaps = [g for g in gaps
                if not (g.section == section and g.key == entry.key)]

    ordered = [(name, tuple(sections[name]))
               for name, _ in spec.sections]
    for name in sections:
        if name not in dict(spec.sections):
            ordered.append((name, tuple(sections[name])))
    return replace(spec, sections=tuple(ordered), gaps=tuple(gaps),
                   merge_audit=tuple(audit))


# ---------------------------------------------------------------------------
# Compile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    section: str
    key: str
    provenance: Provenance
    assumed: bool = False


@dataclass(frozen=True)
class CompileResult:
    deck: InputDeck
    residual_gaps: tuple[GapRecord, ...]
    traceability: tuple[tuple[str, TraceRecord], ...]

    def trace_map(self) -> dict[str, TraceRecord]:
        return dict(self.traceability)

    def traceability_json(self) -> str:
        doc = {}
        for path, rec in self.traceability:
            doc[path] = {"section": rec.section, "key": rec.key,
                         "assumed": rec.assumed,
                         "provenance": rec.provenance.to_doc()}
        return json.dumps(doc, indent=2, sort_keys=True)


def compile_spec(spec: ModelSpec,
                 registry: BlockRegistry | None = None) -> CompileResult:
    """Deterministically map a spec onto a deck.

    Every registry block is emitted (empty placeholder when unpopulated);
    the topology reference expands into component sub-blocks first, then
    section entries apply on top. Gaps are never defaulted; they come back
    as residual gaps for the creator tool. Raises CompileError when an entry
    value kind does not fit its declared deck slot.
    """
    registry = registry or default_registry()
    blocks: dict[str, Block] = {name: Block(name=name)
                                for name in registry.required_blocks}
    trace: list[tuple[str, TraceRecord]] = []
    trace_index: dict[str, int] = {}

    def record(path: str, rec: TraceRecord):
        if path in trace_index:
            trace[trace_index[path]] = (path, rec)
        else:
            trace_index[path] = len(trace)
            trace.append((path, rec))

    if spec.topology is not None:
        children = to_components(spec.topology)
        blocks["Components"] = Block(name="Components", children=tuple(children))
        source = spec.topology_source or "topology"
        for child in children:
            for p in child.params:
                record(f"Components/{child.name}/{p.key}",
                       TraceRecord(section="topology", key=f"{child.name}/{p.key}",
                                   provenance=Provenance(kind="structured-file",
                                                         source=source,
                                                         locator=child.name)))

    for name in registry.required_blocks:
        rule = registry.rule_for(name)
        for entry in spec.section(name):
            segments = entry.key.split("/")
            expected = rule.kinds_for(entry.key) if len(segments) == 1 else None
            if expected and entry.value._norm_kind() not in expected:
                raise CompileError(
                    f"{name}/{entry.key}: value kind {entry.value.kind!r} "
                    f"does not fit this slot (expected {', '.join(expected)})")
            comment = None
            if entry.assumed:
                comment = f"ASSUMED: {entry.rationale}"
            blocks[name] = _set_param(blocks[name], segments, entry, comment)
            record(f"{name}/{entry.key}",
                   TraceRecord(section=name, key=entry.key,
                               provenance=entry.provenance, assumed=entry.assumed))

    residual: list[GapRecord] = list(spec.gaps)
    flagged = {(g.section, g.key) for g in residual}
    for name in registry.required_blocks:
        block = blocks[name]
        if not block.params and not block.children:
            if (name, "*") not in flagged:
                residual.append(GapRecord(section=name, key="*",
                                          reason="section has no entries"))

    deck = InputDeck(blocks=tuple(blocks[name] for name in registry.required_blocks),
                     header_comment=_header_for(spec))
    return CompileResult(deck=deck, residual_gaps=tuple(residual),
                         traceability=tuple(trace))


def _header_for(spec: ModelSpec) -> str:
    lines = [spec.title]
    if spec.description:
        lines += spec.description.strip().splitlines()
    return "\n".join(lines)


def _set_param(block: Block, segments: list[str], entry: SpecEntry,
               comment: str | None) -> Block:
    if len(segments) == 1:
        key = segments[0]
        param = Param(key=key, value=entry.value, unit_hint=entry.units,
                      comment=comment)
        params = list(block.params)
        idx = next((i for i, p in enumerate(params) if p.key == key), None)
        if idx is None:
            params.append(param)
        else:
            params[idx] = param
        return Block(name=block.name, params=tuple(params),
                     children=block.children, comment=block.comment)
    child_name, rest = segments[0], segments[1:]
    children = list(block.children)
    idx = next((i for i, c in enumerate(children) if c.name == child_name), None)
    child = children[idx] if idx is not None else Block(name=child_name)
    updated = _set_param(child, rest, entry, comment)
    if idx is None:
        children.append(updated)
    else:
        children[idx] = updated
    return Block(name=block.name, params=block.params,
                 children=tuple(children), comment=block.comment)


# ---------------------------------------------------------------------------
# Dumping (merged specs back to the key-tree format)
# ---------------------------------------------------------------------------

def spec_to_document(spec: ModelSpec) -> dict:
    doc: dict = {"title": spec.title}
    if spec.description:
        doc["description"] = spec.description
    doc["sections"] = {name: [e.to_doc() for e in entries]
                       for name, entries in spec.sections}
    if spec.topology_source and spec.topology_source != "inline":
        doc["topology"] = spec.topology_source
    if spec.gaps:
        doc["gaps"] = [{"section": g.section, "key": g.key, "reason": g.reason}
                       for g in spec.gaps]
    return doc


def dump_spec(spec: ModelSpec) -> str:
    return yaml.safe_dump(spec_to_document(spec), sort_keys=False,
                          default_flow_style=False, allow_unicode=True)
