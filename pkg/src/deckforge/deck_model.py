"""Block-structured input deck model: parse, edit, serialize.

The deck dialect is the bracketed block syntax used by MOOSE-based system
codes: ``[Name]`` opens a top-level block, ``[./sub]`` opens a sub-block,
``[../]`` closes a sub-block and ``[]`` closes a top-level block. Parameters
are ``key = value`` lines; ``#`` starts a comment.

All deck values are immutable after construction. Editing operations return
new decks and never touch their inputs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

__all__ = [
    "DeckError",
    "DeckSyntaxError",
    "PathEmptyError",
    "ParamValue",
    "Param",
    "Block",
    "InputDeck",
    "BlockRule",
    "BlockRegistry",
    "default_registry",
    "parse_deck",
    "serialize_deck",
    "get_param",
    "get_block",
    "upsert_param",
    "remove_block",
    "param_value_from",
]

_IDENT_RE = re.compile(r"^[A-Za-z0-9_-]+$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_BAREWORD_SAFE_RE = re.compile(r"^[^\s'\"#\[\]=]+$")
# Tokens float() accepts but decks must not treat as numbers.
_NONFINITE_RE = re.compile(r"^[+-]?(nan|inf|infinity)$", re.IGNORECASE)

VALUE_KINDS = (
    "real",
    "integer",
    "boolean",
    "string",
    "identifier-reference",
    "real-vector",
    "string-vector",
)


class DeckError(Exception):
    """Base class for deck-model errors."""


class DeckSyntaxError(DeckError):
    """Parse failure with the offending source position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class PathEmptyError(DeckError):
    """Raised when a parameter path is empty or has an empty segment."""


def _check_ident(name: str, what: str) -> None:
    if not _IDENT_RE.match(name or ""):
        raise ValueError(f"{what} {name!r} is not a valid identifier "
                         "(letters, digits, underscore, hyphen; nonempty)")


@dataclass(frozen=True, eq=False)
class ParamValue:
    """A typed parameter value.

    ``identifier-reference`` marks a value known to name another deck element
    (a sub-block or function). Deck text renders references and plain strings
    identically, so equality treats the two kinds as interchangeable; the
    reference kind is a semantic refinement used by producers and validators.
    """

    kind: str
    payload: object

    def __post_init__(self):
        if self.kind not in VALUE_KINDS:
            raise ValueError(f"unknown value kind {self.kind!r}")
        p = self.payload
        if self.kind == "real":
            if not isinstance(p, float) or not math.isfinite(p):
                raise ValueError("real payload must be a finite float")
        elif self.kind == "integer":
            if not isinstance(p, int) or isinstance(p, bool):
                raise ValueError("integer payload must be an int")
        elif self.kind == "boolean":
            if not isinstance(p, bool):
                raise ValueError("boolean payload must be a bool")
        elif self.kind == "string":
            if not isinstance(p, str):
                raise ValueError("string payload must be a str")
        elif self.kind == "identifier-reference":
            if not isinstance(p, str):
                raise ValueError("reference payload must be a str")
            _check_ident(p.split("(")[0], "referenced name")
        elif self.kind == "real-vector":
            if not isinstance(p, tuple) or not p:
                raise ValueError("real-vector payload must be a nonempty tuple")
            if not all(isinstance(x, float) and math.isfinite(x) for x in p):
                raise ValueError("real-vector elements must be finite floats")
        elif self.kind == "string-vector":
            if not isinstance(p, tuple) or not p:
                raise ValueError("string-vector payload must be a nonempty tuple")
            for s in p:
                if not isinstance(s, str) or not s or not _BAREWORD_SAFE_RE.match(s):
                    raise ValueError(
                        "string-vector elements must be nonempty tokens without "
                        "whitespace, quotes, brackets, '=' or '#'")

    # -- constructors ------------------------------------------------------

    @classmethod
    def real(cls, x: float) -> "ParamValue":
        return cls("real", float(x))

    @classmethod
    def integer(cls, n: int) -> "ParamValue":
        return cls("integer", int(n))

    @classmethod
    def boolean(cls, b: bool) -> "ParamValue":
        return cls("boolean", bool(b))

    @classmethod
    def string(cls, s: str) -> "ParamValue":
        return cls("string", s)

    @classmethod
    def reference(cls, name: str) -> "ParamValue":
        return cls("identifier-reference", name)

    @classmethod
    def real_vector(cls, xs) -> "ParamValue":
        return cls("real-vector", tuple(float(x) for x in xs))

    @classmethod
    def string_vector(cls, ss) -> "ParamValue":
        return cls("string-vector", tuple(str(s) for s in ss))

    # ----------------------------------------------------------------------

    def _norm_kind(self) -> str:
        return "string" if self.kind == "identifier-reference" else self.kind

    def __eq__(self, other):
        if not isinstance(other, ParamValue):
            return NotImplemented
        return (self._norm_kind(), self.payload) == (other._norm_kind(), other.payload)

    def __hash__(self):
        return hash((self._norm_kind(), self.payload))

    def __repr__(self):
        return f"ParamValue({self.kind}, {self.payload!r})"

    def as_text(self) -> str:
        """Render the value in deck syntax."""
        if self.kind == "real":
            return repr(self.payload)
        if self.kind == "integer":
            return str(self.payload)
        if self.kind == "boolean":
            return "true" if self.payload else "false"
        if self.kind == "identifier-reference":
            return self.payload
        if self.kind == "string":
            s = self.payload
            if s and _BAREWORD_SAFE_RE.match(s) and not _looks_typed(s):
                return s
            return '"' + s + '"'
        if self.kind == "real-vector":
            return "'" + " ".join(repr(x) for x in self.payload) + "'"
        if self.kind == "string-vector":
            return "'" + " ".join(self.payload) + "'"
        raise AssertionError(self.kind)


def _looks_typed(token: str) -> bool:
    """True when a bareword would reparse as a number or boolean."""
    if token in ("true", "false"):
        return True
    if _INT_RE.match(token):
        return True
    if _NONFINITE_RE.match(token):
        return False
    try:
        float(token)
    except ValueError:
        return False
    return True


def param_value_from(obj) -> ParamValue:
    """Coerce a plain Python value into a ParamValue.

    bool -> boolean, int -> integer, float -> real, str -> string, and a
    list/tuple becomes a real-vector when every element is numeric, else a
    string-vector.
    """
    if isinstance(obj, ParamValue):
        return obj
    if isinstance(obj, bool):
        return ParamValue.boolean(obj)
    if isinstance(obj, int):
        return ParamValue.integer(obj)
    if isinstance(obj, float):
        return ParamValue.real(obj)
    if isinstance(obj, str):
        return ParamValue.string(obj)
    if isinstance(obj, (list, tuple)):
        if obj and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in obj):
            return ParamValue.real_vector(obj)
        return ParamValue.string_vector([str(x) for x in obj])
    raise ValueError(f"cannot convert {type(obj).__name__} to a ParamValue")


@dataclass(frozen=True)
class Param:
    key: str
    value: ParamValue
    unit_hint: str | None = None
    comment: str | None = None

    def __post_init__(self):
        _check_ident(self.key, "param key")


@dataclass(frozen=True)
class Block:
    """A named block holding params and child sub-blocks, in order."""

    name: str
    params: tuple[Param, ...] = ()
    children: tuple["Block", ...] = ()
    comment: str | None = None

    def __post_init__(self):
        _check_ident(self.name, "block name")
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "children", tuple(self.children))
        seen = set()
        for c in self.children:
            if c.name in seen:
                raise ValueError(f"duplicate child block {c.name!r} in {self.name!r}")
            seen.add(c.name)
        seen = set()
        for p in self.params:
            if p.key in seen:
                raise ValueError(f"duplicate param {p.key!r} in {self.name!r}")
            seen.add(p.key)

    def child(self, name: str) -> "Block | None":
        for c in self.children:
            if c.name == name:
                return c
        return None

    def param(self, key: str) -> Param | None:
        for p in self.params:
            if p.key == key:
                return p
        return None


@dataclass(frozen=True)
class InputDeck:
    """An ordered tree of blocks plus an optional header comment."""

    blocks: tuple[Block, ...] = ()
    header_comment: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        seen = set()
        for b in self.blocks:
            if b.name in seen:
                raise ValueError(f"duplicate top-level block {b.name!r}")
            seen.add(b.name)

    def block(self, name: str) -> Block | None:
        for b in self.blocks:
            if b.name == name:
                return b
        return None


# ---------------------------------------------------------------------------
# Block registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockRule:
    """Per-block validation rules: required params and expected value kinds."""

    required_params: tuple[str, ...] = ()
    min_children: int = 0
    param_kinds: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def kinds_for(self, key: str) -> tuple[str, ...] | None:
        for k, kinds in self.param_kinds:
            if k == key:
                return kinds
        return None


_NUMERIC = ("real", "integer")


@dataclass(frozen=True)
class BlockRegistry:
    """Single source of truth for required blocks and deck vocabulary.

    ``required_blocks`` is the fixed nine-block structure of a system-code
    input file. The type vocabularies drive boundary-condition and reference
    resolution checks; they are data, not behavior, so downstream projects can
    extend them.
    """

    required_blocks: tuple[str, ...] = (
        "GlobalParams",
        "EOS",
        "Components",
        "MaterialProperties",
        "Functions",
        "Executioner",
        "Preconditioning",
        "Outputs",
        "Postprocessors",
    )
    rules: tuple[tuple[str, BlockRule], ...] = ()
    aliases: tuple[tuple[str, str], ...] = (
        ("global parameters", "GlobalParams"),
        ("globalparams", "GlobalParams"),
        ("equation of state", "EOS"),
        ("eos", "EOS"),
        ("components", "Components"),
        ("material properties", "MaterialProperties"),
        ("materialproperties", "MaterialProperties"),
        ("functions", "Functions"),
        ("executioner", "Executioner"),
        ("preconditioning", "Preconditioning"),
        ("outputs", "Outputs"),
        ("postprocessors", "Postprocessors"),
    )
    # Component `type` vocabularies, grouped by validation role.
    inlet_bc_types: tuple[str, ...] = ("PBTDJ",)
    pressure_bc_types: tuple[str, ...] = ("PBTDV",)
    junction_types: tuple[str, ...] = ("PBBranch", "PBVolumeBranch", "PBSingleJunction")
    # Param keys whose values reference other deck elements.
    reference_keys: tuple[str, ...] = ("eos", "input", "inputs", "output", "outputs")
    # Param keys referencing entries of the Functions block.
    function_key_suffix: str = "_fn"
    function_keys: tuple[str, ...] = ("function",)
    # Plausibility screens: key tokens and unit hints, with accepted ranges.
    temperature_tokens: tuple[str, ...] = ("T", "temp", "temperature")
    temperature_units: tuple[str, ...] = ("K",)
    temperature_range: tuple[float, float] = (200.0, 4000.0)
    pressure_tokens: tuple[str, ...] = ("P", "press", "pressure")
    pressure_units: tuple[str, ...] = ("Pa",)
    pressure_range: tuple[float, float] = (1e3, 1e9)

    def rule_for(self, block: str) -> BlockRule:
        for name, rule in self.rules:
            if name == block:
                return rule
        return BlockRule()

    def canonical_name(self, name: str) -> str | None:
        """Map a block name or prose alias onto a registry block name.

        Registry names match case-sensitively; aliases are case-insensitive
        prose forms ("equation of state" -> EOS).
        """
        if name in self.required_blocks:
            return name
        low = name.strip().lower()
        for alias, canon in self.aliases:
            if low == alias:
                return canon
        return None


def default_registry() -> BlockRegistry:
    """Registry with the nine required blocks and fixture-derived param rules."""
    rules = (
        ("GlobalParams", BlockRule(
            required_params=("global_init_P", "global_init_T"),
            param_kinds=(
                ("global_init_P", _NUMERIC),
                ("global_init_T", _NUMERIC),
                ("global_init_V", _NUMERIC),
                ("expected_T_out", _NUMERIC),
            ),
        )),
        ("EOS", BlockRule(min_children=1)),
        ("Components", BlockRule(min_children=1)),
        ("Executioner", BlockRule(
            required_params=("type",),
            param_kinds=(("type", ("string",)),),
        )),
    )
    return BlockRegistry(rules=rules)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_OPEN_TOP_RE = re.compile(r"^\[([A-Za-z0-9_-]+)\]$")
_OPEN_SUB_RE = re.compile(r"^\[\./([A-Za-z0-9_-]+)\]$")


class _OpenBlock:
    __slots__ = ("name", "params", "children", "comment", "line")

    def __init__(self, name, comment, line):
        self.name = name
        self.params: list[Param] = []
        self.children: list[Block] = []
        self.comment = comment
        self.line = line


def parse_deck(text: str | bytes) -> InputDeck:
    """Parse deck source into an InputDeck.

    Raises DeckSyntaxError (with line and column) on malformed input; never
    raises anything else, whatever the bytes.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DeckSyntaxError(f"not valid UTF-8: {exc.reason}", 1, 1) from None

    header_parts: list[str] = []
    pending_comments: list[str] = []
    pending_blank_after = False
    stack: list[_OpenBlock] = []
    top_blocks: list[Block] = []
    top_names: set[str] = set()

    def flush_pending_to_header():
        if pending_comments:
            header_parts.extend(pending_comments)
            pending_comments.clear()

    def take_pending() -> str | None:
        nonlocal pending_blank_after
        if pending_blank_after:
            # A blank line separated the comment run from this element:
            # the run belongs to the header, not the element.
            flush_pending_to_header()
            pending_blank_after = False
            return None
        if not pending_comments:
            return None
        out = "\n".join(pending_comments)
        pending_comments.clear()
        return out

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        indent = len(raw) - len(raw.lstrip())

        if not line:
            if pending_comments:
                pending_blank_after = True
            continue

        if line.startswith("#"):
            if pending_blank_after:
                flush_pending_to_header()
                pending_blank_after = False
            pending_comments.append(line[1:].strip())
            continue

        body, trailing = _split_trailing_comment(line, lineno, indent)
        body = body.strip()
        if not body:
            if trailing is not None:
                pending_comments.append(trailing)
            continue

        if body.startswith("["):
            comment = take_pending()
            if trailing:
                comment = trailing if comment is None else comment + "\n" + trailing
            _handle_bracket_line(body, comment, lineno, indent, stack,
                                 top_blocks, top_names)
        else:
            comment = take_pending()
            param = _parse_param_line(body, trailing, comment, lineno, indent)
            if not stack:
                raise DeckSyntaxError(
                    f"parameter {param.key!r} outside any block", lineno, indent + 1)
            if any(p.key == param.key for p in stack[-1].params):
                raise DeckSyntaxError(
                    f"duplicate parameter {param.key!r} in block {stack[-1].name!r}",
                    lineno, indent + 1)
            stack[-1].params.append(param)

    if stack:
        open_block = stack[-1]
        raise DeckSyntaxError(
            f"block {open_block.name!r} opened here is never closed",
            open_block.line, 1)

    flush_pending_to_header()
    header = "\n".join(header_parts) if header_parts else None
    return InputDeck(blocks=tuple(top_blocks), header_comment=header)


def _handle_bracket_line(body, comment, lineno, indent, stack, top_blocks, top_names):
    col = indent + 1
    if body == "[]" or body == "[../]":
        if not stack:
            raise DeckSyntaxError("block close with no open block", lineno, col)
        done = stack.pop()
        if comment:
            # Nothing follows a close inside its block; keep the text.
            done.comment = comment if done.comment is None else done.comment + "\n" + comment
        block = Block(name=done.name, params=tuple(done.params),
                      children=tuple(done.children), comment=done.comment)
        if stack:
            if any(c.name == block.name for c in stack[-1].children):
                raise DeckSyntaxError(
                    f"duplicate sibling block {block.name!r} in {stack[-1].name!r}",
                    done.line, 1)
            stack[-1].children.append(block)
        else:
            if block.name in top_names:
                raise DeckSyntaxError(
                    f"duplicate top-level block {block.name!r}", done.line, 1)
            top_names.add(block.name)
            top_blocks.append(block)
        return

    m = _OPEN_SUB_RE.match(body)
    if m:
        if not stack:
            raise DeckSyntaxError("sub-block open at top level", lineno, col)
        stack.append(_OpenBlock(m.group(1), comment, lineno))
        return

    m = _OPEN_TOP_RE.match(body)
    if m:
        # Plain [name] inside a block is accepted as a sub-block open;
        # serialization always writes the [./name] form.
        stack.append(_OpenBlock(m.group(1), comment, lineno))
        return

    raise DeckSyntaxError(f"malformed block marker {body!r}", lineno, col)


def _split_trailing_comment(line: str, lineno: int, indent: int):
    """Split a line into code and trailing comment, honoring quotes."""
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in ("'", '"'):
            quote = ch
        elif ch == "#":
            return line[:i], line[i + 1:].strip()
    if quote:
        raise DeckSyntaxError("unterminated quote", lineno, indent + len(line))
    return line, None


def _parse_param_line(body, trailing, leading_comment, lineno, indent) -> Param:
    col = indent + 1
    if "=" not in body:
        raise DeckSyntaxError(f"expected 'key = value', got {body!r}", lineno, col)
    key, _, rhs = body.partition("=")
    key = key.strip()
    rhs = rhs.strip()
    if not _IDENT_RE.match(key):
        raise DeckSyntaxError(f"invalid parameter key {key!r}", lineno, col)
    if not rhs:
        raise DeckSyntaxError(f"missing value for parameter {key!r}", lineno,
                              indent + len(body))
    value = _parse_value(rhs, lineno, indent + body.index("=") + 2)

    unit_hint = None
    comment_parts = []
    if leading_comment:
        comment_parts.append(leading_comment)
    if trailing:
        comment_parts.append(trailing)
    comment = "\n".join(comment_parts) if comment_parts else None
    if comment:
        unit_hint, comment = _extract_unit_hint(comment)
    return Param(key=key, value=value, unit_hint=unit_hint, comment=comment)


_UNIT_TAG_RE = re.compile(r"^\(([^()\s]+)\)\s*(.*)$", re.DOTALL)


def _extract_unit_hint(comment: str):
    """Pull a leading ``(unit)`` tag off a param comment."""
    m = _UNIT_TAG_RE.match(comment)
    if m:
        return m.group(1), (m.group(2) or None)
    return None, comment


def _parse_value(rhs: str, lineno: int, col: int) -> ParamValue:
    if rhs.startswith("'"):
        if len(rhs) < 2 or not rhs.endswith("'"):
            raise DeckSyntaxError("unterminated quoted value", lineno, col)
        inner = rhs[1:-1]
        if "'" in inner:
            raise DeckSyntaxError("stray quote inside quoted value", lineno, col)
        tokens = inner.split()
        if not tokens:
            return ParamValue.string("")
        if all(_is_numeric_token(t) for t in tokens):
            return ParamValue.real_vector([float(t) for t in tokens])
        if len(tokens) == 1:
            return ParamValue.string(tokens[0])
        for t in tokens:
            if not _BAREWORD_SAFE_RE.match(t):
                raise DeckSyntaxError(f"bad vector element {t!r}", lineno, col)
        return ParamValue.string_vector(tokens)

    if rhs.startswith('"'):
        if len(rhs) < 2 or not rhs.endswith('"') :
            raise DeckSyntaxError("unterminated quoted value", lineno, col)
        inner = rhs[1:-1]
        if '"' in inner:
            raise DeckSyntaxError("stray quote inside quoted value", lineno, col)
        return ParamValue.string(inner)

    tokens = rhs.split()
    if len(tokens) != 1:
        raise DeckSyntaxError(
            "multiple bare tokens in value; quote vectors like 'a b c'",
            lineno, col)
    token = tokens[0]
    if not _BAREWORD_SAFE_RE.match(token):
        raise DeckSyntaxError(f"bad bare value {token!r}", lineno, col)
    if token == "true":
        return ParamValue.boolean(True)
    if token == "false":
        return ParamValue.boolean(False)
    if _INT_RE.match(token):
        try:
            return ParamValue.integer(int(token))
        except ValueError:
            pass
    if _is_numeric_token(token):
        return ParamValue.real(float(token))
    return ParamValue.string(token)


def _is_numeric_token(token: str) -> bool:
    if _NONFINITE_RE.match(token):
        return False
    try:
        return math.isfinite(float(token))
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def serialize_deck(deck: InputDeck) -> str:
    """Render a deck as text: 2-space indent per level, LF endings.

    Deterministic: the same deck always yields the same bytes, and the output
    reparses to a structurally equal deck.
    """
    lines: list[str] = []
    if deck.header_comment is not None:
        for c in deck.header_comment.split("\n"):
            lines.append(f"# {c}".rstrip())
        if deck.blocks:
            lines.append("")
    for i, block in enumerate(deck.blocks):
        if i and lines and lines[-1] != "":
            lines.append("")
        _serialize_block(block, 0, lines)
    return "\n".join(lines) + ("\n" if lines else "")


def _serialize_block(block: Block, depth: int, lines: list[str]) -> None:
    pad = "  " * depth
    if block.comment:
        for c in block.comment.split("\n"):
            lines.append(f"{pad}# {c}".rstrip())
    lines.append(f"{pad}[{block.name}]" if depth == 0 else f"{pad}[./{block.name}]")
    inner = "  " * (depth + 1)
    for p in block.params:
        comment = p.comment
        if p.unit_hint:
            comment = f"({p.unit_hint})" + (f" {comment}" if comment else "")
        if comment:
            for c in comment.split("\n"):
                lines.append(f"{inner}# {c}".rstrip())
        lines.append(f"{inner}{p.key} = {p.value.as_text()}")
    for child in block.children:
        _serialize_block(child, depth + 1, lines)
    lines.append(f"{pad}[]" if depth == 0 else f"{pad}[../]")


# ---------------------------------------------------------------------------
# Path access and editing
# ---------------------------------------------------------------------------

def _split_path(path: str) -> list[str]:
    if not isinstance(path, str) or not path.strip():
        raise PathEmptyError("path is empty")
    parts = [p for p in path.strip().strip("/").split("/")]
    if not parts or any(not p for p in parts):
        raise PathEmptyError(f"path {path!r} has an empty segment")
    return parts


def get_param(deck: InputDeck, path: str) -> ParamValue | None:
    """Look up ``Block/child/.../key``; absence is None, not an error."""
    parts = _split_path(path)
    *block_parts, key = parts
    node = _descend(deck, block_parts)
    if node is None:
        return None
    p = node.param(key)
    return p.value if p else None


def get_block(deck: InputDeck, path: str) -> Block | None:
    parts = _split_path(path)
    return _descend(deck, parts)


def _descend(deck: InputDeck, names: list[str]) -> Block | None:
    if not names:
        return None
    node = deck.block(names[0])
    for name in names[1:]:
        if node is None:
            return None
        node = node.child(name)
    return node


def upsert_param(deck: InputDeck, path: str, value, *,
                 unit_hint: str | None = None,
                 comment: str | None = None) -> InputDeck:
    """Set a param at ``Block/.../key``, creating intermediate blocks.

    Returns a new deck; an existing param is overwritten in place (position
    preserved). ``value`` may be a ParamValue or a plain Python value.
    """
    parts = _split_path(path)
    if len(parts) < 2:
        raise PathEmptyError(f"path {path!r} must name a block and a key")
    *block_parts, key = parts
    pv = param_value_from(value)
    new_param = Param(key=key, value=pv, unit_hint=unit_hint, comment=comment)

    def rebuild(children: tuple[Block, ...], names: list[str]) -> tuple[Block, ...]:
        name = names[0]
        idx = next((i for i, c in enumerate(children) if c.name == name), None)
        existing = children[idx] if idx is not None else Block(name=name)
        if len(names) == 1:
            pidx = next((i for i, p in enumerate(existing.params) if p.key == key), None)
            params = list(existing.params)
            if pidx is None:
                params.append(new_param)
            else:
                params[pidx] = new_param
            updated = Block(name=existing.name, params=tuple(params),
                            children=existing.children, comment=existing.comment)
        else:
            updated = Block(name=existing.name, params=existing.params,
                            children=rebuild(existing.children, names[1:]),
                            comment=existing.comment)
        out = list(children)
        if idx is None:
            out.append(updated)
        else:
            out[idx] = updated
        return tuple(out)

    return InputDeck(blocks=rebuild(deck.blocks, block_parts),
                     header_comment=deck.header_comment)


def remove_block(deck: InputDeck, path: str) -> InputDeck:
    """Drop the block at ``path`` (no-op when absent). Returns a new deck."""
    parts = _split_path(path)

    def rebuild(children: tuple[Block, ...], names: list[str]) -> tuple[Block, ...]:
        name = names[0]
        out = []
        for c in children:
            if c.name != name:
                out.append(c)
            elif len(names) > 1:
                out.append(Block(name=c.name, params=c.params,
                                 children=rebuild(c.children, names[1:]),
                                 comment=c.comment))
        return tuple(out)

    return InputDeck(blocks=rebuild(deck.blocks, parts),
                     header_comment=deck.header_comment)
