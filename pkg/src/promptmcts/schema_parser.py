"""Parse task-model output in the constructor-list format.

The target grammar is a Python-looking list of constructor calls::

    result = [Die(mention="killed", agent=["He"], victim=["soldier"], place=["Iraq"])]

Models drift from it in predictable ways, so the parser is tolerant: prose
around the list is ignored, keys may be quoted (``"victim" = [...]``), both
quote styles are accepted and a scalar role value is promoted to a one-item
list. Anything that cannot be used is dropped with exactly one diagnostic.
"""
from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .prompt_space import EventSchema

PARSING_ERROR = "parsing error"

_ASSIGN_RE = re.compile(r"\bresult\s*=\s*\[")
_OPENERS = {"[": "]", "(": ")", "{": "}"}
_CLOSERS = {v: k for k, v in _OPENERS.items()}


class SerializationError(ValueError):
    pass


@dataclass
class EventInstance:
    event_type: str
    mention: str
    arguments: dict[str, list[str]] = field(default_factory=dict)

    def spans(self) -> list[tuple[str, str]]:
        return [(role, span) for role, values in self.arguments.items() for span in values]

    def to_dict(self) -> dict:
        return {
            "type": self.event_type,
            "trigger": self.mention,
            "args": [{"role": r, "spans": list(v)} for r, v in self.arguments.items()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EventInstance":
        args: dict[str, list[str]] = {}
        for a in doc.get("args", []):
            args.setdefault(a["role"], []).extend(a.get("spans", []))
        return cls(doc["type"], doc["trigger"], args)


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    message: str
    location: int

    def to_dict(self) -> dict:
        return {"severity": self.severity, "message": self.message, "location": self.location}


@dataclass
class ParseOutcome:
    instances: list = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    fatal: bool = False

    @property
    def category(self) -> str | None:
        return PARSING_ERROR if self.fatal else None


def validate_instance(inst: EventInstance, schema: EventSchema) -> list[str]:
    problems = []
    if inst.event_type not in schema:
        problems.append(f"unknown event type {inst.event_type!r}")
        return problems
    if not isinstance(inst.mention, str) or not inst.mention.strip():
        problems.append(f"{inst.event_type}: empty mention")
    allowed = set(schema.roles(inst.event_type))
    for role, values in inst.arguments.items():
        if role not in allowed:
            problems.append(f"{inst.event_type}: undeclared role {role!r}")
        elif not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            problems.append(f"{inst.event_type}.{role}: value must be a list of strings")
    return problems


# -- scanning ---------------------------------------------------------------

def _skip_string(text: str, i: int) -> int:
    """Return the index just past the string literal opening at ``text[i]``."""
    quote = text[i]
    j = i + 1
    n = len(text)
    while j < n:
        c = text[j]
        if c == "\\":
            j += 2
            continue
        if c == quote:
            return j + 1
        if c == "\n":
            return -1
        j += 1
    return -1


def _match_bracket(text: str, start: int) -> int:
    """Index of the bracket closing ``text[start]``, or -1. Quote-aware."""
    stack = [text[start]]
    i = start + 1
    n = len(text)
    while i < n:
        c = text[i]
        if c in "\"'":
            i = _skip_string(text, i)
            if i < 0:
                return -1
            continue
        if c in _OPENERS:
            stack.append(c)
        elif c in _CLOSERS:
            if stack[-1] != _CLOSERS[c]:
                return -1
            stack.pop()
            if not stack:
                return i
        i += 1
    return -1


def _split_top_level(text: str, offset: int) -> list[tuple[str, int]] | None:
    """Split on commas at nesting depth 0. Returns (piece, absolute offset) pairs."""
    pieces: list[tuple[str, int]] = []
    depth = 0
    start = 0
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c in "\"'":
            j = _skip_string(text, i)
            if j < 0:
                return None
            i = j
            continue
        if c in _OPENERS:
            depth += 1
        elif c in _CLOSERS:
            depth -= 1
        elif c == "," and depth == 0:
            pieces.append((text[start:i], offset + start))
            start = i + 1
        i += 1
    pieces.append((text[start:], offset + start))
    out = []
    for piece, pos in pieces:
        lead = len(piece) - len(piece.lstrip())
        if piece.strip():
            out.append((piece.strip(), pos + lead))
    return out


def find_result_list(text: str) -> tuple[int, int] | None:
    """Locate ``result = [ ... ]`` (or a bare list of calls); returns (open, close) indexes."""
    for m in _ASSIGN_RE.finditer(text):
        open_idx = m.end() - 1
        close = _match_bracket(text, open_idx)
        if close >= 0:
            return open_idx, close
    for i, c in enumerate(text):
        if c != "[":
            continue
        close = _match_bracket(text, i)
        if close < 0:
            continue
        inner = text[i + 1:close].strip()
        if not inner or re.match(r"[A-Za-z_]\w*\s*\(", inner):
            return i, close
    return None


# -- parsing ----------------------------------------------------------------

_CALL_RE = re.compile(r"^([A-Za-z_]\w*)\s*\((.*)\)$", re.S)
_KEY_RE = re.compile(r"""^(?:([A-Za-z_]\w*)|"([^"\\]*)"|'([^'\\]*)')\s*(?:=|:)\s*(.*)$""", re.S)


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
        return _NO_VALUE


_NO_VALUE = object()


def _parse_value(raw: str) -> list[str] | None:
    value = _literal(raw)
    if isinstance(value, str):
        return [value]
    if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
        return list(value)
    return None


def _parse_call(piece: str, pos: int, schema: EventSchema,
                diags: list[Diagnostic]) -> EventInstance | None:
    m = _CALL_RE.match(piece)
    if not m:
        diags.append(Diagnostic("error", f"not a constructor call: {piece[:60]!r}", pos))
        return None
    name = m.group(1)
    if name not in schema:
        diags.append(Diagnostic("warning", f"unknown event type {name!r}", pos))
        return None
    args_offset = pos + m.start(2)
    args = _split_top_level(m.group(2), args_offset)
    if args is None:
        diags.append(Diagnostic("error", f"{name}: unterminated string in arguments", pos))
        return None
    allowed = schema.roles(name)
    mention: str | None = None
    arguments: dict[str, list[str]] = {}
    local: list[Diagnostic] = []
    for arg, apos in args:
        km = _KEY_RE.match(arg)
        if not km:
            local.append(Diagnostic("warning", f"{name}: malformed argument {arg[:40]!r}", apos))
            continue
        key = km.group(1) or km.group(2) or km.group(3) or ""
        values = _parse_value(km.group(4).strip())
        if key == "mention":
            if mention is not None:
                local.append(Diagnostic("warning", f"{name}: repeated mention", apos))
            elif values is None or len(values) != 1 or not values[0].strip():
                local.append(Diagnostic("warning", f"{name}: mention is not a single non-empty span", apos))
            else:
                mention = values[0]
            continue
        if key not in allowed:
            local.append(Diagnostic("warning", f"{name}: undeclared role {key!r}", apos))
        elif key in arguments:
            local.append(Diagnostic("warning", f"{name}: repeated role {key!r}", apos))
        elif values is None:
            local.append(Diagnostic("warning", f"{name}.{key}: value is not a span or list of spans", apos))
        else:
            arguments[key] = values
    if mention is None:
        # the whole instance is dropped; its argument-level problems go with it
        diags.append(Diagnostic("warning", f"{name}: missing mention", pos))
        return None
    diags.extend(local)
    return EventInstance(name, mention, arguments)


def parse_output(text: str, schema: EventSchema) -> ParseOutcome:
    """Parse model text into schema-valid :class:`EventInstance` objects."""
    located = find_result_list(text)
    if located is None:
        return ParseOutcome(fatal=True, diagnostics=[
            Diagnostic("error", f"{PARSING_ERROR}: no well-formed result list found", 0)])
    open_idx, close = located
    pieces = _split_top_level(text[open_idx + 1:close], open_idx + 1)
    if pieces is None:
        return ParseOutcome(fatal=True, diagnostics=[
            Diagnostic("error", f"{PARSING_ERROR}: unterminated string inside list", open_idx)])
    diags: list[Diagnostic] = []
    instances = []
    for piece, pos in pieces:
        inst = _parse_call(piece, pos, schema, diags)
        if inst is not None:
            instances.append(inst)
    return ParseOutcome(instances=instances, diagnostics=diags)


def _quote(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def serialize_instances(instances: Iterable[EventInstance], schema: EventSchema | None = None) -> str:
    """Canonical one-line form; ``parse_output`` of the result reproduces the input."""
    parts = []
    for inst in instances:
        if schema is not None:
            problems = validate_instance(inst, schema)
            if problems:
                raise SerializationError(problems[0])
            order = [r for r in schema.roles(inst.event_type) if r in inst.arguments]
        else:
            order = list(inst.arguments)
        if not inst.mention:
            raise SerializationError(f"{inst.event_type}: empty mention")
        args = [f"mention={_quote(inst.mention)}"]
        for role in order:
            spans = ", ".join(_quote(s) for s in inst.arguments[role])
            args.append(f"{role}=[{spans}]")
        parts.append(f"{inst.event_type}({', '.join(args)})")
    return f"result = [{', '.join(parts)}]"


# -- batch responses --------------------------------------------------------

@dataclass
class BatchSplit:
    segments: dict[str, str]
    diagnostics: list[Diagnostic]
    flagged: bool = False


def _label_pattern(label: str) -> re.Pattern:
    return re.compile(
        r"(?:^|(?<=[\]\)]))[ \t]*(?:[#*>\-]+[ \t]*)?[\"'`*]*" + re.escape(label)
        + r"(?![0-9A-Za-z_])[\"'`*]*[ \t]*[:.)\-]?",
        re.IGNORECASE | re.MULTILINE,
    )


def split_batch_answers(text: str, labels: Sequence[str]) -> BatchSplit:
    """Cut a batched response into one segment per label.

    A marker counts when the label starts a line or directly follows a
    closing ``]``/``)``. The first marker per label wins; a segment runs
    to the next marker of any label.
    """
    if not labels or len(set(labels)) != len(labels):
        raise ValueError("labels must be non-empty and unique")
    found: list[tuple[int, int, str]] = []
    for label in labels:
        m = _label_pattern(label).search(text)
        if m:
            found.append((m.start(), m.end(), label))
    found.sort()
    segments = {label: "" for label in labels}
    for i, (_, end, label) in enumerate(found):
        stop = found[i + 1][0] if i + 1 < len(found) else len(text)
        segments[label] = text[end:stop].strip()
    hit = {label for _, _, label in found}
    diags = [Diagnostic("warning", f"no answer marker for {label!r}", len(text))
             for label in labels if label not in hit]
    return BatchSplit(segments, diags, flagged=not found)
