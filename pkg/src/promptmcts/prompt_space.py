"""Prompt states: instruction plus per-event-type guidelines, with lineage.

A prompt state is rendered into the text the task model sees by
:func:`compose`: the task instruction, a separator line, then one Python
class block per event type in schema order. The class block carries the
type's guideline as its docstring and one ``name: List  # comment`` line
per role.

A guideline is stored as plain text. Lines shaped like a field declaration
(``victim: List  # who died``) are role comments; everything else is
documentation. This is also the form in which the optimizer hands back
refined class bodies, so a guideline survives compose -> rewrite -> compose
unchanged.
"""
from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

INSTRUCTION_KEY = "__instruction__"
SEPARATOR = "# Here are the event definitions:"

_FIELD_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*:\s*(str|List(?:\[str\])?|list(?:\[str\])?)\s*(?:#\s?(.*))?$")


class SchemaError(ValueError):
    pass


class CompositionError(ValueError):
    pass


class LineageError(LookupError):
    pass


@dataclass(frozen=True)
class EventType:
    name: str
    parent: str
    roles: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "roles", tuple(self.roles))
        if not self.name.isidentifier():
            raise SchemaError(f"event type name {self.name!r} is not an identifier")
        if len(set(self.roles)) != len(self.roles):
            raise SchemaError(f"duplicate role in {self.name}")
        if "mention" in self.roles:
            raise SchemaError(f"{self.name}: 'mention' is implicit and cannot be a role")


@dataclass(frozen=True)
class EventSchema:
    """Ordered event types. Never modified by the optimizer."""

    event_types: tuple[EventType, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "event_types", tuple(self.event_types))
        names = [t.name for t in self.event_types]
        if len(set(names)) != len(names):
            raise SchemaError("event type names must be unique")
        object.__setattr__(self, "_by_name", {t.name: t for t in self.event_types})

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.event_types]

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> EventType:
        return self._by_name[name]

    def roles(self, name: str) -> tuple[str, ...]:
        return self._by_name[name].roles

    def to_dict(self) -> dict:
        return {
            "event_types": [
                {"name": t.name, "parent": t.parent, "roles": list(t.roles)} for t in self.event_types
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EventSchema":
        return cls(tuple(EventType(d["name"], d.get("parent", "Event"), tuple(d.get("roles", ())))
                         for d in data["event_types"]))

    @classmethod
    def load(cls, path: str | Path) -> "EventSchema":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class PromptState:
    """One node's prompt. Immutable; ``guidelines`` is a read-only mapping."""

    id: str
    instruction: str
    guidelines: Mapping[str, str]
    parent: str | None = None
    edited_types: frozenset[str] = field(default_factory=frozenset)
    depth: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "guidelines", MappingProxyType(dict(self.guidelines)))
        object.__setattr__(self, "edited_types", frozenset(self.edited_types))
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.parent is None and (self.depth != 0 or self.edited_types):
            raise ValueError("a root state has depth 0 and no edits")

    @property
    def is_root(self) -> bool:
        return self.parent is None

    @property
    def instruction_edited(self) -> bool:
        return INSTRUCTION_KEY in self.edited_types

    @property
    def edited_guidelines(self) -> list[str]:
        return [t for t in self.guidelines if t in self.edited_types]

    def validate(self, schema: EventSchema) -> None:
        for name in self.guidelines:
            if name not in schema:
                raise CompositionError(f"guideline for unknown event type {name!r}")
        for name in self.edited_types:
            if name != INSTRUCTION_KEY and name not in schema:
                raise CompositionError(f"edit recorded for unknown event type {name!r}")

    def to_json(self) -> str:
        doc = {
            "id": self.id,
            "parent": self.parent,
            "depth": self.depth,
            "instruction": self.instruction,
            "guidelines": dict(self.guidelines),
            "edited_types": sorted(self.edited_types),
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"

    def to_dict(self) -> dict:
        return json.loads(self.to_json())

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PromptState":
        return cls(
            id=doc["id"],
            instruction=doc["instruction"],
            guidelines=dict(doc["guidelines"]),
            parent=doc.get("parent"),
            edited_types=frozenset(doc.get("edited_types", ())),
            depth=int(doc.get("depth", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "PromptState":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PromptState":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def root_state(instruction: str, guidelines: Mapping[str, str], schema: EventSchema,
               state_id: str = "s0000") -> PromptState:
    """Build a root state, ordering guidelines by schema declaration."""
    unknown = [t for t in guidelines if t not in schema]
    if unknown:
        raise CompositionError(f"guideline for unknown event type {unknown[0]!r}")
    ordered = {name: guidelines.get(name, "") for name in schema.names}
    return PromptState(id=state_id, instruction=instruction, guidelines=ordered)


def split_guideline(text: str) -> tuple[str, dict[str, str]]:
    """Separate documentation lines from ``name: type  # comment`` lines."""
    doc_lines: list[str] = []
    comments: dict[str, str] = {}
    for line in text.splitlines():
        m = _FIELD_RE.match(line)
        if m:
            comments.setdefault(m.group(1), (m.group(3) or "").strip())
        else:
            doc_lines.append(line)
    while doc_lines and not doc_lines[-1].strip():
        doc_lines.pop()
    while doc_lines and not doc_lines[0].strip():
        doc_lines.pop(0)
    return "\n".join(doc_lines), comments


def join_guideline(doc: str, comments: Mapping[str, str], roles: Iterable[str]) -> str:
    lines = [doc.rstrip()] if doc.strip() else []
    for name in ("mention", *roles):
        if name in comments:
            kind = "str" if name == "mention" else "List"
            note = comments[name]
            lines.append(f"{name}: {kind}  # {note}" if note else f"{name}: {kind}")
    return "\n".join(lines)


def _indent(text: str, prefix: str) -> str:
    return "\n".join(prefix + line if line.strip() else "" for line in text.splitlines())


def render_class(event_type: EventType, guideline: str) -> str:
    doc, comments = split_guideline(guideline)
    out = [f"class {event_type.name}({event_type.parent}):", '    """']
    if doc:
        out.append(_indent(doc, "    "))
    out.append('    """')
    mention_note = comments.get("mention") or "the text span that most clearly expresses the event"
    out.append(f"    mention: str  # {mention_note}")
    for role in event_type.roles:
        note = comments.get(role) or f"spans filling the '{role}' role"
        out.append(f"    {role}: List  # {note}")
    return "\n".join(out)


def compose_guidelines(state: PromptState, schema: EventSchema) -> str:
    state.validate(schema)
    blocks = [render_class(t, state.guidelines.get(t.name, "")) for t in schema.event_types]
    return "\n\n".join(blocks)


def compose(state: PromptState, schema: EventSchema) -> str:
    """Full prompt text: instruction, separator, then class blocks in schema order."""
    if not schema.event_types:
        return state.instruction.rstrip() + "\n"
    body = compose_guidelines(state, schema)
    return f"{state.instruction.rstrip()}\n\n{SEPARATOR}\n\n{body}\n"


def apply_edits(parent: PromptState, new_instruction: str | None, guideline_edits: Mapping[str, str],
                schema: EventSchema, child_id: str) -> PromptState:
    """Derive a child state. Types not in ``guideline_edits`` are inherited verbatim."""
    for name in guideline_edits:
        if name not in schema:
            raise CompositionError(f"edit for event type {name!r} absent from schema")
    guidelines = dict(parent.guidelines)
    guidelines.update(guideline_edits)
    edited = set(guideline_edits)
    instruction = parent.instruction
    if new_instruction is not None and new_instruction != parent.instruction:
        instruction = new_instruction
        edited.add(INSTRUCTION_KEY)
    ordered = {name: guidelines[name] for name in schema.names if name in guidelines}
    return PromptState(
        id=child_id,
        instruction=instruction,
        guidelines=ordered,
        parent=parent.id,
        edited_types=frozenset(edited),
        depth=parent.depth + 1,
    )


class PromptStore:
    """id -> PromptState registry. Reads are lock-free; writes are serialized."""

    def __init__(self, states: Iterable[PromptState] = ()) -> None:
        self._states: dict[str, PromptState] = {}
        self._lock = threading.Lock()
        for s in states:
            self.add(s)

    def add(self, state: PromptState) -> PromptState:
        with self._lock:
            existing = self._states.get(state.id)
            if existing is not None and existing != state:
                raise ValueError(f"state id {state.id!r} already bound to a different prompt")
            self._states[state.id] = state
        return state

    def __getitem__(self, state_id: str) -> PromptState:
        return self._states[state_id]

    def __contains__(self, state_id: object) -> bool:
        return state_id in self._states

    def __iter__(self):
        return iter(self._states.values())

    def __len__(self) -> int:
        return len(self._states)

    def lineage(self, state: PromptState) -> list[PromptState]:
        """Ancestors of ``state`` root first, ``state`` last."""
        chain = [state]
        seen = {state.id}
        cur = state
        while cur.parent is not None:
            parent = self._states.get(cur.parent)
            if parent is None:
                raise LineageError(f"state {cur.id!r} points at missing parent {cur.parent!r}")
            if parent.id in seen:
                raise LineageError(f"cycle in lineage at {parent.id!r}")
            seen.add(parent.id)
            chain.append(parent)
            cur = parent
        chain.reverse()
        return chain


def trajectory(state: PromptState, store: PromptStore, schema: EventSchema) -> list[str]:
    return [compose(s, schema) for s in store.lineage(state)]
