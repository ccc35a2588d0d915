"""Scripted mock scenarios with outcomes known in advance.

The staircase scenario tags every prompt revision with a marker such as
``[rev-3]`` in its instruction. The scripted optimizer always rewrites
revision ``v`` into ``v + 1`` (editing a rotating set of guidelines) and the
scripted task model answers a growing, fixed share of examples with the gold
annotation at each revision, so the dev reward climbs by a known step.
Shares apply to each split separately; texts must be unique across splits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .gateway import MockBackend, MockScript
from .prompt_space import EventSchema, PromptState, split_guideline
from .schema_parser import serialize_instances

FEEDBACK_OPENING = "I am writing event guidelines"
OPTIMIZE_OPENING = "I am optimizing prompts"
DEFAULT_SHARES = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9)


def marker(rev: int) -> str:
    return f"[rev-{rev}]"


def edited_types(rev: int, schema: EventSchema, n_edits: int = 6) -> list[str]:
    """Types rewritten when producing revision ``rev``: ``n_edits`` consecutive types, rotating."""
    names = schema.names
    return [names[(rev + i) % len(names)] for i in range(min(n_edits, len(names)))]


def revision_guideline(base: str, rev: int) -> str:
    doc, comments = split_guideline(base)
    lines = [doc, f"Refinement {rev}: check every role before answering."]
    lines += [f"{k}: {'str' if k == 'mention' else 'List'}  # {v}" for k, v in comments.items()]
    return "\n".join(lines)


def _class_block(name: str, parent: str, guideline: str) -> str:
    doc, comments = split_guideline(guideline)
    out = [f"class {name}({parent}):", '    """']
    out += [f"    {ln}" if ln.strip() else "" for ln in doc.splitlines()]
    out.append('    """')
    for k, v in comments.items():
        out.append(f"    {k}: {'str' if k == 'mention' else 'List'}  # {v}")
    return "\n".join(out)


def correct_ids(examples: Sequence, share: float) -> set[str]:
    """The first ``round(share * n)`` evented examples (by id) plus every event-free one."""
    evented = sorted(ex.id for ex in examples if ex.gold)
    keep = set(evented[:round(share * len(evented))])
    return keep | {ex.id for ex in examples if not ex.gold}


@dataclass
class Staircase:
    schema: EventSchema
    root: PromptState
    splits: Sequence[Sequence]
    shares: Sequence[float] = DEFAULT_SHARES
    n_edits: int = 6
    perfect_from: int | None = None
    task_script: MockScript = field(init=False)
    optimizer_script: MockScript = field(init=False)

    def __post_init__(self) -> None:
        self.task_script = self._task()
        self.optimizer_script = self._optimizer()

    @property
    def max_rev(self) -> int:
        return len(self.shares) - 1

    def share(self, rev: int) -> float:
        if self.perfect_from is not None and rev >= self.perfect_from:
            return 1.0
        return self.shares[min(rev, self.max_rev)]

    def root_state(self) -> PromptState:
        return PromptState(self.root.id, f"{marker(0)} {self.root.instruction}", self.root.guidelines)

    def guideline(self, name: str, rev: int) -> str:
        """Guideline of ``name`` at revision ``rev`` along a staircase lineage."""
        text = self.root.guidelines[name]
        for v in range(1, rev + 1):
            if name in edited_types(v, self.schema, self.n_edits):
                text = revision_guideline(self.root.guidelines[name], v)
        return text

    def instruction(self, rev: int) -> str:
        return f"{marker(rev)} {self.root.instruction}"

    def rewrite_response(self, rev: int) -> str:
        """Optimizer reply turning revision ``rev - 1`` into ``rev``."""
        blocks = [_class_block(n, self.schema[n].parent, self.guideline(n, rev))
                  for n in edited_types(rev, self.schema, self.n_edits)]
        return (f"Improved prompt:\n<START>\n{self.instruction(rev)}\n<END>\n\n"
                "Refined guidelines:\n<CLASS_START>\n" + "\n\n".join(blocks) + "\n<CLASS_END>\n")

    def _task(self) -> MockScript:
        script = MockScript(on_miss="error")
        for rev in range(self.max_rev + 1, -1, -1):
            for split in self.splits:
                keep = correct_ids(split, self.share(rev))
                for ex in split:
                    answer = serialize_instances(ex.gold, self.schema) if ex.id in keep else "result = []"
                    script.add({"contains": [marker(rev)], "query": ex.text}, answer)
        return script

    def _optimizer(self) -> MockScript:
        script = MockScript(on_miss="error")
        # newest marker first: the rewrite prompt also carries every ancestor
        for rev in range(self.max_rev + 1, -1, -1):
            script.add([OPTIMIZE_OPENING, marker(rev)], self.rewrite_response(rev + 1))
            script.add([FEEDBACK_OPENING, marker(rev)],
                       f"Revision {rev} misses events that the gold annotation contains; "
                       "the guidelines should describe triggers and roles more concretely.")
        return script

    def task_backend(self) -> MockBackend:
        return MockBackend(self.task_script, per_query=True)

    def optimizer_backend(self) -> MockBackend:
        return MockBackend(self.optimizer_script)
