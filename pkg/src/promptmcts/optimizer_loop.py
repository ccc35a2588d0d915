"""One expansion step: answer, collect errors, critique, rewrite.

The optimizer model is called twice per step: once with the feedback
meta-prompt to critique the errors, once with the optimization meta-prompt
to produce the next instruction (inside ``<START>``/``<END>``) and refined
class blocks (inside ``<CLASS_START>``/``<CLASS_END>``).
"""
from __future__ import annotations

import enum
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Sequence

from .gateway import Gateway
from .prompt_space import (
    EventSchema, PromptState, apply_edits, compose, compose_guidelines, join_guideline, split_guideline,
)
from .schema_parser import Diagnostic, EventInstance, ParseOutcome
from .scorer import pair_events

PLACEHOLDERS = ("cur_prompt", "event_definitions", "example_string", "feedback", "trajectory_prompts")


class TemplateError(KeyError):
    pass


class RewriteError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetaPromptTemplate:
    text: str
    name: str = ""

    @property
    def fields(self) -> list[str]:
        return [f for _, f, _, _ in string.Formatter().parse(self.text) if f]

    def render(self, **values: Any) -> str:
        missing = [f for f in self.fields if f not in values]
        if missing:
            raise TemplateError(f"template {self.name or '<inline>'} has unbound placeholder(s): {missing}")
        return self.text.format(**values)

    @classmethod
    def from_file(cls, path) -> "MetaPromptTemplate":
        from pathlib import Path
        p = Path(path)
        return cls(p.read_text(encoding="utf-8"), p.name)


def _bundled(name: str) -> MetaPromptTemplate:
    text = resources.files("promptmcts.resources").joinpath(name).read_text(encoding="utf-8")
    return MetaPromptTemplate(text, name)


def feedback_template() -> MetaPromptTemplate:
    return _bundled("feedback_template.txt")


def optimize_template() -> MetaPromptTemplate:
    return _bundled("optimize_template.txt")


@dataclass
class Answer:
    query: str
    gold: Any
    outcome: ParseOutcome
    raw: str = ""
    id: str = ""


@dataclass
class ErrorExample:
    query: str
    gold: Any
    predicted: list
    raw: str
    fatal: bool
    diagnostics: list[Diagnostic] = field(default_factory=list)
    id: str = ""

    def to_dict(self, task) -> dict:
        return {
            "id": self.id,
            "text": self.query,
            "gold": task.render(self.gold),
            "predicted_raw": self.raw,
            "fatal": self.fatal,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }


class ErrorCategory(str, enum.Enum):
    ParsingError = "ParsingError"
    Hallucination = "Hallucination"
    MultipleEvents = "MultipleEvents"
    LabelNoise = "LabelNoise"
    Coreference = "Coreference"
    SpanOverprediction = "SpanOverprediction"
    ImplicitEvents = "ImplicitEvents"
    Other = "Other"


# -- Step 1 / Step 2 --------------------------------------------------------

def generate_answers(state: PromptState, batch: Sequence, *, schema: EventSchema, task, gateway: Gateway,
                     batch_size: int, tag: str = "") -> list[Answer]:
    """Compose the prompt, batch-query the task model and parse every segment.

    ``batch`` holds objects with ``text``, ``gold`` and ``id`` attributes.
    """
    if not batch:
        raise ValueError("empty batch")
    prompt = compose(state, schema)
    raw = gateway.batch_answer(prompt, [ex.text for ex in batch], batch_size, tag=tag)
    out = []
    for ex, ans in zip(batch, raw):
        if ans.failed:
            outcome = ParseOutcome(fatal=True, diagnostics=[Diagnostic("error", f"parsing error: {ans.note}", 0)])
        else:
            outcome = task.parse(ans.text)
        out.append(Answer(ex.text, ex.gold, outcome, ans.text, getattr(ex, "id", "")))
    return out


def extract_errors(answers: Sequence[Answer], task) -> list[ErrorExample]:
    errors = []
    for a in answers:
        if a.outcome.fatal or not task.is_correct(a.outcome, a.gold):
            errors.append(ErrorExample(a.query, a.gold, list(a.outcome.instances), a.raw, a.outcome.fatal,
                                       list(a.outcome.diagnostics), a.id))
    return errors


def format_errors(errors: Sequence[ErrorExample], task) -> str:
    blocks = []
    for i, e in enumerate(errors, 1):
        diag = "; ".join(d.message for d in e.diagnostics) or "none"
        blocks.append(
            f"Example {i}\n"
            f"Text: {e.query}\n"
            f"Gold: {task.render(e.gold)}\n"
            f"Predicted: {e.raw.strip() or '<empty>'}\n"
            f"Diagnostics: {diag}"
        )
    return "\n\n".join(blocks)


# -- Step 3 / Step 4 --------------------------------------------------------

def _definitions(state: PromptState, schema: EventSchema) -> str:
    return compose_guidelines(state, schema) if schema.event_types else ""


def generate_feedback(state: PromptState, errors: Sequence[ErrorExample], *, schema: EventSchema, task,
                      gateway: Gateway, template: MetaPromptTemplate | None = None, tag: str = "") -> str | None:
    """Ask the optimizer to critique ``errors``. Returns None when there is nothing to critique."""
    if not errors:
        return None
    template = template or feedback_template()
    prompt = template.render(
        cur_prompt=state.instruction,
        event_definitions=_definitions(state, schema),
        example_string=format_errors(errors, task),
    )
    return gateway.complete(prompt, tag=tag).response


_START_RE = re.compile(r"<START>(.*?)<END>", re.S)
_CLASS_BLOCK_RE = re.compile(r"<CLASS_START>(.*?)<CLASS_END>", re.S)
_CLASS_HEAD_RE = re.compile(r"^[ \t]*class[ \t]+([A-Za-z_]\w*)[ \t]*(?:\([^)\n]*\))?[ \t]*:[ \t]*$", re.M)
_DOCSTRING_RE = re.compile(r'("""|\'\'\')(.*?)\1', re.S)


@dataclass
class RewriteResult:
    instruction: str
    guidelines: dict[str, str]
    diagnostics: list[str] = field(default_factory=list)


def _dedent_lines(text: str) -> str:
    lines = text.splitlines()
    widths = [len(ln) - len(ln.lstrip()) for ln in lines if ln.strip()]
    cut = min(widths) if widths else 0
    return "\n".join(ln[cut:] if ln.strip() else "" for ln in lines).strip("\n")


def parse_class_body(body: str, roles: Sequence[str]) -> str | None:
    """Turn the body of a ``class X(...):`` block into stored guideline text."""
    doc_match = _DOCSTRING_RE.search(body)
    doc = _dedent_lines(doc_match.group(2)) if doc_match else ""
    rest = body[doc_match.end():] if doc_match else body
    _, comments = split_guideline(rest)
    comments = {k: v for k, v in comments.items() if k == "mention" or k in roles}
    if not doc and not comments:
        return None
    return join_guideline(doc, comments, roles)


def parse_rewrite(text: str, schema: EventSchema) -> RewriteResult:
    m = _START_RE.search(text)
    if m is None:
        raise RewriteError("optimizer response has no <START>...<END> block")
    result = RewriteResult(_dedent_lines(m.group(1)).strip(), {})
    for block in _CLASS_BLOCK_RE.findall(text):
        heads = list(_CLASS_HEAD_RE.finditer(block))
        if not heads:
            result.diagnostics.append("class block without a class header skipped")
            continue
        for i, h in enumerate(heads):
            name = h.group(1)
            stop = heads[i + 1].start() if i + 1 < len(heads) else len(block)
            if name not in schema:
                result.diagnostics.append(f"class block for unknown event type {name!r} skipped")
                continue
            if name in result.guidelines:
                result.diagnostics.append(f"repeated class block for {name!r} skipped")
                continue
            guideline = parse_class_body(block[h.end():stop], schema.roles(name))
            if guideline is None:
                result.diagnostics.append(f"class block for {name!r} has no docstring or fields; skipped")
                continue
            result.guidelines[name] = guideline
    return result


def render_trajectory(texts: Sequence[str]) -> str:
    return "\n\n".join(f"--- prompt {i} ---\n{t.strip()}" for i, t in enumerate(texts))


def rewrite_prompt(state: PromptState, feedback: str, errors: Sequence[ErrorExample], *, schema: EventSchema,
                   task, gateway: Gateway, trajectory: Sequence[str], child_id: str,
                   template: MetaPromptTemplate | None = None, retries: int = 1,
                   tag: str = "") -> tuple[PromptState, list[str]]:
    """Produce the child prompt. Only guidelines whose text actually changes count as edits."""
    if not feedback or not feedback.strip():
        raise RewriteError("empty feedback")
    template = template or optimize_template()
    prompt = template.render(
        cur_prompt=state.instruction,
        event_definitions=_definitions(state, schema),
        example_string=format_errors(errors, task),
        feedback=feedback,
        trajectory_prompts=render_trajectory(trajectory),
    )
    last: RewriteError | None = None
    for _ in range(retries + 1):
        response = gateway.complete(prompt, tag=tag).response
        try:
            parsed = parse_rewrite(response, schema)
            break
        except RewriteError as exc:
            last = exc
    else:
        raise RewriteError(f"rewrite failed after {retries + 1} attempt(s): {last}")
    edits = {name: text for name, text in parsed.guidelines.items() if text != state.guidelines.get(name)}
    instruction = parsed.instruction or state.instruction
    child = apply_edits(state, instruction, edits, schema, child_id)
    return child, parsed.diagnostics


# -- error taxonomy ---------------------------------------------------------

_VERBAL_SUFFIXES = ("ed", "ing", "en")
# irregular past forms that carry events often enough to matter
_IRREGULAR_VERBS = frozenset(
    "went came left met paid sent sold bought fell found won lost fought struck shot hit "
    "told said began led held ran saw kept brought gave took made got sued quit split".split()
)


def _looks_verbal(word: str) -> bool:
    w = word.strip().lower().split()[-1] if word.strip() else ""
    return w.endswith(_VERBAL_SUFFIXES) or w in _IRREGULAR_VERBS


def _head(span: str) -> str:
    toks = span.strip().lower().split()
    return toks[-1] if toks else ""


def classify_error(error: ErrorExample) -> set[ErrorCategory]:
    """Heuristic labels for one error. Reporting only; never feeds the search."""
    if error.fatal:
        return {ErrorCategory.ParsingError}
    pred: list[EventInstance] = [p for p in error.predicted if isinstance(p, EventInstance)]
    gold: list[EventInstance] = list(error.gold or [])
    cats: set[ErrorCategory] = set()
    gold_types = {g.event_type for g in gold}
    if any(p.event_type not in gold_types for p in pred):
        cats.add(ErrorCategory.Hallucination)
    pairs = pair_events(pred, gold)
    if len(gold) > len(pred) and pairs:
        cats.add(ErrorCategory.MultipleEvents)
    matched_gold = {j for _, j in pairs}
    for j, g in enumerate(gold):
        if j not in matched_gold and not any(p.mention.strip() == g.mention.strip() for p in pred) \
                and not _looks_verbal(g.mention):
            cats.add(ErrorCategory.ImplicitEvents)
    for i, j in pairs:
        p_args, g_args = pred[i].arguments, gold[j].arguments
        for role in set(p_args) | set(g_args):
            ps = [s.strip() for s in p_args.get(role, [])]
            gs = [s.strip() for s in g_args.get(role, [])]
            for ps_ in ps:
                if ps_ in gs:
                    continue
                if any(g_ and g_ in ps_ and g_ != ps_ for g_ in gs):
                    cats.add(ErrorCategory.SpanOverprediction)
                elif any(_head(g_) and _head(g_) in ps_.lower().split() for g_ in gs):
                    cats.add(ErrorCategory.Coreference)
                elif gs:
                    cats.add(ErrorCategory.LabelNoise)
    return cats or {ErrorCategory.Other}


def categorize_errors(errors: Sequence[ErrorExample]) -> Counter:
    counts: Counter = Counter()
    for e in errors:
        for c in classify_error(e):
            counts[c] += 1
    return counts
