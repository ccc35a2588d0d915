"""Task plug-ins: how one answer segment is parsed, judged and scored.

The search and the evaluator only talk to a task through this interface,
so event extraction, label accuracy and strict-span NER share the loop.
"""
from __future__ import annotations

import ast
import json
from dataclasses import dataclass
from typing import Any, Sequence

from .prompt_space import EventSchema
from .schema_parser import (
    Diagnostic, EventInstance, ParseOutcome, PARSING_ERROR, find_result_list,
    parse_output, serialize_instances,
)
from .scorer import ScoreReport, is_exact, ner_counts, normalize_label, score_accuracy, score_ee


@dataclass
class Scored:
    reward: float
    report: dict
    ee: ScoreReport | None = None


class EventExtractionTask:
    name = "ee"

    def __init__(self, schema: EventSchema) -> None:
        self.schema = schema

    def parse(self, text: str) -> ParseOutcome:
        return parse_output(text, self.schema)

    def is_correct(self, outcome: ParseOutcome, gold: Sequence[EventInstance]) -> bool:
        return not outcome.fatal and is_exact(outcome.instances, gold)

    def score(self, outcomes: Sequence[ParseOutcome], golds: Sequence[Sequence[EventInstance]]) -> Scored:
        report = score_ee([o.instances for o in outcomes], golds)
        return Scored(report.reward, report.to_dict(), report)

    def render(self, value: Sequence[EventInstance]) -> str:
        return serialize_instances(value, self.schema)

    def gold_to_json(self, gold: Sequence[EventInstance]) -> Any:
        return [e.to_dict() for e in gold]

    def gold_from_json(self, doc: dict) -> list[EventInstance]:
        return [EventInstance.from_dict(e) for e in doc.get("events", [])]

    gold_field = "events"


class AccuracyTask:
    """Single-label answers (multiple-choice style), exact match after normalization."""

    name = "accuracy"
    gold_field = "label"

    def parse(self, text: str) -> ParseOutcome:
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines:
            return ParseOutcome(fatal=True, diagnostics=[Diagnostic("error", f"{PARSING_ERROR}: empty answer", 0)])
        answer = lines[-1]
        for prefix in ("answer:", "the answer is"):
            idx = answer.casefold().rfind(prefix)
            if idx >= 0:
                answer = answer[idx + len(prefix):].strip()
        return ParseOutcome(instances=[answer.rstrip(".")])

    def is_correct(self, outcome: ParseOutcome, gold: str) -> bool:
        return not outcome.fatal and normalize_label(outcome.instances[0]) == normalize_label(gold)

    def score(self, outcomes: Sequence[ParseOutcome], golds: Sequence[str]) -> Scored:
        preds = [None if o.fatal else o.instances[0] for o in outcomes]
        acc = score_accuracy(preds, golds)
        return Scored(acc, {"accuracy": acc, "n": len(golds)})

    def render(self, value: str) -> str:
        return value

    def gold_to_json(self, gold: str) -> Any:
        return gold

    def gold_from_json(self, doc: dict) -> str:
        return doc["label"]


class NERTask:
    """Answers are ``result = ["span", ...]``; scored by strict-span micro F1."""

    name = "ner"
    gold_field = "spans"

    def parse(self, text: str) -> ParseOutcome:
        located = find_result_list(text)
        if located is None:
            try:
                # a bare list of strings does not look like constructor calls
                start = text.index("[")
                value = ast.literal_eval(text[start:text.rindex("]") + 1])
            except (ValueError, SyntaxError):
                return ParseOutcome(fatal=True, diagnostics=[
                    Diagnostic("error", f"{PARSING_ERROR}: no span list found", 0)])
        else:
            try:
                value = ast.literal_eval(text[located[0]:located[1] + 1])
            except (ValueError, SyntaxError):
                return ParseOutcome(fatal=True, diagnostics=[
                    Diagnostic("error", f"{PARSING_ERROR}: span list is not literal", located[0])])
        if not isinstance(value, list):
            return ParseOutcome(fatal=True, diagnostics=[Diagnostic("error", f"{PARSING_ERROR}: not a list", 0)])
        spans, diags = [], []
        for v in value:
            if isinstance(v, str) and v.strip():
                spans.append(v)
            else:
                diags.append(Diagnostic("warning", f"dropped non-span item {v!r}", 0))
        return ParseOutcome(instances=spans, diagnostics=diags)

    def is_correct(self, outcome: ParseOutcome, gold: Sequence[str]) -> bool:
        if outcome.fatal:
            return False
        c = ner_counts([outcome.instances], [gold])
        return c.fp == 0 and c.fn == 0

    def score(self, outcomes: Sequence[ParseOutcome], golds: Sequence[Sequence[str]]) -> Scored:
        c = ner_counts([[] if o.fatal else o.instances for o in outcomes], golds)
        return Scored(c.f1, {"tp": c.tp, "fp": c.fp, "fn": c.fn, "precision": c.precision,
                             "recall": c.recall, "f1": c.f1})

    def render(self, value: Sequence[str]) -> str:
        return "result = " + json.dumps(list(value), ensure_ascii=False)

    def gold_to_json(self, gold: Sequence[str]) -> Any:
        return list(gold)

    def gold_from_json(self, doc: dict) -> list[str]:
        return list(doc.get("spans", []))


def make_task(kind: str, schema: EventSchema | None = None):
    if kind == "ee":
        if schema is None:
            raise ValueError("event extraction needs a schema")
        return EventExtractionTask(schema)
    if kind == "accuracy":
        return AccuracyTask()
    if kind == "ner":
        return NERTask()
    raise ValueError(f"unknown task type {kind!r}")
