"""Evaluate one prompt state on a split and persist what was predicted.

Predictions are written one JSONL line per example; for event extraction
``prediction_raw`` holds the canonical serialization of the parsed
instances, so :func:`replay` can rescore a run without any model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .gateway import Gateway
from .optimizer_loop import Answer, generate_answers
from .prompt_space import EventSchema, PromptState
from .schema_parser import ParseOutcome


@dataclass
class EvalResult:
    reward: float
    report: dict
    answers: list[Answer] = field(default_factory=list)


def _prediction_rows(answers: Sequence[Answer], task) -> list[dict]:
    rows = []
    for a in answers:
        rows.append({
            "id": a.id,
            "prediction_raw": None if a.outcome.fatal else task.render(
                a.outcome.instances if task.name != "accuracy" else a.outcome.instances[0]),
            "fatal": a.outcome.fatal,
            "segment": a.raw,
        })
    return rows


def evaluate(state: PromptState, examples: Sequence, *, schema: EventSchema, task, gateway: Gateway,
             batch_size: int, out_path: str | Path | None = None, tag: str = "") -> EvalResult:
    """Batch-answer ``examples`` with ``state``, parse, score and optionally persist predictions."""
    if not examples:
        empty = task.score([], [])
        return EvalResult(empty.reward, empty.report)
    answers = generate_answers(state, examples, schema=schema, task=task, gateway=gateway,
                               batch_size=batch_size, tag=tag)
    scored = task.score([a.outcome for a in answers], [a.gold for a in answers])
    if out_path is not None:
        write_predictions(out_path, state.id, answers, task, scored.report)
    return EvalResult(scored.reward, scored.report, answers)


def write_predictions(path: str | Path, state_id: str, answers: Sequence[Answer], task, report: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in _prediction_rows(answers, task):
            row["state"] = state_id
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    path.with_suffix(".report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n",
                                                encoding="utf-8")


def read_predictions(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay(path: str | Path, examples: Sequence, task) -> dict:
    """Rescore persisted predictions against ``examples`` (matched by id)."""
    rows = {r["id"]: r for r in read_predictions(path)}
    outcomes, golds = [], []
    for ex in examples:
        row = rows.get(ex.id)
        if row is None:
            raise KeyError(f"no persisted prediction for example {ex.id!r}")
        if row["fatal"] or row["prediction_raw"] is None:
            outcomes.append(ParseOutcome(fatal=True))
        else:
            outcomes.append(task.parse(row["prediction_raw"]))
        golds.append(ex.gold)
    return task.score(outcomes, golds).report
