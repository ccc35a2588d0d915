"""Datasets: JSONL loading and writing, per-type counts, low-resource selection.

Event-extraction lines look like::

    {"id": "dev-0001", "text": "...", "events": [{"type": "Die", "trigger": "killed",
     "args": [{"role": "victim", "spans": ["soldier"]}]}]}

Accuracy tasks carry ``"label"`` instead of ``"events"``; NER carries ``"spans"``.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .prompt_space import EventSchema
from .schema_parser import EventInstance, validate_instance

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass
class Example:
    id: str
    text: str
    gold: Any


@dataclass
class Dataset:
    split: str
    examples: list[Example] = field(default_factory=list)
    schema: EventSchema | None = None

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def type_counts(self) -> Counter:
        """Event-instance counts per type plus ``None`` for event-free examples."""
        counts: Counter = Counter()
        for ex in self.examples:
            if not ex.gold:
                counts["None"] += 1
            else:
                for e in ex.gold:
                    counts[e.event_type] += 1
        return counts

    def counts_table(self) -> str:
        counts = self.type_counts()
        names = (self.schema.names if self.schema else sorted(k for k in counts if k != "None")) + ["None"]
        width = max(len(n) for n in names)
        lines = [f"{'type':<{width}}  {self.split}"]
        lines += [f"{n:<{width}}  {counts.get(n, 0)}" for n in names]
        return "\n".join(lines)


def load_dataset(path: str | Path, schema: EventSchema | None = None, task=None,
                 split: str | None = None) -> Dataset:
    """Read a JSONL split. With a schema, every gold event is validated and failures abort the load."""
    path = Path(path)
    split = split or path.stem
    examples: list[Example] = []
    invalid: list[str] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                ex_id, text = str(doc["id"]), doc["text"]
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed line ({exc})") from exc
            if ex_id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {ex_id!r}")
            seen.add(ex_id)
            if task is not None and task.name != "ee":
                gold = task.gold_from_json(doc)
            else:
                try:
                    gold = [EventInstance.from_dict(e) for e in doc.get("events", [])]
                except (KeyError, TypeError) as exc:
                    raise DatasetError(f"{path}:{lineno}: malformed event ({exc})") from exc
                if schema is not None:
                    for e in gold:
                        invalid += [f"{path}:{lineno} ({ex_id}): {p}" for p in validate_instance(e, schema)]
            examples.append(Example(ex_id, text, gold))
    if invalid:
        raise DatasetError("invalid gold annotations:\n" + "\n".join(invalid))
    if not examples:
        log.warning("dataset %s is empty", path)
    return Dataset(split, examples, schema)


def example_to_json(ex: Example, task=None) -> dict:
    if task is not None and task.name != "ee":
        return {"id": ex.id, "text": ex.text, task.gold_field: task.gold_to_json(ex.gold)}
    return {"id": ex.id, "text": ex.text, "events": [e.to_dict() for e in ex.gold]}


def write_dataset(dataset: Dataset | Sequence[Example], path: str | Path, task=None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps(example_to_json(ex, task), ensure_ascii=False) + "\n")


def density(ex: Example) -> int:
    return sum(1 + len(e.spans()) for e in ex.gold)


def select_low_resource(dataset: Dataset, per_type: int = 1, n_none: int = 5) -> Dataset:
    """Density-greedy pick: per event type, the densest unused examples containing it, then event-free ones.

    Approximates a hand-curated low-resource split; not a reconstruction of any specific selection.
    """
    chosen: list[Example] = []
    used: set[str] = set()
    names = dataset.schema.names if dataset.schema else sorted(
        {e.event_type for ex in dataset for e in ex.gold})
    for name in names:
        pool = [ex for ex in dataset if ex.id not in used and any(e.event_type == name for e in ex.gold)]
        pool.sort(key=lambda ex: -density(ex))
        for ex in pool[:per_type]:
            used.add(ex.id)
            chosen.append(ex)
    nones = [ex for ex in dataset if not ex.gold and ex.id not in used][:n_none]
    chosen += nones
    return Dataset(f"{dataset.split}-low", chosen, dataset.schema)
