"""TI/TC/AI/AC scoring for event extraction, plus the accuracy and NER plug-ins.

All scores are on the 0-100 scale of the result tables, precision and
recall included. Spans are compared as text after trimming outer
whitespace; the format carries no character offsets.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

from .schema_parser import EventInstance

METRICS = ("TI", "TC", "AI", "AC")


class ScoringError(ValueError):
    pass


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


@dataclass
class MetricScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _pct(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _pct(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __iadd__(self, other: "MetricScore") -> "MetricScore":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self


@dataclass
class ScoreReport:
    metrics: dict[str, MetricScore] = field(default_factory=lambda: {m: MetricScore() for m in METRICS})

    def __getitem__(self, name: str) -> MetricScore:
        return self.metrics[name]

    @property
    def reward(self) -> float:
        return reward(self)

    def to_dict(self) -> dict:
        out: dict = {}
        for name in METRICS:
            m = self.metrics[name]
            out.update({f"{name}_tp": m.tp, f"{name}_fp": m.fp, f"{name}_fn": m.fn,
                        f"{name}_precision": m.precision, f"{name}_recall": m.recall, f"{name}_f1": m.f1})
        out["reward"] = self.reward
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ScoreReport":
        return cls({m: MetricScore(doc[f"{m}_tp"], doc[f"{m}_fp"], doc[f"{m}_fn"]) for m in METRICS})

    def table_row(self, label: str = "") -> str:
        cells = "  ".join(f"{m}={self.metrics[m].f1:6.2f}" for m in METRICS)
        return f"{label:<12}{cells}  reward={self.reward:6.2f}"


def reward_from_f1(ti: float, tc: float, ai: float, ac: float) -> float:
    return (ti + tc + ai + ac) / 4


def reward(report: ScoreReport) -> float:
    return reward_from_f1(*(report.metrics[m].f1 for m in METRICS))


def _norm(span: str) -> str:
    return span.strip()


def _consume(preds: Iterable[Hashable], golds: Iterable[Hashable]) -> MetricScore:
    """Greedy first-come matching of predictions against a gold multiset."""
    pool = Counter(golds)
    gold_total = sum(pool.values())
    tp = pred_total = 0
    for item in preds:
        pred_total += 1
        if pool[item] > 0:
            pool[item] -= 1
            tp += 1
    return MetricScore(tp, pred_total - tp, gold_total - tp)


def _arg_overlap(pred: EventInstance, gold: EventInstance) -> tuple[int, int]:
    ac = _consume(((r, _norm(s)) for r, s in pred.spans()), ((r, _norm(s)) for r, s in gold.spans())).tp
    ai = _consume((_norm(s) for _, s in pred.spans()), (_norm(s) for _, s in gold.spans())).tp
    return ac, ai


def pair_events(pred: Sequence[EventInstance], gold: Sequence[EventInstance]) -> list[tuple[int, int]]:
    """Pair each predicted event with an unused gold event of identical (mention, type).

    Predictions are taken in serialized order; among candidate gold events the
    one sharing the most classified arguments wins, ties to the earliest.
    """
    used: set[int] = set()
    pairs = []
    for i, p in enumerate(pred):
        key = (_norm(p.mention), p.event_type)
        best, best_score = None, None
        for j, g in enumerate(gold):
            if j in used or (_norm(g.mention), g.event_type) != key:
                continue
            score = _arg_overlap(p, g)
            if best_score is None or score > best_score:
                best, best_score = j, score
        if best is not None:
            used.add(best)
            pairs.append((i, best))
    return pairs


def score_example(pred: Sequence[EventInstance], gold: Sequence[EventInstance]) -> ScoreReport:
    report = ScoreReport()
    report.metrics["TI"] = _consume((_norm(e.mention) for e in pred), (_norm(e.mention) for e in gold))
    report.metrics["TC"] = _consume(((_norm(e.mention), e.event_type) for e in pred),
                                    ((_norm(e.mention), e.event_type) for e in gold))
    n_pred_args = sum(len(e.spans()) for e in pred)
    n_gold_args = sum(len(e.spans()) for e in gold)
    ai_tp = ac_tp = 0
    for i, j in pair_events(pred, gold):
        ac, ai = _arg_overlap(pred[i], gold[j])
        ai_tp += ai
        ac_tp += ac
    report.metrics["AI"] = MetricScore(ai_tp, n_pred_args - ai_tp, n_gold_args - ai_tp)
    report.metrics["AC"] = MetricScore(ac_tp, n_pred_args - ac_tp, n_gold_args - ac_tp)
    return report


def score_ee(predictions: Sequence[Sequence[EventInstance]],
             golds: Sequence[Sequence[EventInstance]]) -> ScoreReport:
    """Micro-averaged TI/TC/AI/AC over a dataset."""
    if len(predictions) != len(golds):
        raise ScoringError(f"{len(predictions)} predictions for {len(golds)} gold examples")
    total = ScoreReport()
    for pred, gold in zip(predictions, golds):
        ex = score_example(pred, gold)
        for m in METRICS:
            total.metrics[m] += ex.metrics[m]
    return total


def is_exact(pred: Sequence[EventInstance], gold: Sequence[EventInstance]) -> bool:
    """True when the prediction matches gold on every trigger and classified argument."""
    r = score_example(pred, gold)
    return all(r.metrics[m].fp == 0 and r.metrics[m].fn == 0 for m in ("TC", "AC"))


_WS = re.compile(r"\s+")


def normalize_label(text: str) -> str:
    return _WS.sub(" ", text).strip().casefold()


def score_accuracy(predictions: Sequence[str | None], golds: Sequence[str]) -> float:
    if len(predictions) != len(golds):
        raise ScoringError(f"{len(predictions)} predictions for {len(golds)} gold labels")
    if not golds:
        return 0.0
    hits = sum(p is not None and normalize_label(p) == normalize_label(g) for p, g in zip(predictions, golds))
    return 100.0 * hits / len(golds)


def _span_key(span) -> Hashable:
    if isinstance(span, str):
        return _norm(span)
    if isinstance(span, dict):
        return (span["start"], span["end"], _norm(span["text"]))
    return tuple(span)


def ner_counts(predictions: Sequence[Iterable], golds: Sequence[Iterable]) -> MetricScore:
    if len(predictions) != len(golds):
        raise ScoringError(f"{len(predictions)} predictions for {len(golds)} gold span sets")
    total = MetricScore()
    for pred, gold in zip(predictions, golds):
        total += _consume((_span_key(s) for s in pred), (_span_key(s) for s in gold))
    return total


def score_ner(predictions: Sequence[Iterable], golds: Sequence[Iterable]) -> float:
    """Strict-span micro F1. Spans are text, or (start, end, text) when offsets exist."""
    return ner_counts(predictions, golds).f1
