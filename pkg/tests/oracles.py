"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from promptmcts.schema_parser import EventInstance


def _inter(a, b) -> int:
    return sum((Counter(a) & Counter(b)).values())


def optimal_counts(pred: Sequence[EventInstance], gold: Sequence[EventInstance]) -> dict[str, tuple[int, int, int]]:
    """(tp, fp, fn) per metric with AI and AC each maximized over every admissible event pairing."""
    ti = _inter([p.mention.strip() for p in pred], [g.mention.strip() for g in gold])
    tc = _inter([(p.mention.strip(), p.event_type) for p in pred], [(g.mention.strip(), g.event_type) for g in gold])

    def args(e, with_role):
        return [(r, s.strip()) if with_role else s.strip() for r, vs in e.arguments.items() for s in vs]

    best = {"AI": 0, "AC": 0}

    def walk(i: int, used: frozenset, ai: int, ac: int) -> None:
        if i == len(pred):
            best["AI"] = max(best["AI"], ai)
            best["AC"] = max(best["AC"], ac)
            return
        walk(i + 1, used, ai, ac)
        p = pred[i]
        for j, g in enumerate(gold):
            if j not in used and (p.mention.strip(), p.event_type) == (g.mention.strip(), g.event_type):
                walk(i + 1, used | {j}, ai + _inter(args(p, False), args(g, False)),
                     ac + _inter(args(p, True), args(g, True)))

    walk(0, frozenset(), 0, 0)
    n_p = sum(len(args(p, False)) for p in pred)
    n_g = sum(len(args(g, False)) for g in gold)
    return {
        "TI": (ti, len(pred) - ti, len(gold) - ti),
        "TC": (tc, len(pred) - tc, len(gold) - tc),
        "AI": (best["AI"], n_p - best["AI"], n_g - best["AI"]),
        "AC": (best["AC"], n_p - best["AC"], n_g - best["AC"]),
    }


def f1(tp: int, fp: int, fn: int) -> float:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 100 * 2 * p * r / (p + r) if p + r else 0.0


def uct_brute(qs, ns, parent_n, c) -> int:
    """Direct evaluation of every child's score; unvisited children win, earliest index on ties."""
    scores = []
    for q, n in zip(qs, ns):
        scores.append(math.inf if n == 0 else q + c * math.sqrt(math.log(parent_n) / n))
    top = max(scores)
    return scores.index(top)
