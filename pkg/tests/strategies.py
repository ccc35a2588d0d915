"""Shared generators: schema-valid event lists and a reference grammar evaluator."""
from __future__ import annotations

import ast
import random

from hypothesis import strategies as st

from promptmcts.prompt_space import EventSchema
from promptmcts.schema_parser import EventInstance

# spans exercise quotes, brackets, commas, backslashes and non-ASCII text
SPAN_ALPHABET = st.sampled_from(list("abcxyz ABC019,.()[]{}'\"\\=:#-_é漢"))
span_text = st.text(SPAN_ALPHABET, min_size=1, max_size=12).filter(lambda s: s.strip() == s and s)


def instances(schema: EventSchema, max_events: int = 4):
    @st.composite
    def one(draw):
        t = draw(st.sampled_from(schema.event_types))
        roles = draw(st.lists(st.sampled_from(t.roles), unique=True, max_size=len(t.roles))) if t.roles else []
        args = {r: draw(st.lists(span_text, max_size=3)) for r in roles}
        ordered = {r: args[r] for r in t.roles if r in args}
        return EventInstance(t.name, draw(span_text), ordered)
    return st.lists(one(), max_size=max_events)


def random_instances(schema: EventSchema, rng: random.Random, max_events: int = 4,
                     vocab=("a", "b", "c", "d")) -> list[EventInstance]:
    """Small-vocabulary instances, so that spans and triggers collide often."""
    out = []
    for _ in range(rng.randint(0, max_events)):
        t = rng.choice(schema.event_types)
        args = {}
        for r in t.roles:
            if rng.random() < 0.5:
                args[r] = [rng.choice(vocab) for _ in range(rng.randint(1, 2))]
        out.append(EventInstance(t.name, rng.choice(vocab), args))
    return out


def reference_parse(text: str) -> list[EventInstance]:
    """Strict grammar via Python's own parser: ``result = [Name(key=<str or list of str>, ...), ...]``."""
    tree = ast.parse(text.strip(), mode="exec")
    (stmt,) = tree.body
    assert isinstance(stmt, ast.Assign) and stmt.targets[0].id == "result"
    out = []
    for call in stmt.value.elts:
        kw = {k.arg: ast.literal_eval(k.value) for k in call.keywords}
        mention = kw.pop("mention")
        out.append(EventInstance(call.func.id, mention, {k: [v] if isinstance(v, str) else list(v)
                                                          for k, v in kw.items()}))
    return out
