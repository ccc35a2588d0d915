from __future__ import annotations

import difflib
import json

import pytest
from hypothesis import given, settings, strategies as st

from promptmcts.prompt_space import (
    INSTRUCTION_KEY, SEPARATOR, CompositionError, EventSchema, EventType, LineageError, PromptState,
    PromptStore, SchemaError, apply_edits, compose, root_state, trajectory,
)


def tiny_schema():
    return EventSchema((EventType("Meet", "ContactEvent", ("entity", "place")),
                        EventType("Die", "LifeEvent", ("victim",))))


def test_schema_rejects_duplicates_and_mention_role():
    with pytest.raises(SchemaError):
        EventSchema((EventType("A", "E", ()), EventType("A", "E", ())))
    with pytest.raises(SchemaError):
        EventType("A", "E", ("x", "x"))
    with pytest.raises(SchemaError):
        EventType("A", "E", ("mention",))


def test_compose_orders_blocks_by_schema():
    s = tiny_schema()
    state = root_state("", {"Die": "Someone dies.", "Meet": "People meet."}, s)
    text = compose(state, s)
    assert text.index("class Meet(ContactEvent):") < text.index("class Die(LifeEvent):")
    assert SEPARATOR in text
    assert "    entity: List  #" in text and "    mention: str  #" in text


def test_bundled_root_composition(schema, root):
    text = compose(root, schema)
    assert text.startswith("# This is an event extraction task")
    assert "result = [EventName(" in text
    for name in schema.names:
        assert f"class {name}(" in text
    assert compose(root, schema) == text


def test_single_guideline_change_is_local(schema, root):
    child = apply_edits(root, None, {"Die": "Changed documentation for deaths."}, schema, "s0001")
    a, b = compose(root, schema).splitlines(), compose(child, schema).splitlines()
    changed = [ln for ln in difflib.unified_diff(a, b, lineterm="", n=0)
               if ln[:1] in "+-" and not ln.startswith(("+++", "---"))]
    assert changed
    die_block = compose(child, schema).split("class Die(")[1].split("\nclass ")[0]
    for ln in changed:
        if ln.startswith("+"):
            assert ln[1:] in die_block


def test_unknown_guideline_type_is_named(schema, root):
    bad = PromptState("x", "i", {**root.guidelines, "Explode": "boom"})
    with pytest.raises(CompositionError, match="Explode"):
        compose(bad, schema)
    with pytest.raises(CompositionError, match="Explode"):
        apply_edits(root, None, {"Explode": "boom"}, schema, "s1")


def test_apply_edits_inheritance(schema, root):
    child = apply_edits(root, None, {"Die": "new"}, schema, "s0001")
    assert child.edited_types == {"Die"}
    assert child.parent == root.id and child.depth == 1
    same = [n for n in schema.names if child.guidelines[n] == root.guidelines[n]]
    assert len(same) == 9


def test_identity_edit(schema, root):
    child = apply_edits(root, root.instruction, {}, schema, "s0001")
    assert child.instruction == root.instruction
    assert dict(child.guidelines) == dict(root.guidelines)
    assert child.edited_types == frozenset()
    assert compose(child, schema) == compose(root, schema)


def test_instruction_edit_marker(schema, root):
    child = apply_edits(root, "new instruction", {}, schema, "s0001")
    assert child.edited_types == {INSTRUCTION_KEY}
    assert child.instruction_edited


def test_json_round_trip_is_byte_exact(schema, root):
    child = apply_edits(root, "x", {"Die": "d", "Meet": "m"}, schema, "s0001")
    text = child.to_json()
    assert PromptState.from_json(text).to_json() == text
    assert PromptState.from_json(text) == child
    doc = json.loads(text)
    assert set(doc) == {"id", "parent", "depth", "instruction", "guidelines", "edited_types"}


def test_trajectory_and_lineage(schema, root):
    store = PromptStore([root])
    assert trajectory(root, store, schema) == [compose(root, schema)]
    s = root
    for i in range(3):
        s = store.add(apply_edits(s, f"rev {i}", {}, schema, f"s{i + 1}"))
    traj = trajectory(s, store, schema)
    assert len(traj) == 4 and traj[0] == compose(root, schema) and traj[-1] == compose(s, schema)
    parent = store[s.parent]
    assert trajectory(parent, store, schema) == traj[:-1]
    orphan = PromptState("o", "i", root.guidelines, parent="missing", depth=1)
    with pytest.raises(LineageError):
        store.lineage(orphan)


def test_cycle_detected(schema, root):
    a = PromptState("a", "i", root.guidelines, parent="b", depth=1)
    b = PromptState("b", "i", root.guidelines, parent="a", depth=1)
    with pytest.raises(LineageError, match="cycle"):
        PromptStore([a, b]).lineage(a)


def test_store_rejects_rebinding(root):
    store = PromptStore([root])
    with pytest.raises(ValueError):
        store.add(PromptState(root.id, "other", root.guidelines))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sets(st.integers(0, 9)), st.booleans()), min_size=1, max_size=6),
       st.text(min_size=1, max_size=30))
def test_inheritance_property(schema, root, edits, filler):
    """Random edit chains: unedited types stay byte-identical to the parent; trajectories extend by one."""
    store = PromptStore([root])
    state = root
    for i, (types, new_instr) in enumerate(edits):
        names = [schema.names[j] for j in sorted(types)]
        child = apply_edits(state, f"{filler} {i}" if new_instr else None,
                            {n: f"{filler} guideline {i}" for n in names}, schema, f"s{i + 1}")
        store.add(child)
        for n in schema.names:
            if n not in child.edited_types:
                assert child.guidelines[n] == state.guidelines[n]
        assert trajectory(child, store, schema)[:-1] == trajectory(state, store, schema)
        assert PromptState.from_json(child.to_json()) == child
        state = child
