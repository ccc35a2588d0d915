from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from promptmcts.schema_parser import (
    PARSING_ERROR, EventInstance, SerializationError, parse_output, serialize_instances, split_batch_answers,
)

from strategies import instances, reference_parse


def test_die_example(schema):
    text = ("result = [Die(mention='killed', agent=['He'], victim=['soldier'], instrument=[], time=[], "
            "place=['Iraq'])]")
    out = parse_output(text, schema)
    assert not out.fatal and not out.diagnostics
    (die,) = out.instances
    assert die.event_type == "Die" and die.mention == "killed"
    assert die.arguments["victim"] == ["soldier"] and die.arguments["instrument"] == []


def test_empty_list(schema):
    out = parse_output("result = []", schema)
    assert out.instances == [] and out.diagnostics == [] and not out.fatal


def test_quoted_keys_colons_and_scalars(schema):
    text = 'result = [Die("mention" = "shot", "victim" = "a man", place: ["Gaza"])]'
    (die,) = parse_output(text, schema).instances
    assert die.mention == "shot" and die.arguments == {"victim": ["a man"], "place": ["Gaza"]}


def test_prose_around_list(schema):
    core = 'result = [Meet(mention="met", entity=["leaders"], time=["yesterday"], place=["Paris"])]'
    noisy = f"Sure! Looking at the text, I found one event.\n{core}\nLet me know if you need more."
    assert parse_output(noisy, schema).instances == parse_output(core, schema).instances


def test_bare_list_accepted(schema):
    out = parse_output('[Die(mention="died")]', schema)
    assert [i.event_type for i in out.instances] == ["Die"]


def test_unknowns_dropped_with_one_diagnostic_each(schema):
    text = 'result = [Explode(mention="boom"), Die(mention="died", weapon=["gun"], victim=["x"]), Die(victim=["y"])]'
    out = parse_output(text, schema)
    assert [i.arguments for i in out.instances] == [{"victim": ["x"]}]
    msgs = [d.message for d in out.diagnostics]
    assert len(msgs) == 3
    assert any("Explode" in m for m in msgs) and any("weapon" in m for m in msgs) and any("mention" in m for m in msgs)
    assert all(0 <= d.location <= len(text) for d in out.diagnostics)


def test_parentheses_inside_quotes(schema):
    text = 'result = [Die(mention="killed (allegedly)", victim=["a [b] (c)"])]'
    (die,) = parse_output(text, schema).instances
    assert die.mention == "killed (allegedly)" and die.arguments["victim"] == ["a [b] (c)"]


@pytest.mark.parametrize("text", [
    "The text mentions a death but I am not sure how to format it.",
    "result = [Die(mention='x'",
    'result = [Die(mention="unterminated)]',
    "",
])
def test_fatal_parse(schema, text):
    out = parse_output(text, schema)
    assert out.fatal and out.instances == [] and out.category == PARSING_ERROR
    assert out.diagnostics and PARSING_ERROR in out.diagnostics[0].message


def test_serialize_examples(schema):
    assert serialize_instances([]) == "result = []"
    meet = EventInstance("Meet", "met", {"place": ["Paris"], "entity": ["leaders"], "time": ["yesterday"]})
    text = serialize_instances([meet], schema)
    assert text == 'result = [Meet(mention="met", entity=["leaders"], time=["yesterday"], place=["Paris"])]'
    assert "\n" not in text


def test_serialize_refuses_invalid(schema):
    with pytest.raises(SerializationError):
        serialize_instances([EventInstance("Die", "x", {"weapon": ["gun"]})], schema)
    with pytest.raises(SerializationError):
        serialize_instances([EventInstance("Die", "", {})], schema)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_round_trip_and_strict_acceptance(schema, data):
    xs = data.draw(instances(schema))
    text = serialize_instances(xs, schema)
    out = parse_output(text, schema)
    assert not out.fatal and out.diagnostics == []
    assert out.instances == xs
    assert reference_parse(text) == xs
    # the same list behind commentary parses identically
    assert parse_output(f"Here you go:\n{text}\nDone.", schema).instances == xs


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_batch_split_inverts_concatenation(schema, data):
    k = data.draw(st.integers(1, 8))
    answers = [serialize_instances(data.draw(instances(schema, 2)), schema) for _ in range(k)]
    labels = [f"text{i + 1}" for i in range(k)]
    sep = data.draw(st.sampled_from(["\n", " ", "\n\n"]))
    text = sep.join(f"{lab}: {a}" for lab, a in zip(labels, answers))
    split = split_batch_answers(text, labels)
    assert not split.flagged and split.diagnostics == []
    assert [split.segments[lab] for lab in labels] == answers


def test_batch_split_examples():
    split = split_batch_answers("text1: result=[...] text2: result=[]", ["text1", "text2"])
    assert split.segments == {"text1": "result=[...]", "text2": "result=[]"}
    split = split_batch_answers("text1: a\nTEXT2: b", ["text1", "text2", "text3"])
    assert split.segments["text2"] == "b" and split.segments["text3"] == ""
    assert [d.message for d in split.diagnostics] == ["no answer marker for 'text3'"]
    split = split_batch_answers("no labels here", ["text1", "text2"])
    assert split.flagged and all(v == "" for v in split.segments.values())
    # text1 must not match inside text10
    split = split_batch_answers("text10: x\ntext1: y", ["text1", "text10"])
    assert split.segments == {"text1": "y", "text10": "x"}
    with pytest.raises(ValueError):
        split_batch_answers("x", ["a", "a"])
