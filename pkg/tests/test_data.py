from __future__ import annotations

import logging
from pathlib import Path

import pytest

from promptmcts.corpus import synthetic_ee, write_corpus
from promptmcts.data import DatasetError, load_dataset, select_low_resource, write_dataset
from promptmcts.runner import bundled_schema
from promptmcts.tasks import AccuracyTask, NERTask

DATA = Path(__file__).resolve().parents[1] / "data" / "synthetic"


def test_split_sizes_and_coverage(schema):
    sizes = {"train_low": 15, "train": 120, "dev": 100, "test": 250}
    for split, n in sizes.items():
        ds = load_dataset(DATA / f"{split}.jsonl", schema)
        assert len(ds) == n
        counts = ds.type_counts()
        assert all(counts[t] >= 1 for t in schema.names)
        assert counts["None"] >= 1
    low = load_dataset(DATA / "train_low.jsonl", schema)
    assert low.type_counts()["None"] == 5


def test_gold_spans_occur_verbatim(schema):
    for split in ("train", "dev", "test"):
        for ex in load_dataset(DATA / f"{split}.jsonl", schema):
            for e in ex.gold:
                assert e.mention in ex.text
                assert all(s in ex.text for _, s in e.spans())


def test_committed_corpus_is_regenerable(schema, tmp_path):
    paths = write_corpus(tmp_path, schema)
    for name, p in paths.items():
        assert p.read_bytes() == (DATA / p.name).read_bytes(), name


def test_write_read_round_trip(schema, tmp_path):
    ds = synthetic_ee(schema).dev
    write_dataset(ds, tmp_path / "dev.jsonl")
    back = load_dataset(tmp_path / "dev.jsonl", schema)
    assert back.examples == ds.examples
    for task, name in ((AccuracyTask(), "shapes_dev"), (NERTask(), "disease_ner_dev")):
        loaded = load_dataset(DATA / f"{name}.jsonl", task=task)
        write_dataset(loaded, tmp_path / f"{name}.jsonl", task)
        assert (tmp_path / f"{name}.jsonl").read_bytes() == (DATA / f"{name}.jsonl").read_bytes()


def test_empty_file_warns(schema, tmp_path, caplog):
    (tmp_path / "empty.jsonl").write_text("\n")
    with caplog.at_level(logging.WARNING):
        ds = load_dataset(tmp_path / "empty.jsonl", schema)
    assert len(ds) == 0 and "empty" in caplog.text


@pytest.mark.parametrize("lines,fragment", [
    (['{"id": "a", "text": "x"}', "not json"], "bad.jsonl:2"),
    (['{"id": "a", "text": "x"}', '{"id": "a", "text": "y"}'], "duplicate id"),
    (['{"text": "x"}'], "bad.jsonl:1"),
    (['{"id": "a", "text": "x", "events": [{"type": "Die", "trigger": "x", "args": [{"role": "pilot", '
      '"spans": ["x"]}]}]}'], "bad.jsonl:1 (a)"),
])
def test_malformed_lines_report_line_numbers(schema, tmp_path, lines, fragment):
    (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError) as info:
        load_dataset(tmp_path / "bad.jsonl", schema)
    assert fragment in str(info.value)


def test_low_resource_selection(schema):
    train = synthetic_ee(schema).train
    low = select_low_resource(train, per_type=1, n_none=5)
    assert len(low) == 15 and len({ex.id for ex in low}) == 15
    assert {e.event_type for ex in low for e in ex.gold} == set(schema.names)
    assert select_low_resource(train).examples == low.examples


def test_counts_table_lists_every_type(schema):
    table = load_dataset(DATA / "dev.jsonl", schema).counts_table()
    assert all(name in table for name in schema.names + ["None"])


def test_bundled_schema_has_ten_types():
    assert len(bundled_schema().names) == 10
