"""Regenerate the scripted mock models used by demos/mock/staircase.toml.

The task script answers a growing share of examples correctly at each prompt
revision; the optimizer script rewrites revision v into v + 1. Run from any
directory: ``python3 demos/make_mock_scripts.py``.
"""
from __future__ import annotations

from pathlib import Path

from promptmcts.data import load_dataset
from promptmcts.runner import bundled_root, bundled_schema
from promptmcts.scripted import Staircase

HERE = Path(__file__).resolve().parent
DATA = HERE.parent / "data" / "synthetic"


def main() -> None:
    schema = bundled_schema()
    splits = [load_dataset(DATA / f"{name}.jsonl", schema).examples for name in ("train_low", "dev")]
    stair = Staircase(schema, bundled_root(), splits)
    out = HERE / "mock"
    out.mkdir(exist_ok=True)
    stair.task_script.dump(out / "task.jsonl")
    stair.optimizer_script.dump(out / "optimizer.jsonl")
    stair.root_state().save(out / "root.json")
    print(f"wrote {len(stair.task_script.entries)} task and {len(stair.optimizer_script.entries)} optimizer entries")


if __name__ == "__main__":
    main()
