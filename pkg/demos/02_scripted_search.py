"""Run the full tree search offline against scripted models and inspect the result.

The scripted optimizer turns prompt revision v into v + 1 and the scripted
task model answers more of the dev set correctly at every revision, so the
best prompt is the first one to reach the depth limit. Reports land in
``runs/demo_scripted/reports``. Run with ``python3 demos/02_scripted_search.py``.
"""
from __future__ import annotations

from pathlib import Path

from promptmcts import EventExtractionTask, Gateway, PromptSearch, SearchConfig, load_dataset
from promptmcts.gateway import OPTIMIZER, TASK, Transcript
from promptmcts.reports import build_reports, edit_summary
from promptmcts.runner import bundled_root, bundled_schema, clear_run_dir
from promptmcts.scripted import Staircase

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data" / "synthetic"
RUN = ROOT / "runs" / "demo_scripted"

schema = bundled_schema()
train = load_dataset(DATA / "train_low.jsonl", schema).examples
dev = load_dataset(DATA / "dev.jsonl", schema).examples[:20]
stair = Staircase(schema, bundled_root(), [train, dev])
clear_run_dir(RUN)

search = PromptSearch(
    SearchConfig(depth_limit=5, iterations=12, width=3, batch_size=15),
    schema=schema, task=EventExtractionTask(schema), train=train, dev=dev,
    task_gateway=Gateway(stair.task_backend(), TASK, transcript=Transcript(RUN / "transcripts" / "task.jsonl")),
    optimizer_gateway=Gateway(stair.optimizer_backend(), OPTIMIZER,
                              transcript=Transcript(RUN / "transcripts" / "optimizer.jsonl")),
    root=stair.root_state(), seed=0, run_dir=RUN,
)
tree = search.run()

print(f"{len(tree)} nodes after {search.iteration} iterations")
for depth in range(6):
    rewards = sorted({round(n.dev_reward, 2) for n in tree.nodes.values() if n.depth == depth})
    print(f"  depth {depth}: {sum(n.depth == depth for n in tree.nodes.values()):3d} nodes, dev reward {rewards}")

best = tree.best()
print(f"best node {best.id} at depth {best.depth}, dev reward {best.dev_reward:.2f}")
print("path:", " -> ".join(n.id for n in tree.path_to(best)))
state = tree.state(best)
print("guidelines edited by the last rewrite:", ", ".join(state.edited_guidelines))

tables = {t.name: t for t in build_reports(search.to_checkpoint(), RUN)}
for t in tables.values():
    t.write(RUN / "reports")
print("edit statistics:", edit_summary(tables["edits"]))
print("token usage:")
print(tables["tokens"].to_csv())
