"""CSV reports computed from a search checkpoint and the run's transcripts.

Every report is a pure function of the checkpoint plus files under the run
directory, so a finished run can be re-reported at any time without models.
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .gateway import OPTIMIZER, TASK, Transcript, count_tokens, split_batch_prompt
from .optimizer_loop import ErrorCategory
from .prompt_space import INSTRUCTION_KEY, EventSchema, PromptState, compose

DEFAULT_THRESHOLDS = tuple(float(t) for t in range(0, 101, 5))


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[list] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_cell(v) for v in row])
        return buf.getvalue()

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / f"{self.name}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


def _cell(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, bool):
        return int(v)
    return "" if v is None else v


class RunView:
    """Read-only view of a checkpoint and, optionally, the run directory beside it."""

    def __init__(self, checkpoint: dict, run_dir: str | Path | None = None) -> None:
        self.data = checkpoint
        self.run_dir = Path(run_dir) if run_dir else None
        self.nodes = sorted(checkpoint["nodes"], key=lambda n: n["created"])
        self.by_id = {n["id"]: n for n in self.nodes}
        self.states = {s["id"]: PromptState.from_dict(s) for s in checkpoint["states"]}
        self.schema = EventSchema.from_dict(checkpoint.get("schema", {"event_types": []}))

    def state(self, node: dict) -> PromptState:
        return self.states[node["state_id"]]

    def complete(self, node: dict) -> bool:
        """False when a predictions file referenced by the node is missing."""
        ref = node.get("eval_ref")
        if ref is None or self.run_dir is None:
            return node.get("dev_reward") is not None
        return (self.run_dir / ref).exists()

    def score(self, node: dict) -> float | None:
        """AC F1 for event extraction, otherwise the node's dev reward."""
        report = node.get("dev_report") or {}
        if "AC_f1" in report:
            return report["AC_f1"]
        return node.get("dev_reward")


def convergence(view: RunView) -> Table:
    """One row per node in creation order with running bests by creation and by depth."""
    t = Table("convergence", ["node", "parent", "depth", "iteration", "reward", "best_so_far",
                              "best_upto_depth", "complete"])
    best_by_depth: dict[int, float] = {}
    for n in view.nodes:
        r = n["dev_reward"]
        if r is not None:
            best_by_depth[n["depth"]] = max(best_by_depth.get(n["depth"], r), r)
    best = None
    for n in view.nodes:
        r = n["dev_reward"]
        if r is not None:
            best = r if best is None else max(best, r)
        upto = [v for d, v in best_by_depth.items() if d <= n["depth"]]
        t.rows.append([n["id"], n["parent"], n["depth"], n["iteration"], r, best,
                       max(upto) if upto else None, view.complete(n)])
    return t


def convergence_by_depth(view: RunView) -> Table:
    """Best dev reward among all nodes at depth <= d, for each depth d in the tree."""
    t = Table("convergence_by_depth", ["depth", "best_reward", "nodes"])
    depths = sorted({n["depth"] for n in view.nodes})
    for d in depths:
        scored = [n["dev_reward"] for n in view.nodes if n["depth"] <= d and n["dev_reward"] is not None]
        t.rows.append([d, max(scored) if scored else None, sum(n["depth"] == d for n in view.nodes)])
    return t


def survival(view: RunView, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> Table:
    """Fraction of explored prompts scoring at least each threshold."""
    scores = [s for s in (view.score(n) for n in view.nodes) if s is not None]
    t = Table("survival", ["threshold", "fraction", "count"])
    for th in thresholds:
        k = sum(s >= th for s in scores)
        t.rows.append([float(th), k / len(scores) if scores else 0.0, k])
    return t


def prompt_length(view: RunView) -> Table:
    t = Table("prompt_length", ["node", "depth", "prompt_tokens", "score"])
    for n in view.nodes:
        text = compose(view.state(n), view.schema)
        t.rows.append([n["id"], n["depth"], count_tokens(text), view.score(n)])
    return t


def edit_stats(view: RunView) -> Table:
    """Per non-root node: how many guidelines the rewrite changed and how long they are."""
    t = Table("edits", ["node", "parent", "depth", "instruction_edited", "edited_guidelines",
                        "edited_guideline_tokens", "edited_types"])
    for n in view.nodes:
        if n["parent"] is None:
            continue
        st = view.state(n)
        types = sorted(k for k in st.edited_types if k != INSTRUCTION_KEY)
        tokens = sum(count_tokens(st.guidelines[k]) for k in types)
        t.rows.append([n["id"], n["parent"], n["depth"], INSTRUCTION_KEY in st.edited_types, len(types),
                       tokens, " ".join(types)])
    return t


def edit_summary(edits: Table) -> dict:
    counts = edits.column("edited_guidelines")
    tokens = edits.column("edited_guideline_tokens")
    if not counts:
        return {"nodes": 0, "mean_edited_guidelines": 0.0, "mean_edited_guideline_tokens": 0.0}
    return {"nodes": len(counts), "mean_edited_guidelines": sum(counts) / len(counts),
            "mean_edited_guideline_tokens": sum(tokens) / len(tokens)}


def error_histogram(view: RunView) -> Table:
    cats = [c.value for c in ErrorCategory]
    t = Table("error_categories", ["node", "depth", "errors", *cats])
    for n in view.nodes:
        hist = n.get("error_categories") or {}
        t.rows.append([n["id"], n["depth"], sum(n.get("error_counts") or []), *(hist.get(c, 0) for c in cats)])
    return t


def token_usage(exchanges: Iterable) -> Table:
    """Mean output tokens per call and per answered query, for each model role."""
    agg: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for ex in exchanges:
        a = agg[ex.role]
        a["calls"] += 1
        a["completion"] += ex.completion_tokens
        a["reasoning"] += ex.reasoning_tokens
        split = split_batch_prompt(ex.prompt) if ex.role == TASK else None
        a["queries"] += len(split[1]) if split else 1
    t = Table("tokens", ["role", "calls", "queries", "mean_output_tokens", "mean_completion_tokens",
                         "mean_reasoning_tokens", "mean_output_tokens_per_query"])
    known = (TASK, OPTIMIZER)
    for role in sorted(agg, key=lambda r: (known.index(r) if r in known else len(known), r)):
        a = agg[role]
        out = a["completion"] + a["reasoning"]
        t.rows.append([role, a["calls"], a["queries"], out / a["calls"], a["completion"] / a["calls"],
                       a["reasoning"] / a["calls"], out / a["queries"]])
    return t


def transcript_paths(run_dir: Path) -> list[Path]:
    d = run_dir / "transcripts"
    return sorted(d.glob("*.jsonl")) if d.exists() else []


def build_reports(checkpoint: dict, run_dir: str | Path | None = None,
                  thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> list[Table]:
    view = RunView(checkpoint, run_dir)
    tables = [convergence(view), convergence_by_depth(view), survival(view, thresholds),
              prompt_length(view), edit_stats(view), error_histogram(view)]
    exchanges = []
    if view.run_dir is not None:
        for p in transcript_paths(view.run_dir):
            exchanges += Transcript.read(p)
    tables.append(token_usage(exchanges))
    return tables


def write_reports(checkpoint: dict, run_dir: str | Path | None, out_dir: str | Path,
                  thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> list[Path]:
    return [t.write(out_dir) for t in build_reports(checkpoint, run_dir, thresholds)]
