"""Monte Carlo Tree Search over prompt states.

Each iteration samples training batches and rolls out from the root to the
depth limit: nodes that already have children are descended by UCT, a
childless node is expanded into up to ``width`` rewrites and the rollout
follows the best of them. Rewards of the rollout are then propagated back
along the path.

Every quantity lives on :class:`SearchNode`; the Q value and reward lists of
the edge ``(parent, action)`` are stored on the child the edge leads to.
"""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .evaluation import evaluate
from .gateway import BackendError, Gateway
from .optimizer_loop import (
    ErrorExample, MetaPromptTemplate, RewriteError, categorize_errors, classify_error, extract_errors,
    generate_answers, generate_feedback, rewrite_prompt,
)
from .prompt_space import EventSchema, PromptState, PromptStore, trajectory

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class ResumableRunError(RuntimeError):
    """The run stopped on a backend failure; the last checkpoint is intact."""

    def __init__(self, message: str, checkpoint: Path | None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class SearchConfig:
    depth_limit: int = 5
    iterations: int = 12
    exploration: float = 2.5
    batch_size: int = 15
    width: int = 3
    early_stop_window: int = 2
    q_rule: str = "max_of_means"
    reward_source: str = "dev"
    eval_batch_size: int = 0
    rewrite_retries: int = 1

    def __post_init__(self) -> None:
        for name in ("depth_limit", "iterations", "batch_size", "width", "early_stop_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.exploration <= 0:
            raise ValueError("exploration must be positive")
        if self.q_rule not in ("max_of_means", "mean_of_means"):
            raise ValueError(f"unknown q_rule {self.q_rule!r}")
        if self.reward_source not in ("dev", "batch"):
            raise ValueError(f"unknown reward_source {self.reward_source!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown search option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class SearchNode:
    id: str
    state_id: str
    depth: int
    created: int
    parent: str | None = None
    action: str | None = None
    iteration: int = 0
    children: list[str] = field(default_factory=list)
    visits: int = 0
    q: float = 0.0
    reward: float = 0.0
    rewards: list[list[float]] = field(default_factory=list)
    dev_reward: float | None = None
    dev_report: dict = field(default_factory=dict)
    batch_reward: float | None = None
    zero_error_streak: int = 0
    early_stopped: bool = False
    error_counts: list[int] = field(default_factory=list)
    error_categories: dict[str, int] = field(default_factory=dict)
    eval_ref: str | None = None


def uct_score(q: float, parent_visits: int, child_visits: int, c: float) -> float:
    if child_visits == 0:
        return math.inf
    bonus = math.sqrt(math.log(parent_visits) / child_visits) if parent_visits > 0 else 0.0
    return q + c * bonus


def uct_argmax(qs: Sequence[float], child_visits: Sequence[int], parent_visits: int, c: float) -> int:
    """Index maximizing Q + c*sqrt(ln N(parent)/N(child)); unvisited first, ties to the earliest."""
    best, best_score = 0, -math.inf
    for i, (q, n) in enumerate(zip(qs, child_visits)):
        s = uct_score(q, parent_visits, n, c)
        if s > best_score:
            best, best_score = i, s
            if s == math.inf:
                break
    return best


def aggregate_q(rewards: Sequence[Sequence[float]], rule: str = "max_of_means") -> float:
    means = [sum(r) / len(r) for r in rewards if r]
    if not means:
        return 0.0
    return max(means) if rule == "max_of_means" else sum(means) / len(means)


class SearchTree:
    def __init__(self) -> None:
        self.nodes: dict[str, SearchNode] = {}
        self.actions: dict[str, str] = {}
        self.states = PromptStore()
        self.root_id: str | None = None

    def __getitem__(self, node_id: str) -> SearchNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> SearchNode:
        return self.nodes[self.root_id]

    def children(self, node: SearchNode) -> list[SearchNode]:
        return [self.nodes[c] for c in node.children]

    def state(self, node: SearchNode) -> PromptState:
        return self.states[node.state_id]

    def add(self, node: SearchNode, state: PromptState, action_text: str | None = None) -> SearchNode:
        self.states.add(state)
        self.nodes[node.id] = node
        if node.parent is None:
            self.root_id = node.id
        else:
            self.nodes[node.parent].children.append(node.id)
        if node.action is not None and action_text is not None:
            self.actions[node.action] = action_text
        return node

    def best(self) -> SearchNode:
        """Highest dev reward; ties go to the shallower, then the earlier node."""
        scored = [n for n in self.nodes.values() if n.dev_reward is not None]
        return min(scored, key=lambda n: (-n.dev_reward, n.depth, n.created))

    def path_to(self, node: SearchNode) -> list[SearchNode]:
        path = [node]
        while path[-1].parent is not None:
            path.append(self.nodes[path[-1].parent])
        return path[::-1]


def uct_select(tree: SearchTree, node: SearchNode, c: float) -> SearchNode:
    kids = tree.children(node)
    if not kids:
        raise ValueError(f"node {node.id} has no children to select from")
    i = uct_argmax([k.q for k in kids], [k.visits for k in kids], node.visits, c)
    return kids[i]


def backpropagate(path: Sequence[SearchNode], rewards: Sequence[float], rule: str = "max_of_means") -> None:
    """``path`` is root..leaf; ``rewards[t]`` belongs to the edge path[t] -> path[t+1]."""
    if len(rewards) != len(path) - 1:
        raise ValueError("need exactly one reward per edge")
    for t in range(len(rewards) - 1, -1, -1):
        child = path[t + 1]
        child.rewards.append(list(rewards[t:]))
        child.q = aggregate_q(child.rewards, rule)


class BatchSampler:
    """Uniform batches without replacement; reshuffles when the pool runs dry."""

    def __init__(self, n: int, k: int, rng: random.Random) -> None:
        if n < 1:
            raise ValueError("cannot sample from an empty training set")
        self.n, self.k, self.rng = n, min(k, n), rng
        self.order: list[int] = []
        self.cursor = 0

    def next(self) -> list[int]:
        if self.cursor + self.k > len(self.order):
            self.order = list(range(self.n))
            self.rng.shuffle(self.order)
            self.cursor = 0
        batch = self.order[self.cursor:self.cursor + self.k]
        self.cursor += self.k
        return batch

    def state(self) -> dict:
        return {"order": self.order, "cursor": self.cursor}

    def restore(self, d: dict) -> None:
        self.order, self.cursor = list(d["order"]), int(d["cursor"])


def _rng_state(rng: random.Random) -> list:
    version, internal, gauss = rng.getstate()
    return [version, list(internal), gauss]


def _set_rng_state(rng: random.Random, st: list) -> None:
    rng.setstate((st[0], tuple(st[1]), st[2]))


class PromptSearch:
    """Runs the search loop and owns checkpointing.

    ``run_dir`` (optional) receives ``checkpoint.json`` after every
    iteration, per-node dev predictions under ``evals/`` and extracted
    errors in ``errors.jsonl``.
    """

    def __init__(self, config: SearchConfig, *, schema: EventSchema, task, train: Sequence, dev: Sequence,
                 task_gateway: Gateway, optimizer_gateway: Gateway, root: PromptState, seed: int = 0,
                 feedback_template: MetaPromptTemplate | None = None,
                 optimize_template: MetaPromptTemplate | None = None,
                 run_dir: str | Path | None = None) -> None:
        self.config = config
        self.schema = schema
        self.task = task
        self.train = list(train)
        self.dev = list(dev)
        self.task_gateway = task_gateway
        self.optimizer_gateway = optimizer_gateway
        self.feedback_template = feedback_template
        self.optimize_template = optimize_template
        self.seed = seed
        self.rng = random.Random(seed)
        self.sampler = BatchSampler(len(self.train), config.batch_size, self.rng)
        self.run_dir = Path(run_dir) if run_dir else None
        self.tree = SearchTree()
        self.iteration = 0
        self._root_state = root

    # -- persistence ------------------------------------------------------

    @property
    def checkpoint_path(self) -> Path | None:
        return self.run_dir / "checkpoint.json" if self.run_dir else None

    def to_checkpoint(self) -> dict:
        nodes = [asdict(n) for n in sorted(self.tree.nodes.values(), key=lambda n: n.created)]
        edges = [{"parent": n["parent"], "action": n["action"], "child": n["id"]} for n in nodes if n["parent"]]
        return {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "iteration": self.iteration,
            "rng_seed": self.seed,
            "rng_state": _rng_state(self.rng),
            "sampler": self.sampler.state(),
            "root": self.tree.root_id,
            "schema": self.schema.to_dict(),
            "nodes": nodes,
            "edges": edges,
            "actions": self.tree.actions,
            "states": [s.to_dict() for s in self.tree.states],
        }

    def save_checkpoint(self, path: str | Path | None = None) -> Path | None:
        path = Path(path) if path else self.checkpoint_path
        if path is None:
            return None
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(dump_checkpoint(self.to_checkpoint()), encoding="utf-8")
        tmp.replace(path)
        return path

    def load_checkpoint(self, data: dict) -> None:
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {data.get('format')!r}")
        self.config = SearchConfig.from_dict(data["config"])
        self.seed = data["rng_seed"]
        _set_rng_state(self.rng, data["rng_state"])
        self.sampler = BatchSampler(len(self.train), self.config.batch_size, self.rng)
        self.sampler.restore(data["sampler"])
        self.iteration = data["iteration"]
        tree = SearchTree()
        for s in data["states"]:
            tree.states.add(PromptState.from_dict(s))
        for n in data["nodes"]:
            node = SearchNode(**n)
            tree.nodes[node.id] = node
        tree.root_id = data["root"]
        tree.actions = dict(data["actions"])
        self.tree = tree
        self._trim_error_log()

    def _trim_error_log(self) -> None:
        """Drop error rows written by an iteration that never reached its checkpoint."""
        path = self.run_dir / "errors.jsonl" if self.run_dir else None
        if path is None or not path.exists():
            return
        lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
        kept = [ln for ln in lines if ln.strip() and json.loads(ln)["iteration"] <= self.iteration]
        if len(kept) != len(lines):
            path.write_text("".join(kept), encoding="utf-8")

    @classmethod
    def resume(cls, checkpoint: str | Path, **kwargs) -> "PromptSearch":
        """Rebuild a search from a checkpoint; ``kwargs`` are the constructor's dependencies."""
        data = json.loads(Path(checkpoint).read_text(encoding="utf-8"))
        config = SearchConfig.from_dict(data["config"])
        states = {s["id"]: s for s in data["states"]}
        root = PromptState.from_dict(states[next(n["state_id"] for n in data["nodes"] if n["id"] == data["root"])])
        search = cls(config, root=root, seed=data["rng_seed"], **kwargs)
        search.load_checkpoint(data)
        return search

    # -- evaluation -------------------------------------------------------

    def _eval_path(self, node_id: str) -> tuple[Path | None, str | None]:
        if self.run_dir is None:
            return None, None
        rel = f"evals/{node_id}.jsonl"
        return self.run_dir / rel, rel

    def _evaluate_node(self, node: SearchNode, state: PromptState) -> None:
        path, rel = self._eval_path(node.id)
        result = evaluate(state, self.dev, schema=self.schema, task=self.task, gateway=self.task_gateway,
                          batch_size=self.config.eval_batch_size or self.config.batch_size,
                          out_path=path, tag=f"dev {node.id}")
        node.dev_reward = result.reward
        node.dev_report = result.report
        node.eval_ref = rel

    def _log_errors(self, node: SearchNode, errors: Sequence[ErrorExample]) -> None:
        if self.run_dir is None:
            return
        self.run_dir.mkdir(parents=True, exist_ok=True)
        with (self.run_dir / "errors.jsonl").open("a", encoding="utf-8") as fh:
            for e in errors:
                row = e.to_dict(self.task)
                row["node"] = node.id
                row["iteration"] = self.iteration
                row["categories"] = sorted(c.value for c in classify_error(e))
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    # -- search steps -----------------------------------------------------

    def initialize(self) -> None:
        if self.tree.root_id is not None:
            return
        root = SearchNode(id="n0000", state_id=self._root_state.id, depth=0, created=0, iteration=0)
        self.tree.add(root, self._root_state)
        self._evaluate_node(root, self._root_state)
        self.save_checkpoint()

    def expand(self, node: SearchNode) -> list[SearchNode]:
        """Up to ``width`` Step 1-4 expansions of ``node``; each gets its own batch."""
        state = self.tree.state(node)
        created: list[SearchNode] = []
        zero_error_attempts = 0
        for _ in range(self.config.width):
            batch = [self.train[i] for i in self.sampler.next()]
            tag = f"expand {node.id}"
            answers = generate_answers(state, batch, schema=self.schema, task=self.task,
                                       gateway=self.task_gateway, batch_size=self.config.batch_size, tag=tag)
            errors = extract_errors(answers, self.task)
            node.error_counts.append(len(errors))
            for cat, n in categorize_errors(errors).items():
                node.error_categories[cat.value] = node.error_categories.get(cat.value, 0) + n
            self._log_errors(node, errors)
            if not errors:
                zero_error_attempts += 1
                continue
            feedback = generate_feedback(state, errors, schema=self.schema, task=self.task,
                                         gateway=self.optimizer_gateway, template=self.feedback_template, tag=tag)
            index = len(self.tree)
            child_id = f"n{index:04d}"
            try:
                child_state, diags = rewrite_prompt(
                    state, feedback, errors, schema=self.schema, task=self.task, gateway=self.optimizer_gateway,
                    trajectory=trajectory(state, self.tree.states, self.schema), child_id=f"s{index:04d}",
                    template=self.optimize_template, retries=self.config.rewrite_retries, tag=tag)
            except RewriteError as exc:
                log.warning("expansion of %s skipped: %s", node.id, exc)
                continue
            for d in diags:
                log.info("rewrite of %s: %s", node.id, d)
            child = SearchNode(id=child_id, state_id=child_state.id, depth=node.depth + 1, created=index,
                               parent=node.id, action=f"f{index:04d}", iteration=self.iteration)
            self.tree.add(child, child_state, feedback)
            self._evaluate_node(child, child_state)
            # reward of the batch answers that motivated this rewrite
            child.batch_reward = self.task.score([a.outcome for a in answers], [a.gold for a in answers]).reward
            child.reward = child.dev_reward if self.config.reward_source == "dev" else child.batch_reward
            created.append(child)
        if created or zero_error_attempts < self.config.width:
            node.zero_error_streak = 0
        else:
            node.zero_error_streak += 1
            if node.zero_error_streak >= self.config.early_stop_window:
                node.early_stopped = True
                log.info("node %s early-stopped after %d error-free rollouts", node.id, node.zero_error_streak)
        return created

    def rollout(self) -> list[SearchNode]:
        node = self.tree.root
        path = [node]
        rewards: list[float] = []
        for _ in range(self.config.depth_limit):
            if node.early_stopped or node.depth >= self.config.depth_limit:
                break
            if node.children:
                child = uct_select(self.tree, node, self.config.exploration)
            else:
                kids = self.expand(node)
                if not kids:
                    break
                child = min(kids, key=lambda k: (-k.reward, k.created))
            path.append(child)
            rewards.append(child.reward)
            node = child
            if child.early_stopped:
                break
        for n in path:
            n.visits += 1
        if rewards:
            backpropagate(path, rewards, self.config.q_rule)
        return path

    def run(self, until: int | None = None) -> SearchTree:
        """Iterate until ``config.iterations`` (or ``until``) iterations are complete."""
        self.initialize()
        stop = min(self.config.iterations, until) if until is not None else self.config.iterations
        while self.iteration < stop:
            self.iteration += 1
            try:
                self.rollout()
            except BackendError as exc:
                raise ResumableRunError(
                    f"iteration {self.iteration} aborted by backend failure: {exc}; "
                    f"resume from {self.checkpoint_path}", self.checkpoint_path) from exc
            self.save_checkpoint()
        return self.tree


def dump_checkpoint(data: dict) -> str:
    return json.dumps(data, ensure_ascii=False, sort_keys=True, indent=1) + "\n"


def load_checkpoint(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
