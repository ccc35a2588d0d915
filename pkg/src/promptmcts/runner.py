"""Run configuration and the operations behind the command line.

A run is described by a TOML file::

    [run]
    task = "ee"            # ee | accuracy | ner
    seed = 0
    output_dir = "runs/demo"

    [data]
    schema = "schema.json" # optional, defaults to the bundled 10-type schema
    train = "train.jsonl"
    dev = "dev.jsonl"
    test = "test.jsonl"    # optional

    [prompt]
    root = "root.json"     # optional for ee, defaults to the bundled root prompt

    [search]
    depth_limit = 5

    [task_model]
    backend = "mock"       # mock | http
    script = "task.jsonl"

    [optimizer_model]
    backend = "http"
    base_url = "http://localhost:8000"
    model = "some-model"

Relative paths are resolved against the directory holding the file. Any
value can be overridden with ``section.key=value`` strings.
"""
from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .data import Dataset, load_dataset
from .evaluation import evaluate, replay
from .gateway import (
    OPTIMIZER, TASK, Decoding, Gateway, HTTPBackend, MockBackend, MockScript, Transcript, default_decoding,
)
from .mcts import PromptSearch, SearchConfig, load_checkpoint
from .optimizer_loop import MetaPromptTemplate
from .prompt_space import EventSchema, PromptState
from .reports import build_reports, edit_summary
from .tasks import make_task

log = logging.getLogger(__name__)

SECTIONS = ("run", "data", "prompt", "search", "task_model", "optimizer_model")
_PATH_KEYS = {
    "run": ("output_dir",),
    "data": ("schema", "train", "dev", "test"),
    "prompt": ("root", "feedback_template", "optimize_template"),
    "task_model": ("script",),
    "optimizer_model": ("script",),
}
_BACKEND_KEYS = {"backend", "script", "per_query", "on_miss", "default", "base_url", "model", "api_key_env",
                 "timeout", "temperature", "max_tokens", "max_retries", "backoff", "max_workers"}
_RUN_ARTIFACTS = ("checkpoint.json", "errors.jsonl", "evals", "transcripts", "reports", "best_prompt.json",
                  "summary.json")


class ConfigError(ValueError):
    """Bad or inconsistent configuration; the command line maps it to exit status 2."""


@dataclass
class BackendSpec:
    backend: str = "mock"
    script: Path | None = None
    per_query: bool = False
    on_miss: str = "error"
    default: str = ""
    base_url: str = ""
    model: str = ""
    api_key_env: str = "MODEL_API_KEY"
    timeout: float = 120.0
    temperature: float | None = None
    max_tokens: int | None = None
    max_retries: int = 3
    backoff: float = 1.0
    max_workers: int = 1


@dataclass
class RunConfig:
    task: str = "ee"
    seed: int = 0
    output_dir: Path = Path("runs/default")
    schema: Path | None = None
    train: Path | None = None
    dev: Path | None = None
    test: Path | None = None
    root: Path | None = None
    feedback_template: Path | None = None
    optimize_template: Path | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    task_model: BackendSpec = field(default_factory=BackendSpec)
    optimizer_model: BackendSpec = field(default_factory=BackendSpec)
    base_dir: Path = Path(".")

    def split_path(self, split: str) -> Path:
        path = {"train": self.train, "dev": self.dev, "test": self.test}.get(split)
        if path is None:
            raise ConfigError(f"no path configured for split {split!r}")
        return path


def parse_override(text: str) -> tuple[str, str, Any]:
    """``section.key=value``; the value is read as a TOML literal, falling back to a bare string."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    dotted, raw = text.split("=", 1)
    section, key = dotted.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return section, key.strip(), value


def _resolve(base: Path, value: Any) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (), seed: int | None = None,
                check_files: bool = True) -> RunConfig:
    raw: dict[str, dict] = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = path.parent
    for section in raw:
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
    for text in overrides:
        section, key, value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in override {text!r}")
        raw.setdefault(section, {})[key] = value
        if section in _PATH_KEYS and key in _PATH_KEYS[section] and not Path(str(value)).is_absolute():
            # overrides are relative to the working directory, not the config file
            raw[section][key] = str(Path.cwd() / str(value))

    cfg = RunConfig(base_dir=base)
    run = dict(raw.get("run", {}))
    for key, value in run.items():
        if key not in ("task", "seed", "output_dir"):
            raise ConfigError(f"unknown option run.{key}")
    cfg.task = run.get("task", cfg.task)
    if cfg.task not in ("ee", "accuracy", "ner"):
        raise ConfigError(f"run.task must be ee, accuracy or ner, not {cfg.task!r}")
    cfg.seed = int(run.get("seed", cfg.seed)) if seed is None else seed
    cfg.output_dir = _resolve(base, run.get("output_dir", cfg.output_dir))
    for section in ("data", "prompt"):
        for key, value in raw.get(section, {}).items():
            if key not in _PATH_KEYS[section]:
                raise ConfigError(f"unknown option {section}.{key}")
            setattr(cfg, key, _resolve(base, value))
    try:
        cfg.search = SearchConfig.from_dict(raw.get("search", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[search]: {exc}") from exc
    for section in ("task_model", "optimizer_model"):
        opts = dict(raw.get(section, {}))
        unknown = set(opts) - _BACKEND_KEYS
        if unknown:
            raise ConfigError(f"unknown option(s) in [{section}]: {sorted(unknown)}")
        if "script" in opts:
            opts["script"] = _resolve(base, opts["script"])
        spec = BackendSpec(**opts)
        if spec.backend not in ("mock", "http"):
            raise ConfigError(f"{section}.backend must be mock or http")
        if spec.backend == "http" and not (spec.base_url and spec.model):
            raise ConfigError(f"{section}: http backend needs base_url and model")
        setattr(cfg, section, spec)
    if check_files:
        for key in ("schema", "train", "dev", "test", "root", "feedback_template", "optimize_template"):
            p = getattr(cfg, key)
            if p is not None and not p.exists():
                raise ConfigError(f"{key} file {p} does not exist")
        for section in ("task_model", "optimizer_model"):
            spec = getattr(cfg, section)
            if spec.backend == "mock" and spec.script is not None and not spec.script.exists():
                raise ConfigError(f"{section}.script {spec.script} does not exist")
    return cfg


# -- construction -----------------------------------------------------------

def bundled_schema() -> EventSchema:
    text = resources.files("promptmcts.resources").joinpath("ace10_schema.json").read_text(encoding="utf-8")
    return EventSchema.from_dict(json.loads(text))


def bundled_root() -> PromptState:
    text = resources.files("promptmcts.resources").joinpath("ace10_root.json").read_text(encoding="utf-8")
    return PromptState.from_json(text)


def load_schema(cfg: RunConfig) -> EventSchema:
    if cfg.task != "ee":
        return EventSchema(()) if cfg.schema is None else EventSchema.load(cfg.schema)
    return EventSchema.load(cfg.schema) if cfg.schema else bundled_schema()


def load_root(cfg: RunConfig, schema: EventSchema) -> PromptState:
    if cfg.root is not None:
        state = PromptState.load(cfg.root)
    elif cfg.task == "ee" and cfg.schema is None:
        state = bundled_root()
    else:
        raise ConfigError("prompt.root is required unless the bundled event schema is used")
    state.validate(schema)
    return state


def build_backend(spec: BackendSpec):
    if spec.backend == "http":
        return HTTPBackend(spec.base_url, spec.model, api_key_env=spec.api_key_env, timeout=spec.timeout)
    script = MockScript.load(spec.script, spec.on_miss, spec.default) if spec.script else \
        MockScript(on_miss=spec.on_miss, default=spec.default)
    return MockBackend(script, per_query=spec.per_query)


def build_gateway(spec: BackendSpec, role: str, transcript: Transcript | None = None) -> Gateway:
    base = default_decoding(role)
    decoding = Decoding(base.temperature if spec.temperature is None else spec.temperature, spec.max_tokens)
    return Gateway(build_backend(spec), role, decoding, max_retries=spec.max_retries, backoff=spec.backoff,
                   transcript=transcript, max_workers=spec.max_workers, model=spec.model)


@dataclass
class Workspace:
    """Everything a command needs, built once from a :class:`RunConfig`."""

    config: RunConfig
    schema: EventSchema
    task: Any
    task_gateway: Gateway
    optimizer_gateway: Gateway

    def dataset(self, split: str) -> Dataset:
        return load_dataset(self.config.split_path(split), self.schema if self.config.task == "ee" else None,
                            self.task, split)


def workspace(cfg: RunConfig, transcripts: Path | None = None) -> Workspace:
    schema = load_schema(cfg)
    task = make_task(cfg.task, schema)

    def transcript(role: str) -> Transcript | None:
        return Transcript(transcripts / f"{role}.jsonl") if transcripts else None

    return Workspace(cfg, schema, task, build_gateway(cfg.task_model, TASK, transcript(TASK)),
                     build_gateway(cfg.optimizer_model, OPTIMIZER, transcript(OPTIMIZER)))


def _template(path: Path | None) -> MetaPromptTemplate | None:
    return MetaPromptTemplate.from_file(path) if path else None


# -- commands ---------------------------------------------------------------

def clear_run_dir(run_dir: Path) -> None:
    for name in _RUN_ARTIFACTS:
        p = run_dir / name
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()


def run_optimize(cfg: RunConfig, *, resume: bool = False, overwrite: bool = False,
                 until: int | None = None) -> dict:
    """Run (or continue) the search and write the best prompt and a summary into the output directory."""
    run_dir = cfg.output_dir
    checkpoint = run_dir / "checkpoint.json"
    if checkpoint.exists() and not resume:
        if not overwrite:
            raise ConfigError(f"{run_dir} already holds a run; pass --resume or --overwrite")
        clear_run_dir(run_dir)
    if resume and not checkpoint.exists():
        raise ConfigError(f"nothing to resume: {checkpoint} does not exist")
    ws = workspace(cfg, run_dir / "transcripts")
    train, dev = ws.dataset("train"), ws.dataset("dev")
    deps = dict(schema=ws.schema, task=ws.task, train=train.examples, dev=dev.examples,
                task_gateway=ws.task_gateway, optimizer_gateway=ws.optimizer_gateway,
                feedback_template=_template(cfg.feedback_template),
                optimize_template=_template(cfg.optimize_template), run_dir=run_dir)
    if resume:
        search = PromptSearch.resume(checkpoint, **deps)
    else:
        search = PromptSearch(cfg.search, root=load_root(cfg, ws.schema), seed=cfg.seed, **deps)
    tree = search.run(until)
    best = tree.best()
    best_state = tree.state(best)
    (run_dir / "best_prompt.json").write_text(best_state.to_json(), encoding="utf-8")
    summary = {
        "iterations": search.iteration,
        "nodes": len(tree),
        "best_node": best.id,
        "best_depth": best.depth,
        "best_dev_reward": best.dev_reward,
        "root_dev_reward": tree.root.dev_reward,
        "task_calls": ws.task_gateway.calls,
        "optimizer_calls": ws.optimizer_gateway.calls,
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def run_evaluate(cfg: RunConfig, prompt: Path | None, split: str, out: Path | None = None,
                 batch_size: int | None = None) -> dict:
    ws = workspace(cfg, out.parent / "transcripts" if out else None)
    state = PromptState.load(prompt) if prompt else load_root(cfg, ws.schema)
    state.validate(ws.schema)
    data = ws.dataset(split)
    result = evaluate(state, data.examples, schema=ws.schema, task=ws.task, gateway=ws.task_gateway,
                      batch_size=batch_size or cfg.search.eval_batch_size or cfg.search.batch_size,
                      out_path=out, tag=f"evaluate {split}")
    return result.report


def run_replay(cfg: RunConfig, predictions: Path, split: str) -> dict:
    ws = workspace(cfg)
    return replay(predictions, ws.dataset(split).examples, ws.task)


def run_report(run_dir: Path, out_dir: Path | None = None) -> dict:
    checkpoint = run_dir / "checkpoint.json"
    if not checkpoint.exists():
        raise ConfigError(f"{checkpoint} does not exist")
    data = load_checkpoint(checkpoint)
    out_dir = out_dir or run_dir / "reports"
    tables = build_reports(data, run_dir)
    paths = [t.write(out_dir) for t in tables]
    edits = next(t for t in tables if t.name == "edits")
    return {"files": [str(p) for p in paths], "edits": edit_summary(edits)}


def run_validate_data(cfg: RunConfig) -> dict[str, Dataset]:
    schema = load_schema(cfg)
    task = make_task(cfg.task, schema)
    out = {}
    for split in ("train", "dev", "test"):
        path = getattr(cfg, split)
        if path is not None:
            out[split] = load_dataset(path, schema if cfg.task == "ee" else None, task, split)
    if cfg.root is not None or cfg.task == "ee":
        load_root(cfg, schema)
    return out


def config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    return json.loads(json.dumps(d, default=str))


__all__ = [
    "BackendSpec", "ConfigError", "RunConfig", "Workspace", "build_backend", "build_gateway", "bundled_root",
    "bundled_schema", "clear_run_dir", "config_dict", "load_config", "load_root",
    "load_schema", "parse_override", "run_evaluate", "run_optimize", "run_replay", "run_report",
    "run_validate_data", "workspace",
]
