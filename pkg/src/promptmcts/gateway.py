"""Uniform access to the task and optimizer models.

Two kinds of backend sit behind :class:`Gateway`: an OpenAI-compatible HTTP
client and deterministic mocks. The gateway owns retries, token accounting,
transcripts and batch prompting (several labelled queries per request).
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import requests

from .schema_parser import split_batch_answers

log = logging.getLogger(__name__)

TASK = "task"
OPTIMIZER = "optimizer"

QUERY_HEADER = "# Input texts"
BATCH_INSTRUCTION = (
    "# Answer every input text below separately. Start each answer on a new line with the "
    "text's label followed by a colon, for example: text1: result = [...]"
)
_LABEL_LINE = re.compile(r"^(text\d+):[ \t]?", re.MULTILINE)


class BackendError(RuntimeError):
    def __init__(self, message: str, status: int | None = None) -> None:
        super().__init__(message)
        self.status = status


class TransientBackendError(BackendError):
    pass


class BackendTimeout(BackendError, TimeoutError):
    pass


class MockMiss(BackendError):
    pass


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_tokens: int | None = None


TASK_DECODING = Decoding(temperature=0.0)
OPTIMIZER_DECODING = Decoding(temperature=0.7)


def default_decoding(role: str) -> Decoding:
    return TASK_DECODING if role == TASK else OPTIMIZER_DECODING


@dataclass
class Reply:
    text: str
    reasoning: str | None = None
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    reasoning_tokens: int | None = None


def count_tokens(text: str | None) -> int:
    """Whitespace token count, used whenever a backend reports no usage."""
    return len(text.split()) if text else 0


@dataclass
class ModelExchange:
    role: str
    messages: list[dict]
    decoding: Decoding
    response: str = ""
    reasoning: str | None = None
    prompt_tokens: int = 0
    completion_tokens: int = 0
    reasoning_tokens: int = 0
    model: str = ""
    attempts: int = 1
    tag: str = ""

    @property
    def prompt(self) -> str:
        return "\n".join(m["content"] for m in self.messages)

    @property
    def output_tokens(self) -> int:
        return self.completion_tokens + self.reasoning_tokens

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoding"] = asdict(self.decoding)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelExchange":
        d = dict(d)
        d["decoding"] = Decoding(**d["decoding"])
        return cls(**d)


class Transcript:
    """Append-only JSONL log of exchanges. ``path=None`` keeps records in memory only."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path else None
        self.records: list[ModelExchange] = []
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, exchange: ModelExchange) -> None:
        with self._lock:
            self.records.append(exchange)
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(exchange.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")

    @staticmethod
    def read(path: str | Path) -> list[ModelExchange]:
        out = []
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    out.append(ModelExchange.from_dict(json.loads(line)))
        return out


# -- backends ---------------------------------------------------------------

class HTTPBackend:
    """POST ``{base_url}/v1/chat/completions`` on an OpenAI-compatible server."""

    def __init__(self, base_url: str, model: str, api_key_env: str = "MODEL_API_KEY",
                 timeout: float = 120.0, session: requests.Session | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session or requests.Session()

    @property
    def url(self) -> str:
        if self.base_url.endswith("/v1"):
            return f"{self.base_url}/chat/completions"
        return f"{self.base_url}/v1/chat/completions"

    def send(self, messages: list[dict], decoding: Decoding) -> Reply:
        payload: dict[str, Any] = {"model": self.model, "messages": messages,
                                   "temperature": decoding.temperature}
        if decoding.max_tokens is not None:
            payload["max_tokens"] = decoding.max_tokens
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self.session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientBackendError(f"transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}: {resp.text[:300]}", resp.status_code)
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:300]}", resp.status_code)
        try:
            data = resp.json()
            message = data["choices"][0]["message"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion body: {resp.text[:300]}", resp.status_code) from exc
        usage = data.get("usage") or {}
        details = usage.get("completion_tokens_details") or {}
        completion, reasoning = usage.get("completion_tokens"), details.get("reasoning_tokens")
        if completion is not None and reasoning is not None:
            # servers count reasoning inside completion_tokens; keep the two disjoint
            completion = max(0, completion - reasoning)
        return Reply(
            text=message.get("content") or "",
            reasoning=message.get("reasoning_content") or message.get("reasoning"),
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=completion,
            reasoning_tokens=reasoning,
        )


@dataclass
class MockEntry:
    match: Any
    response: str
    reasoning: str | None = None

    def matches(self, target: str, query: str | None) -> bool:
        m = self.match
        if isinstance(m, str):
            return m in target
        if isinstance(m, list):
            return all(s in target for s in m)
        if isinstance(m, dict):
            if "sha256" in m and hashlib.sha256(target.encode("utf-8")).hexdigest() != m["sha256"]:
                return False
            if "query" in m and (query is None or query.strip() != m["query"].strip()):
                return False
            return all(s in target for s in m.get("contains", []))
        raise ValueError(f"unsupported matcher {m!r}")


@dataclass
class MockScript:
    """Ordered (matcher, response) pairs; the first matching entry answers.

    ``on_miss`` decides what happens when nothing matches: ``"error"`` raises
    :class:`MockMiss`, ``"default"`` returns ``default``.
    """

    entries: list[MockEntry] = field(default_factory=list)
    on_miss: str = "error"
    default: str = ""

    def add(self, match: Any, response: str, reasoning: str | None = None) -> "MockScript":
        self.entries.append(MockEntry(match, response, reasoning))
        return self

    def lookup(self, target: str, query: str | None = None) -> tuple[str, str | None]:
        for entry in self.entries:
            if entry.matches(target, query):
                return entry.response, entry.reasoning
        if self.on_miss == "default":
            return self.default, None
        shown = query if query is not None else target[-200:]
        raise MockMiss(f"no scripted response for {shown!r}")

    @classmethod
    def load(cls, path: str | Path, on_miss: str = "error", default: str = "") -> "MockScript":
        script = cls(on_miss=on_miss, default=default)
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    script.add(d["match"], d["response"], d.get("reasoning"))
                except (ValueError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad mock entry: {exc}") from exc
        return script

    def dump(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for e in self.entries:
                row = {"match": e.match, "response": e.response}
                if e.reasoning is not None:
                    row["reasoning"] = e.reasoning
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def render_batch(prompt: str, queries: Sequence[str], start: int = 1) -> tuple[str, list[str]]:
    labels = [f"text{start + i}" for i in range(len(queries))]
    lines = [prompt.rstrip(), "", BATCH_INSTRUCTION, QUERY_HEADER + ":"]
    lines += [f"{label}: {q}" for label, q in zip(labels, queries)]
    return "\n".join(lines) + "\n", labels


def split_batch_prompt(text: str) -> tuple[str, list[tuple[str, str]]] | None:
    """Inverse of :func:`render_batch`: shared prompt plus (label, query) pairs."""
    idx = text.rfind("\n" + QUERY_HEADER)
    if idx < 0:
        return None
    shared = text[:idx]
    body = text[text.index("\n", idx + 1) + 1:] if "\n" in text[idx + 1:] else ""
    marks = list(_LABEL_LINE.finditer(body))
    pairs = []
    for i, m in enumerate(marks):
        stop = marks[i + 1].start() if i + 1 < len(marks) else len(body)
        pairs.append((m.group(1), body[m.end():stop].strip()))
    if shared.endswith(BATCH_INSTRUCTION):
        shared = shared[: -len(BATCH_INSTRUCTION)].rstrip()
    return shared, pairs


def answer_per_query(prompt: str, answer: Callable[[str, str], str]) -> str:
    """Answer a batched prompt one query at a time and reassemble a labelled response."""
    split = split_batch_prompt(prompt)
    if split is None:
        return answer(prompt, prompt)
    shared, pairs = split
    return "\n".join(f"{label}: {answer(shared, query)}" for label, query in pairs)


class MockBackend:
    """Scripted backend. Lookups depend only on the request, never on call order.

    With ``per_query`` the request is unpacked into its labelled queries and
    each one is looked up separately against ``shared prompt + query``.
    """

    def __init__(self, script: MockScript, per_query: bool = False) -> None:
        self.script = script
        self.per_query = per_query

    def send(self, messages: list[dict], decoding: Decoding) -> Reply:
        prompt = "\n".join(m["content"] for m in messages)
        if self.per_query and split_batch_prompt(prompt) is not None:
            text = answer_per_query(prompt, lambda shared, q: self.script.lookup(shared + "\n" + q, q)[0])
            return Reply(text)
        text, reasoning = self.script.lookup(prompt)
        return Reply(text, reasoning)


class FunctionBackend:
    """Wraps ``fn(prompt) -> str`` (or a :class:`Reply`). Useful for echo mocks in tests."""

    def __init__(self, fn: Callable[[str], str | Reply]) -> None:
        self.fn = fn

    def send(self, messages: list[dict], decoding: Decoding) -> Reply:
        out = self.fn("\n".join(m["content"] for m in messages))
        return out if isinstance(out, Reply) else Reply(out)


# -- gateway ----------------------------------------------------------------

@dataclass
class BatchAnswer:
    query: str
    text: str
    failed: bool = False
    note: str = ""


class Gateway:
    def __init__(self, backend, role: str = TASK, decoding: Decoding | None = None, *,
                 max_retries: int = 3, backoff: float = 1.0, sleep: Callable[[float], None] = time.sleep,
                 transcript: Transcript | None = None, max_workers: int = 1, model: str = "") -> None:
        self.backend = backend
        self.role = role
        self.decoding = decoding or default_decoding(role)
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self.transcript = transcript
        self.max_workers = max(1, max_workers)
        self.model = model or getattr(backend, "model", "") or type(backend).__name__
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def complete(self, prompt: str | list[dict], *, tag: str = "", record: bool = True) -> ModelExchange:
        messages = [{"role": "user", "content": prompt}] if isinstance(prompt, str) else list(prompt)
        attempt = 0
        while True:
            attempt += 1
            try:
                reply = self.backend.send(messages, self.decoding)
                break
            except TransientBackendError as exc:
                if attempt > self.max_retries:
                    raise BackendTimeout(f"{self.role} backend still failing after {attempt} attempts: {exc}",
                                         exc.status) from exc
                wait = self.backoff * 2 ** (attempt - 1)
                log.warning("%s backend transient failure (%s); retry %d in %.1fs", self.role, exc, attempt, wait)
                self.sleep(wait)
        with self._lock:
            self._calls += 1
        ex = ModelExchange(
            role=self.role, messages=messages, decoding=self.decoding, response=reply.text,
            reasoning=reply.reasoning,
            prompt_tokens=reply.prompt_tokens if reply.prompt_tokens is not None
            else sum(count_tokens(m["content"]) for m in messages),
            completion_tokens=reply.completion_tokens if reply.completion_tokens is not None
            else count_tokens(reply.text),
            reasoning_tokens=reply.reasoning_tokens if reply.reasoning_tokens is not None
            else count_tokens(reply.reasoning),
            model=self.model, attempts=attempt, tag=tag,
        )
        if record and self.transcript is not None:
            self.transcript.append(ex)
        return ex

    def batch_answer(self, prompt: str, queries: Sequence[str], k: int, *, tag: str = "") -> list[BatchAnswer]:
        """Answer ``queries`` in chunks of ``k`` labelled texts per request, aligned with the input."""
        if k < 1:
            raise ValueError("batch size must be >= 1")
        chunks = [list(queries[i:i + k]) for i in range(0, len(queries), k)]

        def run(chunk: list[str]) -> tuple[ModelExchange, list[BatchAnswer]]:
            text, labels = render_batch(prompt, chunk)
            ex = self.complete(text, tag=tag, record=False)
            split = split_batch_answers(ex.response, labels)
            if split.flagged and len(chunk) == 1:
                return ex, [BatchAnswer(chunk[0], ex.response.strip())]
            if split.flagged:
                return ex, [BatchAnswer(q, "", failed=True, note="no answer labels in response") for q in chunk]
            missing = {d.message for d in split.diagnostics}
            return ex, [BatchAnswer(q, split.segments[lab],
                                    note=f"no answer marker for {lab!r}" if f"no answer marker for {lab!r}" in missing else "")
                        for q, lab in zip(chunk, labels)]

        if self.max_workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.max_workers) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(c) for c in chunks]
        answers: list[BatchAnswer] = []
        for ex, chunk_answers in results:
            if self.transcript is not None:
                self.transcript.append(ex)
            answers.extend(chunk_answers)
        return answers


def expected_calls(n: int, k: int) -> int:
    return math.ceil(n / k)
