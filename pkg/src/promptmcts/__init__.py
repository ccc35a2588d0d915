"""Tree-search prompt optimization for schema-guided event extraction."""
from __future__ import annotations

from .data import Dataset, DatasetError, Example, load_dataset, select_low_resource, write_dataset
from .evaluation import EvalResult, evaluate, replay
from .gateway import (
    BackendError, BackendTimeout, FunctionBackend, Gateway, HTTPBackend, MockBackend, MockScript,
    TransientBackendError, Transcript,
)
from .mcts import (
    BatchSampler, PromptSearch, ResumableRunError, SearchConfig, SearchNode, SearchTree, backpropagate,
    uct_score, uct_select,
)
from .optimizer_loop import (
    ErrorCategory, ErrorExample, MetaPromptTemplate, categorize_errors, classify_error, extract_errors,
    generate_answers, generate_feedback, rewrite_prompt,
)
from .prompt_space import (
    INSTRUCTION_KEY, EventSchema, EventType, PromptState, PromptStore, apply_edits, compose, root_state,
)
from .schema_parser import EventInstance, ParseOutcome, parse_output, serialize_instances, split_batch_answers
from .scorer import ScoreReport, reward, reward_from_f1, score_ee
from .tasks import AccuracyTask, EventExtractionTask, NERTask, make_task

__version__ = "0.1.0"
