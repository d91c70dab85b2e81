"""Coding tasks in the three formats the solver trains on.

* induction: infer ``f`` from input/output pairs; the first ``public_count``
  examples are shown, the rest are private tests.
* deduction: given ``f`` and one input, predict the output.
* abduction: given ``f`` and one output, produce any input ``i`` with
  ``f(i) == output``.

Teachers only ever propose induction tasks; deduction and abduction views
are derived from them for the solver. Corpus files are JSON lines, one task
per line (see ``task_to_record``).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .executor import Executor, values_equal

log = logging.getLogger(__name__)

KINDS = ("induction", "deduction", "abduction")
STAGES = ("goalpost", "lemma", "lift", "real_data", "seed", "one_step")
AXES = ("io", "f", "none")
DEFAULT_PUBLIC_COUNT = 2
DEFAULT_NUM_EXAMPLES = 5

# stage a parent must have, for stages that require lineage
PARENT_STAGE = {"lemma": "goalpost", "lift": "lemma", "one_step": "goalpost"}


class TaskError(ValueError):
    """Structural problem with a task (too few examples, bad fields)."""


class ConversionError(TaskError):
    pass


class InconsistentExample(TaskError):
    """An example's output disagrees with executing the task's function."""


@dataclass(frozen=True)
class TaskSpec:
    id: str
    kind: str
    statement: str
    examples: tuple[tuple[Any, Any], ...]
    public_count: int
    function_source: str | None = None
    stage: str = "seed"
    axis: str = "none"
    parent_id: str | None = None
    source_id: str | None = None
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise TaskError(f"unknown task kind {self.kind!r}")
        if self.stage not in STAGES:
            raise TaskError(f"unknown stage {self.stage!r}")
        if self.axis not in AXES:
            raise TaskError(f"unknown axis {self.axis!r}")
        object.__setattr__(self, "examples", tuple((i, o) for i, o in self.examples))
        if self.kind == "induction":
            if not 0 <= self.public_count < len(self.examples):
                raise TaskError(
                    f"induction task {self.id!r} needs at least public_count + 1 = "
                    f"{self.public_count + 1} examples, got {len(self.examples)}"
                )
        else:
            if self.function_source is None:
                raise TaskError(f"{self.kind} task {self.id!r} needs a function")
            if len(self.examples) != 1:
                raise TaskError(f"{self.kind} task {self.id!r} carries exactly one example")

    @property
    def public_examples(self) -> tuple[tuple[Any, Any], ...]:
        return self.examples[: self.public_count]

    @property
    def private_examples(self) -> tuple[tuple[Any, Any], ...]:
        return self.examples[self.public_count :]

    @property
    def exposed(self) -> Any:
        """The value shown alongside ``f`` for deduction/abduction tasks."""
        i, o = self.examples[0]
        if self.kind == "deduction":
            return i
        if self.kind == "abduction":
            return o
        raise TaskError("induction tasks expose their public examples instead")

    @property
    def hidden(self) -> Any:
        i, o = self.examples[0]
        if self.kind == "deduction":
            return o
        if self.kind == "abduction":
            return i
        raise TaskError("induction tasks have no single hidden field")


def check_examples(function_source: str, examples: Iterable[tuple[Any, Any]], executor: Executor) -> None:
    for n, (i, o) in enumerate(examples):
        res = executor.run(function_source, i)
        if not res.ok:
            raise InconsistentExample(f"example {n}: function failed ({res.status}: {res.error})")
        if not values_equal(res.output, o):
            raise InconsistentExample(f"example {n}: f({i!r}) = {res.output!r}, expected {o!r}")


def make_induction_task(
    statement: str,
    function_source: str | None,
    examples: Sequence[tuple[Any, Any]],
    public_count: int = DEFAULT_PUBLIC_COUNT,
    *,
    task_id: str = "task",
    stage: str = "seed",
    axis: str = "none",
    parent_id: str | None = None,
    executor: Executor | None = None,
    meta: dict | None = None,
) -> TaskSpec:
    if len(examples) < public_count + 1:
        raise TaskError(
            f"need at least {public_count + 1} examples for {public_count} public, got {len(examples)}"
        )
    if executor is not None and function_source is not None:
        check_examples(function_source, examples, executor)
    return TaskSpec(
        id=task_id,
        kind="induction",
        statement=statement,
        examples=tuple(examples),
        public_count=public_count,
        function_source=function_source,
        stage=stage,
        axis=axis,
        parent_id=parent_id,
        meta=dict(meta or {}),
    )


def _convert(task: TaskSpec, kind: str, rng: np.random.Generator) -> TaskSpec:
    if task.kind != "induction":
        raise ConversionError(f"only induction tasks convert, got {task.kind}")
    if task.function_source is None:
        raise ConversionError(f"task {task.id!r} has no function to show the solver")
    idx = int(rng.integers(len(task.examples)))
    return replace(
        task,
        id=f"{task.id}/{kind[:3]}{idx}",
        kind=kind,
        examples=(task.examples[idx],),
        public_count=0,
        source_id=task.id,
    )


def to_deduction(task: TaskSpec, rng: np.random.Generator) -> TaskSpec:
    return _convert(task, "deduction", rng)


def to_abduction(task: TaskSpec, rng: np.random.Generator) -> TaskSpec:
    return _convert(task, "abduction", rng)


def randomize_format(
    task: TaskSpec,
    rng: np.random.Generator,
    probs: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
) -> TaskSpec:
    """Keep ``task`` as induction or convert it, drawing the format from ``probs``.

    ``probs`` is ordered (induction, deduction, abduction). One uniform draw
    picks the format and, if converting, a second picks the example.
    """
    if task.kind != "induction":
        raise ConversionError(f"only induction tasks are randomized, got {task.kind}")
    choice = KINDS[int(rng.choice(3, p=np.asarray(probs, dtype=float)))]
    if choice == "induction":
        return task
    if task.function_source is None:
        log.info("task %s has no function; kept as induction", task.id)
        return task
    return _convert(task, choice, rng)


def sample_axis(rng: np.random.Generator, mode: str = "both") -> str:
    """Difficulty axis for a new lemma: ``io`` or ``f`` with equal odds.

    ``mode="f_only"`` disables the I/O axis.
    """
    if mode == "f_only":
        return "f"
    if mode != "both":
        raise ValueError(f"unknown axis mode {mode!r}")
    return "io" if rng.random() < 0.5 else "f"


# ---------------------------------------------------------------------------
# serialization


def task_to_record(task: TaskSpec) -> dict:
    rec = {
        "id": task.id,
        "kind": task.kind,
        "statement": task.statement,
        "function": task.function_source,
        "examples": [{"input": i, "output": o} for i, o in task.examples],
        "public_count": task.public_count,
        "stage": task.stage,
        "axis": task.axis,
        "parent_id": task.parent_id,
    }
    if task.source_id is not None:
        rec["source_id"] = task.source_id
    if task.meta:
        rec["meta"] = task.meta
    return rec


def _example_pairs(raw) -> list[tuple[Any, Any]]:
    pairs = []
    for ex in raw:
        if isinstance(ex, dict) and "input" in ex and "output" in ex:
            pairs.append((ex["input"], ex["output"]))
        elif isinstance(ex, (list, tuple)) and len(ex) == 2:
            pairs.append((ex[0], ex[1]))
        else:
            raise TaskError(f"bad example {ex!r}")
    return pairs


def task_from_record(rec: dict) -> TaskSpec:
    try:
        return TaskSpec(
            id=str(rec["id"]),
            kind=rec.get("kind", "induction"),
            statement=rec["statement"],
            examples=tuple(_example_pairs(rec["examples"])),
            public_count=int(rec.get("public_count", DEFAULT_PUBLIC_COUNT)),
            function_source=rec.get("function"),
            stage=rec.get("stage", "seed"),
            axis=rec.get("axis", "none"),
            parent_id=rec.get("parent_id"),
            source_id=rec.get("source_id"),
            meta=dict(rec.get("meta") or {}),
        )
    except KeyError as exc:
        raise TaskError(f"task record missing field {exc}") from None


def load_tasks(path: str | Path) -> list[TaskSpec]:
    tasks = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                tasks.append(task_from_record(json.loads(line)))
            except (json.JSONDecodeError, TaskError) as exc:
                raise TaskError(f"{path}:{lineno}: {exc}") from None
    return tasks


def dump_tasks(tasks: Iterable[TaskSpec], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in tasks:
            fh.write(json.dumps(task_to_record(t), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# teacher output parsing


class MalformedProposal(TaskError):
    pass


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ParsedProposal:
    statement: str
    function_source: str
    examples: tuple[tuple[Any, Any], ...]
    meta: dict = field(default_factory=dict, compare=False, hash=False)


def parse_proposal(text: str, num_examples: int = DEFAULT_NUM_EXAMPLES) -> ParsedProposal:
    """Parse a teacher's induction proposal.

    Accepts a bare JSON object or one inside a fenced block, with keys
    ``statement``, ``function`` and ``examples`` (exactly ``num_examples``
    input/output pairs). An optional ``meta`` object is carried through
    untouched.
    """
    m = _FENCE.search(text)
    body = m.group(1) if m else text
    start, end = body.find("{"), body.rfind("}")
    if start < 0 or end <= start:
        raise MalformedProposal("no JSON object found")
    try:
        obj = json.loads(body[start : end + 1])
    except json.JSONDecodeError as exc:
        raise MalformedProposal(f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise MalformedProposal("proposal is not an object")
    statement, function = obj.get("statement"), obj.get("function")
    if not isinstance(statement, str) or not statement.strip():
        raise MalformedProposal("missing statement")
    if not isinstance(function, str) or not function.strip():
        raise MalformedProposal("missing function")
    raw = obj.get("examples")
    if not isinstance(raw, list):
        raise MalformedProposal("missing examples")
    try:
        examples = _example_pairs(raw)
    except TaskError as exc:
        raise MalformedProposal(str(exc)) from None
    if len(examples) != num_examples:
        raise MalformedProposal(f"expected {num_examples} examples, got {len(examples)}")
    meta = obj.get("meta") if isinstance(obj.get("meta"), dict) else {}
    return ParsedProposal(statement.strip(), function.strip(), tuple(examples), meta)
