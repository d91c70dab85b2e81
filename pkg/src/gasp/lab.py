"""Scripted teacher, student and trainer over a scalar difficulty model.

Every lab task carries a latent difficulty ``d = d_f + d_io``. A student
with skill ``s`` solves it with probability ``sigmoid(k * (s - d))``. The
trainer raises ``s`` only for passes on tasks within ``boundary_window`` of
the current skill, so a goalpost far beyond the boundary gives no signal on
its own and has to be approached through intermediate tasks.

Tasks are real: each has a statement, an expression program over ``x`` and
examples computed by the built-in executor, so they flow through the same
validity checks, verification and embedding-based novelty filter as model
output would. The statement text is the key the scripted policies use to
look up a task's latent difficulty.
"""

from __future__ import annotations

import builtins
import json
import keyword
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .executor import DENY_LIST, evaluate, values_equal
from .policies import PolicyRequest, TrainItem
from .rng import derive_rng
from .tasks import TaskSpec, make_induction_task

_RESERVED = frozenset(dir(builtins)) | DENY_LIST | {"x", "clock"}

WRONG_PROGRAM = "'__wrong__'"
WRONG_VALUE = json.dumps("__wrong__")

_ONE_STEP_TARGET = {"medium": 0.3, "hard": 0.1}


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class LabConfig:
    initial_skill: float = 0.0
    steepness: float = 4.0
    learning_rate: float = 0.03
    boundary_window: float = 1.0
    goalposts: list[float] = field(default_factory=lambda: [4.0, 8.0])
    lemma_noise: float = 0.25
    lift_increment: float = 0.35
    lift_jitter: float = 0.4
    malformed_rate: float = 0.05
    duplicate_rate: float = 0.10
    teacher_step: float = 1.0
    teacher_initial_estimate: float | None = None
    statement_words: int = 60
    vocabulary_size: int = 400
    real_data_size: int = 200
    real_data_range: tuple[float, float] = (0.0, 6.0)
    world_seed: int = 0
    num_examples: int = 5

    def __post_init__(self) -> None:
        if self.steepness <= 0 or self.learning_rate < 0 or self.boundary_window < 0:
            raise ValueError("steepness must be positive; learning rate and window nonnegative")
        if not (0 <= self.malformed_rate <= 1 and 0 <= self.duplicate_rate <= 1):
            raise ValueError("injection rates must lie in [0, 1]")
        if self.lift_increment <= 0 or not 0 <= self.lift_jitter < 1:
            raise ValueError("lift increment must be positive and jitter in [0, 1)")
        if any(g < 0 for g in self.goalposts):
            raise ValueError("goalpost difficulties must be nonnegative")
        self.real_data_range = tuple(self.real_data_range)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SkillState:
    skill: float
    history: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not math.isfinite(self.skill):
            raise ValueError("skill must be finite")
        if not self.history:
            self.history.append((0, self.skill))

    def advance(self, skill: float) -> "SkillState":
        if not math.isfinite(skill):
            raise ValueError("skill must be finite")
        step = self.history[-1][0] + 1
        return SkillState(skill, self.history + [(step, skill)])


@dataclass(frozen=True)
class SyntheticTask:
    task: TaskSpec
    d_f: float
    d_io: float

    def __post_init__(self) -> None:
        if self.d_f < 0 or self.d_io < 0:
            raise ValueError("difficulty components must be nonnegative")

    @property
    def difficulty(self) -> float:
        return self.d_f + self.d_io

    @property
    def statement(self) -> str:
        return self.task.statement


# ---------------------------------------------------------------------------
# task synthesis

_ONSETS = "b c d f g h j k l m n p r s t v w z br cl dr fl gr pl st tr".split()
_VOWELS = "a e i o u ai ea io ou".split()


def make_vocabulary(size: int, seed: int = 0) -> list[str]:
    """Pronounceable letter-only pseudo-words (digits would split tokens)."""
    rng = derive_rng(seed, "vocabulary")
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < size:
        n = int(rng.integers(2, 4))
        w = "".join(_ONSETS[int(rng.integers(len(_ONSETS)))] + _VOWELS[int(rng.integers(len(_VOWELS)))] for _ in range(n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _stage(inner: str, var: str, rng: np.random.Generator) -> str:
    kind = int(rng.integers(7))
    a, b = int(rng.integers(2, 10)), int(rng.integers(0, 10))
    m = int(rng.integers(5, 23))
    if kind == 0:
        return f"[({var} * {a} + {b}) % {m} for {var} in {inner}]"
    if kind == 1:
        return f"[{var} for {var} in {inner} if {var} % {a} != {b % a}]"
    if kind == 2:
        return f"[{var} + {b} for {var} in {inner}][::-1]"
    if kind == 3:
        return f"sorted([{var} % {m} for {var} in {inner}])"
    if kind == 4:
        return f"[{var} - {b} for {var} in {inner}][{int(rng.integers(1, 3))}:]"
    if kind == 5:
        return f"[abs({var} - {b}) for {var} in {inner}]"
    return f"[({var} * {var} + {b}) % {m} for {var} in {inner}]"


def make_program(d_f: float, rng: np.random.Generator, names: Sequence[str] = ("v",)) -> str:
    """Nested pipeline over ``x``; more stages for a larger function difficulty.

    Loop variables are drawn from ``names`` so that unrelated programs do not
    look alike token by token.
    """
    prog = "x"
    for _ in range(1 + min(int(d_f), 7)):
        prog = _stage(prog, names[int(rng.integers(len(names)))], rng)
    return prog


def make_inputs(d_io: float, count: int, rng: np.random.Generator) -> list[list[int]]:
    length = 3 + min(int(2 * d_io), 17)
    return [[int(v) for v in rng.integers(0, 20, size=length)] for _ in range(count)]


class LabWorld:
    """Registry of every lab task, keyed by statement text."""

    def __init__(self, config: LabConfig):
        self.config = config
        self.vocabulary = make_vocabulary(config.vocabulary_size, config.world_seed)
        self.identifiers = [w for w in self.vocabulary if not keyword.iskeyword(w) and w not in _RESERVED]
        self.tasks: dict[str, SyntheticTask] = {}

    def __contains__(self, statement: str) -> bool:
        return statement in self.tasks

    def lookup(self, statement: str) -> SyntheticTask | None:
        return self.tasks.get(statement.strip())

    def register(self, synth: SyntheticTask) -> SyntheticTask:
        self.tasks[synth.statement] = synth
        return synth

    def fresh_statement(self, rng: np.random.Generator) -> str:
        idx = rng.integers(len(self.vocabulary), size=self.config.statement_words)
        return " ".join(self.vocabulary[int(i)] for i in idx)

    def synthesize(
        self,
        d_f: float,
        d_io: float,
        rng: np.random.Generator,
        *,
        task_id: str,
        stage: str,
        axis: str = "none",
        statement: str | None = None,
        program: str | None = None,
        inputs: Sequence[Any] | None = None,
        parent_id: str | None = None,
    ) -> SyntheticTask:
        d_f, d_io = max(d_f, 0.0), max(d_io, 0.0)
        statement = statement if statement is not None else self.fresh_statement(rng)
        program = program if program is not None else make_program(d_f, rng, self.identifiers)
        inputs = list(inputs) if inputs is not None else make_inputs(d_io, self.config.num_examples, rng)
        examples = [(i, evaluate(program, i)) for i in inputs]
        task = make_induction_task(
            statement, program, examples, task_id=task_id, stage=stage, axis=axis, parent_id=parent_id,
            meta={"difficulty": d_f + d_io, "d_f": d_f, "d_io": d_io},
        )
        return self.register(SyntheticTask(task, d_f, d_io))


def make_goalposts(world: LabWorld) -> list[SyntheticTask]:
    out = []
    for j, d in enumerate(world.config.goalposts):
        rng = derive_rng(world.config.world_seed, "goalpost", j)
        out.append(world.synthesize(d / 2, d / 2, rng, task_id=f"g{j}", stage="goalpost"))
    return out


def make_real_data(world: LabWorld) -> list[SyntheticTask]:
    lo, hi = world.config.real_data_range
    out = []
    for j in range(world.config.real_data_size):
        rng = derive_rng(world.config.world_seed, "real_data", j)
        d = float(rng.uniform(lo, hi))
        split = float(rng.uniform(0.3, 0.7))
        out.append(world.synthesize(d * split, d * (1 - split), rng, task_id=f"r{j}", stage="real_data"))
    return out


# ---------------------------------------------------------------------------
# pure scripted behaviour


def pass_probability(skill: float, difficulty: float, steepness: float = 4.0) -> float:
    return sigmoid(steepness * (skill - difficulty))


def scripted_student_attempt(skill: float, task: SyntheticTask | float, rng: np.random.Generator, steepness: float = 4.0) -> bool:
    d = task.difficulty if isinstance(task, SyntheticTask) else float(task)
    return bool(rng.random() < pass_probability(skill, d, steepness))


def _split(total: float, parent: SyntheticTask, axis: str) -> tuple[float, float]:
    """Distribute ``total`` difficulty, keeping the parent's off-axis component where possible."""
    total = max(total, 0.0)
    if axis == "f":
        d_io = min(parent.d_io, total / 2)
        return total - d_io, d_io
    if axis == "io":
        d_f = min(parent.d_f, total / 2)
        return d_f, total - d_f
    return total / 2, total / 2


def scripted_teacher_propose(
    world: LabWorld,
    parent: SyntheticTask,
    phase: str,
    skill_estimate: float,
    axis: str,
    rng: np.random.Generator,
    *,
    task_id: str = "proposal",
    variant: str = "medium",
    template: SyntheticTask | None = None,
) -> SyntheticTask:
    """Create (and register) one proposal.

    lemma: difficulty near the estimate plus noise, capped at the goalpost.
    lift: the parent's axis component grows by a positive increment.
    one_step: difficulty aimed so the expected pass rate is the variant's peak.
    With ``template`` the text and program are copied from an earlier
    proposal (a near-duplicate) while the latent difficulty is drawn fresh.
    """
    cfg = world.config
    if phase == "lemma":
        total = min(skill_estimate + cfg.lemma_noise * rng.standard_normal(), parent.difficulty)
        d_f, d_io = _split(total, parent, axis)
    elif phase == "lift":
        delta = cfg.lift_increment * (1 + cfg.lift_jitter * (2 * rng.random() - 1))
        d_f, d_io = parent.d_f, parent.d_io
        if axis == "io":
            d_io += delta
        else:
            d_f += delta
    elif phase == "one_step":
        a = _ONE_STEP_TARGET[variant]
        target = skill_estimate - logit(a) / cfg.steepness + cfg.lemma_noise * rng.standard_normal()
        d_f, d_io = _split(min(target, parent.difficulty), parent, axis)
    else:
        raise ValueError(f"unknown phase {phase!r}")

    if template is not None:
        tag = world.vocabulary[int(rng.integers(len(world.vocabulary)))]
        statement = f"{template.statement} variant {tag} {int(rng.integers(10**6))}"
        return world.synthesize(
            d_f, d_io, rng, task_id=task_id, stage=phase, axis=axis, parent_id=parent.task.id,
            statement=statement, program=template.task.function_source,
            inputs=[i for i, _ in template.task.examples],
        )
    return world.synthesize(d_f, d_io, rng, task_id=task_id, stage=phase, axis=axis, parent_id=parent.task.id)


def scripted_trainer_update(
    state: SkillState,
    batch: Iterable[tuple[SyntheticTask | float, float]],
    config: LabConfig,
) -> SkillState:
    """Solver-side update: ``eta`` per positive reward on a near-boundary task."""
    gain = 0.0
    for task, reward in batch:
        d = task.difficulty if isinstance(task, SyntheticTask) else float(task)
        if reward > 0 and abs(d - state.skill) <= config.boundary_window:
            gain += reward
    if gain == 0.0:
        return state
    return state.advance(state.skill + config.learning_rate * gain)


# ---------------------------------------------------------------------------
# policy / trainer handles used by the orchestrator


class ScriptedStudent:
    concurrent_safe = True

    def __init__(self, world: LabWorld, state: SkillState):
        self.world = world
        self.state = state

    @property
    def skill(self) -> float:
        return self.state.skill

    def generate(self, request: PolicyRequest, rng: np.random.Generator) -> str:
        v = request.variables
        kind = v.get("kind", "induction")
        synth = self.world.lookup(v.get("statement", ""))
        solved = synth is not None and scripted_student_attempt(self.skill, synth, rng, self.world.config.steepness)
        if kind == "induction":
            return synth.task.function_source if solved else WRONG_PROGRAM
        if kind == "deduction":
            return json.dumps(evaluate(synth.task.function_source, v["input"])) if solved else WRONG_VALUE
        if solved:
            for i, o in synth.task.examples:
                if values_equal(o, v["output"]):
                    return json.dumps(i)
        return "null"


class ScriptedTeacher:
    concurrent_safe = False

    def __init__(self, world: LabWorld, estimate: float):
        self.world = world
        self.estimate = estimate
        self.history: dict[str, list[SyntheticTask]] = {}
        self.emitted = 0

    def generate(self, request: PolicyRequest, rng: np.random.Generator) -> str:
        cfg = self.world.config
        v = request.variables
        if request.template_id == "lift_from_lemma":
            phase, parent_text = "lift", v["lemma"]
        elif request.template_id == "one_step_from_goalpost":
            phase, parent_text = "one_step", v["goalpost"]
        else:
            phase, parent_text = "lemma", v["goalpost"]
        parent = self.world.lookup(parent_text)
        if parent is None:
            return "I do not recognise this problem."
        self.emitted += 1
        task_id = f"lab{self.emitted}"
        if rng.random() < cfg.malformed_rate:
            return '{"statement": "unterminated'
        past = self.history.setdefault(phase, [])
        template = past[0] if past and rng.random() < cfg.duplicate_rate else None
        synth = scripted_teacher_propose(
            self.world, parent, phase, self.estimate, v.get("axis", "none"), rng,
            task_id=task_id, variant=v.get("difficulty_target", "medium"), template=template,
        )
        if template is None:
            past.append(synth)
        body = {
            "statement": synth.statement,
            "function": synth.task.function_source,
            "examples": [{"input": i, "output": o} for i, o in synth.task.examples],
            "meta": {"difficulty": synth.difficulty, "d_f": synth.d_f, "d_io": synth.d_io, "near_duplicate": template is not None},
        }
        return json.dumps(body)


class ScriptedTrainer:
    """Routes solver batches to the skill update and teacher batches to the estimate."""

    def __init__(self, world: LabWorld, student: ScriptedStudent, teacher: ScriptedTeacher):
        self.world = world
        self.student = student
        self.teacher = teacher
        self.calls: list[tuple[str, int]] = []

    def update(self, phase: str, items: list[TrainItem]) -> dict:
        self.calls.append((phase, len(items)))
        cfg = self.world.config
        if phase == "solver":
            batch = []
            for item in items:
                synth = self.world.lookup(item.payload.get("statement") or "")
                if synth is not None:
                    batch.append((synth, item.reward))
            self.student.state = scripted_trainer_update(self.student.state, batch, cfg)
        else:
            implied = []
            for item in items:
                p = item.payload.get("pass_rate")
                synth = self.world.lookup(item.payload.get("statement") or "")
                if synth is None or p is None or not 0.0 < p < 1.0:
                    continue
                implied.append(synth.difficulty + logit(p) / cfg.steepness)
            if implied:
                self.teacher.estimate += cfg.teacher_step * (float(np.mean(implied)) - self.teacher.estimate)
        return {"ack": True, "version": len(self.calls)}


@dataclass
class Lab:
    config: LabConfig
    world: LabWorld
    student: ScriptedStudent
    teacher: ScriptedTeacher
    trainer: ScriptedTrainer
    goalposts: list[SyntheticTask]
    real_data: list[SyntheticTask]

    @property
    def goalpost_tasks(self) -> list[TaskSpec]:
        return [g.task for g in self.goalposts]

    @property
    def real_data_tasks(self) -> list[TaskSpec]:
        return [r.task for r in self.real_data]


def build_lab(config: LabConfig | None = None, *, with_real_data: bool = False) -> Lab:
    config = config or LabConfig()
    world = LabWorld(config)
    goalposts = make_goalposts(world)
    real = make_real_data(world) if with_real_data else []
    student = ScriptedStudent(world, SkillState(config.initial_skill))
    est = config.initial_skill if config.teacher_initial_estimate is None else config.teacher_initial_estimate
    teacher = ScriptedTeacher(world, est)
    return Lab(config, world, student, teacher, ScriptedTrainer(world, student, teacher), goalposts, real)


def run_direct_baseline(
    config: LabConfig,
    goalpost_difficulty: float,
    iterations: int,
    batch_size: int,
    seed: int = 0,
) -> SkillState:
    """Train only on the goalpost itself: sample, reward pass/fail, update."""
    state = SkillState(config.initial_skill)
    for t in range(iterations):
        rng = derive_rng(seed, "direct", t)
        batch = [
            (goalpost_difficulty, float(scripted_student_attempt(state.skill, goalpost_difficulty, rng, config.steepness)))
            for _ in range(batch_size)
        ]
        state = scripted_trainer_update(state, batch, config)
    return state
