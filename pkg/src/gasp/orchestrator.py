"""The guided self-play loop.

One global iteration:

1. lemma phase: sample a goalpost, sample a difficulty axis, ask the
   teacher for an easier variant, vet it, estimate the student's pass rate,
   score it, and admit it if it is valid, inside [0.3, 0.7] and novel.
   Repeat until ``M`` are admitted or attempts run out. One trainer update
   with every scored attempt, then the batch joins the global lemma buffer.
2. lift phase: the same, but each proposal is conditioned on one admitted
   lemma only (the goalpost is never shown) and keeps the lemma's axis;
   band [0.1, 0.5].
3. solver phase: every admitted lemma and lift is shown to the student as
   induction, deduction or abduction and rewarded pass/fail.

Optional extras: a real-data RLVR batch after the solver phase, and
pass@``goalpost_eval_samples`` checks on every goalpost. One-step
curricula replace phases 1-2 with a single goalpost-conditioned phase.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from . import rewards
from .buffers import (
    BufferEntry,
    Embedder,
    GlobalBuffer,
    HashingEmbedder,
    NoveltyVerdict,
    append_accepted,
    buffer_dissimilarity,
    novelty_check,
)
from .evaluation import EstimationError, PassEstimate, Validity, attempt, check_validity, estimate_pass_rate
from .events import EventLog
from .executor import BuiltinExecutor, Executor, ExecutorUnavailable
from .goalposts import SolveMatrix
from .policies import NullTrainer, Policy, PolicyRequest, TrainItem, Trainer, TransportError, render_prompt
from .rewards import RewardOutcome, RewardSpec
from .rng import derive_rng
from .tasks import TaskSpec, make_induction_task, randomize_format, sample_axis

log = logging.getLogger(__name__)

CURRICULA = ("two_step", "one_step_medium", "one_step_hard")
AXIS_MODES = ("both", "f_only")


class ConfigError(ValueError):
    pass


class PhaseError(RuntimeError):
    """A phase cannot run at all (e.g. empty input buffer)."""


@dataclass
class RunConfig:
    M: int = 8
    N_proposal: int = 10
    N_solver: int = 10
    lemma_band: tuple[float, float] = (0.3, 0.7)
    lift_band: tuple[float, float] = (0.1, 0.5)
    one_step_band: tuple[float, float] = (0.1, 0.5)
    similarity_threshold: float = 0.95
    novelty_filter: bool = True
    max_attempts: int | None = None
    global_iterations: int = 10
    seeds: list[int] = field(default_factory=lambda: [0])
    axis_mode: str = "both"
    curriculum: str = "two_step"
    joint_real_data: bool = False
    batch_size: int = 64
    num_examples: int = 5
    public_count: int = 2
    validity_repeats: int = 2
    exec_timeout: float = 2.0
    parallelism: int = 1
    format_probs: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    goalpost_eval_every: int = 1
    goalpost_eval_samples: int = 100
    temperature: float = 1.0
    eval_temperature: float = 0.6
    solver_bookkeeping: bool = True

    def __post_init__(self) -> None:
        self.lemma_band = tuple(self.lemma_band)
        self.lift_band = tuple(self.lift_band)
        self.one_step_band = tuple(self.one_step_band)
        self.format_probs = tuple(self.format_probs)
        self.seeds = list(self.seeds)
        self.validate()

    @property
    def attempts_cap(self) -> int:
        return self.max_attempts if self.max_attempts is not None else 16 * self.M

    def validate(self) -> None:
        for name in ("lemma_band", "lift_band", "one_step_band"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo < hi <= 1.0:
                raise ConfigError(f"{name} [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if self.max_attempts is not None and self.max_attempts < 1:
            raise ConfigError("max_attempts must be at least 1")
        if self.N_proposal < 1 or self.N_solver < 1:
            raise ConfigError("trial counts must be at least 1")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ConfigError("similarity_threshold must lie in (0, 1]")
        if self.curriculum not in CURRICULA:
            raise ConfigError(f"curriculum must be one of {CURRICULA}")
        if self.axis_mode not in AXIS_MODES:
            raise ConfigError(f"axis_mode must be one of {AXIS_MODES}")
        if self.public_count < 0 or self.num_examples < self.public_count + 1:
            raise ConfigError("num_examples must exceed public_count")
        if self.validity_repeats < 2:
            raise ConfigError("validity_repeats must be at least 2")
        if len(self.format_probs) != 3 or abs(sum(self.format_probs) - 1.0) > 1e-9 or min(self.format_probs) < 0:
            raise ConfigError("format_probs must be three nonnegative numbers summing to 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.global_iterations < 0 or self.batch_size < 1:
            raise ConfigError("global_iterations >= 0 and batch_size >= 1 required")

    def reward_spec(self, phase: str) -> RewardSpec:
        if phase == "lemma":
            base, band = rewards.LEMMA, self.lemma_band
        elif phase == "lift":
            base, band = rewards.LIFT, self.lift_band
        elif phase == "one_step":
            base = rewards.ONE_STEP_VARIANTS[self.curriculum.removeprefix("one_step_")]
            band = self.one_step_band
        else:
            raise ValueError(f"no reward for phase {phase!r}")
        return RewardSpec(base.a, base.b, band[0], band[1])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Proposal:
    id: str
    phase: str
    request: dict
    text: str | None = None
    validity: Validity | None = None
    task: TaskSpec | None = None
    estimate: PassEstimate | None = None
    outcome: RewardOutcome | None = None
    entry: BufferEntry | None = None
    novelty: NoveltyVerdict | None = None
    accepted: bool = False
    reason: str = ""


@dataclass
class PhaseState:
    phase: str
    local_buffer: list[Proposal] = field(default_factory=list)
    attempts_used: int = 0
    reward_batch: list[tuple[Proposal, RewardOutcome]] = field(default_factory=list)
    complete: bool = False

    @property
    def tasks(self) -> list[TaskSpec]:
        return [p.task for p in self.local_buffer]


@dataclass
class SolverReport:
    outcomes: list[dict] = field(default_factory=list)
    success_rate: float | None = None

    @property
    def pass_rate(self) -> float | None:
        if not self.outcomes:
            return None
        return float(np.mean([o["passed"] for o in self.outcomes]))


class Orchestrator:
    """Runs the loop for one seed. Owns the run state; single writer."""

    def __init__(
        self,
        config: RunConfig,
        goalposts: Sequence[TaskSpec],
        teacher: Policy,
        student: Policy,
        *,
        seed: int = 0,
        trainer: Trainer | None = None,
        executor: Executor | None = None,
        embedder: Embedder | None = None,
        event_log: EventLog | None = None,
        real_data: Sequence[TaskSpec] = (),
        solve_matrix: SolveMatrix | None = None,
        templates: dict | None = None,
    ):
        self.config = config
        self.goalposts = list(goalposts)
        self.teacher = teacher
        self.student = student
        self.trainer = trainer or NullTrainer()
        self.executor = executor or BuiltinExecutor()
        self.embedder = embedder or HashingEmbedder()
        self.log = event_log or EventLog()
        self.real_data = list(real_data)
        self.seed = seed
        self.templates = templates
        self.step = 0
        self.buffers = {name: GlobalBuffer(name) for name in ("lemma", "lift", "one_step")}
        self.solve_matrix = solve_matrix if solve_matrix is not None else SolveMatrix()
        for g in self.goalposts:
            self.solve_matrix.add_goalpost(g.id)
        self._started = False

    # -- helpers ---------------------------------------------------------

    def _emit(self, phase: str, kind: str, payload: dict) -> None:
        self.log.emit(self.seed, self.step, phase, kind, payload)

    def _metric(self, phase: str, name: str, value: Any, **extra) -> None:
        self._emit(phase, "metric", {"name": name, "value": value, **extra})

    def _render(self, template_id: str, variables: dict) -> str | None:
        try:
            return render_prompt(template_id, variables, self.templates)
        except KeyError:
            return None

    def _rng(self, *labels) -> np.random.Generator:
        return derive_rng(self.seed, self.step, *labels)

    def _estimate(self, task: TaskSpec, n: int, rng: np.random.Generator, temperature: float) -> PassEstimate:
        return estimate_pass_rate(
            self.student, task, n, rng, self.executor,
            parallelism=self.config.parallelism, timeout=self.config.exec_timeout,
            temperature=temperature, render=self._render,
        )

    # -- proposal phases -------------------------------------------------

    def _teacher_request(self, phase: str, parent: TaskSpec, axis: str) -> PolicyRequest:
        cfg = self.config
        if phase == "lift":
            variables = {
                "lemma": parent.statement,
                "lemma_function": parent.function_source,
                "lemma_id": parent.id,
                "axis": axis,
                "num_examples": cfg.num_examples,
            }
            template = "lift_from_lemma"
        else:
            variables = {"goalpost": parent.statement, "goalpost_id": parent.id, "axis": axis, "num_examples": cfg.num_examples}
            template = "lemma_from_goalpost"
            if phase == "one_step":
                template = "one_step_from_goalpost"
                variables["difficulty_target"] = cfg.curriculum.removeprefix("one_step_")
        req = PolicyRequest(role="teacher", template_id=template, variables=variables, temperature=cfg.temperature)
        req.prompt = self._render(template, variables)
        return req

    def _embed(self, proposal_id: str, task: TaskSpec) -> BufferEntry:
        vecs = self.embedder.embed([task.statement, task.function_source or ""])
        return BufferEntry(proposal_id, vecs[0], vecs[1], self.step)

    def _novelty(self, entry: BufferEntry, local: list[Proposal]) -> NoveltyVerdict:
        pools: list = list(self.buffers.values())
        pools.append([p.entry for p in local])
        return novelty_check(entry, pools, self.config.similarity_threshold)

    def _attempt(self, phase: str, n: int, parents: Sequence[TaskSpec], state: PhaseState) -> Proposal:
        cfg = self.config
        rng = self._rng(phase, n)
        parent = parents[int(rng.integers(len(parents)))]
        axis = parent.axis if phase == "lift" else sample_axis(rng, cfg.axis_mode)
        req = self._teacher_request(phase, parent, axis)
        req.seed = int(rng.integers(0, 2**31 - 1))
        prop = Proposal(f"s{self.seed}-t{self.step}-{phase}-{n}", phase, req.to_wire())
        self._emit(phase, "proposal", {"proposal_id": prop.id, "parent_id": parent.id, "axis": axis, "request": prop.request})

        try:
            prop.text = self.teacher.generate(req, rng)
        except TransportError as exc:
            prop.reason = "transport"
            self._emit(phase, "rejection", {"proposal_id": prop.id, "reason": "transport", "detail": str(exc)})
            return prop

        prop.validity = check_validity(
            prop.text, self.executor, repeats=cfg.validity_repeats,
            num_examples=cfg.num_examples, timeout=cfg.exec_timeout,
        )
        spec = cfg.reward_spec(phase)
        if not prop.validity.valid:
            prop.reason = prop.validity.reason
            payload = {"proposal_id": prop.id, "reason": prop.reason, "detail": prop.validity.detail}
            if prop.validity.format_error:
                prop.outcome = rewards.apply_format_penalty(False, spec=spec)
                state.reward_batch.append((prop, prop.outcome))
                self._emit(phase, "reward", {"proposal_id": prop.id, **prop.outcome.to_dict()})
            self._emit(phase, "rejection", payload)
            return prop

        parsed = prop.validity.proposal
        stage = phase
        prop.task = make_induction_task(
            parsed.statement, parsed.function_source, parsed.examples, cfg.public_count,
            task_id=prop.id, stage=stage, axis=axis, parent_id=parent.id, meta=parsed.meta,
        )
        try:
            prop.estimate = self._estimate(prop.task, cfg.N_proposal, rng, cfg.temperature)
        except EstimationError as exc:
            prop.reason = "estimation_failed"
            self._emit(phase, "rejection", {"proposal_id": prop.id, "reason": prop.reason, "detail": str(exc)})
            return prop

        p = prop.estimate.rate
        prop.outcome = rewards.apply_format_penalty(True, p, spec)
        state.reward_batch.append((prop, prop.outcome))
        self._emit(phase, "reward", {"proposal_id": prop.id, "pass_rate": p, **prop.outcome.to_dict()})

        prop.entry = self._embed(prop.id, prop.task)
        if prop.outcome.region != rewards.Region.IN_BAND:
            prop.reason = "out_of_band"
        else:
            if cfg.novelty_filter:
                prop.novelty = self._novelty(prop.entry, state.local_buffer)
            if prop.novelty is not None and not prop.novelty.accepted:
                prop.reason = "duplicate"
            else:
                prop.accepted = True
                prop.reason = "accepted"

        if prop.accepted:
            self._emit(phase, "acceptance", {
                "proposal_id": prop.id,
                "parent_id": parent.id,
                "axis": axis,
                "pass_rate": p,
                "statement": prop.task.statement,
                "function": prop.task.function_source,
                "meta": prop.task.meta,
                "max_similarity": prop.novelty.max_similarity if prop.novelty else None,
                "statement_embedding": prop.entry.statement_embedding.tolist(),
                "code_embedding": prop.entry.code_embedding.tolist(),
            })
        else:
            detail = {"proposal_id": prop.id, "reason": prop.reason, "pass_rate": p}
            if prop.novelty is not None:
                detail.update(max_similarity=prop.novelty.max_similarity, offending_id=prop.novelty.offending_id)
            self._emit(phase, "rejection", detail)
        return prop

    def _proposal_phase(self, phase: str, parents: Sequence[TaskSpec]) -> PhaseState:
        cfg = self.config
        state = PhaseState(phase)
        while len(state.local_buffer) < cfg.M and state.attempts_used < cfg.attempts_cap:
            prop = self._attempt(phase, state.attempts_used, parents, state)
            state.attempts_used += 1
            if prop.accepted:
                state.local_buffer.append(prop)
        state.complete = len(state.local_buffer) >= cfg.M
        if not state.complete:
            log.warning("%s phase stopped at %d/%d after %d attempts", phase, len(state.local_buffer), cfg.M, state.attempts_used)
            self._metric(phase, "phase_incomplete", len(state.local_buffer), target=cfg.M, attempts=state.attempts_used)

        items = [
            TrainItem(
                {
                    "proposal_id": prop.id,
                    "phase": phase,
                    "statement": prop.task.statement if prop.task else None,
                    "pass_rate": prop.estimate.rate if prop.estimate else None,
                    "region": outcome.region.value,
                    "accepted": prop.accepted,
                },
                outcome.value,
            )
            for prop, outcome in state.reward_batch
        ]
        ack = self.trainer.update(phase, items)

        buffer = self.buffers[phase]
        batch_entries = [p.entry for p in state.local_buffer]
        dissim = buffer_dissimilarity(batch_entries, buffer)
        append_accepted(buffer, batch_entries, self.step)
        self._emit(phase, "trainer_update", {"items": len(items), "ack": ack, "appends_buffer": True, "accepted": len(batch_entries)})

        n_scored = len(state.reward_batch)
        self._metric(phase, f"acceptance_rate_{phase}", len(state.local_buffer) / max(state.attempts_used, 1))
        self._metric(phase, f"mean_reward_{phase}", float(np.mean([o.value for _, o in state.reward_batch])) if n_scored else None)
        self._metric(phase, f"buffer_dissimilarity_{phase}", dissim)
        diffs = [p.task.meta.get("difficulty") for p in state.local_buffer if p.task.meta.get("difficulty") is not None]
        if diffs:
            self._metric(phase, f"mean_difficulty_{phase}", float(np.mean(diffs)))
        return state

    def run_lemma_phase(self) -> PhaseState:
        if not self.goalposts:
            raise PhaseError("lemma phase needs at least one goalpost")
        return self._proposal_phase("lemma", self.goalposts)

    def run_lift_phase(self, lemmas: Sequence[TaskSpec]) -> PhaseState:
        if not lemmas:
            raise PhaseError("lift phase needs at least one accepted lemma")
        return self._proposal_phase("lift", lemmas)

    def run_one_step_phase(self) -> PhaseState:
        if not self.goalposts:
            raise PhaseError("one-step phase needs at least one goalpost")
        return self._proposal_phase("one_step", self.goalposts)

    # -- solver side -----------------------------------------------------

    def run_solver_phase(self, tasks: Sequence[TaskSpec]) -> SolverReport:
        cfg = self.config
        report = SolverReport()
        if not tasks:
            raise PhaseError("solver phase needs at least one task")
        items = []
        successes = trials = 0
        for idx, task in enumerate(tasks):
            rng = self._rng("solver", idx)
            shown = randomize_format(task, rng, cfg.format_probs)
            verdict = attempt(
                self.student, shown, self.executor, rng,
                timeout=cfg.exec_timeout, temperature=cfg.temperature, render=self._render,
            )
            reward = 1.0 if verdict.passed else 0.0
            outcome = {"task_id": task.id, "shown_id": shown.id, "kind": shown.kind, "passed": verdict.passed, "failure_kind": verdict.failure_kind}
            report.outcomes.append(outcome)
            items.append(TrainItem({"task_id": task.id, "kind": shown.kind, "statement": task.statement, "source": task.stage}, reward))
            self._emit("solver", "reward", {**outcome, "value": reward})
            if cfg.solver_bookkeeping:
                est = self._estimate(task, cfg.N_solver, rng, cfg.temperature)
                successes += est.successes
                trials += est.trials
        ack = self.trainer.update("solver", items)
        self._emit("solver", "trainer_update", {"items": len(items), "ack": ack, "appends_buffer": False})
        report.success_rate = successes / trials if trials else None
        self._metric("solver", "solver_pass_rate", report.pass_rate)
        self._metric("solver", "solver_success_rate", report.success_rate)
        return report

    def run_real_data_phase(self) -> SolverReport:
        cfg = self.config
        if not self.real_data:
            raise PhaseError("joint training needs a real-data corpus")
        rng = self._rng("real_data")
        picks = rng.integers(len(self.real_data), size=cfg.batch_size)
        report = SolverReport()
        items = []
        for j, idx in enumerate(picks):
            task = self.real_data[int(idx)]
            verdict = attempt(
                self.student, task, self.executor, derive_rng(self.seed, self.step, "real_data", j),
                timeout=cfg.exec_timeout, temperature=cfg.temperature, render=self._render,
            )
            report.outcomes.append({"task_id": task.id, "passed": verdict.passed})
            items.append(TrainItem({"task_id": task.id, "kind": task.kind, "statement": task.statement, "source": "real_data"}, float(verdict.passed)))
        self._emit("real_data", "reward", {"sampled": [o["task_id"] for o in report.outcomes], "passes": int(sum(o["passed"] for o in report.outcomes))})
        ack = self.trainer.update("solver", items)
        self._emit("real_data", "trainer_update", {"items": len(items), "ack": ack, "appends_buffer": False})
        self._metric("real_data", "real_data_pass_rate", report.pass_rate)
        return report

    def evaluate_goalposts(self) -> dict[str, int]:
        cfg = self.config
        out = {}
        for g in self.goalposts:
            est = self._estimate(g, cfg.goalpost_eval_samples, self._rng("goalpost_eval", g.id), cfg.eval_temperature)
            self.solve_matrix.record_solve(g.id, self.step, self.seed, est.successes, est.trials)
            self._emit("eval", "solve_record", {"goalpost": g.id, "checkpoint": self.step, "successes": est.successes, "samples": est.trials})
            out[g.id] = est.successes
        per_seed, _ = self.solve_matrix.unique_solved()
        self._metric("eval", "goalpost_solved_count", per_seed.get(self.seed, 0))
        return out

    # -- iterations ------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self._metric("run", "run_start", None, config=self.config.to_dict(), buffers=list(self.buffers), goalposts=[g.id for g in self.goalposts])
        if self.config.goalpost_eval_every and self.goalposts:
            self.evaluate_goalposts()
        self.log.commit()

    def _snapshot(self):
        return self.step, {k: b.snapshot() for k, b in self.buffers.items()}, self.solve_matrix.copy()

    def _restore(self, snap) -> None:
        self.step, self.buffers, matrix = snap
        self.solve_matrix.cells = matrix.cells
        self.solve_matrix.checkpoints = matrix.checkpoints
        self.solve_matrix.seeds = matrix.seeds

    def global_iteration(self) -> dict:
        """Run one iteration; on any hard failure restore state and re-raise."""
        self.start()
        snap = self._snapshot()
        self.step += 1
        try:
            summary = self._iteration_body()
        except Exception as exc:
            dropped = self.log.rollback()
            self._restore(snap)
            self._metric("run", "iteration_aborted", None, error=f"{type(exc).__name__}: {exc}", dropped_events=dropped, failed_step=snap[0] + 1)
            self.log.commit()
            raise
        self.log.commit()
        return summary

    def _iteration_body(self) -> dict:
        cfg = self.config
        summary: dict[str, Any] = {"step": self.step}
        if cfg.curriculum == "two_step":
            lemma = self.run_lemma_phase()
            summary["lemma"] = len(lemma.local_buffer)
            solver_tasks = lemma.tasks
            if lemma.local_buffer:
                lift = self.run_lift_phase(lemma.tasks)
                summary["lift"] = len(lift.local_buffer)
                solver_tasks = solver_tasks + lift.tasks
            else:
                self._metric("lift", "phase_skipped", None, reason="no accepted lemmas")
                summary["lift"] = 0
        else:
            one = self.run_one_step_phase()
            summary["one_step"] = len(one.local_buffer)
            solver_tasks = one.tasks

        if solver_tasks:
            summary["solver"] = self.run_solver_phase(solver_tasks).pass_rate
        else:
            self._metric("solver", "phase_skipped", None, reason="no accepted proposals")
        if cfg.joint_real_data:
            summary["real_data"] = self.run_real_data_phase().pass_rate
        if cfg.goalpost_eval_every and self.goalposts and self.step % cfg.goalpost_eval_every == 0:
            summary["goalposts"] = self.evaluate_goalposts()
        return summary

    def run(self, iterations: int | None = None) -> list[dict]:
        n = self.config.global_iterations if iterations is None else iterations
        self.start()
        return [self.global_iteration() for _ in range(n)]


def run_one_step(orch: Orchestrator, variant: str) -> dict:
    """One iteration of the one-step ablation with the given variant."""
    want = f"one_step_{variant}"
    if want not in CURRICULA:
        raise ConfigError(f"unknown one-step variant {variant!r}")
    if orch.config.curriculum != want:
        raise ConfigError(f"orchestrator is configured for {orch.config.curriculum}, not {want}")
    return orch.global_iteration()
