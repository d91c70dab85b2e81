"""Scoring student attempts and vetting teacher proposals."""

from __future__ import annotations

import ast
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from .executor import DEFAULT_TIMEOUT, Executor, ExecutorUnavailable, denied_names, values_equal
from .policies import Policy, PolicyRequest, TransportError
from .rng import child_seed, derive_rng
from .tasks import DEFAULT_NUM_EXAMPLES, MalformedProposal, ParsedProposal, TaskSpec, parse_proposal

log = logging.getLogger(__name__)

FAILURE_KINDS = ("none", "wrong_answer", "runtime_error", "timeout")


class EstimationError(RuntimeError):
    """Pass rate could not be measured (transport or executor outage).

    Distinct from a measured rate of zero.
    """


@dataclass(frozen=True)
class Verdict:
    passed: bool
    failure_kind: str = "none"

    def __post_init__(self) -> None:
        if self.failure_kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.failure_kind!r}")
        if self.passed and self.failure_kind != "none":
            raise ValueError("a passing verdict has no failure kind")


@dataclass(frozen=True)
class PassEstimate:
    task_id: str
    trials: int
    successes: int

    def __post_init__(self) -> None:
        if not 0 <= self.successes <= self.trials:
            raise ValueError(f"successes {self.successes} outside [0, {self.trials}]")

    @property
    def rate(self) -> float:
        return self.successes / self.trials


# ---------------------------------------------------------------------------
# pass@k


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k: ``1 - C(n - c, k) / C(n, k)``.

    Evaluated in exact integer arithmetic and rounded once, so there is no
    overflow for large ``n`` and no accumulated rounding.
    """
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got n={n}, c={c}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    if n - c < k:
        return 1.0
    return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))


# ---------------------------------------------------------------------------
# verification


_FENCE = re.compile(r"```[a-zA-Z]*\s*(.*?)```", re.DOTALL)


def extract_answer(text: str) -> str:
    m = _FENCE.search(text)
    return (m.group(1) if m else text).strip()


def parse_value(text: str) -> Any:
    """Parse a literal answer. Raises ValueError when it is not a literal."""
    text = extract_answer(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError, MemoryError, RecursionError) as exc:
        raise ValueError(f"not a literal: {text[:60]!r}") from exc


def _status_verdict(status: str) -> Verdict:
    return Verdict(False, "timeout" if status == "timeout" else "runtime_error")


def verify_candidate(
    task: TaskSpec, candidate: str, executor: Executor, timeout: float = DEFAULT_TIMEOUT
) -> Verdict:
    """Check a student answer against every test of ``task``.

    Induction answers are programs run on all public and private examples.
    Deduction answers are values compared with ``f(input)``. Abduction
    answers are inputs ``i`` accepted iff ``f(i)`` equals the shown output.
    """
    candidate = extract_answer(candidate)
    if not candidate:
        return Verdict(False, "wrong_answer")

    if task.kind == "induction":
        for i, o in task.examples:
            res = executor.run(candidate, i, timeout)
            if not res.ok:
                return _status_verdict(res.status)
            if not values_equal(res.output, o):
                return Verdict(False, "wrong_answer")
        return Verdict(True)

    try:
        value = parse_value(candidate)
    except ValueError:
        return Verdict(False, "wrong_answer")

    if task.kind == "deduction":
        res = executor.run(task.function_source, task.exposed, timeout)
        if not res.ok:
            return _status_verdict(res.status)
        return Verdict(True) if values_equal(value, res.output) else Verdict(False, "wrong_answer")

    res = executor.run(task.function_source, value, timeout)
    if res.status == "timeout":
        return Verdict(False, "timeout")
    if not res.ok:
        # f crashing on the proposed input just means the input is wrong
        return Verdict(False, "wrong_answer")
    return Verdict(True) if values_equal(res.output, task.exposed) else Verdict(False, "wrong_answer")


# ---------------------------------------------------------------------------
# student requests and pass-rate estimation


def student_request(task: TaskSpec, temperature: float = 1.0) -> PolicyRequest:
    variables: dict[str, Any] = {"task_id": task.id, "kind": task.kind, "statement": task.statement}
    if task.kind == "induction":
        variables["examples"] = [{"input": i, "output": o} for i, o in task.public_examples]
    else:
        variables["function"] = task.function_source
        variables["input" if task.kind == "deduction" else "output"] = task.exposed
    return PolicyRequest(role="student", template_id=f"solve_{task.kind}", variables=variables, temperature=temperature)


def attempt(
    student: Policy,
    task: TaskSpec,
    executor: Executor,
    rng: np.random.Generator,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    temperature: float = 1.0,
    render=None,
) -> Verdict:
    """One student attempt on ``task``; transport/executor outages propagate."""
    req = student_request(task, temperature)
    req.seed = int(rng.integers(0, 2**31 - 1))
    if render is not None:
        req.prompt = render(req.template_id, req.variables)
    text = student.generate(req, rng)
    return verify_candidate(task, text, executor, timeout)


def estimate_pass_rate(
    student: Policy,
    task: TaskSpec,
    n: int,
    rng: np.random.Generator,
    executor: Executor,
    *,
    parallelism: int = 1,
    timeout: float = DEFAULT_TIMEOUT,
    temperature: float = 1.0,
    render=None,
) -> PassEstimate:
    """Run ``n`` independent student attempts and count passes.

    Each trial gets its own stream derived from one draw of ``rng``, so the
    count does not depend on how trials are scheduled.
    """
    if n < 1:
        raise ValueError("need at least one trial")
    base = child_seed(rng)

    def trial(j: int) -> bool:
        return attempt(
            student, task, executor, derive_rng(base, j),
            timeout=timeout, temperature=temperature, render=render,
        ).passed

    workers = parallelism
    if not getattr(student, "concurrent_safe", False) or not getattr(executor, "concurrent_safe", False):
        workers = 1
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(trial, range(n)))
        else:
            outcomes = [trial(j) for j in range(n)]
    except (TransportError, ExecutorUnavailable) as exc:
        raise EstimationError(f"pass-rate estimation for {task.id} failed: {exc}") from exc
    return PassEstimate(task.id, n, sum(outcomes))


# ---------------------------------------------------------------------------
# proposal validity

VALIDITY_REASONS = ("ok", "malformed", "unsafe", "nondeterministic", "inconsistent", "indeterminate")


@dataclass(frozen=True)
class Validity:
    reason: str
    detail: str = ""
    proposal: ParsedProposal | None = field(default=None, compare=False)

    @property
    def valid(self) -> bool:
        return self.reason == "ok"

    @property
    def format_error(self) -> bool:
        """Invalid in a way the teacher is penalized for."""
        return self.reason not in ("ok", "indeterminate")


def check_validity(
    proposal_text: str,
    executor: Executor,
    *,
    program: str | None = None,
    repeats: int = 2,
    num_examples: int = DEFAULT_NUM_EXAMPLES,
    timeout: float = DEFAULT_TIMEOUT,
) -> Validity:
    """Vet a teacher proposal before anything is spent on solving it.

    In order: structure (malformed), deny-listed operations (unsafe), agreement
    of ``repeats`` runs on every example input (nondeterministic), agreement
    with the declared outputs (inconsistent). Executor outages yield
    ``indeterminate``.
    """
    if repeats < 2:
        raise ValueError("the determinism check needs at least two runs")
    try:
        parsed = parse_proposal(proposal_text, num_examples)
    except MalformedProposal as exc:
        return Validity("malformed", str(exc))
    program = parsed.function_source if program is None else program

    bad = denied_names(program)
    if bad:
        return Validity("unsafe", "uses " + ", ".join(sorted(bad)), parsed)

    try:
        for n, (i, o) in enumerate(parsed.examples):
            runs = [executor.run(program, i, timeout) for _ in range(repeats)]
            first = runs[0]
            for other in runs[1:]:
                if other.status != first.status or (first.ok and not values_equal(other.output, first.output)):
                    return Validity("nondeterministic", f"example {n} differs across runs", parsed)
            if not first.ok:
                return Validity("inconsistent", f"example {n}: function {first.status}: {first.error}", parsed)
            if not values_equal(first.output, o):
                return Validity("inconsistent", f"example {n}: declared output does not match", parsed)
    except ExecutorUnavailable as exc:
        log.warning("executor unavailable during validity check: %s", exc)
        return Validity("indeterminate", str(exc), parsed)
    return Validity("ok", "", parsed)
