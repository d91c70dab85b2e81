import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasp.evaluation import (
    EstimationError,
    PassEstimate,
    Verdict,
    check_validity,
    estimate_pass_rate,
    pass_at_k,
    verify_candidate,
)
from gasp.executor import BuiltinExecutor, ExecResult, ExecutorUnavailable
from gasp.policies import TransportError
from gasp.rng import child_seed, derive_rng
from gasp.tasks import TaskSpec, make_induction_task

ex = BuiltinExecutor()


def brute_pass_at_k(n, c, k):
    """Fraction of k-subsets of n samples (c correct) containing a correct one."""
    hits = total = 0
    for subset in itertools.combinations(range(n), k):
        total += 1
        hits += any(j < c for j in subset)
    return hits / total


class TestPassAtK:
    def test_worked_values(self):
        assert pass_at_k(100, 0, 20) == 0.0
        assert pass_at_k(5, 5, 1) == 1.0
        assert pass_at_k(10, 3, 2) == pytest.approx(1 - 21 / 45, abs=1e-15)

    def test_exhaustive_small_n(self):
        for n in range(1, 13):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    assert pass_at_k(n, c, k) == pytest.approx(brute_pass_at_k(n, c, k), abs=1e-12)

    @pytest.mark.parametrize("n, c, k", [(100, 1, 10), (100, 5, 20), (100, 30, 3), (100, 50, 1)])
    def test_monte_carlo(self, n, c, k):
        rng = np.random.default_rng(1234)
        draws = 100_000
        hits = 0
        for _ in range(draws):
            hits += rng.choice(n, size=k, replace=False).min() < c
        est = hits / draws
        exact = pass_at_k(n, c, k)
        sigma = math.sqrt(exact * (1 - exact) / draws)
        assert abs(est - exact) <= 3 * sigma + 1e-12

    @given(st.integers(1, 60), st.data())
    def test_monotone(self, n, data):
        c = data.draw(st.integers(0, n))
        k = data.draw(st.integers(1, n))
        v = pass_at_k(n, c, k)
        assert 0.0 <= v <= 1.0
        if c < n:
            assert pass_at_k(n, c + 1, k) >= v
        if k < n:
            assert pass_at_k(n, c, k + 1) >= v

    @pytest.mark.parametrize("n, c, k", [(5, 6, 1), (5, -1, 1), (5, 2, 0), (5, 2, 6)])
    def test_domain(self, n, c, k):
        with pytest.raises(ValueError):
            pass_at_k(n, c, k)

    def test_large_n_no_overflow(self):
        assert 0.0 < pass_at_k(5000, 3, 2000) < 1.0


class CoinStudent:
    """Correct with fixed probability; answers induction tasks only."""

    concurrent_safe = True

    def __init__(self, p, program):
        self.p = p
        self.program = program

    def generate(self, request, rng):
        return self.program if rng.random() < self.p else "'nope'"


SQUARE = make_induction_task("square", "x * x", [(v, v * v) for v in range(5)], 2, task_id="sq")


class TestEstimate:
    @pytest.mark.parametrize("p, expect", [(1.0, 10), (0.0, 0)])
    def test_degenerate(self, p, expect):
        est = estimate_pass_rate(CoinStudent(p, "x * x"), SQUARE, 10, derive_rng(0), ex)
        assert est.successes == expect and est.rate == expect / 10

    def test_replay_oracle(self):
        est = estimate_pass_rate(CoinStudent(0.5, "x * x"), SQUARE, 10, derive_rng(42), ex)
        base = child_seed(derive_rng(42))
        expected = 0
        for j in range(10):
            r = derive_rng(base, j)
            r.integers(0, 2**31 - 1)  # request seed
            expected += r.random() < 0.5
        assert est.successes == expected

    def test_parallel_equals_serial(self):
        a = estimate_pass_rate(CoinStudent(0.5, "x * x"), SQUARE, 40, derive_rng(7), ex, parallelism=1)
        b = estimate_pass_rate(CoinStudent(0.5, "x * x"), SQUARE, 40, derive_rng(7), ex, parallelism=8)
        assert a == b

    def test_transport_failure_is_not_zero(self):
        class Down:
            concurrent_safe = True

            def generate(self, request, rng):
                raise TransportError("down")

        with pytest.raises(EstimationError):
            estimate_pass_rate(Down(), SQUARE, 5, derive_rng(0), ex)

    def test_executor_outage(self):
        class Broken:
            concurrent_safe = True

            def run(self, program, value, timeout=2.0):
                raise ExecutorUnavailable("gone")

        with pytest.raises(EstimationError):
            estimate_pass_rate(CoinStudent(1.0, "x * x"), SQUARE, 5, derive_rng(0), Broken())

    def test_estimate_invariants(self):
        with pytest.raises(ValueError):
            PassEstimate("t", 3, 4)
        with pytest.raises(ValueError):
            Verdict(True, "timeout")


class TestVerify:
    def test_identity(self):
        t = make_induction_task("id", "x", [(i, i) for i in range(4)], 2)
        assert verify_candidate(t, "x", ex).passed

    def test_private_failure(self):
        # matches both public examples (0 -> 0, 1 -> 1) but not the private ones
        v = verify_candidate(SQUARE, "x", ex)
        assert not v.passed and v.failure_kind == "wrong_answer"

    def test_timeout(self):
        v = verify_candidate(SQUARE, "sum(range(10 ** 15)) + x", ex, timeout=0.2)
        assert v.failure_kind == "timeout"

    def test_runtime_error(self):
        assert verify_candidate(SQUARE, "x[0]", ex).failure_kind == "runtime_error"

    def test_deduction(self):
        t = TaskSpec("d", "deduction", "square", ((3, 9),), 0, "x * x")
        assert verify_candidate(t, "9", ex).passed
        assert verify_candidate(t, "```\n9\n```", ex).passed
        assert not verify_candidate(t, "8", ex).passed
        assert not verify_candidate(t, "not a value", ex).passed

    def test_empty_candidate(self):
        assert not verify_candidate(SQUARE, "   ", ex).passed

    @given(st.lists(st.integers(-20, 20), min_size=3, max_size=8, unique=True), st.data())
    @settings(max_examples=50)
    def test_conjunction(self, inputs, data):
        """Corrupting any single example output makes the correct program fail."""
        examples = [(i, i * 3) for i in inputs]
        j = data.draw(st.integers(0, len(examples) - 1))
        examples[j] = (examples[j][0], examples[j][1] + 1)
        t = make_induction_task("triple", "x * 3", examples, 1)
        assert not verify_candidate(t, "x * 3", ex).passed


def proposal(function="x + 1", outputs=None):
    outputs = outputs or [i + 1 for i in range(5)]
    return json.dumps(
        {"statement": "inc", "function": function, "examples": [{"input": i, "output": o} for i, o in zip(range(5), outputs)]}
    )


class TestValidity:
    def test_valid(self):
        v = check_validity(proposal(), ex, repeats=3)
        assert v.valid and not v.format_error

    def test_malformed(self):
        v = check_validity("{broken", ex)
        assert v.reason == "malformed" and v.format_error

    def test_unsafe(self):
        v = check_validity(proposal(function="open('x')"), ex)
        assert v.reason == "unsafe"

    def test_clock_nondeterministic(self):
        v = check_validity(proposal(function="clock() + x"), ex, repeats=3)
        assert v.reason == "nondeterministic" and v.format_error

    def test_inconsistent(self):
        v = check_validity(proposal(outputs=[9, 9, 9, 9, 9]), ex)
        assert v.reason == "inconsistent"

    def test_program_override(self):
        assert check_validity(proposal(), ex, program="x + 2").reason == "inconsistent"

    def test_indeterminate_on_outage(self):
        class Broken:
            def run(self, *a, **k):
                raise ExecutorUnavailable("gone")

        v = check_validity(proposal(), Broken())
        assert v.reason == "indeterminate" and not v.valid and not v.format_error

    def test_flaky_status_is_nondeterministic(self):
        class Flaky:
            def __init__(self):
                self.n = 0

            def run(self, program, value, timeout=2.0):
                self.n += 1
                return ExecResult("ok", value + 1) if self.n % 2 else ExecResult("timeout", None)

        assert check_validity(proposal(), Flaky()).reason == "nondeterministic"

    def test_repeats_bound(self):
        with pytest.raises(ValueError):
            check_validity(proposal(), ex, repeats=1)
