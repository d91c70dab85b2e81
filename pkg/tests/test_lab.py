import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gasp.events import metric_series
from gasp.evaluation import check_validity
from gasp.executor import BuiltinExecutor
from gasp.lab import (
    LabConfig,
    LabWorld,
    SkillState,
    build_lab,
    pass_probability,
    run_direct_baseline,
    scripted_student_attempt,
    scripted_teacher_propose,
    scripted_trainer_update,
)
from gasp.policies import PolicyRequest
from gasp.rng import derive_rng


def test_pass_probability_at_boundary():
    assert pass_probability(2.0, 2.0) == 0.5
    assert pass_probability(0.0, 4.0) < 1e-6
    assert pass_probability(10.0, 1.0) > 1 - 1e-9


@pytest.mark.parametrize("skill, d", [(1.0, 1.0), (2.0, 1.8), (0.0, 0.5)])
def test_attempt_frequency(skill, d):
    n = 20000
    hits = sum(scripted_student_attempt(skill, d, derive_rng(5, j)) for j in range(n))
    p = pass_probability(skill, d)
    assert abs(hits / n - p) <= 4 * np.sqrt(p * (1 - p) / n)


@given(st.floats(-5, 5), st.floats(0, 10), st.floats(0.01, 2))
def test_pass_probability_monotone(skill, d, bump):
    assert pass_probability(skill + bump, d) >= pass_probability(skill, d)
    assert pass_probability(skill, d + bump) <= pass_probability(skill, d)


class TestTeacher:
    def setup_method(self):
        self.world = LabWorld(LabConfig())
        self.parent = self.world.synthesize(2.0, 2.0, derive_rng(0), task_id="g0", stage="goalpost")

    def test_lift_is_harder_along_axis(self):
        for j in range(20):
            lemma = scripted_teacher_propose(self.world, self.parent, "lemma", 1.0, "f", derive_rng(1, j), task_id=f"l{j}")
            for axis in ("f", "io"):
                lift = scripted_teacher_propose(self.world, lemma, "lift", 1.0, axis, derive_rng(2, j), task_id=f"u{j}{axis}")
                assert lift.difficulty > lemma.difficulty
                moved = lift.d_f - lemma.d_f if axis == "f" else lift.d_io - lemma.d_io
                assert moved > 0 and lift.difficulty - lemma.difficulty == pytest.approx(moved)

    def test_lemma_capped_by_goalpost(self):
        for j in range(20):
            lemma = scripted_teacher_propose(self.world, self.parent, "lemma", 50.0, "io", derive_rng(3, j), task_id=f"l{j}")
            assert lemma.difficulty <= self.parent.difficulty + 1e-12

    def test_one_step_aims_at_variant_peak(self):
        cfg = LabConfig(lemma_noise=0.0)
        world = LabWorld(cfg)
        parent = world.synthesize(5.0, 5.0, derive_rng(0), task_id="g", stage="goalpost")
        hard = scripted_teacher_propose(world, parent, "one_step", 2.0, "f", derive_rng(1), task_id="h", variant="hard")
        medium = scripted_teacher_propose(world, parent, "one_step", 2.0, "f", derive_rng(1), task_id="m", variant="medium")
        assert pass_probability(2.0, hard.difficulty) == pytest.approx(0.1)
        assert pass_probability(2.0, medium.difficulty) == pytest.approx(0.3)

    def test_proposals_are_valid_tasks(self):
        ex = BuiltinExecutor()
        for j in range(10):
            s = scripted_teacher_propose(self.world, self.parent, "lemma", 1.5, "f", derive_rng(4, j), task_id=f"l{j}")
            body = json.dumps({"statement": s.statement, "function": s.task.function_source,
                               "examples": [{"input": i, "output": o} for i, o in s.task.examples]})
            assert check_validity(body, ex).valid

    def test_duplicate_rate_one(self):
        cfg = LabConfig(duplicate_rate=1.0, malformed_rate=0.0)
        lab = build_lab(cfg)
        req = PolicyRequest("teacher", "lemma_from_goalpost", {"goalpost": lab.goalposts[0].statement, "axis": "f"})
        bodies = [json.loads(lab.teacher.generate(req, derive_rng(9, j))) for j in range(5)]
        assert not bodies[0]["meta"]["near_duplicate"]
        assert all(b["meta"]["near_duplicate"] for b in bodies[1:])
        assert len({b["function"] for b in bodies}) == 1

    def test_unknown_parent(self):
        lab = build_lab()
        req = PolicyRequest("teacher", "lemma_from_goalpost", {"goalpost": "never seen", "axis": "f"})
        assert "unterminated" not in lab.teacher.generate(req, derive_rng(0))


class TestTrainerUpdate:
    cfg = LabConfig()

    def test_empty_batch(self):
        s = SkillState(1.0)
        assert scripted_trainer_update(s, [], self.cfg).skill == 1.0

    def test_all_fail(self):
        s = SkillState(1.0)
        assert scripted_trainer_update(s, [(1.0, 0.0)] * 16, self.cfg).skill == 1.0

    def test_boundary_window(self):
        s = SkillState(1.0)
        out = scripted_trainer_update(s, [(1.5, 1.0), (-0.2, 1.0), (3.0, 1.0)], self.cfg)
        assert out.skill == pytest.approx(1.0 + self.cfg.learning_rate)

    @given(st.lists(st.tuples(st.floats(0, 5), st.sampled_from([0.0, 1.0])), max_size=30), st.floats(0, 5))
    def test_never_decreases(self, batch, skill):
        s = SkillState(skill)
        assert scripted_trainer_update(s, batch, self.cfg).skill >= skill

    def test_direct_baseline_is_stuck(self):
        cfg = LabConfig()
        out = run_direct_baseline(cfg, goalpost_difficulty=4.0, iterations=40, batch_size=64)
        assert out.skill == cfg.initial_skill


class TestReferenceRun:
    def test_skill_strictly_increases(self, reference_run):
        _, _, parts = reference_run
        hist = [s for _, s in parts[0].lab.student.state.history]
        assert len(hist) > 20
        assert all(b > a for a, b in zip(hist[:20], hist[1:21]))

    def test_goalposts_start_unsolved(self, reference_run):
        orchs, _, _ = reference_run
        m = orchs[0].solve_matrix
        assert not m.solved("g0", 0, 0) and not m.solved("g1", 0, 0)

    def test_first_goalpost_solved(self, reference_run):
        orchs, _, _ = reference_run
        assert any(orchs[0].solve_matrix.solved("g0", t, 0) for t in orchs[0].solve_matrix.checkpoints)

    def test_lift_difficulty_rises(self, reference_run):
        _, log, _ = reference_run
        series = [v for _, v in metric_series(log.events)[(0, "mean_difficulty_lift")]]
        assert series[-1] > series[0] + 2.0
