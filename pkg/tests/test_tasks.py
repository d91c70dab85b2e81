import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gasp.evaluation import verify_candidate
from gasp.executor import BuiltinExecutor
from gasp.rng import derive_rng
from gasp.tasks import (
    ConversionError,
    InconsistentExample,
    MalformedProposal,
    TaskError,
    TaskSpec,
    dump_tasks,
    load_tasks,
    make_induction_task,
    parse_proposal,
    randomize_format,
    sample_axis,
    task_from_record,
    task_to_record,
    to_abduction,
    to_deduction,
)

ex = BuiltinExecutor()
SQUARES = [(v, v * v) for v in (1, 2, 3, -2, 4)]


def square_task(**kw):
    return make_induction_task("square it", "x * x", SQUARES, 2, task_id="sq", **kw)


def test_public_private_split():
    t = square_task()
    assert len(t.public_examples) == 2
    assert len(t.private_examples) == 3
    assert t.public_examples + t.private_examples == t.examples


@given(n=st.integers(1, 12), data=st.data())
def test_partition_property(n, data):
    pub = data.draw(st.integers(0, n - 1))
    t = make_induction_task("id", "x", [(i, i) for i in range(n)], pub)
    assert set(t.public_examples).isdisjoint(t.private_examples)
    assert len(t.public_examples) + len(t.private_examples) == n


def test_no_private_test_is_structural_error():
    with pytest.raises(TaskError):
        make_induction_task("id", "x", [(1, 1)], 1)


def test_identity_task_valid():
    t = make_induction_task("id", "x", [(i, i) for i in range(3)], 2, executor=ex)
    assert t.kind == "induction"


def test_inconsistent_example_detected():
    with pytest.raises(InconsistentExample):
        make_induction_task("sq", "x * x", [(1, 1), (2, 5), (3, 9)], 2, executor=ex)


def test_deduction_projection():
    t = make_induction_task("inc", "x + 1", [(1, 2), (3, 4)], 1)
    seen = {to_deduction(t, derive_rng(s)).exposed for s in range(30)}
    assert seen == {1, 3}
    d = to_deduction(t, derive_rng(0))
    assert d.kind == "deduction" and d.function_source == "x + 1" and d.source_id == t.id


def test_conversion_is_seed_deterministic():
    t = square_task()
    assert to_deduction(t, derive_rng(5)) == to_deduction(t, derive_rng(5))
    assert to_abduction(t, derive_rng(5)) == to_abduction(t, derive_rng(5))
    assert randomize_format(t, derive_rng(9)) == randomize_format(t, derive_rng(9))


def test_conversion_needs_function():
    t = make_induction_task("mystery", None, [(1, 1), (2, 2)], 1)
    with pytest.raises(ConversionError):
        to_deduction(t, derive_rng(0))
    with pytest.raises(ConversionError):
        to_abduction(t, derive_rng(0))
    for s in range(50):
        assert randomize_format(t, derive_rng(s)).kind == "induction"


def test_abduction_accepts_any_consistent_input():
    t = TaskSpec("sq/abd", "abduction", "square", ((2, 4),), 0, "x * x")
    assert verify_candidate(t, "2", ex).passed
    assert verify_candidate(t, "-2", ex).passed
    assert not verify_candidate(t, "3", ex).passed


@given(seed=st.integers(0, 2**32))
def test_converted_hidden_field_round_trips(seed):
    t = square_task()
    c = randomize_format(t, derive_rng(seed))
    if c.kind != "induction":
        assert c.examples[0] in t.examples
        i, o = c.examples[0]
        assert c.hidden == (o if c.kind == "deduction" else i)


def test_format_split_uniform_thirds():
    t = square_task()
    n = 30000
    counts = {"induction": 0, "deduction": 0, "abduction": 0}
    for j in range(n):
        counts[randomize_format(t, derive_rng(11, j)).kind] += 1
    for kind, c in counts.items():
        assert abs(c / n - 1 / 3) <= 0.01, (kind, c)


def test_axis_frequency():
    n = 20000
    io = sum(sample_axis(derive_rng(3, j)) == "io" for j in range(n))
    assert 0.49 <= io / n <= 0.51


def test_axis_same_seed_same_axis():
    assert sample_axis(derive_rng(4, 1)) == sample_axis(derive_rng(4, 1))


def test_axis_f_only():
    assert {sample_axis(derive_rng(0, j), "f_only") for j in range(100)} == {"f"}


def test_record_round_trip(tmp_path):
    t = square_task(stage="lemma", axis="io", parent_id="g0", meta={"difficulty": 1.5})
    assert task_from_record(json.loads(json.dumps(task_to_record(t)))) == t
    path = tmp_path / "tasks.jsonl"
    dump_tasks([t, to_deduction(t, derive_rng(1))], path)
    loaded = load_tasks(path)
    assert loaded[0] == t and loaded[1].kind == "deduction"


def test_load_tasks_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a"}\n')
    with pytest.raises(TaskError, match="bad.jsonl:1"):
        load_tasks(path)


class TestParseProposal:
    def body(self, n=5, **kw):
        obj = {"statement": "add one", "function": "x + 1", "examples": [{"input": i, "output": i + 1} for i in range(n)]}
        obj.update(kw)
        return json.dumps(obj)

    def test_bare_and_fenced(self):
        assert parse_proposal(self.body()).function_source == "x + 1"
        assert parse_proposal("Sure!\n```json\n" + self.body() + "\n```").statement == "add one"

    @pytest.mark.parametrize(
        "text",
        ["no json here", '{"statement": "unterminated', '["a"]', '{"statement": "", "function": "x", "examples": []}'],
    )
    def test_malformed(self, text):
        with pytest.raises(MalformedProposal):
            parse_proposal(text)

    def test_wrong_example_count(self):
        with pytest.raises(MalformedProposal):
            parse_proposal(self.body(n=4))

    def test_meta_carried(self):
        assert parse_proposal(self.body(meta={"d": 1})).meta == {"d": 1}
