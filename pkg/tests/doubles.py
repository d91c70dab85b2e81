"""Deterministic stand-ins for the teacher, student, trainer and embedder."""

import hashlib
import json

import numpy as np

from gasp.executor import evaluate
from gasp.tasks import make_induction_task

WORDS = "amber basil cobalt dune ember fjord garnet heron iris juniper kelp lumen moss nectar onyx pike quartz reed sage tundra".split()


class RandomEmbedder:
    """Hash each text to a fixed random direction; distinct texts are near-orthogonal."""

    dim = 128

    def embed(self, texts):
        out = []
        for t in texts:
            seed = int.from_bytes(hashlib.sha256(t.encode()).digest()[:8], "little")
            out.append(np.random.default_rng(seed).normal(size=self.dim))
        return np.array(out)


class StubTeacher:
    """Emits well-formed, distinct induction tasks ``x + K``.

    ``rates`` maps a phase template to the fraction of student attempts that
    will pass (out of every ``n`` attempts); ``malformed`` lists call indices
    that return broken JSON; ``duplicate`` repeats the first task verbatim.
    """

    concurrent_safe = False

    def __init__(self, registry, rates=None, n=10, malformed=(), duplicate=False):
        self.registry = registry
        self.rates = rates or {}
        self.n = n
        self.malformed = set(malformed)
        self.duplicate = duplicate
        self.calls = 0

    def rate_for(self, template_id):
        return self.rates.get(template_id, 0.5)

    def generate(self, request, rng):
        n = self.calls
        self.calls += 1
        if n in self.malformed:
            return '{"statement": "unterminated'
        if self.duplicate:
            n = 0
        k = n + 3
        words = " ".join(WORDS[(n * 7 + j * 3) % len(WORDS)] for j in range(4))
        statement = f"item {n} add {k} {words}"
        function = f"x + {k}"
        rate = self.rate_for(request["template_id"] if isinstance(request, dict) else request.template_id)
        self.registry[statement] = {"function": function, "passes": round(rate * self.n), "n": self.n, "count": 0}
        examples = [{"input": i, "output": i + k} for i in range(5)]
        return json.dumps({"statement": statement, "function": function, "examples": examples, "meta": {"difficulty": float(n)}})


class CountingStudent:
    """Passes the first ``passes`` of every ``n`` attempts at a registered task."""

    concurrent_safe = False

    def __init__(self, registry, goalpost_passes=0):
        self.registry = registry
        self.goalpost_passes = goalpost_passes

    def generate(self, request, rng):
        v = request.variables
        info = self.registry.get(v["statement"])
        if info is None:
            return "'__wrong__'"
        ok = info["count"] % info["n"] < info["passes"]
        info["count"] += 1
        if not ok:
            return "'__wrong__'"
        if v["kind"] == "induction":
            return info["function"]
        if v["kind"] == "deduction":
            return json.dumps(evaluate(info["function"], v["input"]))
        k = int(info["function"].split("+")[1])
        return json.dumps(v["output"] - k)


class RecordingTrainer:
    def __init__(self, fail_on=None):
        self.calls = []
        self.fail_on = fail_on

    def update(self, phase, items):
        if phase == self.fail_on:
            raise RuntimeError(f"trainer refused {phase}")
        self.calls.append((phase, list(items)))
        return {"ack": True, "version": len(self.calls)}


def goalposts(count=2):
    out = []
    for j in range(count):
        out.append(
            make_induction_task(
                f"goalpost secret {j} multiply by seven hidden", f"x * {7 + j}",
                [(i, i * (7 + j)) for i in range(5)], 2, task_id=f"g{j}", stage="goalpost",
            )
        )
    return out
