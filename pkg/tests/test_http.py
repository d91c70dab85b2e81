import json

import httpx
import numpy as np
import pytest

from gasp.buffers import ConfigurationError, HashingEmbedder, HttpEmbedder
from gasp.config import ConfigError, build_components, parse_config
from gasp.events import EventLog, iter_kind
from gasp.executor import ExecutorUnavailable, HttpExecutor, serve_executor
from gasp.lab import build_lab
from gasp.orchestrator import Orchestrator, RunConfig
from gasp.policies import HttpPolicy, HttpTrainer, PolicyRequest, TrainItem, TransportError


def client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


class TestPolicy:
    def test_wire_format(self):
        seen = []

        def handler(req):
            seen.append(json.loads(req.content))
            return httpx.Response(200, json={"text": "x + 1"})

        pol = HttpPolicy("http://p/", client=client(handler))
        out = pol.generate(PolicyRequest("student", "solve_induction", {"statement": "s"}), np.random.default_rng(0))
        assert out == "x + 1"
        body = seen[0]
        assert body["version"] == "v1" and body["role"] == "student"
        assert body["sampling"]["seed"] is not None and body["variables"] == {"statement": "s"}

    def test_retries_then_succeeds(self):
        calls = []

        def handler(req):
            calls.append(1)
            return httpx.Response(503) if len(calls) < 3 else httpx.Response(200, json={"text": "ok"})

        pol = HttpPolicy("http://p", client=client(handler), retries=2, backoff=0.0)
        assert pol.generate(PolicyRequest("teacher", "t", {}), np.random.default_rng(0)) == "ok"
        assert len(calls) == 3

    @pytest.mark.parametrize("resp", [httpx.Response(500), httpx.Response(200, json={"nope": 1}), httpx.Response(200, text="<html>")])
    def test_failures_are_transport_errors(self, resp):
        pol = HttpPolicy("http://p", client=client(lambda req: resp), retries=0)
        with pytest.raises(TransportError):
            pol.generate(PolicyRequest("teacher", "t", {}), np.random.default_rng(0))


class TestTrainer:
    def test_update_contract(self):
        seen = []

        def handler(req):
            seen.append(json.loads(req.content))
            return httpx.Response(200, json={"ack": True, "version": 7})

        tr = HttpTrainer("http://t", client=client(handler))
        ack = tr.update("lemma", [TrainItem({"proposal_id": "a"}, -0.5)])
        assert ack == {"ack": True, "version": 7}
        assert seen[0] == {"version": "v1", "phase": "lemma", "items": [{"payload": {"proposal_id": "a"}, "reward": -0.5}]}

    def test_missing_ack(self):
        tr = HttpTrainer("http://t", client=client(lambda req: httpx.Response(200, json={"ack": False})), retries=0)
        with pytest.raises(TransportError):
            tr.update("solver", [])


class TestEmbedder:
    def test_shape_checked(self):
        def handler(req):
            texts = json.loads(req.content)["texts"]
            return httpx.Response(200, json={"embeddings": [[1.0, 0.0]] * len(texts)})

        assert HttpEmbedder("http://e", 2, client=client(handler)).embed(["a", "b"]).shape == (2, 2)
        with pytest.raises(ConfigurationError):
            HttpEmbedder("http://e", 3, client=client(handler)).embed(["a"])


@pytest.fixture(scope="module")
def server():
    srv, _ = serve_executor()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()


class TestExecutorServer:
    def test_round_trip(self, server):
        ex = HttpExecutor(server)
        res = ex.run("sorted(x)[::-1]", [3, 1, 2])
        assert res.ok and res.output == [3, 2, 1]
        assert ex.run("1 / 0", None).status == "error"
        assert ex.run("sum(range(10 ** 15))", None, timeout=0.2).status == "timeout"

    def test_unreachable(self):
        ex = HttpExecutor("http://127.0.0.1:9", transport_slack=0.5)
        with pytest.raises(ExecutorUnavailable):
            ex.run("x", 1)

    def test_bad_status(self):
        ex = HttpExecutor("http://e", client=client(lambda req: httpx.Response(200, json={"status": "maybe"})))
        with pytest.raises(ExecutorUnavailable):
            ex.run("x", 1)


def lab_service(lab):
    """Serve a lab's policies, trainer and an embedder behind one mock transport."""
    embedder = HashingEmbedder()

    def handler(req):
        body = json.loads(req.content)
        path = req.url.path
        if path == "/generate":
            pr = PolicyRequest(body["role"], body["template_id"], body["variables"], seed=body["sampling"]["seed"])
            policy = lab.teacher if body["role"] == "teacher" else lab.student
            return httpx.Response(200, json={"text": policy.generate(pr, np.random.default_rng(pr.seed))})
        if path == "/update":
            items = [TrainItem(i["payload"], i["reward"]) for i in body["items"]]
            return httpx.Response(200, json=lab.trainer.update(body["phase"], items))
        if path == "/embed":
            return httpx.Response(200, json={"embeddings": embedder.embed(body["texts"]).tolist()})
        return httpx.Response(404)

    return client(handler)


def test_loop_over_http():
    lab = build_lab()
    c = lab_service(lab)
    orch = Orchestrator(
        RunConfig(goalpost_eval_samples=10), lab.goalpost_tasks,
        HttpPolicy("http://svc", client=c, concurrent_safe=False), HttpPolicy("http://svc", client=c, concurrent_safe=False),
        trainer=HttpTrainer("http://svc", client=c), embedder=HttpEmbedder("http://svc", 256, client=c),
        event_log=EventLog(clock=lambda: "t"),
    )
    orch.run(2)
    assert len(list(iter_kind(orch.log.events, "acceptance", "lemma"))) > 0
    assert [p for p, _ in lab.trainer.calls][:3] == ["lemma", "lift", "solver"]


class TestConfigEndpoints:
    def test_env_urls(self, monkeypatch):
        monkeypatch.setenv("GASP_POLICY_URL", "http://policy")
        monkeypatch.setenv("GASP_EXECUTOR_URL", "http://exec")
        monkeypatch.setenv("GASP_API_TOKEN", "secret")
        cfg = parse_config({"version": 1, "policy": {"kind": "http"}, "executor": {"kind": "http"}, "goalposts": "g.jsonl"})
        assert cfg.policy.url == "http://policy" and cfg.executor.url == "http://exec"

    def test_missing_url(self, monkeypatch):
        monkeypatch.delenv("GASP_POLICY_URL", raising=False)
        with pytest.raises(ConfigError):
            parse_config({"version": 1, "policy": {"kind": "http"}, "goalposts": "g.jsonl"})

    def test_token_header(self, monkeypatch, tmp_path):
        monkeypatch.setenv("GASP_API_TOKEN", "secret")
        g = tmp_path / "g.jsonl"
        g.write_text("")
        cfg = parse_config({"version": 1, "policy": {"kind": "http", "url": "http://p"}, "goalposts": str(g)})
        parts = build_components(cfg)
        assert parts.teacher._client.headers["Authorization"] == "Bearer secret"
