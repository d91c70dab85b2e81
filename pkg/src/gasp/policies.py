"""Policy and trainer handles.

A policy turns a structured request into text. Teacher and student are two
roles of what may be one endpoint; only the request's ``role`` and
``template_id`` differ. The HTTP wire contracts are::

    POST {policy_url}/generate
      {"version", "role", "template_id", "variables", "sampling": {"temperature", "seed"}, "prompt"}
      -> {"text": str}

    POST {trainer_url}/update
      {"version", "phase", "items": [{"payload": {...}, "reward": float}]}
      -> {"ack": bool, "version": str | int}

``prompt`` is the template rendered with the shipped defaults, included so a
thin server can forward it to a model without knowing the template set.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Protocol

import httpx
import numpy as np
import yaml

CONTRACT_VERSION = "v1"


class TransportError(Exception):
    """A policy or trainer endpoint could not be reached or replied garbage."""


@dataclass
class PolicyRequest:
    role: str
    template_id: str
    variables: dict[str, Any]
    temperature: float = 1.0
    seed: int | None = None
    prompt: str | None = None

    def to_wire(self) -> dict:
        return {
            "version": CONTRACT_VERSION,
            "role": self.role,
            "template_id": self.template_id,
            "variables": self.variables,
            "sampling": {"temperature": self.temperature, "seed": self.seed},
            "prompt": self.prompt,
        }


class Policy(Protocol):
    concurrent_safe: bool

    def generate(self, request: PolicyRequest, rng: np.random.Generator) -> str: ...


@dataclass
class TrainItem:
    payload: dict
    reward: float

    def to_wire(self) -> dict:
        return {"payload": self.payload, "reward": self.reward}


class Trainer(Protocol):
    def update(self, phase: str, items: list[TrainItem]) -> dict: ...


class NullTrainer:
    """Acknowledges every update and changes nothing (frozen-policy runs)."""

    def __init__(self) -> None:
        self.calls: list[tuple[str, int]] = []

    def update(self, phase: str, items: list[TrainItem]) -> dict:
        self.calls.append((phase, len(items)))
        return {"ack": True, "version": len(self.calls)}


# ---------------------------------------------------------------------------
# templates


@lru_cache(maxsize=1)
def default_templates() -> dict:
    text = resources.files("gasp").joinpath("templates.yaml").read_text()
    return yaml.safe_load(text)


class _Blank(dict):
    def __missing__(self, key):
        return "{" + key + "}"


def render_prompt(template_id: str, variables: dict, templates: dict | None = None) -> str:
    templates = templates or default_templates()
    try:
        body = templates["templates"][template_id]
    except KeyError:
        raise KeyError(f"no template {template_id!r}") from None
    values = _Blank({k: v if isinstance(v, str) else json.dumps(v) for k, v in variables.items()})
    axis = variables.get("axis")
    if axis in templates.get("axis_instructions", {}):
        values.setdefault("axis_instruction", templates["axis_instructions"][axis])
    values.setdefault("axis_instruction", "")
    values.setdefault(
        "answer_format",
        templates.get("answer_format", "").format_map(_Blank(num_examples=variables.get("num_examples", 5))),
    )
    return body.format_map(values).strip()


# ---------------------------------------------------------------------------
# HTTP clients


def _post(client: httpx.Client, url: str, body: dict, timeout: float, retries: int, backoff: float) -> dict:
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = client.post(url, json=body, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            last = exc
            if attempt < retries:
                time.sleep(backoff * (2**attempt))
    raise TransportError(f"{url}: {last}") from last


class HttpPolicy:
    def __init__(
        self,
        url: str,
        *,
        client: httpx.Client | None = None,
        timeout: float = 120.0,
        retries: int = 2,
        backoff: float = 0.5,
        concurrent_safe: bool = True,
        headers: dict | None = None,
    ):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.concurrent_safe = concurrent_safe
        self._client = client or httpx.Client(headers=headers or {})

    def generate(self, request: PolicyRequest, rng: np.random.Generator) -> str:
        if request.seed is None:
            request.seed = int(rng.integers(0, 2**31 - 1))
        data = _post(self._client, f"{self.url}/generate", request.to_wire(), self.timeout, self.retries, self.backoff)
        text = data.get("text") if isinstance(data, dict) else None
        if not isinstance(text, str):
            raise TransportError(f"{self.url}/generate: response has no text field")
        return text


class HttpTrainer:
    def __init__(
        self,
        url: str,
        *,
        client: httpx.Client | None = None,
        timeout: float = 600.0,
        retries: int = 2,
        backoff: float = 1.0,
        headers: dict | None = None,
    ):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._client = client or httpx.Client(headers=headers or {})

    def update(self, phase: str, items: list[TrainItem]) -> dict:
        body = {"version": CONTRACT_VERSION, "phase": phase, "items": [it.to_wire() for it in items]}
        data = _post(self._client, f"{self.url}/update", body, self.timeout, self.retries, self.backoff)
        if not isinstance(data, dict) or not data.get("ack"):
            raise TransportError(f"{self.url}/update: trainer did not acknowledge")
        return {"ack": True, "version": data.get("version")}


@dataclass
class RecordingPolicy:
    """Wraps a policy and keeps every request it was sent (for audits and tests)."""

    inner: Any
    requests: list[dict] = field(default_factory=list)

    @property
    def concurrent_safe(self) -> bool:
        return getattr(self.inner, "concurrent_safe", False)

    def generate(self, request: PolicyRequest, rng: np.random.Generator) -> str:
        self.requests.append(request.to_wire())
        return self.inner.generate(request, rng)
