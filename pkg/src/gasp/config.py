"""Run configuration files and wiring.

A config is one YAML document::

    version: 1
    run:        {M: 8, global_iterations: 40, seeds: [0], ...}   # RunConfig fields
    lab:        {initial_skill: 0.0, goalposts: [4.0, 8.0], ...} # scripted lab
    policy:     {kind: scripted | http, url: ..., version: v1}
    trainer:    {kind: scripted | null | http, url: ..., version: v1}
    executor:   {kind: builtin | http, url: ..., version: v1}
    embedder:   {kind: hashing | http, dim: 256, url: ...}
    goalposts:  path/to/goalposts.jsonl      # task records (http policies)
    real_data:  path/to/real_data.jsonl      # task records for joint training

Endpoint URLs left out of the file are read from ``GASP_POLICY_URL``,
``GASP_TRAINER_URL``, ``GASP_EXECUTOR_URL`` and ``GASP_EMBEDDER_URL``.
``GASP_API_TOKEN``, when set, is sent as a bearer token to policy and
trainer endpoints. Relative paths resolve against the config file.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .buffers import HashingEmbedder, HttpEmbedder
from .executor import BuiltinExecutor, HttpExecutor
from .lab import Lab, LabConfig, build_lab
from .orchestrator import ConfigError, RunConfig
from .policies import HttpPolicy, HttpTrainer, NullTrainer
from .tasks import load_tasks

CONFIG_VERSION = 1
SECTIONS = ("version", "run", "lab", "policy", "trainer", "executor", "embedder", "goalposts", "real_data")
ENV_URLS = {
    "policy": "GASP_POLICY_URL",
    "trainer": "GASP_TRAINER_URL",
    "executor": "GASP_EXECUTOR_URL",
    "embedder": "GASP_EMBEDDER_URL",
}


def _build(cls, section: dict | None, where: str):
    section = dict(section or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class Endpoint:
    kind: str
    url: str | None = None
    version: str = "v1"
    options: dict = field(default_factory=dict)


@dataclass
class Config:
    run: RunConfig
    lab: LabConfig | None
    policy: Endpoint
    trainer: Endpoint
    executor: Endpoint
    embedder: Endpoint
    goalposts: Path | None = None
    real_data: Path | None = None
    source: Path | None = None

    def to_dict(self) -> dict:
        return {
            "run": self.run.to_dict(),
            "lab": self.lab.to_dict() if self.lab else None,
            "policy": dataclasses.asdict(self.policy),
            "trainer": dataclasses.asdict(self.trainer),
            "executor": dataclasses.asdict(self.executor),
            "embedder": dataclasses.asdict(self.embedder),
        }


def _endpoint(name: str, raw: Any, default_kind: str, kinds: tuple[str, ...]) -> Endpoint:
    raw = dict(raw or {})
    kind = raw.pop("kind", default_kind)
    if kind not in kinds:
        raise ConfigError(f"{name}.kind must be one of {kinds}, got {kind!r}")
    url = raw.pop("url", None) or os.environ.get(ENV_URLS[name])
    version = str(raw.pop("version", "v1"))
    if kind == "http" and not url:
        raise ConfigError(f"{name}: http endpoint needs a url (or ${ENV_URLS[name]})")
    return Endpoint(kind, url, version, raw)


def parse_config(doc: dict, base: Path | None = None) -> Config:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    run = _build(RunConfig, doc.get("run"), "run")
    lab = _build(LabConfig, doc["lab"], "lab") if "lab" in doc else None
    scripted = "scripted" if lab is not None else "http"
    policy = _endpoint("policy", doc.get("policy"), scripted, ("scripted", "http"))
    trainer = _endpoint("trainer", doc.get("trainer"), "scripted" if lab is not None else "null", ("scripted", "null", "http"))
    executor = _endpoint("executor", doc.get("executor"), "builtin", ("builtin", "http"))
    embedder = _endpoint("embedder", doc.get("embedder"), "hashing", ("hashing", "http"))
    if lab is None and (policy.kind == "scripted" or trainer.kind == "scripted"):
        raise ConfigError("scripted policy/trainer needs a lab section")

    def path(key):
        val = doc.get(key)
        if val is None:
            return None
        p = Path(val)
        return p if p.is_absolute() or base is None else base / p

    cfg = Config(run, lab, policy, trainer, executor, embedder, path("goalposts"), path("real_data"))
    if lab is None and cfg.goalposts is None:
        raise ConfigError("runs without a lab need a goalposts file")
    if run.joint_real_data and lab is None and cfg.real_data is None:
        raise ConfigError("joint_real_data needs a real_data file")
    return cfg


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(doc, path.parent)
    cfg.source = path
    return cfg


def scenario_path(name: str) -> Path:
    """Path of a shipped scenario, e.g. ``reference``."""
    ref = resources.files("gasp").joinpath("scenarios", f"{name}.yaml")
    return Path(str(ref))


def list_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("gasp").joinpath("scenarios").iterdir() if p.name.endswith(".yaml"))


def with_seeds(cfg: Config, seeds: list[int]) -> Config:
    run = dataclasses.replace(cfg.run, seeds=list(seeds))
    return dataclasses.replace(cfg, run=run)


# ---------------------------------------------------------------------------
# wiring


@dataclass
class Components:
    teacher: Any
    student: Any
    trainer: Any
    executor: Any
    embedder: Any
    goalposts: list
    real_data: list
    lab: Lab | None = None


def _headers() -> dict:
    token = os.environ.get("GASP_API_TOKEN")
    return {"Authorization": f"Bearer {token}"} if token else {}


def build_components(cfg: Config) -> Components:
    """Fresh handles for one seed (lab state is per seed)."""
    lab = build_lab(cfg.lab, with_real_data=cfg.run.joint_real_data) if cfg.lab is not None else None

    if cfg.policy.kind == "http":
        teacher = student = HttpPolicy(cfg.policy.url, headers=_headers(), **cfg.policy.options)
    else:
        teacher, student = lab.teacher, lab.student

    if cfg.trainer.kind == "http":
        trainer = HttpTrainer(cfg.trainer.url, headers=_headers(), **cfg.trainer.options)
    elif cfg.trainer.kind == "scripted":
        if lab is None:
            raise ConfigError("scripted trainer needs a lab section")
        trainer = lab.trainer
    else:
        trainer = NullTrainer()

    if cfg.executor.kind == "http":
        executor = HttpExecutor(cfg.executor.url, version=cfg.executor.version, **cfg.executor.options)
    else:
        executor = BuiltinExecutor()

    if cfg.embedder.kind == "http":
        embedder = HttpEmbedder(cfg.embedder.url, **cfg.embedder.options)
    else:
        embedder = HashingEmbedder(**cfg.embedder.options)

    if cfg.goalposts is not None:
        goalposts = load_tasks(cfg.goalposts)
    else:
        goalposts = lab.goalpost_tasks
    if cfg.real_data is not None:
        real = load_tasks(cfg.real_data)
    else:
        real = lab.real_data_tasks if lab is not None else []
    return Components(teacher, student, trainer, executor, embedder, goalposts, real, lab)
