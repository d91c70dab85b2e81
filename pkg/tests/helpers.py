"""Shared helpers for tests."""

import dataclasses
from pathlib import Path

from gasp.config import build_components, load_config, scenario_path
from gasp.events import EventLog
from gasp.goalposts import SolveMatrix
from gasp.orchestrator import Orchestrator


def run_scenario(name, *, iterations=None, seed=None, overrides=None, lab_overrides=None, clock=None):
    """Run a shipped scenario in process; returns (orchestrators, event log, components)."""
    cfg = load_config(scenario_path(name))
    if overrides:
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, **overrides))
    if lab_overrides:
        cfg = dataclasses.replace(cfg, lab=dataclasses.replace(cfg.lab, **lab_overrides))
    seeds = [seed] if seed is not None else cfg.run.seeds
    log = EventLog(clock=clock or (lambda: "t"))
    matrix = SolveMatrix()
    orchs, parts_all = [], []
    for s in seeds:
        parts = build_components(cfg)
        orch = Orchestrator(
            cfg.run, parts.goalposts, parts.teacher, parts.student, seed=s,
            trainer=parts.trainer, executor=parts.executor, embedder=parts.embedder,
            event_log=log, real_data=parts.real_data, solve_matrix=matrix,
        )
        orch.run(iterations)
        orchs.append(orch)
        parts_all.append(parts)
    return orchs, log, parts_all


FIXTURES = Path(__file__).parent / "fixtures"

# wall-clock seconds of shared expensive fixtures, and acceptance verdict lines
TIMINGS: dict[str, float] = {}
ACCEPTANCE_LINES: list[str] = []


def expand_filter_fixture(spec):
    """Evaluation records realising a count-level filter fixture.

    Candidates removed at a stage get exactly one passing sample at one
    (seed, checkpoint) of that stage; every other record has zero successes.
    """
    import numpy as np

    from gasp.goalposts import EvaluationRecord

    rng = np.random.default_rng(0)
    cands = [f"c{j:03d}" for j in range(spec["candidates"])]
    order = [cands[j] for j in rng.permutation(len(cands))]
    removed = spec["removed_per_stage"]
    cuts = np.cumsum([0, removed["post_rl"], removed["azr_checkpoint"], removed["final_rl"]])
    doomed = {stage: set(order[cuts[k] : cuts[k + 1]]) for k, stage in enumerate((1, 2, 3))}
    seeds, ckpts = spec["seeds"], spec["checkpoints"]
    records = []
    alive = list(cands)
    for stage in (1, 2, 3):
        for n, t in enumerate(alive):
            hit = (seeds[n % len(seeds)], ckpts[n % len(ckpts)]) if t in doomed[stage] else None
            if stage == 1:
                sources = [("rl_checkpoint", s, c) for s in seeds for c in ckpts] + [("base_model", 0, 0)]
            elif stage == 2:
                sources = [("azr_checkpoint", 0, c) for c in ckpts]
                hit = (0, hit[1]) if hit else None
            else:
                sources = [("final_rl", s, c) for s in seeds for c in ckpts]
            for src, s, c in sources:
                ok = hit is not None and (s, c) == hit
                records.append(EvaluationRecord(t, src, s, c, 100, 1 if ok else 0))
        alive = [t for t in alive if t not in doomed[stage]]
    return cands, records
