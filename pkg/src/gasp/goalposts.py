"""Goalpost certification and solve tracking.

A candidate question becomes a goalpost only if no evaluation in any of the
three filter stages ever produced a passing sample (pass@100 = 0 for every
seed and checkpoint):

1. post-RL: RL checkpoints of several seeds, plus the base model itself
2. a checkpoint from unguided self-play
3. a final RL run on the surviving set

Record sources map onto stages as ``STAGE_OF_SOURCE`` shows. Solve matrices
mark a (goalpost, checkpoint, seed) cell solved when at least one sample
passed; re-recording a cell overwrites it because solving is intermittent.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SOURCES = ("rl_checkpoint", "base_model", "azr_checkpoint", "final_rl")
STAGE_OF_SOURCE = {"rl_checkpoint": 1, "base_model": 1, "azr_checkpoint": 2, "final_rl": 3}
STAGE_NAMES = {1: "post_rl", 2: "azr_checkpoint", 3: "final_rl"}


class CoverageError(ValueError):
    """Some candidates have no evaluation record and cannot be certified."""

    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(missing)
        super().__init__(f"{len(self.missing)} candidate(s) without records: {self.missing[:10]}")


@dataclass(frozen=True)
class EvaluationRecord:
    task_id: str
    source: str
    seed: int = 0
    checkpoint_step: int = 0
    samples: int = 100
    successes: int = 0

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown record source {self.source!r}")
        if not 0 <= self.successes <= self.samples:
            raise ValueError(f"{self.task_id}: successes {self.successes} outside [0, {self.samples}]")

    @property
    def stage(self) -> int:
        return STAGE_OF_SOURCE[self.source]

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationRecord":
        return cls(
            task_id=str(d["task_id"]),
            source=d["source"],
            seed=int(d.get("seed", 0)),
            checkpoint_step=int(d.get("checkpoint_step", 0)),
            samples=int(d.get("samples", 100)),
            successes=int(d["successes"]),
        )

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "source": self.source,
            "seed": self.seed,
            "checkpoint_step": self.checkpoint_step,
            "samples": self.samples,
            "successes": self.successes,
        }


def filter_stage(
    candidates: Iterable[str], records: Iterable[EvaluationRecord], *, strict: bool = True
) -> set[str]:
    """Candidates whose every record has zero successes.

    With ``strict`` a candidate lacking records raises ``CoverageError``;
    otherwise it is dropped (it cannot be certified hard).
    """
    candidates = set(candidates)
    seen: set[str] = set()
    solved: set[str] = set()
    for r in records:
        if r.task_id not in candidates:
            continue
        seen.add(r.task_id)
        if r.successes > 0:
            solved.add(r.task_id)
    missing = candidates - seen
    if missing and strict:
        raise CoverageError(missing)
    return seen - solved


@dataclass
class FilterReport:
    candidates: list[str]
    survivors: list[str]
    removed: dict[int, list[str]] = field(default_factory=dict)
    uncovered: dict[int, list[str]] = field(default_factory=dict)

    def counts(self) -> dict:
        return {
            "candidates": len(self.candidates),
            "survivors": len(self.survivors),
            "removed": {STAGE_NAMES.get(k, str(k)): len(v) for k, v in sorted(self.removed.items())},
            "uncovered": {STAGE_NAMES.get(k, str(k)): len(v) for k, v in sorted(self.uncovered.items())},
        }


def split_by_stage(records: Iterable[EvaluationRecord]) -> list[list[EvaluationRecord]]:
    stages: dict[int, list[EvaluationRecord]] = defaultdict(list)
    for r in records:
        stages[r.stage].append(r)
    return [stages[s] for s in (1, 2, 3)]


def build_goalpost_set(
    candidates: Iterable[str],
    stage_records: Sequence[Sequence[EvaluationRecord]],
    *,
    strict: bool = True,
) -> FilterReport:
    """Apply the filter stages in order; each sees only the previous survivors."""
    cands = sorted(set(candidates))
    current = set(cands)
    report = FilterReport(cands, [])
    for stage_no, recs in enumerate(stage_records, 1):
        covered = {r.task_id for r in recs} & current
        uncovered = current - covered
        if uncovered and strict:
            raise CoverageError(uncovered)
        survivors = filter_stage(covered, recs, strict=True) if covered else set()
        report.removed[stage_no] = sorted(covered - survivors)
        report.uncovered[stage_no] = sorted(uncovered)
        current = survivors
    report.survivors = sorted(current)
    return report


def load_records(path: str | Path) -> list[EvaluationRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(EvaluationRecord.from_dict(json.loads(line)))
                except (KeyError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# solve matrix


class SolveMatrix:
    def __init__(self, goalpost_ids: Iterable[str] = (), checkpoints: Iterable[int] = (), seeds: Iterable[int] = ()):
        self.goalpost_ids: list[str] = []
        self._goalposts: set[str] = set()
        for g in goalpost_ids:
            self.add_goalpost(g)
        self.checkpoints: list[int] = sorted(set(checkpoints))
        self.seeds: list[int] = sorted(set(seeds))
        self.cells: dict[tuple[str, int, int], bool] = {}

    def add_goalpost(self, goalpost: str) -> None:
        if goalpost not in self._goalposts:
            self._goalposts.add(goalpost)
            self.goalpost_ids.append(goalpost)

    def __contains__(self, goalpost: str) -> bool:
        return goalpost in self._goalposts

    def solved(self, goalpost: str, checkpoint: int, seed: int) -> bool:
        return self.cells.get((goalpost, checkpoint, seed), False)

    def record_solve(self, goalpost: str, checkpoint: int, seed: int, successes: int, samples: int = 100) -> "SolveMatrix":
        if goalpost not in self._goalposts:
            raise KeyError(f"unknown goalpost {goalpost!r}")
        if samples < 1 or not 0 <= successes <= samples:
            raise ValueError(f"bad sample counts {successes}/{samples}")
        if checkpoint not in self.checkpoints:
            self.checkpoints = sorted(set(self.checkpoints) | {checkpoint})
        if seed not in self.seeds:
            self.seeds = sorted(set(self.seeds) | {seed})
        self.cells[(goalpost, checkpoint, seed)] = successes > 0
        return self

    def union_across_seeds(self) -> dict[tuple[str, int], bool]:
        union = {(g, t): False for g in self.goalpost_ids for t in self.checkpoints}
        for (g, t, _), v in self.cells.items():
            if v:
                union[(g, t)] = True
        return union

    def solved_by_seed(self) -> dict[int, set[str]]:
        out: dict[int, set[str]] = {s: set() for s in self.seeds}
        for (g, _, s), v in self.cells.items():
            if v:
                out[s].add(g)
        return out

    def unique_solved(self) -> tuple[dict[int, int], int]:
        """Per-seed counts (a goalpost counts once per seed) and the union count."""
        by_seed = self.solved_by_seed()
        union = set().union(*by_seed.values()) if by_seed else set()
        return {s: len(v) for s, v in by_seed.items()}, len(union)

    def grid(self, seed: int | None = None) -> list[list[int]]:
        """Dense goalpost x checkpoint 0/1 grid; ``seed=None`` gives the union."""
        union = self.union_across_seeds() if seed is None else None
        rows = []
        for g in self.goalpost_ids:
            if union is not None:
                rows.append([int(union[(g, t)]) for t in self.checkpoints])
            else:
                rows.append([int(self.solved(g, t, seed)) for t in self.checkpoints])
        return rows

    def write_grid_csv(self, path: str | Path, seed: int | None = None, only_solved: bool = False) -> None:
        grid = self.grid(seed)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["goalpost"] + [str(t) for t in self.checkpoints])
            for g, row in zip(self.goalpost_ids, grid):
                if only_solved and not any(row):
                    continue
                w.writerow([g] + row)

    def to_records(self) -> list[dict]:
        return [
            {"goalpost": g, "checkpoint": t, "seed": s, "solved": v}
            for (g, t, s), v in sorted(self.cells.items(), key=lambda kv: (kv[0][2], kv[0][1], kv[0][0]))
        ]

    def copy(self) -> "SolveMatrix":
        m = SolveMatrix(self.goalpost_ids, self.checkpoints, self.seeds)
        m.cells = dict(self.cells)
        return m


def record_solve(matrix: SolveMatrix, goalpost: str, checkpoint: int, seed: int, successes: int, samples: int = 100) -> SolveMatrix:
    return matrix.record_solve(goalpost, checkpoint, seed, successes, samples)


def union_across_seeds(matrix: SolveMatrix) -> dict[tuple[str, int], bool]:
    return matrix.union_across_seeds()


def unique_solved(matrix: SolveMatrix) -> tuple[dict[int, int], int]:
    return matrix.unique_solved()
