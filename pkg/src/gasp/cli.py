"""Command-line entry points.

    gasp run CONFIG [--seed N] [--iterations N] [--out DIR] [--figures]
    gasp filter-goalposts RECORDS [--candidates FILE] [--out FILE] [--strict]
    gasp eval-passk SAMPLES [--k 1 5 10 ...] [--out FILE] [--figures DIR]
    gasp solve-matrix PATH [--goalposts FILE] [--out DIR] [--figures]
    gasp replay EVENTS [--out DIR]

Tables go to stdout as CSV unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import build_components, list_scenarios, load_config, scenario_path, with_seeds
from .evaluation import pass_at_k
from .events import EventLog, RunEvent, digest_events, metric_series, read_events, replay
from .goalposts import CoverageError, SolveMatrix, build_goalpost_set, load_records, split_by_stage
from .orchestrator import ConfigError, Orchestrator

log = logging.getLogger("gasp")

DEFAULT_KS = (1, 5, 10, 20, 50, 100)
PLOTTED_METRICS = (
    "acceptance_rate_lemma",
    "acceptance_rate_lift",
    "acceptance_rate_one_step",
    "buffer_dissimilarity_lemma",
    "buffer_dissimilarity_lift",
    "buffer_dissimilarity_one_step",
    "mean_difficulty_lift",
    "solver_pass_rate",
    "goalpost_solved_count",
)


def _emit_csv(rows: Sequence[Sequence], out: str | Path | None) -> None:
    if out is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerows(rows)
        return
    with open(out, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _write_metrics_csv(events: Sequence[RunEvent], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "step", "name", "value"])
        for (seed, name), pts in sorted(metric_series(events).items()):
            for step, value in pts:
                w.writerow([seed, step, name, repr(value)])


def _write_matrix(matrix: SolveMatrix, out: Path) -> None:
    for seed in matrix.seeds:
        matrix.write_grid_csv(out / f"solve_matrix_seed{seed}.csv", seed)
    matrix.write_grid_csv(out / "solve_matrix_union.csv")


def _counts_rows(matrix: SolveMatrix) -> list[list]:
    per_seed, union = matrix.unique_solved()
    rows = [["seed", "unique_solved"]]
    rows += [[s, per_seed[s]] for s in sorted(per_seed)]
    rows.append(["union", union])
    return rows


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    path = Path(args.config)
    if not path.exists() and args.config in list_scenarios():
        path = scenario_path(args.config)
    try:
        cfg = load_config(path)
        if args.seed is not None:
            cfg = with_seeds(cfg, [args.seed])
    except (ConfigError, OSError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events = EventLog(out / "events.jsonl")
    matrix = SolveMatrix()
    status = 0
    orchestrators = []
    for seed in cfg.run.seeds:
        parts = build_components(cfg)
        orch = Orchestrator(
            cfg.run, parts.goalposts, parts.teacher, parts.student, seed=seed,
            trainer=parts.trainer, executor=parts.executor, embedder=parts.embedder,
            event_log=events, real_data=parts.real_data, solve_matrix=matrix,
        )
        orchestrators.append(orch)
        try:
            orch.run(args.iterations)
        except Exception as exc:  # noqa: BLE001 - any hard failure ends the run
            log.error("seed %s aborted at step %s: %s", seed, orch.step + 1, exc)
            print(f"error: seed {seed} aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
            status = 1
            break

    _write_metrics_csv(events.events, out / "metrics.csv")
    _write_matrix(matrix, out)
    for orch in orchestrators:
        for name, buf in orch.buffers.items():
            if len(buf):
                buf.write_jsonl(out / f"buffer_seed{orch.seed}_{name}.jsonl")
    per_seed, union = matrix.unique_solved()
    summary = {
        "digest": events.digest(),
        "events": len(events.events),
        "seeds": cfg.run.seeds,
        "unique_solved": {str(k): v for k, v in per_seed.items()},
        "union_solved": union,
        "status": "ok" if status == 0 else "aborted",
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.figures:
        from .plotting import plot_metric_series, plot_reward_curves, plot_solve_matrix

        plot_metric_series(out / "metrics.png", metric_series(events.events), PLOTTED_METRICS)
        plot_solve_matrix(out / "solve_matrix_union.png", matrix)
        plot_reward_curves(out / "rewards.png", {ph: cfg.run.reward_spec(ph) for ph in _phases(cfg.run.curriculum)})
    _emit_csv(_counts_rows(matrix), None)
    print(f"digest,{summary['digest']}")
    return status


def _phases(curriculum: str) -> tuple[str, ...]:
    return ("lemma", "lift") if curriculum == "two_step" else ("one_step",)


# ---------------------------------------------------------------------------
# filter-goalposts


def _read_ids(path: str | Path) -> list[str]:
    ids = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("{"):
            rec = json.loads(line)
            ids.append(str(rec.get("id", rec.get("task_id"))))
        else:
            ids.append(line)
    return ids


def cmd_filter_goalposts(args) -> int:
    try:
        records = load_records(args.records)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    candidates = _read_ids(args.candidates) if args.candidates else sorted({r.task_id for r in records})
    try:
        report = build_goalpost_set(candidates, split_by_stage(records), strict=args.strict)
    except CoverageError as exc:
        print(f"error: coverage: {exc}", file=sys.stderr)
        return 2
    counts = report.counts()
    rows = [["stage", "removed", "uncovered"]]
    for stage in counts["removed"]:
        rows.append([stage, counts["removed"][stage], counts["uncovered"].get(stage, 0)])
    rows.append(["candidates", counts["candidates"], ""])
    rows.append(["survivors", counts["survivors"], ""])
    _emit_csv(rows, None)
    uncovered = sorted({g for ids in report.uncovered.values() for g in ids})
    if uncovered:
        print(f"coverage: {len(uncovered)} candidate(s) lack records and were not certified: {' '.join(uncovered)}", file=sys.stderr)
    if args.out:
        Path(args.out).write_text("".join(f"{g}\n" for g in report.survivors))
        if uncovered:
            Path(str(args.out) + ".coverage").write_text("".join(f"{g}\n" for g in uncovered))
    return 0


# ---------------------------------------------------------------------------
# eval-passk


def _read_samples(path: str | Path) -> list[tuple[str, int, int]]:
    text = Path(path).read_text()
    rows = []
    if text.lstrip().startswith("{"):
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                rows.append((str(rec["task_id"]), int(rec["n"]), int(rec["c"])))
    else:
        for rec in csv.DictReader(io.StringIO(text)):
            rows.append((rec["task_id"], int(rec["n"]), int(rec["c"])))
    return rows


def passk_table(samples: Sequence[tuple[str, int, int]], ks: Sequence[int]) -> list[list]:
    """Per-task pass@k rows plus a macro-average row. ``k > n`` cells are blank and flagged."""
    header = ["task_id", "n", "c"] + [f"pass@{k}" for k in ks] + ["flags"]
    rows: list[list] = [header]
    sums = {k: 0.0 for k in ks}
    counts = {k: 0 for k in ks}
    for task_id, n, c in samples:
        cells, flags = [], []
        for k in ks:
            if k > n:
                cells.append("")
                flags.append(f"k>n:{k}")
                continue
            v = pass_at_k(n, c, k)
            cells.append(f"{v:.6f}")
            sums[k] += v
            counts[k] += 1
        rows.append([task_id, n, c] + cells + [";".join(flags)])
    avg = [f"{sums[k] / counts[k]:.6f}" if counts[k] else "" for k in ks]
    rows.append(["macro_average", "", ""] + avg + [""])
    return rows


def cmd_eval_passk(args) -> int:
    try:
        samples = _read_samples(args.samples)
        rows = passk_table(samples, args.k)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit_csv(rows, args.out)
    if args.figures:
        from .plotting import plot_pass_at_k

        avg = rows[-1][3:-1]
        pts = [(k, float(v)) for k, v in zip(args.k, avg) if v != ""]
        if pts:
            Path(args.figures).mkdir(parents=True, exist_ok=True)
            plot_pass_at_k(Path(args.figures) / "pass_at_k.png", [k for k, _ in pts], [v for _, v in pts])
    return 0


# ---------------------------------------------------------------------------
# solve-matrix


def load_matrix(path: str | Path, goalposts: Sequence[str] | None = None) -> tuple[SolveMatrix, list[str]]:
    """Build a matrix from an event log or solve records; returns it and any unknown ids."""
    lines = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    if lines and "kind" in lines[0]:
        matrix = replay(RunEvent.from_dict(d) for d in lines).solve_matrix
        if goalposts is None:
            goalposts = list(matrix.goalpost_ids)
        recs = [
            {"goalpost": g, "checkpoint": t, "seed": s, "solved": v}
            for (g, t, s), v in matrix.cells.items()
        ]
    else:
        recs = lines
    known = set(goalposts) if goalposts is not None else None
    out = SolveMatrix(goalposts or ())
    unknown: list[str] = []
    for r in recs:
        g = str(r["goalpost"])
        if known is not None and g not in known:
            if g not in unknown:
                unknown.append(g)
            continue
        out.add_goalpost(g)
        if "successes" in r:
            out.record_solve(g, int(r["checkpoint"]), int(r["seed"]), int(r["successes"]), int(r.get("samples", 100)))
        else:
            out.record_solve(g, int(r["checkpoint"]), int(r["seed"]), int(bool(r["solved"])), 1)
    return out, unknown


def cmd_solve_matrix(args) -> int:
    goalposts = _read_ids(args.goalposts) if args.goalposts else None
    try:
        matrix, unknown = load_matrix(args.path, goalposts)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if unknown:
        print(f"unknown goalpost ids (ignored): {' '.join(unknown)}", file=sys.stderr)
    _emit_csv(_counts_rows(matrix), None)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_matrix(matrix, out)
        if args.figures:
            from .plotting import plot_solve_matrix

            plot_solve_matrix(out / "solve_matrix_union.png", matrix)
    return 1 if unknown and args.strict else 0


# ---------------------------------------------------------------------------
# replay


def cmd_replay(args) -> int:
    try:
        events = read_events(args.events)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    state = replay(events)
    rows = [["seed", "buffer", "entries"]]
    for seed in sorted(state.buffers):
        for name, buf in sorted(state.buffers[seed].items()):
            rows.append([seed, name, len(buf)])
    _emit_csv(rows, None)
    _emit_csv(_counts_rows(state.solve_matrix), None)
    print(f"digest,{digest_events(events)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for seed, bufs in state.buffers.items():
            for name, buf in bufs.items():
                if len(buf):
                    buf.write_jsonl(out / f"buffer_seed{seed}_{name}.jsonl")
        _write_matrix(state.solve_matrix, out)
        _write_metrics_csv(events, out / "metrics.csv")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gasp", description="Goalpost-guided self-play runs and bookkeeping.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the self-play loop from a config file or shipped scenario name")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--iterations", type=int, help="override global_iterations")
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("filter-goalposts", help="certify goalposts from evaluation records")
    p.add_argument("records")
    p.add_argument("--candidates", help="candidate ids, one per line or task JSONL")
    p.add_argument("--out", help="write survivor ids here")
    p.add_argument("--strict", action="store_true", help="fail if any candidate lacks records")
    p.set_defaults(func=cmd_filter_goalposts)

    p = sub.add_parser("eval-passk", help="pass@k table from per-task (n, c) counts")
    p.add_argument("samples")
    p.add_argument("--k", type=int, nargs="+", default=list(DEFAULT_KS))
    p.add_argument("--out")
    p.add_argument("--figures", metavar="DIR", help="render pass_at_k.png into DIR")
    p.set_defaults(func=cmd_eval_passk)

    p = sub.add_parser("solve-matrix", help="per-seed and union solve counts")
    p.add_argument("path", help="event log or solve records (JSONL)")
    p.add_argument("--goalposts", help="known goalpost ids; others are flagged")
    p.add_argument("--out", help="write grid CSVs here")
    p.add_argument("--figures", action="store_true")
    p.add_argument("--strict", action="store_true", help="exit 1 when unknown ids are present")
    p.set_defaults(func=cmd_solve_matrix)

    p = sub.add_parser("replay", help="rebuild buffers and solve matrices from an event log")
    p.add_argument("events")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
