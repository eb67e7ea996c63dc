"""Command-line entry point: collect, train, design, run, bench, export.

Exit codes are stable API: 0 ok, 1 usage, 2 external service,
3 training failure, 4 checkpoint failure, 5 run aborted.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import collector as collector_mod
from . import prunenet
from .backends import BackendSet, EchoBackend, HttpChatBackend, MajorityVoteDecision
from .config import AppConfig, load_config
from .embed import HashingBackend, HttpBackend
from .errors import (
    BackendError,
    CheckpointError,
    CommTopoError,
    ConfigError,
    FormatError,
    MineUnderflow,
    RunAborted,
    ScoreUnavailable,
    TrainingDiverged,
)
from .graphs import parse_topology, read_corpus, serialize_topology, write_corpus
from .orchestrator import run_topology
from .pool import load_default_pool, load_pool
from .synth import make_orchestrator_evaluator, make_planted_evaluator, planted_backends

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_EXTERNAL = 2
EXIT_TRAINING = 3
EXIT_CHECKPOINT = 4
EXIT_ABORTED = 5

VALID_BENCH_METHODS = bench_mod.STATIC_SHAPES + ("designed",)


def _load_pool(cfg: AppConfig):
    if cfg.pool_path:
        return load_pool(Path(cfg.pool_path).read_bytes())
    return load_default_pool()


def _embed_backend(cfg: AppConfig):
    if cfg.embed_backend == "hash":
        return HashingBackend()
    if cfg.embed_backend == "http":
        if not cfg.embed_endpoint:
            raise ConfigError("embedding endpoint missing")
        return HttpBackend(cfg.embed_endpoint, cfg.api_key)
    raise ConfigError(f"unknown embedding backend {cfg.embed_backend!r}")


def _chat_backends(cfg: AppConfig, pool, tasks=()) -> BackendSet:
    if cfg.agent_backend == "echo":
        return BackendSet(default=EchoBackend(), decision=MajorityVoteDecision())
    if cfg.agent_backend == "planted":
        return planted_backends(tasks, pool)
    if cfg.agent_backend == "http":
        if not cfg.chat_endpoint:
            raise ConfigError("chat endpoint missing")
        if not cfg.api_key:
            raise ConfigError("credentials missing")
        http = HttpChatBackend(cfg.chat_endpoint, cfg.api_key, cfg.model)
        return BackendSet(default=http, decision=http)
    raise ConfigError(f"unknown agent backend {cfg.agent_backend!r}")


def _read_tasks_file(path: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"tasks file not found: {path}")
    return collector_mod.read_tasks(p.read_text())


def cmd_collect(cfg: AppConfig, tasks_file: str, out_path: str | None = None) -> int:
    try:
        tasks = _read_tasks_file(tasks_file)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not tasks:
        print("error: no tasks", file=sys.stderr)
        return EXIT_USAGE
    pool = _load_pool(cfg)
    try:
        if cfg.evaluator == "planted":
            evaluator = make_planted_evaluator(cfg.planted_mode)
        elif cfg.evaluator == "orchestrator":
            backends = _chat_backends(cfg, pool, tasks)
            evaluator = make_orchestrator_evaluator(pool, backends, cfg.k_rounds, cfg.theta)
        else:
            raise ConfigError(f"unknown evaluator {cfg.evaluator!r}")
        pairs, stats = collector_mod.collect_supervision(tasks, pool, cfg.collector, evaluator)
    except (ScoreUnavailable, BackendError, MineUnderflow, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    out = Path(out_path or cfg.corpus_path)
    out.write_text(write_corpus(pairs))
    print(
        f"tasks={stats.tasks} graphs_scored={stats.graphs_scored} "
        f"graphs_skipped={stats.graphs_skipped} pairs={stats.pairs}"
    )
    for cat in sorted(stats.category_histogram):
        print(f"  {cat}: {stats.category_histogram[cat]}")
    print(f"corpus written to {out}")
    return EXIT_OK


def cmd_train(cfg: AppConfig) -> int:
    corpus_path = Path(cfg.corpus_path)
    if not corpus_path.exists():
        print(f"error: corpus not found: {corpus_path}", file=sys.stderr)
        return EXIT_USAGE
    corpus = read_corpus(corpus_path.read_text())
    if not corpus:
        print("error: corpus is empty", file=sys.stderr)
        return EXIT_USAGE
    pool = _load_pool(cfg)
    backend = _embed_backend(cfg)
    try:
        params, log = prunenet.train(corpus, pool, backend, cfg.train)
    except TrainingDiverged as exc:
        print(f"error: training diverged at step {exc.step}", file=sys.stderr)
        return EXIT_TRAINING
    net = prunenet.NetConfig(d=backend.dim, n_max=pool.n_max)
    Path(cfg.checkpoint_path).write_bytes(prunenet.save_checkpoint(params, net))
    Path(cfg.train_log_path).write_text(prunenet.write_training_log(log))
    print(
        f"trained {len(log)} steps (beta={cfg.train.beta}, epochs={cfg.train.epochs}, "
        f"lr={cfg.train.lr}, seed={cfg.train.seed})"
    )
    print(f"initial loss {log[0].total:.4f}, final loss {log[-1].total:.4f}")
    print(f"checkpoint written to {cfg.checkpoint_path}; log to {cfg.train_log_path}")
    return EXIT_OK


def _load_checkpoint(cfg: AppConfig):
    path = Path(cfg.checkpoint_path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return prunenet.load_checkpoint(path.read_bytes())


def cmd_design(cfg: AppConfig, query: str, fmt: str = "json", out_path: str | None = None) -> int:
    pool = _load_pool(cfg)
    try:
        params, _ = _load_checkpoint(cfg)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    backend = _embed_backend(cfg)
    topo = prunenet.design_topology(query, pool, backend, params, theta=cfg.theta)
    payload = serialize_topology(topo, fmt).decode()
    if out_path:
        Path(out_path).write_text(payload)
    else:
        sys.stdout.write(payload if payload.endswith("\n") else payload + "\n")
    roles = [pool[i].role for i in topo.mask.active_ids()]
    print(f"active agents: {', '.join(roles)}", file=sys.stderr)
    return EXIT_OK


def cmd_run(cfg: AppConfig, query: str, suite_path: str | None = None) -> int:
    pool = _load_pool(cfg)
    try:
        params, _ = _load_checkpoint(cfg)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    backend = _embed_backend(cfg)
    tasks = _read_tasks_file(suite_path) if suite_path else ()
    try:
        backends = _chat_backends(cfg, pool, tasks)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    topo = prunenet.design_topology(query, pool, backend, params, theta=cfg.theta)
    task = next(
        (t for t in tasks if t.task_text == query),
        collector_mod.TaskSpec("query", query, "general_reasoning", "", "contains"),
    )
    rng = np.random.default_rng(cfg.split_seeds()["orchestrator"])
    try:
        result = run_topology(topo, task, pool, backends, k=cfg.k_rounds, theta=cfg.theta, rng=rng)
    except RunAborted as exc:
        partial = [e.as_history_item() for e in exc.transcript]
        Path(cfg.transcript_path).write_text(json.dumps(partial, sort_keys=True))
        print(f"error: run aborted: {exc}", file=sys.stderr)
        print(f"partial transcript written to {cfg.transcript_path}", file=sys.stderr)
        return EXIT_ABORTED
    Path(cfg.transcript_path).write_text(result.to_json())
    print(f"answer: {result.answer}")
    print(f"total tokens: {result.total_tokens}")
    print(f"transcript written to {cfg.transcript_path}")
    return EXIT_OK


def cmd_bench(
    cfg: AppConfig, suite_file: str, methods: list[str], repeats: int = 2, out_prefix: str = "bench"
) -> int:
    unknown = [m for m in methods if m not in VALID_BENCH_METHODS]
    if unknown or not methods:
        print(
            f"error: unknown methods {unknown}; valid: {', '.join(VALID_BENCH_METHODS)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        suite = _read_tasks_file(suite_file)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not suite:
        print("error: empty suite", file=sys.stderr)
        return EXIT_USAGE
    pool = _load_pool(cfg)
    embed = _embed_backend(cfg)
    all_members = list(range(pool.n_max))
    sources = {}
    for m in methods:
        if m == "designed":
            try:
                params, _ = _load_checkpoint(cfg)
            except CheckpointError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CHECKPOINT
            sources[m] = lambda task, p=params: prunenet.design_topology(
                task.task_text, pool, embed, p, theta=cfg.theta
            )
        else:
            rng = np.random.default_rng(cfg.seed)
            topo = bench_mod.make_static(m, all_members, pool.n_max, p=0.3, rng=rng)
            sources[m] = lambda task, t=topo: t
    try:
        backends = _chat_backends(cfg, pool, suite)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    report = bench_mod.run_bench(
        suite,
        [(m, sources[m]) for m in methods],
        pool,
        backends,
        repeats=repeats,
        k=cfg.k_rounds,
        theta=cfg.theta,
        seed=cfg.seed,
        suite_id=Path(suite_file).stem,
    )
    Path(f"{out_prefix}.csv").write_text(report.to_csv())
    Path(f"{out_prefix}.md").write_text(report.to_markdown())
    print(report.to_markdown())
    print(f"report written to {out_prefix}.csv and {out_prefix}.md")
    return EXIT_OK


def cmd_export(topology_path: str, fmt: str) -> int:
    path = Path(topology_path)
    if not path.exists():
        print(f"error: topology file not found: {path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        topo = parse_topology(path.read_bytes())
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(serialize_topology(topo, fmt).decode())
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commtopo")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="root seed (split per subsystem)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="mine a supervision corpus (Stage I)")
    p.add_argument("--tasks", required=True)
    p.add_argument("--out")
    p.add_argument("--budget", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--mu", type=float)

    p = sub.add_parser("train", help="train the pruning network (Stage II)")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--log")
    p.add_argument("--beta", type=float)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("design", help="design a topology for a query")
    p.add_argument("--query", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--theta", type=float)
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.add_argument("--out")

    p = sub.add_parser("run", help="design then execute a query")
    p.add_argument("--query", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--suite")
    p.add_argument("--theta", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--transcript")

    p = sub.add_parser("bench", help="compare topology methods on a suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--methods", default="designed,complete")
    p.add_argument("--checkpoint")
    p.add_argument("--repeats", type=int, default=2)
    p.add_argument("--out-prefix", default="bench")

    p = sub.add_parser("export", help="convert a topology JSON file")
    p.add_argument("--topology", required=True)
    p.add_argument("--format", choices=["json", "dot"], default="dot")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        cfg.seed = args.seed
    # flag overrides (flags > file > env > defaults)
    for attr, target in (
        ("budget", "budget"),
        ("sigma", "sigma"),
        ("mu", "mu"),
    ):
        if getattr(args, attr, None) is not None:
            setattr(cfg.collector, target, getattr(args, attr))
    for attr in ("beta", "epochs"):
        if getattr(args, attr, None) is not None:
            setattr(cfg.train, attr, getattr(args, attr))
    if getattr(args, "corpus", None):
        cfg.corpus_path = args.corpus
    if getattr(args, "checkpoint", None):
        cfg.checkpoint_path = args.checkpoint
    if getattr(args, "log", None):
        cfg.train_log_path = args.log
    if getattr(args, "transcript", None):
        cfg.transcript_path = args.transcript
    if getattr(args, "theta", None) is not None:
        cfg.theta = args.theta
    if getattr(args, "k", None) is not None:
        cfg.k_rounds = args.k
    cfg.finalize()

    try:
        if args.command == "collect":
            return cmd_collect(cfg, args.tasks, args.out)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "design":
            return cmd_design(cfg, args.query, args.format, args.out)
        if args.command == "run":
            return cmd_run(cfg, args.query, args.suite)
        if args.command == "bench":
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            return cmd_bench(cfg, args.suite, methods, args.repeats, args.out_prefix)
        if args.command == "export":
            return cmd_export(args.topology, args.format)
    except CommTopoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
