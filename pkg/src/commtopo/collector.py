"""Stage I: sample complete subgraphs, score them per task, mine the
top-k per task, and emit lifted supervision pairs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .errors import (
    ConfigError,
    FormatError,
    InvalidOrder,
    MineUnderflow,
    ScoreUnavailable,
)
from .graphs import CATEGORIES, SupervisionPair, Topology, lift_subgraph
from .pool import AgentPool

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SampledGraph:
    """A complete subgraph K_i on a sorted member set."""

    members: tuple[int, ...]
    topology: Topology

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(v) for v in self.members))
        if list(self.members) != sorted(set(self.members)):
            raise InvalidOrder("members must be strictly ascending")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    task_text: str
    category: str
    expected_answer: str = ""
    check: str = "exact"  # exact | numeric | contains
    planted_team: tuple[int, ...] | None = None  # synthetic suites only

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigError(f"unknown category {self.category!r}")
        if self.check not in ("exact", "numeric", "contains"):
            raise ConfigError(f"unknown check rule {self.check!r}")
        if self.planted_team is not None:
            object.__setattr__(self, "planted_team", tuple(int(v) for v in self.planted_team))

    def to_json_line(self) -> str:
        obj = {
            "task_id": self.task_id,
            "task_text": self.task_text,
            "category": self.category,
            "expected_answer": self.expected_answer,
            "check": self.check,
        }
        if self.planted_team is not None:
            obj["planted_team"] = list(self.planted_team)
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "TaskSpec":
        try:
            obj = json.loads(line)
            return cls(
                task_id=obj["task_id"],
                task_text=obj["task_text"],
                category=obj["category"],
                expected_answer=obj.get("expected_answer", ""),
                check=obj.get("check", "exact"),
                planted_team=tuple(obj["planted_team"]) if "planted_team" in obj else None,
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad task line: {exc}") from exc


def read_tasks(text: str) -> list[TaskSpec]:
    return [TaskSpec.from_json_line(ln) for ln in text.splitlines() if ln.strip()]


def write_tasks(tasks: Iterable[TaskSpec]) -> str:
    return "".join(t.to_json_line() + "\n" for t in tasks)


def answer_matches(task: TaskSpec, answer: str) -> bool:
    """Apply the task's answer-match rule."""
    expected = task.expected_answer.strip()
    got = answer.strip()
    if task.check == "exact":
        return got == expected
    if task.check == "contains":
        return expected in got
    # numeric: compare the last number found in the answer at small tolerance
    def last_number(s: str) -> float | None:
        num = None
        for tok in s.replace(",", " ").split():
            try:
                num = float(tok.rstrip(".:;"))
            except ValueError:
                continue
        return num

    want, have = last_number(expected), last_number(got)
    if want is None or have is None:
        return False
    return math.isclose(want, have, rel_tol=1e-6, abs_tol=1e-6)


@dataclass
class CollectorConfig:
    budget: int = 2000
    sigma: float = 2.0
    mu: float | None = None  # defaults to n_max / 2
    top_k: int = 2
    candidates_per_task: int = 20
    seed: int = 0

    def resolved_mu(self, n_max: int) -> float:
        mu = self.mu if self.mu is not None else n_max / 2
        if not 2 <= mu <= n_max:
            raise ConfigError(f"mu={mu} outside [2, {n_max}]")
        return mu

    def validate(self, n_max: int) -> None:
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        self.resolved_mu(n_max)


def sample_orders(cfg: CollectorConfig, n_max: int, rng: np.random.Generator | None = None) -> list[int]:
    """Draw graph orders from a Gaussian truncated to [2, n_max].

    Draws outside the range are rejected and resampled; accepted reals
    are rounded half-up to integers.
    """
    cfg.validate(n_max)
    mu = cfg.resolved_mu(n_max)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    orders: list[int] = []
    while len(orders) < cfg.budget:
        draws = rng.normal(mu, cfg.sigma, size=max(64, cfg.budget))
        kept = draws[(draws >= 2) & (draws <= n_max)]
        orders.extend(int(math.floor(x + 0.5)) for x in kept)
    return orders[: cfg.budget]


def order_distribution(cfg: CollectorConfig, n_max: int) -> np.ndarray:
    """Exact pmf of sample_orders over the integers 2..n_max."""
    mu, sigma = cfg.resolved_mu(n_max), cfg.sigma
    z = norm.cdf(n_max, mu, sigma) - norm.cdf(2, mu, sigma)
    pmf = []
    for k in range(2, n_max + 1):
        lo = max(k - 0.5, 2.0)
        hi = min(k + 0.5, float(n_max))
        pmf.append((norm.cdf(hi, mu, sigma) - norm.cdf(lo, mu, sigma)) / z)
    return np.array(pmf)


def order_ks_statistic(orders: Sequence[int], cfg: CollectorConfig, n_max: int) -> float:
    """KS distance between sampled orders and the truncated-Gaussian pmf."""
    pmf = order_distribution(cfg, n_max)
    cdf = np.cumsum(pmf)
    counts = np.bincount(np.asarray(orders, dtype=int), minlength=n_max + 1)[2 : n_max + 1]
    ecdf = np.cumsum(counts) / len(orders)
    return float(np.abs(ecdf - cdf).max())


def sample_subset(order: int, pool: AgentPool, rng: np.random.Generator) -> SampledGraph:
    """Uniform size-``order`` agent subset, ascending ids, complete topology."""
    if not 2 <= order <= pool.n_max:
        raise InvalidOrder(f"order {order} outside [2, {pool.n_max}]")
    members = np.sort(rng.choice(pool.n_max, size=order, replace=False))
    return SampledGraph(tuple(int(v) for v in members), Topology.complete(order))


Evaluator = Callable[[SampledGraph, TaskSpec], float]


def score_graph(
    g: SampledGraph, task: TaskSpec | Sequence[TaskSpec], evaluator: Evaluator
) -> float:
    """Utility in [0, 1]: fraction of instances answered correctly."""
    tasks = [task] if isinstance(task, TaskSpec) else list(task)
    try:
        scores = [float(evaluator(g, t)) for t in tasks]
    except ScoreUnavailable:
        raise
    except Exception as exc:
        raise ScoreUnavailable(str(exc)) from exc
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def mine_supervision(
    scored: Mapping[TaskSpec, Sequence[tuple[SampledGraph, float]]],
    cfg: CollectorConfig,
    n_max: int,
) -> list[SupervisionPair]:
    """Keep the top-k graphs per task and lift them to the n_max frame.

    Ties prefer fewer members (cheaper teams), then lexicographic member
    lists, so mining is deterministic.
    """
    pairs: list[SupervisionPair] = []
    for task, entries in scored.items():
        if len(entries) < cfg.top_k:
            raise MineUnderflow(
                f"task {task.task_id}: {len(entries)} scored graphs < top_k={cfg.top_k}"
            )
        ranked = sorted(entries, key=lambda e: (-e[1], len(e[0].members), e[0].members))
        for graph, utility in ranked[: cfg.top_k]:
            a_gt, y = lift_subgraph(graph.topology, graph.members, n_max)
            pairs.append(
                SupervisionPair(
                    task_id=task.task_id,
                    task_text=task.task_text,
                    category=task.category,
                    a_gt=a_gt,
                    y=y,
                    score=utility,
                )
            )
    return pairs


@dataclass
class CollectStats:
    tasks: int = 0
    graphs_scored: int = 0
    graphs_skipped: int = 0
    pairs: int = 0
    category_histogram: dict = field(default_factory=dict)


def collect_supervision(
    tasks: Sequence[TaskSpec],
    pool: AgentPool,
    cfg: CollectorConfig,
    evaluator: Evaluator,
) -> tuple[list[SupervisionPair], CollectStats]:
    """Full Stage I pipeline.

    Each sampled graph is scored against a strided window of tasks, so
    every task sees about ``candidates_per_task`` candidates even when
    the budget is much smaller than the task count; neighboring tasks
    still get largely disjoint candidate sets.  Scores are cached by
    (member set, task) since duplicate subsets are allowed.
    """
    if not tasks:
        raise ConfigError("no tasks")
    cfg.validate(pool.n_max)
    rng = np.random.default_rng(cfg.seed)
    orders = sample_orders(cfg, pool.n_max, rng)
    n_tasks = len(tasks)
    stride = min(
        n_tasks, max(1, round(cfg.candidates_per_task * n_tasks / cfg.budget))
    )
    gap = max(1, n_tasks // stride)
    scored: dict[TaskSpec, list[tuple[SampledGraph, float]]] = {t: [] for t in tasks}
    cache: dict[tuple[tuple[int, ...], str], float] = {}
    stats = CollectStats(tasks=n_tasks)
    for i, order in enumerate(orders):
        graph = sample_subset(order, pool, rng)
        targets = sorted({(i + s * gap) % n_tasks for s in range(stride)})
        for task in (tasks[j] for j in targets):
            key = (graph.members, task.task_id)
            try:
                if key not in cache:
                    cache[key] = score_graph(graph, task, evaluator)
                utility = cache[key]
            except ScoreUnavailable as exc:
                stats.graphs_skipped += 1
                log.warning(
                    "skipping graph %s on task %s: %s", graph.members, task.task_id, exc
                )
                continue
            scored[task].append((graph, utility))
            stats.graphs_scored += 1
    pairs = mine_supervision(scored, cfg, pool.n_max)
    stats.pairs = len(pairs)
    for p in pairs:
        stats.category_histogram[p.category] = stats.category_histogram.get(p.category, 0) + 1
    return pairs, stats
