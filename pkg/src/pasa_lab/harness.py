"""Evaluation harness, ablation runner, and run configuration.

Metrics per query: crawler recall (fraction of the answer set that reached
the queue), selector precision/recall over the final queue, and recall@k
over the queue ranked by selector score (ties keep insertion order).
Per-query work is independent, so evaluation can fan out over a thread pool
capped by the PASA_LAB_THREADS environment variable; per-query RNG streams
are derived from (seed, query position), which keeps outputs bit-identical
whatever the pool size.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .corpus import Corpus, CorpusConfig, Query, QueryConfig
from .env import Limits, Rollout, rollout_trace_lines, run_crawler
from .errors import ConfigurationError, ContractViolation, DataError
from .policy import CrawlerPolicy, FeaturizerConfig, Params
from .selector import SelectorModel, select
from .trainer import PPOConfig, RewardConfig, TrainResult, ppo_train

ABLATION_VARIANTS = ("no-expand", "no-rl", "exact-set-reward", "alpha-sweep", "cost-sweep")
ALPHA_SWEEP = (0.5, 1.0, 1.5, 2.0)
COST_SWEEP = (0.0, 0.1, 0.2)


def worker_count(n_items: int) -> int:
    """Thread budget: PASA_LAB_THREADS if set, else the machine's cores."""
    raw = os.environ.get("PASA_LAB_THREADS")
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigurationError(f"PASA_LAB_THREADS must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigurationError(f"PASA_LAB_THREADS must be >= 1, got {cap}")
    return max(1, min(cap, n_items))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def query_metrics(queue_ids: Sequence[int], answers: frozenset[int],
                  accepted: set[int]) -> tuple[float, float, float]:
    """(crawler_recall, precision, recall) for one final queue."""
    if not answers:
        raise ContractViolation("query has an empty answer set")
    queue = set(queue_ids)
    selected = queue & accepted
    hit = len(queue & answers)
    crawler_recall = hit / len(answers)
    precision = len(selected & answers) / len(selected) if selected else 0.0
    recall = len(selected & answers) / len(answers)
    return crawler_recall, precision, recall


def rank_queue(queue_ids: Sequence[int], scores: Sequence[float]) -> list[int]:
    """Descending selector score; equal scores keep queue insertion order."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    return [queue_ids[i] for i in order]


def recall_at_k(ranked_ids: Sequence[int], answers: frozenset[int], k: int) -> float:
    if not answers:
        raise ContractViolation("recall@k needs a non-empty answer set")
    if k < 0:
        raise ContractViolation(f"k must be >= 0, got {k}")
    return len(set(ranked_ids[:k]) & answers) / len(answers)


@dataclass
class QueryEval:
    query_id: int
    crawler_recall: float
    precision: float
    recall: float
    recall_at: dict[int, float]
    n_actions: int
    queue_size: int
    truncated: bool


@dataclass
class EvalResult:
    per_query: list[QueryEval]
    aggregates: dict[str, float]
    traces: Optional[list[str]] = None


def _aggregate(per_query: list[QueryEval], recall_ks: Sequence[int]) -> dict[str, float]:
    agg = {
        "crawler_recall": float(np.mean([q.crawler_recall for q in per_query])),
        "precision": float(np.mean([q.precision for q in per_query])),
        "recall": float(np.mean([q.recall for q in per_query])),
        "mean_actions": float(np.mean([q.n_actions for q in per_query])),
        "mean_queue_size": float(np.mean([q.queue_size for q in per_query])),
    }
    for k in recall_ks:
        agg[f"recall@{k}"] = float(np.mean([q.recall_at[k] for q in per_query]))
    return agg


def _score_queue(rollout: Rollout, selector: SelectorModel, query: Query):
    queue_ids = rollout.queue.ids()
    decisions = [select(selector, query, pid) for pid in queue_ids]
    accepted = {pid for pid, d in zip(queue_ids, decisions) if d.accept}
    ranked = rank_queue(queue_ids, [d.score for d in decisions])
    return queue_ids, accepted, ranked


def _eval_one(policy, selector, corpus, query, limits, seed, qpos, recall_ks,
              mask_expand, keep_traces):
    # Stream [seed, qpos, run]; a single evaluate is run 0 of an ensemble, so
    # ensemble_eval with n_runs=1 reproduces evaluate exactly.
    rng = np.random.default_rng(np.random.SeedSequence([seed, qpos, 0]))
    rollout = run_crawler(policy, query, corpus, limits, rng, mask_expand=mask_expand)
    queue_ids, accepted, ranked = _score_queue(rollout, selector, query)
    cr, pr, rc = query_metrics(queue_ids, query.answers, accepted)
    qe = QueryEval(
        query_id=query.id,
        crawler_recall=cr,
        precision=pr,
        recall=rc,
        recall_at={k: recall_at_k(ranked, query.answers, k) for k in recall_ks},
        n_actions=rollout.actions_taken(),
        queue_size=len(queue_ids),
        truncated=rollout.truncated,
    )
    trace = rollout_trace_lines(rollout) if keep_traces else None
    return qe, trace


def evaluate(policy, selector: SelectorModel, corpus: Corpus, queries: Sequence[Query],
             limits: Limits = Limits(), seed: int = 0,
             recall_ks: Sequence[int] = (20, 50, 100), mask_expand: bool = False,
             keep_traces: bool = False) -> EvalResult:
    """Crawl every query once and aggregate unweighted per-query means."""
    if not queries:
        raise ContractViolation("no queries to evaluate")
    n_workers = worker_count(len(queries))
    jobs = [
        (policy, selector, corpus, q, limits, seed, i, tuple(recall_ks), mask_expand, keep_traces)
        for i, q in enumerate(queries)
    ]
    if n_workers == 1:
        results = [_eval_one(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(lambda job: _eval_one(*job), jobs))
    per_query = [qe for qe, _ in results]
    traces = None
    if keep_traces:
        traces = [line for _, tr in results for line in tr]
    return EvalResult(per_query=per_query,
                      aggregates=_aggregate(per_query, recall_ks),
                      traces=traces)


def ensemble_eval(policy, selector: SelectorModel, corpus: Corpus,
                  queries: Sequence[Query], limits: Limits = Limits(), seed: int = 0,
                  n_runs: int = 2, recall_ks: Sequence[int] = (20, 50, 100),
                  mask_expand: bool = False) -> EvalResult:
    """Union the queues of n_runs independently sampled crawls per query.
    Action counts accumulate across runs (the ensemble's total budget)."""
    if n_runs < 1:
        raise ContractViolation(f"n_runs must be >= 1, got {n_runs}")
    if not queries:
        raise ContractViolation("no queries to evaluate")
    per_query = []
    for i, query in enumerate(queries):
        union_ids: list[int] = []
        seen: set[int] = set()
        n_actions = 0
        truncated = False
        for r in range(n_runs):
            rng = np.random.default_rng(np.random.SeedSequence([seed, i, r]))
            rollout = run_crawler(policy, query, corpus, limits, rng, mask_expand=mask_expand)
            for pid in rollout.queue.ids():
                if pid not in seen:
                    seen.add(pid)
                    union_ids.append(pid)
            n_actions += rollout.actions_taken()
            truncated = truncated or rollout.truncated
        decisions = [select(selector, query, pid) for pid in union_ids]
        accepted = {pid for pid, d in zip(union_ids, decisions) if d.accept}
        ranked = rank_queue(union_ids, [d.score for d in decisions])
        cr, pr, rc = query_metrics(union_ids, query.answers, accepted)
        per_query.append(QueryEval(
            query_id=query.id,
            crawler_recall=cr,
            precision=pr,
            recall=rc,
            recall_at={k: recall_at_k(ranked, query.answers, k) for k in recall_ks},
            n_actions=n_actions,
            queue_size=len(union_ids),
            truncated=truncated,
        ))
    return EvalResult(per_query=per_query, aggregates=_aggregate(per_query, recall_ks))


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    param: str
    crawler_recall: float
    precision: float
    recall: float
    mean_actions: float


def ablate(corpus: Corpus, train_queries: Sequence[Query], eval_queries: Sequence[Query],
           sft: Params, variants: Sequence[str], *,
           feat_cfg: FeaturizerConfig = FeaturizerConfig(),
           limits: Limits = Limits(),
           selector: SelectorModel = SelectorModel(),
           reward_cfg: RewardConfig = RewardConfig(),
           ppo_cfg: PPOConfig = PPOConfig(),
           train_seed: int = 0, eval_seed: int = 0) -> list[AblationRow]:
    """Retrain and evaluate each requested variant under shared seeds.
    A 'base' row (unmodified training) is always included first."""
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ConfigurationError(
                f"unknown ablation variant {v!r}; pick from {ABLATION_VARIANTS}")

    def train(reward_override: RewardConfig = reward_cfg,
              mask_expand: bool = False) -> Params:
        result = ppo_train(
            corpus, train_queries, sft, feat_cfg=feat_cfg, limits=limits,
            selector=selector, reward_cfg=reward_override, ppo_cfg=ppo_cfg,
            seed=train_seed, mask_expand=mask_expand)
        return result.policy

    def run_eval(params: Params, mask_expand: bool = False) -> AblationRow:
        res = evaluate(CrawlerPolicy(params, feat_cfg), selector, corpus, eval_queries,
                       limits, seed=eval_seed, mask_expand=mask_expand)
        a = res.aggregates
        return AblationRow("", "", a["crawler_recall"], a["precision"], a["recall"],
                           a["mean_actions"])

    rows: list[AblationRow] = []
    base_row = run_eval(train())
    rows.append(replace(base_row, variant="base"))
    for variant in variants:
        if variant == "no-expand":
            row = run_eval(train(mask_expand=True), mask_expand=True)
            rows.append(replace(row, variant=variant))
        elif variant == "no-rl":
            row = run_eval(sft)
            rows.append(replace(row, variant=variant))
        elif variant == "exact-set-reward":
            row = run_eval(train(replace(reward_cfg, selector_as_rm=False)))
            rows.append(replace(row, variant=variant))
        elif variant == "alpha-sweep":
            for alpha in ALPHA_SWEEP:
                row = run_eval(train(replace(reward_cfg, alpha=alpha)))
                rows.append(replace(row, variant=variant, param=f"{alpha:g}"))
        elif variant == "cost-sweep":
            for cost in COST_SWEEP:
                override = replace(reward_cfg, cost_search=cost, cost_expand=cost)
                row = run_eval(train(override))
                rows.append(replace(row, variant=variant, param=f"{cost:g}"))
    return rows


# ---------------------------------------------------------------------------
# Run configuration (TOML, flat sections; paths relative to the file)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicySetup:
    arch: str = "linear"
    hidden: int = 8


@dataclass(frozen=True)
class BCSetup:
    epochs: int = 40
    learning_rate: float = 0.5
    expand_cap: int = 0  # 0 means limits.max_sessions - 1


@dataclass(frozen=True)
class EvalSetup:
    recall_ks: tuple[int, ...] = (20, 50, 100)
    n_runs: int = 2
    greedy: bool = False


@dataclass(frozen=True)
class Seeds:
    corpus: int = 42
    queries: int = 43
    bc: int = 44
    train: int = 45
    eval: int = 46


@dataclass
class RunConfig:
    corpus_cfg: CorpusConfig = CorpusConfig()
    query_cfg: QueryConfig = QueryConfig()
    n_train_queries: int = 200
    n_eval_queries: int = 50
    feat_cfg: FeaturizerConfig = FeaturizerConfig()
    limits: Limits = Limits()
    selector: SelectorModel = SelectorModel()
    reward_cfg: RewardConfig = RewardConfig()
    ppo_cfg: PPOConfig = PPOConfig()
    policy_setup: PolicySetup = PolicySetup()
    bc_setup: BCSetup = BCSetup()
    eval_setup: EvalSetup = EvalSetup()
    seeds: Seeds = Seeds()
    checkpoint_every: int = 0
    paths: dict[str, Path] = field(default_factory=dict)
    base_dir: Path = Path(".")

    def path(self, key: str, default: str) -> Path:
        return self.paths.get(key, self.base_dir / default)


_SECTION_TYPES = {
    "corpus": CorpusConfig,
    "queries": QueryConfig,
    "features": FeaturizerConfig,
    "limits": Limits,
    "selector": SelectorModel,
    "reward": RewardConfig,
    "ppo": PPOConfig,
    "policy": PolicySetup,
    "bc": BCSetup,
    "eval": EvalSetup,
    "seeds": Seeds,
}
_EXTRA_KEYS = {
    "queries": {"n_train", "n_eval"},
    "ppo": {"checkpoint_every"},
}


def _build_section(name: str, cls, data: dict):
    allowed = {f.name for f in fields(cls)}
    extra = _EXTRA_KEYS.get(name, set())
    unknown = set(data) - allowed - extra
    if unknown:
        raise ConfigurationError(
            f"[{name}] has unknown keys {sorted(unknown)}; allowed: {sorted(allowed | extra)}")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            v = data[f.name]
            if isinstance(v, list):
                v = tuple(v)
            kwargs[f.name] = v
    return cls(**kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"config {p} is not valid TOML: {exc}") from exc
    return build_run_config(raw, base_dir=p.parent)


def build_run_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    known_sections = set(_SECTION_TYPES) | {"paths"}
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigurationError(
            f"unknown config sections {sorted(unknown)}; allowed: {sorted(known_sections)}")
    cfg = RunConfig(base_dir=base_dir)
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        data = raw.get(name, {})
        if not isinstance(data, dict):
            raise ConfigurationError(f"[{name}] must be a section of key=value pairs")
        sections[name] = _build_section(name, cls, data)
    cfg.corpus_cfg = sections["corpus"]
    cfg.query_cfg = sections["queries"]
    cfg.feat_cfg = sections["features"]
    cfg.limits = sections["limits"]
    cfg.selector = sections["selector"]
    cfg.reward_cfg = sections["reward"]
    cfg.ppo_cfg = sections["ppo"]
    cfg.policy_setup = sections["policy"]
    cfg.bc_setup = sections["bc"]
    cfg.eval_setup = sections["eval"]
    cfg.seeds = sections["seeds"]
    cfg.n_train_queries = int(raw.get("queries", {}).get("n_train", cfg.n_train_queries))
    cfg.n_eval_queries = int(raw.get("queries", {}).get("n_eval", cfg.n_eval_queries))
    cfg.checkpoint_every = int(raw.get("ppo", {}).get("checkpoint_every", 0))
    for key, value in raw.get("paths", {}).items():
        if not isinstance(value, str):
            raise ConfigurationError(f"[paths] {key} must be a string")
        cfg.paths[key] = (base_dir / value).resolve() if not os.path.isabs(value) else Path(value)
    cfg.corpus_cfg.validate()
    cfg.query_cfg.validate()
    cfg.ppo_cfg.validate()
    cfg.selector.validate()
    return cfg
