"""Command-line interface.

Subcommands: gen-corpus, gen-queries, bc-train, ppo-train, eval, ablate,
ensemble. Every subcommand reads a TOML run config (--config) whose relative
paths resolve against the config file's directory; individual flags override
config entries. Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numeric failure (training divergence).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .corpus import gen_corpus, gen_queries, load_corpus, load_queries, save_corpus, save_queries, validate_corpus
from .errors import (
    ConfigurationError, ContractViolation, DataError, GenerationError,
    NotFoundError, NumericError, PasaLabError,
)
from .harness import RunConfig, ablate, ensemble_eval, evaluate, load_run_config
from .plots import (
    save_ablation_chart, save_bc_curve, save_eval_summary, save_training_curves,
)
from .policy import (
    CrawlerPolicy, init_policy_params, load_checkpoint, save_checkpoint,
)
from .trainer import bc_train, make_demos, ppo_train

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3


class UsageError(PasaLabError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures onto exit code 1
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="pasa-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config (TOML)")
        p.add_argument("--out-dir", help="override output directory")
        return p

    p = add("gen-corpus", "generate a synthetic corpus")
    p.add_argument("--seed", type=int, help="override [seeds] corpus")
    p.add_argument("--out", help="override corpus output path")

    p = add("gen-queries", "generate queries with exact answer sets")
    p.add_argument("--seed", type=int, help="override [seeds] queries")
    p.add_argument("--out", help="override query output path")

    p = add("bc-train", "behavior-clone the oracle demonstrations")
    p.add_argument("--out", help="checkpoint output path")

    p = add("ppo-train", "session-level PPO from an imitation checkpoint")
    p.add_argument("--checkpoint", help="imitation checkpoint to start from")
    p.add_argument("--out", help="trained checkpoint output path")

    p = add("eval", "evaluate a checkpoint on the held-out queries")
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--greedy", action="store_true", help="argmax decoding")
    p.add_argument("--mask-expand", action="store_true", help="disable Expand actions")

    p = add("ablate", "retrain and evaluate ablation variants")
    p.add_argument("--checkpoint", help="imitation checkpoint (shared across variants)")
    p.add_argument("--variants", default="no-expand,no-rl,exact-set-reward",
                   help="comma list: no-expand,no-rl,exact-set-reward,alpha-sweep,cost-sweep")

    p = add("ensemble", "union the queues of repeated sampled crawls")
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--n-runs", type=int, help="override [eval] n_runs")
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out_dir) if args.out_dir else cfg.path("out_dir", "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_checkpoint(cfg: RunConfig, args) -> Path:
    if getattr(args, "checkpoint", None):
        return Path(args.checkpoint)
    if "checkpoint" in cfg.paths:
        return cfg.paths["checkpoint"]
    raise UsageError("--checkpoint is required (no [paths] checkpoint in the config)")


def _load_world(cfg: RunConfig):
    corpus = load_corpus(cfg.path("corpus", "corpus.jsonl"))
    report = validate_corpus(corpus)
    if not report.ok:
        raise DataError("corpus failed validation: " + "; ".join(report.violations[:5]))
    queries = load_queries(cfg.path("queries", "queries.jsonl"))
    n_train, n_eval = cfg.n_train_queries, cfg.n_eval_queries
    if len(queries) < n_train + n_eval:
        raise DataError(
            f"query file has {len(queries)} queries but config needs "
            f"{n_train} train + {n_eval} eval")
    return corpus, queries[:n_train], queries[n_train:n_train + n_eval]


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_eval_outputs(result, out_dir: Path, stem: str, recall_ks) -> None:
    header = ["query_id", "crawler_recall", "precision", "recall"]
    header += [f"recall@{k}" for k in recall_ks]
    header += ["n_actions", "queue_size", "truncated"]
    rows = []
    for q in result.per_query:
        row = [q.query_id, f"{q.crawler_recall:.6f}", f"{q.precision:.6f}", f"{q.recall:.6f}"]
        row += [f"{q.recall_at[k]:.6f}" for k in recall_ks]
        row += [q.n_actions, q.queue_size, int(q.truncated)]
        rows.append(row)
    _write_csv(out_dir / f"{stem}.csv", header, rows)
    agg = result.aggregates
    _write_csv(out_dir / f"{stem}_summary.csv", list(agg), [[f"{v:.6f}" for v in agg.values()]])
    save_eval_summary(result, out_dir / f"{stem}_summary.png")
    if result.traces is not None:
        (out_dir / "rollouts.jsonl").write_text("\n".join(result.traces) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(cfg: RunConfig, args) -> int:
    seed = args.seed if args.seed is not None else cfg.seeds.corpus
    corpus = gen_corpus(cfg.corpus_cfg, seed)
    report = validate_corpus(corpus)
    if not report.ok:
        raise NumericError("generated corpus failed validation: " + report.violations[0])
    out = Path(args.out) if args.out else cfg.path("corpus", "corpus.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    print(f"wrote {len(corpus)} papers to {out}")
    return 0


def cmd_gen_queries(cfg: RunConfig, args) -> int:
    corpus = load_corpus(cfg.path("corpus", "corpus.jsonl"))
    seed = args.seed if args.seed is not None else cfg.seeds.queries
    n = cfg.n_train_queries + cfg.n_eval_queries
    queries = gen_queries(corpus, n, seed, cfg.query_cfg)
    out = Path(args.out) if args.out else cfg.path("queries", "queries.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_queries(queries, out)
    sizes = [len(q.answers) for q in queries]
    print(f"wrote {n} queries to {out} "
          f"(answers/query: median {np.median(sizes):.0f}, p90 {np.percentile(sizes, 90):.0f})")
    return 0


def cmd_bc_train(cfg: RunConfig, args) -> int:
    corpus, train_q, _ = _load_world(cfg)
    out_dir = _out_dir(cfg, args)
    demos = make_demos(
        corpus, train_q, cfg.selector, cfg.seeds.bc, cfg.limits, cfg.feat_cfg,
        expand_cap=cfg.bc_setup.expand_cap or None)
    init = init_policy_params(cfg.feat_cfg, cfg.policy_setup.arch, cfg.policy_setup.hidden)
    result = bc_train(demos, init, cfg.bc_setup.epochs, cfg.bc_setup.learning_rate)
    ckpt_path = Path(args.out) if args.out else cfg.path("checkpoint", "checkpoint.json")
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt_path, result.snapshot, None, cfg.feat_cfg, step=0,
                    sft=result.snapshot)
    _write_csv(out_dir / "bc_metrics.csv", ["epoch", "nll"],
               [[i, f"{v:.8f}"] for i, v in enumerate(result.nll_history)])
    save_bc_curve(result.nll_history, out_dir / "bc_curve.png")
    print(f"{len(demos)} demos, NLL {result.nll_history[0]:.4f} -> {result.nll_history[-1]:.4f}; "
          f"checkpoint at {ckpt_path}")
    return 0


def cmd_ppo_train(cfg: RunConfig, args) -> int:
    corpus, train_q, _ = _load_world(cfg)
    out_dir = _out_dir(cfg, args)
    ckpt = load_checkpoint(_require_checkpoint(cfg, args))
    sft = ckpt.sft if ckpt.sft is not None else ckpt.policy

    callback = None
    if cfg.checkpoint_every > 0:
        def callback(step, theta, phi):
            if step % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_step{step}.json",
                                theta, phi, cfg.feat_cfg, step=step, sft=sft)

    result = ppo_train(
        corpus, train_q, sft, feat_cfg=ckpt.feat_cfg, limits=cfg.limits,
        selector=cfg.selector, reward_cfg=cfg.reward_cfg, ppo_cfg=cfg.ppo_cfg,
        seed=cfg.seeds.train, step_callback=callback)
    rows = [
        [r.step, r.phase, f"{r.mean_return:.6f}", f"{r.mean_kl:.6f}",
         f"{r.mean_actions:.6f}", f"{r.policy_loss:.6f}", f"{r.value_loss:.6f}"]
        for r in result.metrics
    ]
    _write_csv(out_dir / "metrics.csv",
               ["step", "phase", "mean_return", "mean_kl", "mean_actions",
                "policy_loss", "value_loss"], rows)
    if result.metrics:
        save_training_curves(result.metrics, out_dir / "training_curves.png")
    out = Path(args.out) if args.out else out_dir / "checkpoint_trained.json"
    save_checkpoint(out, result.policy, result.value, ckpt.feat_cfg,
                    step=result.steps_run, sft=sft)
    if result.diverged:
        raise NumericError(
            f"training diverged after step {result.steps_run}; "
            f"last finite checkpoint written to {out}")
    print(f"trained {result.steps_run} steps; checkpoint at {out}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    corpus, _, eval_q = _load_world(cfg)
    out_dir = _out_dir(cfg, args)
    ckpt = load_checkpoint(_require_checkpoint(cfg, args))
    policy = CrawlerPolicy(ckpt.policy, ckpt.feat_cfg,
                           greedy=args.greedy or cfg.eval_setup.greedy)
    result = evaluate(policy, cfg.selector, corpus, eval_q, cfg.limits,
                      seed=cfg.seeds.eval, recall_ks=cfg.eval_setup.recall_ks,
                      mask_expand=args.mask_expand, keep_traces=True)
    _write_eval_outputs(result, out_dir, "eval", cfg.eval_setup.recall_ks)
    agg = result.aggregates
    print("  ".join(f"{k}={v:.4f}" for k, v in agg.items()))
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    corpus, train_q, eval_q = _load_world(cfg)
    out_dir = _out_dir(cfg, args)
    ckpt = load_checkpoint(_require_checkpoint(cfg, args))
    sft = ckpt.sft if ckpt.sft is not None else ckpt.policy
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    rows = ablate(
        corpus, train_q, eval_q, sft, variants, feat_cfg=ckpt.feat_cfg,
        limits=cfg.limits, selector=cfg.selector, reward_cfg=cfg.reward_cfg,
        ppo_cfg=cfg.ppo_cfg, train_seed=cfg.seeds.train, eval_seed=cfg.seeds.eval)
    _write_csv(out_dir / "ablation.csv",
               ["variant", "param", "crawler_recall", "precision", "recall", "mean_actions"],
               [[r.variant, r.param, f"{r.crawler_recall:.6f}", f"{r.precision:.6f}",
                 f"{r.recall:.6f}", f"{r.mean_actions:.6f}"] for r in rows])
    save_ablation_chart(rows, out_dir / "ablation.png")
    for r in rows:
        label = r.variant if not r.param else f"{r.variant}={r.param}"
        print(f"{label:24s} crawler_recall={r.crawler_recall:.4f} "
              f"recall={r.recall:.4f} actions={r.mean_actions:.1f}")
    return 0


def cmd_ensemble(cfg: RunConfig, args) -> int:
    corpus, _, eval_q = _load_world(cfg)
    out_dir = _out_dir(cfg, args)
    ckpt = load_checkpoint(_require_checkpoint(cfg, args))
    n_runs = args.n_runs if args.n_runs is not None else cfg.eval_setup.n_runs
    policy = CrawlerPolicy(ckpt.policy, ckpt.feat_cfg, greedy=cfg.eval_setup.greedy)
    result = ensemble_eval(policy, cfg.selector, corpus, eval_q, cfg.limits,
                           seed=cfg.seeds.eval, n_runs=n_runs,
                           recall_ks=cfg.eval_setup.recall_ks)
    _write_eval_outputs(result, out_dir, "ensemble", cfg.eval_setup.recall_ks)
    print("  ".join(f"{k}={v:.4f}" for k, v in result.aggregates.items()))
    return 0


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "gen-queries": cmd_gen_queries,
    "bc-train": cmd_bc_train,
    "ppo-train": cmd_ppo_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "ensemble": cmd_ensemble,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_run_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigurationError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (DataError, GenerationError, NotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
