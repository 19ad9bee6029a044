"""End-to-end command-line pipeline on a small world plus exit-code and
override behavior. Everything runs in-process through main()."""

import csv
import json
from pathlib import Path

import pytest

from pasa_lab.cli import main
from pasa_lab.corpus import load_queries

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

WORLD_TOML = """
[corpus]
n_papers = 120
n_topics = 6
tokens_per_topic = 8
date_span = 2000

[queries]
n_train = 8
n_eval = 4
k_candidates = 6

[ppo]
learning_rate = 0.02
epochs_per_step = 1
queries_per_step = 2
expand_sessions_per_wave = 2
policy_freeze_steps = 1
total_steps = 3
checkpoint_every = 2

[bc]
epochs = 8
learning_rate = 0.5

[eval]
recall_ks = [5, 10]
n_runs = 2

[seeds]
corpus = 101
queries = 102
bc = 103
train = 104
eval = 105

[paths]
corpus = "corpus.jsonl"
queries = "queries.jsonl"
checkpoint = "bc_checkpoint.json"
out_dir = "out"
"""


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """Config dir with the full pipeline already run: gen-corpus,
    gen-queries, bc-train, ppo-train."""
    root = tmp_path_factory.mktemp("cli_world")
    cfg = root / "run.toml"
    cfg.write_text(WORLD_TOML)
    for cmd in ("gen-corpus", "gen-queries", "bc-train", "ppo-train"):
        assert main([cmd, "--config", str(cfg)]) == 0, cmd
    return root


def read_csv(path: Path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_gen_corpus_and_queries_outputs(world):
    corpus_file = world / "corpus.jsonl"
    queries_file = world / "queries.jsonl"
    assert corpus_file.exists() and queries_file.exists()
    header = json.loads(corpus_file.read_text().splitlines()[0])
    assert header["format"] == "pasa-lab-corpus"
    queries = load_queries(queries_file)
    assert len(queries) == 12  # n_train + n_eval
    assert all(q.answers for q in queries)


def test_bc_train_outputs(world):
    ckpt = json.loads((world / "bc_checkpoint.json").read_text())
    assert ckpt["sft"] is not None
    assert ckpt["step"] == 0
    rows = read_csv(world / "out" / "bc_metrics.csv")
    assert rows[0] == ["epoch", "nll"]
    assert len(rows) == 1 + 8 + 1  # header + initial NLL + one row per epoch
    nlls = [float(r[1]) for r in rows[1:]]
    assert nlls[-1] <= nlls[0]
    assert (world / "out" / "bc_curve.png").read_bytes()[:8] == PNG_MAGIC


def test_ppo_train_outputs(world):
    out = world / "out"
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["step", "phase", "mean_return", "mean_kl",
                       "mean_actions", "policy_loss", "value_loss"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert [r[1] for r in rows[1:]] == ["freeze", "joint", "joint"]
    assert (out / "training_curves.png").read_bytes()[:8] == PNG_MAGIC
    trained = json.loads((out / "checkpoint_trained.json").read_text())
    assert trained["step"] == 3
    assert trained["value"] is not None
    # checkpoint_every = 2 snapshots step 2 only
    assert (out / "checkpoint_step2.json").exists()
    assert not (out / "checkpoint_step1.json").exists()
    assert not (out / "checkpoint_step3.json").exists()


def test_eval_outputs_and_stdout(world, capsys):
    cfg = world / "run.toml"
    ckpt = world / "out" / "checkpoint_trained.json"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "crawler_recall=" in out and "recall@5=" in out
    rows = read_csv(world / "out" / "eval.csv")
    assert rows[0] == ["query_id", "crawler_recall", "precision", "recall",
                       "recall@5", "recall@10", "n_actions", "queue_size",
                       "truncated"]
    assert len(rows) == 1 + 4  # header + one row per eval query
    summary = read_csv(world / "out" / "eval_summary.csv")
    assert summary[0][:3] == ["crawler_recall", "precision", "recall"]
    assert len(summary) == 2
    assert (world / "out" / "eval_summary.png").read_bytes()[:8] == PNG_MAGIC
    lines = (world / "out" / "rollouts.jsonl").read_text().splitlines()
    assert lines and all(json.loads(line) for line in lines)


def test_eval_reruns_byte_identical(world):
    cfg = world / "run.toml"
    ckpt = world / "out" / "checkpoint_trained.json"
    outputs = []
    for sub in ("rerun_a", "rerun_b"):
        out_dir = world / sub
        assert main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt),
                     "--out-dir", str(out_dir)]) == 0
        outputs.append((out_dir / "eval.csv").read_bytes())
    assert outputs[0] == outputs[1]


def test_eval_mask_expand_traces(world):
    cfg = world / "run.toml"
    ckpt = world / "out" / "checkpoint_trained.json"
    out_dir = world / "masked"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt),
                 "--greedy", "--mask-expand", "--out-dir", str(out_dir)]) == 0
    traces = (out_dir / "rollouts.jsonl").read_text()
    assert '"expand' not in traces


def test_ensemble_outputs(world):
    cfg = world / "run.toml"
    ckpt = world / "out" / "checkpoint_trained.json"
    out_dir = world / "ens"
    assert main(["ensemble", "--config", str(cfg), "--checkpoint", str(ckpt),
                 "--n-runs", "2", "--out-dir", str(out_dir)]) == 0
    rows = read_csv(out_dir / "ensemble.csv")
    assert len(rows) == 1 + 4
    assert (out_dir / "ensemble_summary.csv").exists()
    assert (out_dir / "ensemble_summary.png").read_bytes()[:8] == PNG_MAGIC


def test_ablate_outputs(world):
    cfg = world / "run.toml"
    out_dir = world / "abl"
    assert main(["ablate", "--config", str(cfg), "--variants", "no-rl",
                 "--out-dir", str(out_dir)]) == 0
    rows = read_csv(out_dir / "ablation.csv")
    assert rows[0] == ["variant", "param", "crawler_recall", "precision",
                       "recall", "mean_actions"]
    assert [r[0] for r in rows[1:]] == ["base", "no-rl"]
    assert (out_dir / "ablation.png").read_bytes()[:8] == PNG_MAGIC


def test_gen_corpus_overrides(world):
    cfg = world / "run.toml"
    alt = world / "alt_corpus.jsonl"
    assert main(["gen-corpus", "--config", str(cfg), "--seed", "7",
                 "--out", str(alt)]) == 0
    assert alt.exists()
    assert alt.read_bytes() != (world / "corpus.jsonl").read_bytes()
    # Same seed as the pipeline run reproduces the original bytes.
    again = world / "again_corpus.jsonl"
    assert main(["gen-corpus", "--config", str(cfg), "--seed", "101",
                 "--out", str(again)]) == 0
    assert again.read_bytes() == (world / "corpus.jsonl").read_bytes()


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------

def test_usage_errors_exit_1(tmp_path, capsys):
    assert main([]) == 1                      # no subcommand
    assert main(["eval"]) == 1                # missing --config
    assert main(["not-a-command", "--config", "x"]) == 1
    assert main(["eval", "--config", str(tmp_path / "absent.toml")]) == 1
    err = capsys.readouterr().err
    assert "error" in err


def test_missing_checkpoint_exit_1(world, capsys):
    # A config without [paths] checkpoint and no --checkpoint flag.
    cfg = world / "no_ckpt.toml"
    cfg.write_text(WORLD_TOML.replace('checkpoint = "bc_checkpoint.json"\n', ""))
    assert main(["eval", "--config", str(cfg)]) == 1
    assert "--checkpoint is required" in capsys.readouterr().err


def test_bad_toml_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("this is not toml [[[")
    assert main(["eval", "--config", str(bad)]) == 2


def test_missing_data_files_exit_2(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(WORLD_TOML)
    # No corpus has been generated in this directory.
    assert main(["gen-queries", "--config", str(cfg)]) == 2
    assert main(["eval", "--config", str(cfg), "--checkpoint", "x.json"]) == 2


def test_nonexistent_checkpoint_exit_2(world):
    cfg = world / "run.toml"
    assert main(["eval", "--config", str(cfg),
                 "--checkpoint", str(world / "ghost.json")]) == 2


def test_too_few_queries_exit_2(world, capsys):
    cfg = world / "greedy_split.toml"
    cfg.write_text(WORLD_TOML.replace("n_train = 8", "n_train = 50"))
    assert main(["bc-train", "--config", str(cfg)]) == 2
    assert "50 train" in capsys.readouterr().err


def test_divergence_exit_3(world, capsys):
    cfg = world / "divergent.toml"
    cfg.write_text(WORLD_TOML
                   .replace("learning_rate = 0.02", "learning_rate = 1e200")
                   .replace("policy_freeze_steps = 1", "policy_freeze_steps = 0")
                   .replace("total_steps = 3", "total_steps = 6"))
    out_dir = world / "div_out"
    code = main(["ppo-train", "--config", str(cfg), "--out-dir", str(out_dir),
                 "--out", str(out_dir / "ckpt.json")])
    assert code == 3
    assert "numeric failure" in capsys.readouterr().err
    # The last finite checkpoint is still written before aborting.
    assert (out_dir / "ckpt.json").exists()
    assert (out_dir / "metrics.csv").exists()
