"""Relevance judge over (query, paper) pairs.

The exact mode is an oracle on the planted answer sets. The noisy mode
flips the oracle's verdict with configured false-positive/negative rates,
but the flip is a fixed function of (seed, query id, paper id): judging the
same pair twice always returns the same decision, so it behaves like a
frozen learned model rather than a coin flipped at call time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Query
from .errors import ConfigurationError

MODES = ("exact", "noisy")


@dataclass(frozen=True)
class SelectorModel:
    mode: str = "exact"
    false_positive_rate: float = 0.0
    false_negative_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("false_positive_rate", "false_negative_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {rate}")


@dataclass(frozen=True)
class Decision:
    accept: bool
    score: float


def select(model: SelectorModel, query: Query, paper_id: int) -> Decision:
    """Judge one (query, paper) pair. Deterministic for a fixed model."""
    model.validate()
    truth = paper_id in query.answers
    if model.mode == "exact":
        return Decision(accept=truth, score=1.0 if truth else 0.0)
    rate = model.false_negative_rate if truth else model.false_positive_rate
    u = _pair_uniform(model.seed, query.id, paper_id)
    accept = (not truth) if u < rate else truth
    return Decision(accept=accept, score=1.0 if accept else 0.0)


def _pair_uniform(seed: int, query_id: int, paper_id: int) -> float:
    # SeedSequence mixes the triple into a high-quality stream; one draw is
    # enough and stays stable across processes and platforms.
    rng = np.random.default_rng(np.random.SeedSequence([seed, query_id, paper_id]))
    return float(rng.random())


def indicator(model: SelectorModel, query: Query, paper_id: int, queue,
              selector_branch: bool = True) -> int:
    """Per-paper reward gate: 1 iff the paper is judged relevant (or is a
    known answer) and is not already in the queue. `queue` is anything
    supporting membership tests over paper ids. With selector_branch=False
    the judge is bypassed and only the planted answer set counts (the
    exact-set reward ablation)."""
    if paper_id in queue:
        return 0
    if paper_id in query.answers:
        return 1
    if not selector_branch:
        return 0
    return 1 if select(model, query, paper_id).accept else 0
