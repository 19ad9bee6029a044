"""Shared fixtures: a hand-built five-paper world with a fully hand-traceable
crawl, a generated mid-size world for integration tests, scripted policies,
and finite-difference gradient helpers."""

from __future__ import annotations

import numpy as np
import pytest

from pasa_lab.corpus import (
    Corpus, CorpusConfig, Paper, Query, QueryConfig, SearchSpec, Section,
    gen_corpus, gen_queries,
)
from pasa_lab.env import QUERY_SESSION, Action
from pasa_lab.policy import (
    FeaturizerConfig, Params, StateFeatures, flatten_params, unflatten_params,
)


def make_tiny_corpus() -> Corpus:
    """Five papers over keywords {0,1,5,6}; citations point backward in time.

    With query keywords {0,1} dated 5 the answers are {0,1,2,4} (paper 3
    shares nothing with the query), and the full-keyword search returns
    [0, 4, 1, 2]: papers 0 and 4 share both keywords, 1 and 2 share one.
    """
    papers = {
        0: Paper(0, frozenset({0, 1}), 0, (Section("sec0", ()),)),
        1: Paper(1, frozenset({0}), 1, (Section("sec0", (0,)),)),
        2: Paper(2, frozenset({1, 5}), 2, (Section("sec0", (0,)), Section("sec1", ()))),
        3: Paper(3, frozenset({5, 6}), 3, (Section("sec0", (2,)),)),
        4: Paper(4, frozenset({0, 1, 6}), 4, (Section("sec0", (1, 3)),)),
    }
    return Corpus(papers=papers)


def make_tiny_query() -> Query:
    return Query(
        id=0,
        keywords=frozenset({0, 1}),
        query_date=5,
        answers=frozenset({0, 1, 2, 4}),
        candidate_searches=(
            SearchSpec(frozenset({0, 1}), "all"),
            SearchSpec(frozenset({0}), "kw:0"),
            SearchSpec(frozenset({1}), "kw:1"),
        ),
    )


@pytest.fixture
def tiny_corpus() -> Corpus:
    return make_tiny_corpus()


@pytest.fixture
def tiny_query() -> Query:
    return make_tiny_query()


@pytest.fixture(scope="session")
def gen_world():
    """A generated 150-paper world with 12 queries, shared across tests."""
    config = CorpusConfig(n_papers=150, n_topics=6, tokens_per_topic=8)
    corpus = gen_corpus(config, seed=11)
    queries = gen_queries(corpus, 12, seed=12, config=QueryConfig(k_candidates=6))
    return corpus, queries


class ScriptedPolicy:
    """Deterministic policy for hand-traced rollouts: fires the configured
    search indices in order, expands every section of each queued paper,
    then stops. Feature payloads are left empty."""

    def __init__(self, search_indices=(0,), expand_all=True):
        self.search_indices = tuple(search_indices)
        self.expand_all = expand_all

    def distribution(self, env, state):
        legal = env.legal_actions(state)
        n = len(state.actions_taken)
        if state.kind == QUERY_SESSION:
            want = (Action.search(self.search_indices[n])
                    if n < len(self.search_indices) else Action.stop())
        elif self.expand_all:
            n_sections = len(env.corpus[state.current_paper].sections)
            want = Action.expand(n) if n < n_sections else Action.stop()
        else:
            want = Action.stop()
        if want not in legal:
            want = Action.stop()
        probs = np.zeros(len(legal))
        probs[legal.index(want)] = 1.0
        return legal, None, probs


class StopPolicy:
    def distribution(self, env, state):
        legal = env.legal_actions(state)
        probs = np.zeros(len(legal))
        probs[legal.index(Action.stop())] = 1.0
        return legal, None, probs


class NeverStopPolicy:
    """Always takes the first non-Stop legal action; stops only when forced."""

    def distribution(self, env, state):
        legal = env.legal_actions(state)
        pick = 0 if legal[0].kind != "stop" else len(legal) - 1
        probs = np.zeros(len(legal))
        probs[pick] = 1.0
        return legal, None, probs


# ---------------------------------------------------------------------------
# Gradient-check helpers
# ---------------------------------------------------------------------------

def fd_grad(fn, params: Params, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of Params, flattened
    in the same (sorted-key) order as flatten_params."""
    base = flatten_params(params)
    grad = np.zeros_like(base)
    for i in range(base.size):
        up = base.copy()
        dn = base.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fn(unflatten_params(params, up)) - fn(unflatten_params(params, dn))) / (2 * h)
    return grad


def flatten_grads(grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(grads[k]).ravel() for k in sorted(grads)])


def assert_grads_match(analytic: dict[str, np.ndarray], numeric: np.ndarray,
                       rtol: float = 1e-4, atol: float = 1e-7) -> None:
    np.testing.assert_allclose(flatten_grads(analytic), numeric, rtol=rtol, atol=atol)


def random_feats(rng, n_legal: int, cfg: FeaturizerConfig = FeaturizerConfig()) -> StateFeatures:
    return StateFeatures(
        state_vec=rng.normal(size=cfg.state_dim),
        action_feats=rng.normal(size=(n_legal, cfg.action_dim)),
    )


def random_params(rng, in_dim: int, arch: str = "linear", hidden: int = 4,
                  scale: float = 0.5) -> Params:
    if arch == "linear":
        return Params("linear", {
            "w": rng.normal(0, scale, size=in_dim),
            "b": rng.normal(0, scale, size=1),
        })
    return Params("mlp", {
        "w1": rng.normal(0, scale, size=(in_dim, hidden)),
        "b1": rng.normal(0, scale, size=hidden),
        "w2": rng.normal(0, scale, size=hidden),
        "b2": rng.normal(0, scale, size=1),
    })
