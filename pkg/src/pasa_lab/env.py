"""Crawl environment: the token-level MDP the crawler policy acts in.

A rollout for one query opens a query session first. Search actions push
ranked keyword matches onto a shared dedup queue; the crawler then works
through the queue FIFO, opening one paper session per queued paper, where
Expand actions push the papers cited by a chosen section. Every paper is
tagged with the depth it was found at; expansion is masked once the depth
limit is reached, and a session past its action cap can only Stop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .corpus import Corpus, Query, SearchSpec
from .errors import ContractViolation, NotFoundError

SEARCH = "search"
EXPAND = "expand"
STOP = "stop"

QUERY_SESSION = "q"
PAPER_SESSION = "q+p"


@dataclass(frozen=True)
class Action:
    kind: str
    index: Optional[int] = None

    @staticmethod
    def search(i: int) -> "Action":
        return Action(SEARCH, i)

    @staticmethod
    def expand(j: int) -> "Action":
        return Action(EXPAND, j)

    @staticmethod
    def stop() -> "Action":
        return Action(STOP)

    def short(self) -> str:
        return self.kind if self.index is None else f"{self.kind}:{self.index}"


@dataclass(frozen=True)
class Limits:
    depth_limit: int = 3
    max_sessions: int = 40
    max_actions_per_session: int = 8
    search_limit: int = 10


class PaperQueue:
    """Ordered, deduplicating queue of (paper id, found depth) with a FIFO
    processing cursor. A paper can enter at most once, ever."""

    def __init__(self) -> None:
        self._entries: list[tuple[int, int]] = []
        self._members: set[int] = set()
        self._cursor = 0

    def __contains__(self, paper_id: int) -> bool:
        return paper_id in self._members

    def __len__(self) -> int:
        return len(self._entries)

    def extend(self, paper_ids: Iterable[int], depth: int) -> list[int]:
        """Append papers not already present; returns the ones actually added."""
        added = []
        for pid in paper_ids:
            if pid not in self._members:
                self._members.add(pid)
                self._entries.append((pid, depth))
                added.append(pid)
        return added

    def ids(self) -> list[int]:
        return [pid for pid, _ in self._entries]

    def entries(self) -> list[tuple[int, int]]:
        return list(self._entries)

    def members_snapshot(self) -> frozenset[int]:
        return frozenset(self._members)

    def has_unprocessed(self) -> bool:
        return self._cursor < len(self._entries)

    def next_entry(self) -> tuple[int, int]:
        if not self.has_unprocessed():
            raise ContractViolation("queue has no unprocessed papers")
        entry = self._entries[self._cursor]
        self._cursor += 1
        return entry


@dataclass(frozen=True)
class AgentState:
    """Immutable snapshot of the crawler's situation before one action.

    queue_members freezes queue membership at snapshot time, so novelty
    features computed later reproduce exactly what the policy saw."""

    query: Query
    kind: str
    current_paper: Optional[int]
    actions_taken: tuple[Action, ...]
    queue_members: frozenset[int]
    depth: int


@dataclass
class Transition:
    state: AgentState
    legal: tuple[Action, ...]
    action_index: int
    action: Action
    new_papers: tuple[int, ...]
    found_depth: int
    logprob_old: float
    feats: object = None  # StateFeatures when produced by a learned policy
    # Filled in by the trainer:
    reward: Optional[float] = None
    ret: Optional[float] = None
    advantage: Optional[float] = None
    value_old: Optional[float] = None


@dataclass
class Session:
    kind: str
    paper: Optional[int]
    depth: int
    transitions: list[Transition] = field(default_factory=list)


@dataclass
class Rollout:
    query: Query
    queue: PaperQueue
    sessions: list[Session]
    truncated: bool = False

    def actions_taken(self) -> int:
        """Search+Expand count over all sessions (Stops are free and excluded)."""
        return sum(
            1
            for s in self.sessions
            for t in s.transitions
            if t.action.kind != STOP
        )


def search(corpus: Corpus, spec: SearchSpec, query_date: int, limit: int) -> list[int]:
    """Rank papers sharing at least one spec keyword and dated before the
    query, by descending overlap then ascending id, capped at limit."""
    if limit < 0:
        raise ContractViolation(f"search limit must be >= 0, got {limit}")
    scored = []
    for paper in corpus.papers.values():
        if paper.pub_date >= query_date:
            continue
        overlap = len(paper.keywords & spec.keywords)
        if overlap > 0:
            scored.append((-overlap, paper.id))
    scored.sort()
    return [pid for _, pid in scored[:limit]]


def expand(corpus: Corpus, paper_id: int, section_index: int) -> list[int]:
    """The papers cited by one section, in stored order."""
    paper = corpus[paper_id]
    if not 0 <= section_index < len(paper.sections):
        raise NotFoundError(
            f"paper {paper_id} has no section index {section_index} "
            f"({len(paper.sections)} sections)"
        )
    return list(paper.sections[section_index].cited)


class CrawlerEnv:
    """Per-query environment: wraps the corpus, the query's candidate
    searches, the shared queue, and the crawl limits."""

    def __init__(self, corpus: Corpus, query: Query, limits: Limits = Limits(),
                 mask_expand: bool = False) -> None:
        self.corpus = corpus
        self.query = query
        self.limits = limits
        self.mask_expand = mask_expand
        self.queue = PaperQueue()
        self._search_cache: dict[int, tuple[int, ...]] = {}

    # -- states ------------------------------------------------------------

    def query_state(self) -> AgentState:
        return AgentState(
            query=self.query,
            kind=QUERY_SESSION,
            current_paper=None,
            actions_taken=(),
            queue_members=self.queue.members_snapshot(),
            depth=0,
        )

    def paper_state(self, paper_id: int, depth: int) -> AgentState:
        self.corpus[paper_id]  # existence check
        return AgentState(
            query=self.query,
            kind=PAPER_SESSION,
            current_paper=paper_id,
            actions_taken=(),
            queue_members=self.queue.members_snapshot(),
            depth=depth,
        )

    # -- action space ------------------------------------------------------

    def legal_actions(self, state: AgentState) -> tuple[Action, ...]:
        """Stop is always legal; it is the only choice once the session hits
        its action cap or, in paper sessions, the depth limit."""
        at_cap = len(state.actions_taken) >= self.limits.max_actions_per_session - 1
        if at_cap:
            return (Action.stop(),)
        actions: list[Action] = []
        if state.kind == QUERY_SESSION:
            actions = [Action.search(i) for i in range(len(state.query.candidate_searches))]
        elif state.depth < self.limits.depth_limit and not self.mask_expand:
            n_sections = len(self.corpus[state.current_paper].sections)
            actions = [Action.expand(j) for j in range(n_sections)]
        actions.append(Action.stop())
        return tuple(actions)

    def predicted_results(self, state: AgentState, action: Action) -> tuple[int, ...]:
        """What the action would push, before queue dedup."""
        if action.kind == SEARCH:
            return self._cached_search(action.index)
        if action.kind == EXPAND:
            return tuple(expand(self.corpus, state.current_paper, action.index))
        return ()

    def _cached_search(self, spec_index: int) -> tuple[int, ...]:
        if spec_index not in self._search_cache:
            specs = self.query.candidate_searches
            if not 0 <= spec_index < len(specs):
                raise NotFoundError(f"query {self.query.id} has no search spec {spec_index}")
            self._search_cache[spec_index] = tuple(search(
                self.corpus, specs[spec_index], self.query.query_date,
                self.limits.search_limit,
            ))
        return self._search_cache[spec_index]

    # -- dynamics ----------------------------------------------------------

    def step(self, state: AgentState, action: Action) -> tuple[AgentState, tuple[int, ...], bool]:
        if action not in self.legal_actions(state):
            raise ContractViolation(
                f"action {action.short()} is illegal in a {state.kind} state "
                f"(depth {state.depth}, {len(state.actions_taken)} actions taken)"
            )
        done = action.kind == STOP
        if done:
            new: tuple[int, ...] = ()
        else:
            results = self.predicted_results(state, action)
            new = tuple(self.queue.extend(results, depth=state.depth + 1))
        next_state = replace(
            state,
            actions_taken=state.actions_taken + (action,),
            queue_members=self.queue.members_snapshot(),
        )
        return next_state, new, done


def run_session(env: CrawlerEnv, policy, state: AgentState, rng) -> Session:
    """Roll one session to its Stop. `policy` must provide
    distribution(env, state) -> (legal, feats, probs) with probs aligned to
    legal; feats may be None for scripted policies."""
    from .policy import sample_action  # local import keeps policy -> env acyclic

    import math

    session = Session(kind=state.kind, paper=state.current_paper, depth=state.depth)
    while True:
        legal, feats, probs = policy.distribution(env, state)
        idx = sample_action(probs, rng)
        action = legal[idx]
        next_state, new, done = env.step(state, action)
        session.transitions.append(Transition(
            state=state,
            legal=tuple(legal),
            action_index=idx,
            action=action,
            new_papers=new,
            found_depth=state.depth + 1,
            logprob_old=float(math.log(probs[idx])),
            feats=feats,
        ))
        state = next_state
        if done:
            return session


def run_crawler(policy, query: Query, corpus: Corpus, limits: Limits = Limits(),
                rng=None, mask_expand: bool = False) -> Rollout:
    """Full crawl for one query: a query session, then FIFO paper sessions
    over the queue until it is exhausted or max_sessions is hit (the rollout
    is flagged truncated in that case)."""
    import numpy as np

    if rng is None:
        rng = np.random.default_rng(0)
    env = CrawlerEnv(corpus, query, limits, mask_expand=mask_expand)
    sessions = [run_session(env, policy, env.query_state(), rng)]
    truncated = False
    while env.queue.has_unprocessed():
        if len(sessions) >= limits.max_sessions:
            truncated = True
            break
        pid, depth = env.queue.next_entry()
        sessions.append(run_session(env, policy, env.paper_state(pid, depth), rng))
    return Rollout(query=query, queue=env.queue, sessions=sessions, truncated=truncated)


def rollout_trace_lines(rollout: Rollout) -> list[str]:
    """One JSON line per transition, for replay and offline reward checks."""
    lines = []
    for si, session in enumerate(rollout.sessions):
        for tr in session.transitions:
            lines.append(json.dumps({
                "session_idx": si,
                "kind": session.kind,
                "action": tr.action.short(),
                "new_papers": list(tr.new_papers),
                "logprob_old": tr.logprob_old,
            }, sort_keys=True))
    return lines
