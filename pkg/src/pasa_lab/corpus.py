"""Synthetic scholarly corpus with planted ground truth.

Papers carry integer keyword tokens drawn from latent topics, integer
publication days, and named sections whose citations point strictly
backward in time (so the citation graph is a DAG by construction).
Queries are keyword sets with an exact, brute-force-computable answer set:
a paper is an answer iff it shares at least half of the query's keywords
and predates the query. Every query also carries a fixed list of candidate
search specs that the crawl environment exposes as its search actions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigurationError, DataError, GenerationError, NotFoundError

CORPUS_FORMAT = "pasa-lab-corpus"
QUERY_FORMAT = "pasa-lab-queries"
FORMAT_VERSION = 1

# A paper answers a query when it holds at least this fraction of the
# query's keywords (and is dated before the query).
RELEVANCE_THRESHOLD = 0.5


@dataclass(frozen=True)
class Section:
    name: str
    cited: tuple[int, ...] = ()


@dataclass(frozen=True)
class Paper:
    id: int
    keywords: frozenset[int]
    pub_date: int
    sections: tuple[Section, ...] = ()


@dataclass(frozen=True)
class SearchSpec:
    """One executable search: a keyword set plus a short display label."""

    keywords: frozenset[int]
    label: str


@dataclass(frozen=True)
class Query:
    id: int
    keywords: frozenset[int]
    query_date: int
    answers: frozenset[int]
    candidate_searches: tuple[SearchSpec, ...]


@dataclass(frozen=True)
class CorpusConfig:
    n_papers: int = 500
    n_topics: int = 12
    tokens_per_topic: int = 10
    topics_per_paper_max: int = 3
    keywords_min: int = 3
    keywords_max: int = 8
    sections_min: int = 1
    sections_max: int = 4
    cites_per_section_max: int = 6
    # Citation preference weights: same-topic term plus a per-shared-keyword
    # term, so citations cluster around topically similar earlier work.
    topic_cite_weight: float = 4.0
    keyword_cite_weight: float = 8.0
    date_span: int = 0  # 0 means 4 * n_papers

    def validate(self) -> None:
        positive = [
            "n_papers", "n_topics", "tokens_per_topic", "topics_per_paper_max",
            "keywords_min", "sections_min",
        ]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.keywords_max < self.keywords_min:
            raise ConfigurationError("keywords_max must be >= keywords_min")
        if self.sections_max < self.sections_min:
            raise ConfigurationError("sections_max must be >= sections_min")
        if self.cites_per_section_max < 0:
            raise ConfigurationError("cites_per_section_max must be >= 0")
        if self.topic_cite_weight < 0 or self.keyword_cite_weight < 0:
            raise ConfigurationError("topic_cite_weight and keyword_cite_weight must be >= 0")
        if self.date_span and self.date_span < self.n_papers:
            raise ConfigurationError("date_span must be >= n_papers (dates are distinct days)")


@dataclass
class Corpus:
    papers: dict[int, Paper]
    seed: Optional[int] = None
    config: Optional[CorpusConfig] = None

    def __len__(self) -> int:
        return len(self.papers)

    def __contains__(self, paper_id: int) -> bool:
        return paper_id in self.papers

    def __getitem__(self, paper_id: int) -> Paper:
        try:
            return self.papers[paper_id]
        except KeyError:
            raise NotFoundError(f"unknown paper id {paper_id}") from None

    def ids(self) -> list[int]:
        return sorted(self.papers)

    def vocabulary(self) -> list[int]:
        vocab: set[int] = set()
        for paper in self.papers.values():
            vocab.update(paper.keywords)
        return sorted(vocab)


def overlap_ratio(paper_keywords: frozenset[int], query_keywords: frozenset[int]) -> float:
    if not query_keywords:
        return 0.0
    return len(paper_keywords & query_keywords) / len(query_keywords)


def answers_for(corpus: Corpus, keywords: frozenset[int], query_date: int) -> frozenset[int]:
    """Exhaustive relevance scan: the ground-truth answer set for a keyword set."""
    hits = [
        p.id
        for p in corpus.papers.values()
        if p.pub_date < query_date and overlap_ratio(p.keywords, keywords) >= RELEVANCE_THRESHOLD
    ]
    return frozenset(hits)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def gen_corpus(config: CorpusConfig, seed: int) -> Corpus:
    """Generate a corpus with topic-clustered keywords and a backward-in-time
    citation DAG. Deterministic in (config, seed)."""
    config.validate()
    rng = np.random.default_rng(seed)
    n = config.n_papers
    span = config.date_span or 4 * n
    dates = np.sort(rng.choice(span, size=n, replace=False))

    # Per-token and per-topic postings of earlier paper ids, used to build
    # citation preference weights without quadratic set intersections.
    token_postings: dict[int, list[int]] = {}
    topic_postings: dict[int, list[int]] = {}
    paper_topics: list[np.ndarray] = []
    papers: dict[int, Paper] = {}

    for i in range(n):
        n_top = int(rng.integers(1, min(config.topics_per_paper_max, config.n_topics) + 1))
        topics = rng.choice(config.n_topics, size=n_top, replace=False)
        pool = np.concatenate([
            np.arange(t * config.tokens_per_topic, (t + 1) * config.tokens_per_topic)
            for t in topics
        ])
        n_kw = int(rng.integers(config.keywords_min, config.keywords_max + 1))
        n_kw = min(n_kw, len(pool))
        keywords = rng.choice(pool, size=n_kw, replace=False)

        weights = _citation_weights(i, keywords, topics, token_postings, topic_postings, config)
        n_sections = int(rng.integers(config.sections_min, config.sections_max + 1))
        sections = []
        for s in range(n_sections):
            cited: tuple[int, ...] = ()
            if i > 0 and config.cites_per_section_max > 0:
                n_cites = int(rng.integers(0, config.cites_per_section_max + 1))
                n_cites = min(n_cites, i)
                if n_cites > 0:
                    probs = weights / weights.sum()
                    cited = tuple(int(j) for j in rng.choice(i, size=n_cites, replace=False, p=probs))
            sections.append(Section(name=f"sec{s}", cited=cited))

        papers[i] = Paper(
            id=i,
            keywords=frozenset(int(t) for t in keywords),
            pub_date=int(dates[i]),
            sections=tuple(sections),
        )
        paper_topics.append(topics)
        for t in keywords:
            token_postings.setdefault(int(t), []).append(i)
        for t in topics:
            topic_postings.setdefault(int(t), []).append(i)

    return Corpus(papers=papers, seed=seed, config=config)


def _citation_weights(i, keywords, topics, token_postings, topic_postings, config) -> np.ndarray:
    if i == 0:
        return np.zeros(0)
    weights = np.ones(i)
    shared = np.zeros(i)
    for t in keywords:
        posting = token_postings.get(int(t))
        if posting:
            shared[posting] += 1.0
    weights += config.keyword_cite_weight * shared
    same_topic = np.zeros(i, dtype=bool)
    for t in topics:
        posting = topic_postings.get(int(t))
        if posting:
            same_topic[posting] = True
    weights += config.topic_cite_weight * same_topic
    return weights


@dataclass(frozen=True)
class QueryConfig:
    n_keywords: int = 3
    k_candidates: int = 8
    answers_min: int = 1
    answers_max: int = 8
    # Weights over answer-set sizes answers_min..answers_max. The default is
    # skewed so the median lands at 2 answers and the 90th percentile at 5,
    # mirroring small real-world answer sets. None means uniform.
    answer_size_weights: Optional[tuple[float, ...]] = (
        0.20, 0.35, 0.15, 0.10, 0.10, 0.04, 0.03, 0.03,
    )
    max_retries: int = 500

    def validate(self) -> None:
        if self.n_keywords < 1:
            raise ConfigurationError("n_keywords must be >= 1")
        if self.k_candidates < 1:
            raise ConfigurationError("k_candidates must be >= 1")
        if self.answers_min < 1:
            raise ConfigurationError("answers_min must be >= 1")
        if self.answers_max < self.answers_min:
            raise ConfigurationError("answers_max must be >= answers_min")
        if self.answer_size_weights is not None:
            n_sizes = self.answers_max - self.answers_min + 1
            if len(self.answer_size_weights) != n_sizes:
                raise ConfigurationError(
                    f"answer_size_weights needs {n_sizes} entries, got {len(self.answer_size_weights)}"
                )


def gen_queries(corpus: Corpus, n: int, seed: int, config: QueryConfig = QueryConfig()) -> list[Query]:
    """Generate queries whose answer sets come from the exhaustive relevance
    scan. Each query anchors on a real paper's keywords, so the answer set is
    never empty; the query date is placed to cut the match list to the drawn
    target size."""
    config.validate()
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    vocab = np.array(corpus.vocabulary())
    paper_ids = np.array(corpus.ids())
    by_date = sorted(corpus.papers.values(), key=lambda p: (p.pub_date, p.id))

    sizes = np.arange(config.answers_min, config.answers_max + 1)
    if config.answer_size_weights is None:
        size_probs = np.full(len(sizes), 1.0 / len(sizes))
    else:
        w = np.asarray(config.answer_size_weights, dtype=float)
        size_probs = w / w.sum()

    queries: list[Query] = []
    for qid in range(n):
        query = _gen_one_query(qid, corpus, rng, vocab, paper_ids, by_date, sizes, size_probs, config)
        queries.append(query)
    return queries


def _gen_one_query(qid, corpus, rng, vocab, paper_ids, by_date, sizes, size_probs, config) -> Query:
    for attempt in range(config.max_retries):
        anchor = corpus.papers[int(rng.choice(paper_ids))]
        if len(anchor.keywords) < config.n_keywords:
            continue
        kw_pool = np.array(sorted(anchor.keywords))
        keywords = frozenset(
            int(t) for t in rng.choice(kw_pool, size=config.n_keywords, replace=False)
        )
        matches = [
            p for p in by_date
            if overlap_ratio(p.keywords, keywords) >= RELEVANCE_THRESHOLD
        ]
        if len(matches) < config.answers_min:
            continue
        target = int(rng.choice(sizes, p=size_probs))
        m = min(target, len(matches))
        if m < config.answers_min:
            continue
        query_date = matches[m - 1].pub_date + 1
        answers = answers_for(corpus, keywords, query_date)
        if not (config.answers_min <= len(answers) <= config.answers_max):
            # Date ties can sweep extra matches in; just retry.
            continue
        candidates = _candidate_searches(keywords, vocab, rng, config.k_candidates)
        return Query(
            id=qid,
            keywords=keywords,
            query_date=query_date,
            answers=answers,
            candidate_searches=candidates,
        )
    raise GenerationError(
        f"query {qid}: no valid keyword draw after {config.max_retries} retries",
        retries=config.max_retries,
    )


def _candidate_searches(keywords, vocab, rng, k) -> tuple[SearchSpec, ...]:
    """Full keyword set, then singletons, then distractor-augmented supersets."""
    kw_sorted = sorted(keywords)
    specs = [SearchSpec(frozenset(keywords), "all")]
    for t in kw_sorted:
        specs.append(SearchSpec(frozenset([t]), f"kw:{t}"))
    distractors = np.array([t for t in vocab if t not in keywords])
    if len(distractors) > 0:
        n_extra = max(0, k - len(specs))
        n_extra = min(n_extra, len(distractors))
        if n_extra > 0:
            picks = rng.choice(distractors, size=n_extra, replace=False)
            for d in picks:
                specs.append(SearchSpec(frozenset(keywords | {int(d)}), f"all+{int(d)}"))
    return tuple(specs[:k])


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Check every structural invariant; the report names offending ids."""
    report = ValidationReport()
    for key, paper in corpus.papers.items():
        if key != paper.id:
            report.violations.append(f"paper keyed {key} carries id {paper.id}")
        names = [s.name for s in paper.sections]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            report.violations.append(f"paper {paper.id}: duplicate section names {dupes}")
        for section in paper.sections:
            if len(section.cited) != len(set(section.cited)):
                report.violations.append(
                    f"paper {paper.id} section {section.name!r}: duplicate cited entries"
                )
            for target in section.cited:
                if target not in corpus.papers:
                    report.violations.append(
                        f"paper {paper.id} section {section.name!r} cites missing id {target}"
                    )
                elif corpus.papers[target].pub_date >= paper.pub_date:
                    report.violations.append(
                        f"paper {paper.id} cites {target} published at or after it "
                        f"({corpus.papers[target].pub_date} >= {paper.pub_date})"
                    )
    return report


# ---------------------------------------------------------------------------
# Serialization (JSON lines with a format header)
# ---------------------------------------------------------------------------

def _dump_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def corpus_to_jsonl(corpus: Corpus) -> str:
    header = {"format": CORPUS_FORMAT, "version": FORMAT_VERSION}
    if corpus.seed is not None:
        header["seed"] = corpus.seed
    if corpus.config is not None:
        header["config"] = asdict(corpus.config)
    lines = [_dump_line(header)]
    for pid in sorted(corpus.papers):
        paper = corpus.papers[pid]
        lines.append(_dump_line({
            "id": paper.id,
            "keywords": sorted(paper.keywords),
            "pub_date": paper.pub_date,
            "sections": [
                {"name": s.name, "cited": list(s.cited)} for s in paper.sections
            ],
        }))
    return "\n".join(lines) + "\n"


def corpus_from_jsonl(text: str) -> Corpus:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty corpus file")
    header = _parse_header(lines[0], CORPUS_FORMAT)
    papers: dict[int, Paper] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        rec = _parse_record(line, lineno)
        try:
            paper = Paper(
                id=int(rec["id"]),
                keywords=frozenset(int(t) for t in rec["keywords"]),
                pub_date=int(rec["pub_date"]),
                sections=tuple(
                    Section(name=s["name"], cited=tuple(int(c) for c in s["cited"]))
                    for s in rec["sections"]
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"line {lineno}: bad paper record ({exc})") from exc
        if paper.id in papers:
            raise DataError(f"line {lineno}: duplicate paper id {paper.id}")
        papers[paper.id] = paper
    config = CorpusConfig(**header["config"]) if "config" in header else None
    return Corpus(papers=papers, seed=header.get("seed"), config=config)


def queries_to_jsonl(queries: Iterable[Query]) -> str:
    lines = [_dump_line({"format": QUERY_FORMAT, "version": FORMAT_VERSION})]
    for q in queries:
        lines.append(_dump_line({
            "id": q.id,
            "keywords": sorted(q.keywords),
            "query_date": q.query_date,
            "answers": sorted(q.answers),
            "candidate_searches": [
                {"keywords": sorted(s.keywords), "label": s.label}
                for s in q.candidate_searches
            ],
        }))
    return "\n".join(lines) + "\n"


def queries_from_jsonl(text: str) -> list[Query]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty query file")
    _parse_header(lines[0], QUERY_FORMAT)
    queries = []
    for lineno, line in enumerate(lines[1:], start=2):
        rec = _parse_record(line, lineno)
        try:
            queries.append(Query(
                id=int(rec["id"]),
                keywords=frozenset(int(t) for t in rec["keywords"]),
                query_date=int(rec["query_date"]),
                answers=frozenset(int(a) for a in rec["answers"]),
                candidate_searches=tuple(
                    SearchSpec(frozenset(int(t) for t in s["keywords"]), s["label"])
                    for s in rec["candidate_searches"]
                ),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"line {lineno}: bad query record ({exc})") from exc
    return queries


def _parse_header(line: str, expected_format: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"header line is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != expected_format:
        raise DataError(f"expected format header {expected_format!r}, got {line[:80]!r}")
    if header.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported {expected_format} version {header.get('version')!r}")
    return header


def _parse_record(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"line {lineno}: invalid JSON ({exc})") from exc
    if not isinstance(rec, dict):
        raise DataError(f"line {lineno}: expected an object")
    return rec


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(corpus_to_jsonl(corpus))


def load_corpus(path: str | Path) -> Corpus:
    p = Path(path)
    if not p.exists():
        raise DataError(f"corpus file not found: {p}")
    return corpus_from_jsonl(p.read_text())


def save_queries(queries: Iterable[Query], path: str | Path) -> None:
    Path(path).write_text(queries_to_jsonl(queries))


def load_queries(path: str | Path) -> list[Query]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"query file not found: {p}")
    return queries_from_jsonl(p.read_text())
