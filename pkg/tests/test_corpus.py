"""Corpus and query generation: determinism, planted answers, validation,
and exact serialization round-trips."""

import json

import numpy as np
import pytest

from pasa_lab.corpus import (
    Corpus, CorpusConfig, Paper, QueryConfig, Section,
    answers_for, corpus_from_jsonl, corpus_to_jsonl, gen_corpus, gen_queries,
    load_corpus, load_queries, overlap_ratio, queries_from_jsonl,
    queries_to_jsonl, save_corpus, save_queries, validate_corpus,
)
from pasa_lab.errors import (
    ConfigurationError, DataError, GenerationError, NotFoundError,
)


def brute_force_answers(corpus, keywords, query_date):
    """Independent relevance scan reimplemented from the planted rule."""
    return {
        p.id for p in corpus.papers.values()
        if p.pub_date < query_date
        and len(p.keywords & keywords) / len(keywords) >= 0.5
    }


# ---------------------------------------------------------------------------
# gen_corpus
# ---------------------------------------------------------------------------

def test_single_paper_corpus_has_no_citations():
    corpus = gen_corpus(CorpusConfig(n_papers=1), seed=7)
    assert len(corpus) == 1
    paper = corpus.papers[0]
    assert all(s.cited == () for s in paper.sections)


def test_gen_corpus_deterministic_bytes():
    config = CorpusConfig(n_papers=60, n_topics=5)
    a = corpus_to_jsonl(gen_corpus(config, seed=42))
    b = corpus_to_jsonl(gen_corpus(config, seed=42))
    assert a == b


def test_gen_corpus_seed_changes_output():
    config = CorpusConfig(n_papers=60, n_topics=5)
    a = corpus_to_jsonl(gen_corpus(config, seed=1))
    b = corpus_to_jsonl(gen_corpus(config, seed=2))
    assert a != b


def test_generated_corpus_is_valid_backward_dag():
    corpus = gen_corpus(CorpusConfig(n_papers=500, n_topics=20), seed=42)
    assert validate_corpus(corpus).ok
    # Independent check: all citation edges point strictly backward in time,
    # so sorting by pub_date is a topological order.
    for paper in corpus.papers.values():
        for section in paper.sections:
            for target in section.cited:
                assert corpus.papers[target].pub_date < paper.pub_date
    dates = [p.pub_date for p in corpus.papers.values()]
    assert len(set(dates)) == len(dates)


def test_gen_corpus_invalid_config_names_field():
    with pytest.raises(ConfigurationError, match="n_papers"):
        gen_corpus(CorpusConfig(n_papers=0), seed=1)
    with pytest.raises(ConfigurationError, match="keywords_max"):
        gen_corpus(CorpusConfig(keywords_min=5, keywords_max=3), seed=1)
    with pytest.raises(ConfigurationError, match="date_span"):
        gen_corpus(CorpusConfig(n_papers=100, date_span=50), seed=1)


def test_corpus_getitem_unknown_id():
    corpus = gen_corpus(CorpusConfig(n_papers=3), seed=0)
    with pytest.raises(NotFoundError):
        corpus[999]
    assert isinstance(NotFoundError("x"), LookupError)


# ---------------------------------------------------------------------------
# gen_queries
# ---------------------------------------------------------------------------

def test_answers_match_brute_force_scan(gen_world):
    corpus, queries = gen_world
    for q in queries:
        assert set(q.answers) == brute_force_answers(corpus, q.keywords, q.query_date)


def test_answers_for_planted_topic(tiny_corpus):
    # Exactly papers 0, 1, 4 carry keyword 0; querying {0} after all of them
    # must return exactly that set.
    assert answers_for(tiny_corpus, frozenset({0}), 5) == frozenset({0, 1, 4})


def test_answers_for_respects_date(tiny_corpus):
    # A query dated before every paper has no answers.
    assert answers_for(tiny_corpus, frozenset({0}), 0) == frozenset()


def test_gen_queries_deterministic(gen_world):
    corpus, _ = gen_world
    a = gen_queries(corpus, 6, seed=5)
    b = gen_queries(corpus, 6, seed=5)
    assert a == b


def test_gen_queries_invariants(gen_world):
    corpus, queries = gen_world
    for q in queries:
        assert q.answers
        assert q.candidate_searches
        assert len(q.candidate_searches) <= 6
        for pid in q.answers:
            assert corpus[pid].pub_date < q.query_date
        for spec in q.candidate_searches:
            assert spec.keywords


def test_gen_queries_candidate_search_structure(gen_world):
    corpus, _ = gen_world
    q = gen_queries(corpus, 1, seed=9, config=QueryConfig(k_candidates=8))[0]
    # First the full keyword set, then one singleton per keyword, then
    # distractor supersets.
    assert q.candidate_searches[0].keywords == q.keywords
    singles = q.candidate_searches[1:1 + len(q.keywords)]
    assert {next(iter(s.keywords)) for s in singles} == set(q.keywords)
    for spec in q.candidate_searches[1 + len(q.keywords):]:
        assert spec.keywords > q.keywords


def test_gen_queries_exhausts_retries_on_impossible_target():
    papers = {0: Paper(0, frozenset({1, 2, 3}), 0, (Section("sec0"),))}
    corpus = Corpus(papers=papers)
    config = QueryConfig(n_keywords=3, answers_min=2, answers_max=4,
                         answer_size_weights=None, max_retries=40)
    with pytest.raises(GenerationError) as exc_info:
        gen_queries(corpus, 1, seed=3, config=config)
    assert exc_info.value.retries == 40


def test_query_config_validation():
    with pytest.raises(ConfigurationError):
        QueryConfig(n_keywords=0).validate()
    with pytest.raises(ConfigurationError):
        QueryConfig(answers_min=3, answers_max=2).validate()
    with pytest.raises(ConfigurationError, match="answer_size_weights"):
        QueryConfig(answers_min=1, answers_max=2,
                    answer_size_weights=(1.0,)).validate()


def test_overlap_ratio_empty_query_keywords():
    assert overlap_ratio(frozenset({1}), frozenset()) == 0.0
    assert overlap_ratio(frozenset({1, 2}), frozenset({1, 2})) == 1.0
    assert overlap_ratio(frozenset({1}), frozenset({1, 2})) == 0.5


# ---------------------------------------------------------------------------
# validate_corpus
# ---------------------------------------------------------------------------

def test_validator_accepts_valid_corpus(tiny_corpus):
    assert validate_corpus(tiny_corpus).ok


def test_validator_names_missing_citation_target():
    papers = {
        0: Paper(0, frozenset({1}), 0, (Section("sec0"),)),
        1: Paper(1, frozenset({1}), 1, (Section("sec0", (999,)),)),
    }
    report = validate_corpus(Corpus(papers=papers))
    assert not report.ok
    assert any("999" in v for v in report.violations)


def test_validator_names_forward_edge():
    papers = {
        0: Paper(0, frozenset({1}), 5, (Section("sec0", (1,)),)),
        1: Paper(1, frozenset({1}), 9, (Section("sec0"),)),
    }
    report = validate_corpus(Corpus(papers=papers))
    assert not report.ok
    assert any("0" in v and "1" in v for v in report.violations)


def test_validator_flags_duplicate_cited_and_section_names():
    papers = {
        0: Paper(0, frozenset({1}), 0, (Section("sec0"),)),
        1: Paper(1, frozenset({1}), 1,
                 (Section("sec0", (0, 0)), Section("sec0"))),
    }
    report = validate_corpus(Corpus(papers=papers))
    assert len(report.violations) == 2


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_corpus_roundtrip_equality(gen_world):
    corpus, _ = gen_world
    parsed = corpus_from_jsonl(corpus_to_jsonl(corpus))
    assert parsed.papers == corpus.papers
    assert parsed.seed == corpus.seed
    assert parsed.config == corpus.config
    # And byte-stable through a second cycle.
    assert corpus_to_jsonl(parsed) == corpus_to_jsonl(corpus)


def test_queries_roundtrip_equality(gen_world):
    _, queries = gen_world
    assert queries_from_jsonl(queries_to_jsonl(queries)) == list(queries)


def test_corpus_file_format(tmp_path, tiny_corpus):
    path = tmp_path / "corpus.jsonl"
    save_corpus(tiny_corpus, path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["format"] == "pasa-lab-corpus"
    assert header["version"] == 1
    assert len(lines) == 1 + len(tiny_corpus)
    record = json.loads(lines[1])
    assert set(record) == {"id", "keywords", "pub_date", "sections"}
    assert set(record["sections"][0]) == {"name", "cited"}
    assert load_corpus(path).papers == tiny_corpus.papers


def test_queries_file_format(tmp_path, tiny_query):
    path = tmp_path / "queries.jsonl"
    save_queries([tiny_query], path)
    lines = path.read_text().splitlines()
    assert json.loads(lines[0])["format"] == "pasa-lab-queries"
    record = json.loads(lines[1])
    assert set(record) == {"id", "keywords", "query_date", "answers", "candidate_searches"}
    assert load_queries(path) == [tiny_query]


def test_corpus_parse_rejects_bad_header():
    with pytest.raises(DataError, match="format"):
        corpus_from_jsonl('{"format":"something-else","version":1}\n')
    with pytest.raises(DataError, match="version"):
        corpus_from_jsonl('{"format":"pasa-lab-corpus","version":99}\n')
    with pytest.raises(DataError):
        corpus_from_jsonl("")


def test_corpus_parse_reports_line_numbers():
    text = ('{"format":"pasa-lab-corpus","version":1}\n'
            '{"id":0,"keywords":[1],"pub_date":0,"sections":[]}\n'
            'not json\n')
    with pytest.raises(DataError, match="line 3"):
        corpus_from_jsonl(text)


def test_corpus_parse_rejects_duplicate_ids():
    record = '{"id":0,"keywords":[1],"pub_date":0,"sections":[]}'
    text = '{"format":"pasa-lab-corpus","version":1}\n' + record + "\n" + record + "\n"
    with pytest.raises(DataError, match="duplicate"):
        corpus_from_jsonl(text)


def test_queries_parse_rejects_wrong_header():
    with pytest.raises(DataError):
        queries_from_jsonl('{"format":"pasa-lab-corpus","version":1}\n')


def test_load_missing_files(tmp_path):
    with pytest.raises(DataError):
        load_corpus(tmp_path / "nope.jsonl")
    with pytest.raises(DataError):
        load_queries(tmp_path / "nope.jsonl")


def test_vocabulary_and_ids(tiny_corpus):
    assert tiny_corpus.ids() == [0, 1, 2, 3, 4]
    assert tiny_corpus.vocabulary() == [0, 1, 5, 6]
    assert 3 in tiny_corpus
    assert 99 not in tiny_corpus
