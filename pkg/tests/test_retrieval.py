import math
import random

import pytest

from sdvpipe.chunking import Chunk, base_chunks, tokenize
from sdvpipe.retrieval import (
    DuplicateChunkId,
    RerankWeights,
    build_index,
    canonical_id_key,
    rerank,
    retrieve,
    score_bm25,
)

from generators import random_chunk_corpus, random_query


def brute_force_bm25(chunks, query, k1=1.2, b=0.75):
    """Independent full-scan scorer used as the ranking oracle."""
    token_lists = {c.id: tokenize(c.text) for c in chunks}
    n = len(chunks)
    avg = sum(len(t) for t in token_lists.values()) / n if n else 0.0
    scores = {}
    for chunk in chunks:
        tokens = token_lists[chunk.id]
        score = 0.0
        for q in tokenize(query):
            tf = tokens.count(q)
            if tf == 0:
                continue
            df = sum(1 for other in token_lists.values() if q in other)
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(tokens) / avg))
        scores[chunk.id] = score
    return scores


@pytest.fixture()
def f1_index(doc):
    chunks = base_chunks(doc, 1)
    return build_index(chunks), chunks


class TestBuildIndex:
    def test_empty_corpus(self):
        index = build_index([])
        assert index.corpus_size == 0
        assert retrieve(index, "anything", 3) == []

    def test_doc_lengths(self, f1_index):
        index, _ = f1_index
        assert len(index.doc_lengths) == 5

    def test_collision_postings(self, f1_index):
        index, _ = f1_index
        assert [cid for cid, _ in index.postings["collision"]] == ["2", "5"]

    def test_postings_sorted_by_canonical_id(self, f1_index):
        index, _ = f1_index
        for plist in index.postings.values():
            keys = [canonical_id_key(cid) for cid, _ in plist]
            assert keys == sorted(keys)

    def test_duplicate_id_rejected(self, f1_index):
        _, chunks = f1_index
        with pytest.raises(DuplicateChunkId):
            build_index(chunks + [chunks[0]])

    def test_avg_doc_length(self, f1_index):
        index, _ = f1_index
        assert index.avg_doc_length == pytest.approx(
            sum(index.doc_lengths.values()) / 5
        )


class TestScoreBm25:
    def test_absent_token_contributes_zero(self, f1_index):
        index, _ = f1_index
        assert score_bm25(index, "zebra", "5") == 0.0

    def test_empty_query_scores_zero(self, f1_index):
        index, _ = f1_index
        assert all(score_bm25(index, "", cid) == 0.0 for cid in index.doc_lengths)

    def test_collision_warning_ranks_chunk5_first(self, f1_index):
        index, _ = f1_index
        results = retrieve(index, "collision warning", 5)
        assert results[0].chunk_id == "5"

    def test_matches_brute_force(self, f1_index):
        index, chunks = f1_index
        for query in ("collision warning", "test track", "20 km/h", "AEBS"):
            expected = brute_force_bm25(chunks, query)
            for chunk in chunks:
                assert score_bm25(index, query, chunk.id) == pytest.approx(
                    expected[chunk.id]
                )


class TestRetrieve:
    def test_k_larger_than_corpus(self, f1_index):
        index, _ = f1_index
        assert len(retrieve(index, "collision", 50)) == 5

    def test_all_zero_scores_sort_canonically(self, f1_index):
        index, _ = f1_index
        results = retrieve(index, "zebra", 5)
        assert [r.chunk_id for r in results] == ["1", "2", "5", "6", "A3/1"]

    def test_k_validation(self, f1_index):
        index, _ = f1_index
        with pytest.raises(ValueError):
            retrieve(index, "x", 0)

    def test_top_k_equals_exhaustive_sort(self):
        rng = random.Random(42)
        chunks = random_chunk_corpus(rng, 30)
        index = build_index(chunks)
        for _ in range(25):
            query = random_query(rng)
            expected = brute_force_bm25(chunks, query)
            order = sorted(
                expected, key=lambda cid: (-expected[cid], canonical_id_key(cid))
            )
            got = [r.chunk_id for r in retrieve(index, query, 10)]
            assert got == order[:10]


class TestRerank:
    def query(self):
        return "collision warning as specified in paragraph 6.4."

    def test_component_ranges(self, f1_index, graph):
        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        results = rerank(retrieve(index, self.query(), 5), self.query(), graph, lookup)
        for r in results:
            assert r.rerank is not None and 0.0 <= r.rerank <= 1.0
            assert all(0.0 <= c <= 1.0 for c in r.components)

    def test_fixture_ordering(self, f1_index, graph):
        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        results = rerank(retrieve(index, self.query(), 5), self.query(), graph, lookup)
        assert results[0].chunk_id == "5"
        assert results[1].chunk_id == "6"

    def test_mentioned_chunk_gets_full_proximity(self, f1_index, graph):
        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        query = "paragraph 5.2."
        results = rerank(retrieve(index, query, 5), query, graph, lookup)
        five = next(r for r in results if r.chunk_id == "5")
        assert five.components[1] == 1.0  # clause 5.2 is a member, distance 0

    def test_numeric_overlap(self, f1_index, graph):
        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        query = "target speed 20 km/h"
        results = rerank(retrieve(index, query, 5), query, graph, lookup)
        six = next(r for r in results if r.chunk_id == "6")
        assert six.components[2] == 1.0  # token "20" present in clause 6.4
        one = next(r for r in results if r.chunk_id == "1")
        assert one.components[2] == 0.0

    def test_no_clause_mention_zero_proximity(self, f1_index, graph):
        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        results = rerank(retrieve(index, "collision", 5), "collision", graph, lookup)
        assert all(r.components[1] == 0.0 for r in results)

    def test_rerank_formula(self, f1_index, graph):
        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        results = rerank(retrieve(index, self.query(), 5), self.query(), graph, lookup)
        for r in results:
            b, p, n = r.components
            assert r.rerank == pytest.approx(0.7 * b + 0.2 * p + 0.1 * n)

    def test_scaling_bm25_preserves_order(self, f1_index, graph):
        from dataclasses import replace

        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        candidates = retrieve(index, self.query(), 5)
        baseline = rerank(candidates, self.query(), graph, lookup)
        scaled = [replace(c, bm25=c.bm25 * 7.5) for c in candidates]
        rescored = rerank(scaled, self.query(), graph, lookup)
        assert [r.chunk_id for r in rescored] == [r.chunk_id for r in baseline]

    def test_custom_weights(self, f1_index, graph):
        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        weights = RerankWeights(0.0, 1.0, 0.0)
        results = rerank(
            retrieve(index, self.query(), 5), self.query(), graph, lookup, weights
        )
        assert results[0].components[1] == max(r.components[1] for r in results)

    def test_determinism(self, f1_index, graph):
        index, chunks = f1_index
        lookup = {c.id: c for c in chunks}
        a = rerank(retrieve(index, self.query(), 5), self.query(), graph, lookup)
        b = rerank(retrieve(index, self.query(), 5), self.query(), graph, lookup)
        assert a == b
