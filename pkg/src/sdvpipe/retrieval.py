"""Query-sensitive retrieval over chunks: Okapi BM25 plus a feature rerank.

The rerank score is a weighted combination of normalized BM25, proximity in
the cross-reference graph to clauses named in the query, and overlap of the
query's numeric tokens with the chunk.
"""

from __future__ import annotations

import math
import re
from collections import Counter, deque
from dataclasses import dataclass, replace

from .chunking import Chunk, tokenize
from .errors import SdvpipeError
from .regdoc import ClauseId, RefGraph, find_clause_mentions

BM25_K1 = 1.2
BM25_B = 0.75

_NUMERIC_RE = re.compile(r"\d+(?:\.\d+)?$")


class DuplicateChunkId(SdvpipeError):
    pass


@dataclass(frozen=True)
class RerankWeights:
    bm25: float = 0.7
    ref_proximity: float = 0.2
    numeric_overlap: float = 0.1


DEFAULT_WEIGHTS = RerankWeights()


@dataclass
class Index:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    corpus_size: int


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    bm25: float
    rerank: float | None = None
    components: tuple[float, float, float] | None = None


def canonical_id_key(chunk_id: str) -> tuple:
    """Total order on chunk ids: clause-id order where parseable, else lexical.

    The raw id is the last component so the order stays total even for ids
    sharing a canonical form (e.g. "5.2" and "5.2.").
    """
    try:
        cid = ClauseId.parse(chunk_id)
    except ValueError:
        return (1, 0, 0, (), chunk_id)
    annex_flag, annex, path = cid.sort_key()
    return (0, annex_flag, annex, path, chunk_id)


def build_index(chunks: list[Chunk]) -> Index:
    """Inverted index over chunk texts; postings sorted by canonical chunk id."""
    doc_lengths: dict[str, int] = {}
    postings: dict[str, list[tuple[str, int]]] = {}
    for chunk in chunks:
        if chunk.id in doc_lengths:
            raise DuplicateChunkId(f"chunk id {chunk.id!r} not unique")
        tokens = tokenize(chunk.text)
        doc_lengths[chunk.id] = len(tokens)
        for token, freq in Counter(tokens).items():
            postings.setdefault(token, []).append((chunk.id, freq))
    for plist in postings.values():
        plist.sort(key=lambda entry: canonical_id_key(entry[0]))
    n = len(doc_lengths)
    avg = sum(doc_lengths.values()) / n if n else 0.0
    return Index(postings, doc_lengths, avg, n)


def _idf(index: Index, token: str) -> float:
    df = len(index.postings.get(token, ()))
    return math.log((index.corpus_size - df + 0.5) / (df + 0.5) + 1.0)


def score_bm25(index: Index, query: str, chunk_id: str) -> float:
    """Okapi BM25 of one chunk for the query (k1=1.2, b=0.75)."""
    if chunk_id not in index.doc_lengths:
        raise KeyError(chunk_id)
    score = 0.0
    dl = index.doc_lengths[chunk_id]
    norm = BM25_K1 * (1 - BM25_B + BM25_B * dl / index.avg_doc_length) if index.avg_doc_length else 0.0
    for token in tokenize(query):
        freq = next(
            (f for cid, f in index.postings.get(token, ()) if cid == chunk_id), 0
        )
        if freq:
            score += _idf(index, token) * freq * (BM25_K1 + 1) / (freq + norm)
    return score


def retrieve(index: Index, query: str, k: int) -> list[ScoredChunk]:
    """Top-k chunks by BM25 descending; ties break by canonical chunk id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = [
        ScoredChunk(cid, score_bm25(index, query, cid)) for cid in index.doc_lengths
    ]
    scored.sort(key=lambda s: (-s.bm25, canonical_id_key(s.chunk_id)))
    return scored[: min(k, index.corpus_size)]


def _graph_distances(graph: RefGraph, start: ClauseId) -> dict[ClauseId, int]:
    if start not in graph.adjacency:
        return {}
    dist = {start: 0}
    queue = deque([start])
    while queue:
        cid = queue.popleft()
        for ref in graph.adjacency.get(cid, ()):
            if ref.resolved and ref.target not in dist:
                dist[ref.target] = dist[cid] + 1
                queue.append(ref.target)
    return dist


def _numeric_tokens(tokens: list[str]) -> set[str]:
    return {t for t in tokens if _NUMERIC_RE.fullmatch(t)}


def rerank(
    candidates: list[ScoredChunk],
    query: str,
    graph: RefGraph,
    chunks: dict[str, Chunk],
    weights: RerankWeights = DEFAULT_WEIGHTS,
) -> list[ScoredChunk]:
    """Re-order candidates by the weighted feature score.

    Components per candidate, each in [0, 1]: BM25 normalized by the best
    candidate, 1/(1+d) for the shortest reference-graph distance from a clause
    named in the query to a member clause, and the fraction of the query's
    numeric tokens present in the chunk.
    """
    max_bm25 = max((c.bm25 for c in candidates), default=0.0)
    mentions = find_clause_mentions(query)
    distances = [_graph_distances(graph, m) for m in mentions]
    query_numeric = _numeric_tokens(tokenize(query))

    out = []
    for cand in candidates:
        chunk = chunks[cand.chunk_id]
        bm25_norm = cand.bm25 / max_bm25 if max_bm25 > 0 else 0.0

        best = math.inf
        for dist in distances:
            for member in chunk.member_clauses:
                d = dist.get(member)
                if d is not None and d < best:
                    best = d
        proximity = 1.0 / (1.0 + best) if best is not math.inf else 0.0

        if query_numeric:
            present = query_numeric & set(tokenize(chunk.text))
            numeric = len(present) / len(query_numeric)
        else:
            numeric = 0.0

        score = (
            weights.bm25 * bm25_norm
            + weights.ref_proximity * proximity
            + weights.numeric_overlap * numeric
        )
        out.append(
            replace(cand, rerank=score, components=(bm25_norm, proximity, numeric))
        )
    out.sort(key=lambda s: (-(s.rerank or 0.0), canonical_id_key(s.chunk_id)))
    return out


def format_results(results: list[ScoredChunk]) -> str:
    lines = []
    for r in results:
        line = f"{r.chunk_id}\tbm25={r.bm25:.6f}"
        if r.rerank is not None and r.components is not None:
            b, p, n = r.components
            line += f"\trerank={r.rerank:.6f}\tbm25_norm={b:.6f}\tref_proximity={p:.6f}\tnumeric_overlap={n:.6f}"
        lines.append(line)
    return "\n".join(lines) + ("\n" if lines else "")
