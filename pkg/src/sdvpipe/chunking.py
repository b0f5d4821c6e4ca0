"""Retrieval chunk construction and reference-graph expansion under a token budget.

Base chunks partition the clause tree at a configurable depth; expansion walks
the cross-reference graph plus parent edges breadth-first and appends whole
clauses while they fit the budget.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass

from .regdoc import ClauseId, RefGraph, RegDocument

DEFAULT_GRANULARITY = 1
DEFAULT_DEPTH_LIMIT = 2
DEFAULT_MAX_TOKENS = 512

# Decimal numbers stay whole ("5.2"); any other run of alphanumerics is one token.
_TOKEN_RE = re.compile(r"\d+\.\d+|[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase tokens; numbers like ``20`` or ``5.2`` are single tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenBudget:
    max_tokens: int

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


UNLIMITED = TokenBudget(10**9)


@dataclass
class Chunk:
    """Retrieval unit: a seed clause plus absorbed / expanded member clauses."""

    id: str
    member_clauses: list[ClauseId]
    text: str
    token_count: int
    expansion_depth: int


def _member_text(doc: RegDocument, cid: ClauseId) -> str:
    return f"{cid}. {doc.clauses[cid].text}"


def _make_chunk(doc: RegDocument, members: list[ClauseId], depth: int = 0) -> Chunk:
    text = "\n".join(_member_text(doc, cid) for cid in members)
    return Chunk(str(members[0]), list(members), text, len(tokenize(text)), depth)


def base_chunks(doc: RegDocument, granularity: int = DEFAULT_GRANULARITY) -> list[Chunk]:
    """One chunk per depth<=granularity clause, absorbing its whole subtree.

    Every clause lands in exactly one chunk: the one seeded at its ancestor of
    depth ``granularity`` (or at itself when shallower).
    """
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    groups: dict[ClauseId, list[ClauseId]] = {}
    for cid in doc.iter_tree():
        seed = cid if cid.depth <= granularity else ClauseId(
            cid.path[:granularity], cid.annex
        )
        groups.setdefault(seed, []).append(cid)
    return [_make_chunk(doc, members) for members in groups.values()]


def _neighbors(cid: ClauseId, graph: RefGraph, doc: RegDocument) -> list[ClauseId]:
    """Resolved outgoing references in textual order, then the parent edge."""
    out = [ref.target for ref in graph.adjacency.get(cid, []) if ref.resolved]
    parent = cid.parent()
    if parent is not None and parent in doc:
        out.append(parent)
    return out


def expand_chunk(
    chunk: Chunk,
    graph: RefGraph,
    doc: RegDocument,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    budget: TokenBudget = TokenBudget(DEFAULT_MAX_TOKENS),
) -> Chunk:
    """Grow a chunk by BFS over reference + parent edges, within the budget.

    Traversal is cycle-safe (visited set) and deterministic: nodes are processed
    in discovery order, enumerating each node's reference targets in textual
    order before its parent.  A clause discovered within ``depth_limit`` hops is
    appended only if the chunk stays within ``budget``; rejected clauses are
    still traversed through.  Seed members are always retained.
    """
    if depth_limit < 0:
        raise ValueError("depth_limit must be >= 0")
    members = list(chunk.member_clauses)
    visited = set(members)
    token_count = chunk.token_count
    reached = 0
    queue: deque[tuple[ClauseId, int]] = deque((m, 0) for m in members)
    while queue:
        cid, depth = queue.popleft()
        if depth >= depth_limit:
            continue
        for nb in _neighbors(cid, graph, doc):
            if nb in visited:
                continue
            visited.add(nb)
            added = len(tokenize(_member_text(doc, nb)))
            if token_count + added <= budget.max_tokens:
                members.append(nb)
                token_count += added
                reached = max(reached, depth + 1)
            queue.append((nb, depth + 1))
    expanded = _make_chunk(doc, members, reached)
    expanded.id = chunk.id
    return expanded


def format_chunks(chunks: list[Chunk]) -> str:
    """Stable text dump, one record per chunk."""
    blocks = []
    for chunk in chunks:
        header = f"== chunk {chunk.id} depth={chunk.expansion_depth} tokens={chunk.token_count}"
        members = "members " + " ".join(str(c) for c in chunk.member_clauses)
        blocks.append("\n".join([header, members, chunk.text]))
    return "\n".join(blocks) + "\n"
