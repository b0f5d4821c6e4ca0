"""Regulation text parsing: clause tree construction and cross-reference extraction.

Input is pre-extracted plain text of a numbered regulation.  A clause header is
a line like ``5.2.1. The warning shall ...``; an annex header is a line like
``Annex 3``.  Clause numbering restarts inside each annex and annex clauses are
identified as ``A3/1.2``.  Non-header lines are continuation text of the most
recent clause; anything before the first header (titles, tables of contents)
is ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import SdvpipeError

_HEADER_RE = re.compile(r"^(\d+(?:\.\d+)*)\.\s+(.*)$")
_ANNEX_HEADER_RE = re.compile(r"^Annex\s+(\d+)\b.*$")
_CLAUSE_ID_RE = re.compile(r"^(?:A(\d+)/)?(\d+(?:\.\d+)*)\.?$")
# Reference grammar: "paragraph 5.2." / "paragraphs 5.1. and 5.2." / "Annex 3".
_REF_HEAD_RE = re.compile(
    r"\bparagraphs?\s+(\d+(?:\.\d+)*)\.|\bannex\s+(\d+)\b", re.IGNORECASE
)
_REF_CONT_RE = re.compile(r"\s+and\s+(\d+(?:\.\d+)*)\.", re.IGNORECASE)

PARAGRAPH = "paragraph"
ANNEX = "annex"


class RegdocError(SdvpipeError):
    pass


class DuplicateClauseId(RegdocError):
    pass


class OrphanClause(RegdocError):
    pass


class EmptyDocument(RegdocError):
    pass


@dataclass(frozen=True)
class ClauseId:
    """Hierarchical clause number, optionally qualified by an annex number."""

    path: tuple[int, ...]
    annex: int | None = None

    def __post_init__(self) -> None:
        if not self.path:
            raise ValueError("clause path must be non-empty")
        if any(p < 1 for p in self.path):
            raise ValueError("clause path components must be >= 1")
        if self.annex is not None and self.annex < 1:
            raise ValueError("annex number must be >= 1")

    def __str__(self) -> str:
        dotted = ".".join(str(p) for p in self.path)
        if self.annex is not None:
            return f"A{self.annex}/{dotted}"
        return dotted

    @property
    def depth(self) -> int:
        return len(self.path)

    def parent(self) -> ClauseId | None:
        if len(self.path) == 1:
            return None
        return ClauseId(self.path[:-1], self.annex)

    def sort_key(self) -> tuple:
        """Main-body clauses before annexes, then numeric path order."""
        return (0 if self.annex is None else 1, self.annex or 0, self.path)

    @classmethod
    def parse(cls, text: str) -> ClauseId:
        m = _CLAUSE_ID_RE.match(text.strip())
        if not m:
            raise ValueError(f"not a clause id: {text!r}")
        annex = int(m.group(1)) if m.group(1) else None
        path = tuple(int(p) for p in m.group(2).split("."))
        return cls(path, annex)


@dataclass
class Clause:
    id: ClauseId
    text: str
    children: list[ClauseId] = field(default_factory=list)


@dataclass
class RegDocument:
    """Clause map plus root ordering (main-body roots first, then annex roots)."""

    clauses: dict[ClauseId, Clause]
    roots: list[ClauseId]

    def clause(self, cid: ClauseId) -> Clause:
        return self.clauses[cid]

    def __contains__(self, cid: ClauseId) -> bool:
        return cid in self.clauses

    def iter_tree(self):
        """Yield clause ids in tree (pre-order) order."""

        def walk(cid: ClauseId):
            yield cid
            for child in self.clauses[cid].children:
                yield from walk(child)

        for root in self.roots:
            yield from walk(root)


@dataclass(frozen=True)
class CrossRef:
    source: ClauseId
    target: ClauseId
    kind: str  # PARAGRAPH or ANNEX
    resolved: bool


@dataclass
class RefGraph:
    adjacency: dict[ClauseId, list[CrossRef]]

    def edges(self) -> list[CrossRef]:
        return [ref for refs in self.adjacency.values() for ref in refs]


def parse_document(text: str) -> RegDocument:
    """Parse plain regulation text into a clause tree.

    Raises DuplicateClauseId, OrphanClause or EmptyDocument on malformed input.
    """
    clauses: dict[ClauseId, Clause] = {}
    parts: dict[ClauseId, list[str]] = {}
    annex: int | None = None
    current: ClauseId | None = None

    for line in text.split("\n"):
        annex_m = _ANNEX_HEADER_RE.match(line)
        if annex_m:
            annex = int(annex_m.group(1))
            current = None
            continue
        header_m = _HEADER_RE.match(line)
        if header_m:
            cid = ClauseId(
                tuple(int(p) for p in header_m.group(1).split(".")), annex
            )
            if cid in clauses:
                raise DuplicateClauseId(f"clause {cid} declared twice")
            clauses[cid] = Clause(cid, "")
            parts[cid] = [header_m.group(2)]
            current = cid
            continue
        if current is not None:
            parts[current].append(line)
        # Lines before the first header are front matter; drop them.

    if not clauses:
        raise EmptyDocument("no clause headers found")

    for cid, chunks in parts.items():
        clauses[cid].text = re.sub(r"\s+", " ", " ".join(chunks)).strip()

    roots: list[ClauseId] = []
    for cid in clauses:
        parent = cid.parent()
        if parent is None:
            roots.append(cid)
        elif parent not in clauses:
            raise OrphanClause(f"clause {cid} has no parent clause {parent}")
        else:
            clauses[parent].children.append(cid)

    roots.sort(key=lambda c: 0 if c.annex is None else 1)  # stable: keeps doc order
    return RegDocument(clauses, roots)


def _find_mentions(text: str) -> list[tuple[str, object]]:
    """Scan text with the reference grammar.

    Returns (kind, payload) in occurrence order; payload is a path tuple for
    paragraph references and an annex number for annex references.
    """
    out: list[tuple[str, object]] = []
    for m in _REF_HEAD_RE.finditer(text):
        if m.group(1):
            out.append((PARAGRAPH, tuple(int(p) for p in m.group(1).split("."))))
            pos = m.end()
            while True:
                cont = _REF_CONT_RE.match(text, pos)
                if not cont:
                    break
                out.append(
                    (PARAGRAPH, tuple(int(p) for p in cont.group(1).split(".")))
                )
                pos = cont.end()
        else:
            out.append((ANNEX, int(m.group(2))))
    return out


def find_clause_mentions(text: str, doc: RegDocument | None = None) -> list[ClauseId]:
    """Clause ids literally mentioned in free text (e.g. a retrieval query).

    Paragraph mentions map to main-body ids; annex mentions map to the annex's
    first clause when a document is supplied (and are dropped otherwise).
    """
    mentions: list[ClauseId] = []
    for kind, payload in _find_mentions(text):
        if kind == PARAGRAPH:
            mentions.append(ClauseId(payload))
        elif doc is not None:
            first = _annex_first_clause(doc, payload)
            if first is not None:
                mentions.append(first)
    return mentions


def _annex_first_clause(doc: RegDocument, annex: int) -> ClauseId | None:
    for root in doc.roots:
        if root.annex == annex:
            return root
    return None


def extract_references(clause: Clause, doc: RegDocument) -> list[CrossRef]:
    """All cross-references in a clause's text, in occurrence order.

    Unresolvable references are kept with resolved=False, never dropped.
    Paragraph references inside an annex resolve annex-locally first, then
    against the main body.
    """
    refs: list[CrossRef] = []
    for kind, payload in _find_mentions(clause.text):
        if kind == PARAGRAPH:
            candidates = [ClauseId(payload, clause.id.annex)]
            if clause.id.annex is not None:
                candidates.append(ClauseId(payload))
            target = next((c for c in candidates if c in doc), candidates[0])
            refs.append(CrossRef(clause.id, target, PARAGRAPH, target in doc))
        else:
            first = _annex_first_clause(doc, payload)
            target = first if first is not None else ClauseId((1,), payload)
            refs.append(CrossRef(clause.id, target, ANNEX, target in doc))
    return refs


def build_reference_graph(doc: RegDocument) -> RefGraph:
    """Cross-reference adjacency for every clause (document order keys)."""
    return RefGraph(
        {cid: extract_references(doc.clauses[cid], doc) for cid in doc.clauses}
    )


def dump_clauses(doc: RegDocument) -> str:
    """Canonical one-clause-per-line serialization: ``<id><TAB><text>``."""
    return "\n".join(f"{cid}\t{doc.clauses[cid].text}" for cid in doc.iter_tree())


def dump_references(graph: RefGraph) -> str:
    lines = []
    for refs in graph.adjacency.values():
        for ref in refs:
            state = "resolved" if ref.resolved else "dangling"
            lines.append(f"{ref.source} -> {ref.target} [{state}]")
    return "\n".join(lines)


def to_text(doc: RegDocument) -> str:
    """Regenerate parseable regulation text (parse -> to_text -> parse fixpoint)."""
    lines: list[str] = []
    emitted_annexes: set[int] = set()

    def walk(cid: ClauseId) -> None:
        dotted = ".".join(str(p) for p in cid.path)
        lines.append(f"{dotted}. {doc.clauses[cid].text}")
        for child in doc.clauses[cid].children:
            walk(child)

    for root in doc.roots:
        if root.annex is not None and root.annex not in emitted_annexes:
            lines.append(f"Annex {root.annex}")
            emitted_annexes.add(root.annex)
        walk(root)
    return "\n".join(lines) + "\n"
