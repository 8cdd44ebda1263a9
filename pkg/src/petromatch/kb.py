"""Keyword reference lookups.

The parameterization agents ask "what does PERMX mean, what are its
constraints" before touching a keyword. The store is just a directory of
<KEYWORD>.txt files read into memory; lookups are exact-name first, then
prefix matches.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

DEFAULT_DOCS_DIR = Path(__file__).resolve().parent / "data" / "keyword_docs"


@dataclass(frozen=True)
class DocSnippet:
    keyword: str
    text: str


@dataclass(frozen=True)
class DocStore:
    docs: Mapping[str, str]  # upper-case keyword -> reference text

    def __len__(self) -> int:
        return len(self.docs)

    def keywords(self) -> tuple[str, ...]:
        return tuple(sorted(self.docs))


def load_doc_store(path) -> DocStore:
    docs = {}
    for f in sorted(Path(path).glob("*.txt")):
        text = f.read_text().strip()
        if text:
            docs[f.stem.upper()] = text
    return DocStore(docs)


def default_doc_store() -> DocStore:
    return load_doc_store(DEFAULT_DOCS_DIR)


def lookup_keyword_doc(store: DocStore, query: str,
                       limit: int = 5) -> list[DocSnippet]:
    """Best-first snippets for a keyword name; empty list on a miss.

    An exact name match always comes first. Prefix matches follow, shortest
    name first so the closest relatives outrank long compounds.
    """
    q = query.strip().upper()
    if not q:
        return []
    out = []
    if q in store.docs:
        out.append(DocSnippet(q, store.docs[q]))
    rest = [k for k in store.keywords() if k.startswith(q) and k != q]
    rest.sort(key=lambda k: (len(k), k))
    for k in rest:
        if len(out) >= limit:
            break
        out.append(DocSnippet(k, store.docs[k]))
    return out
