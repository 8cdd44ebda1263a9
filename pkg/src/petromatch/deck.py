"""Lossless parser, query tools and rewriter for ECLIPSE-style input decks.

The accepted grammar is a strict, documented subset (see docs/deck-grammar.md):
`--` comments, slash-terminated records, `N*value` repeats, `N*`/`*` default
markers, quoted strings, `{{NAME}}` placeholders, INCLUDE and TITLE free text.
Anything else raises a located error instead of guessing.

A parsed deck keeps the raw byte span of every untouched keyword plus all
surrounding trivia (comments, blank lines), so serializing an unmodified deck
reproduces its input exactly. Rewritten keywords are emitted in a canonical
form: one record per line, single spaces, ` /` terminators.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .errors import (
    DeckError,
    EmptyInput,
    MalformedRecord,
    OccurrenceOutOfRange,
    PlaceholderPresent,
    SourceLocation,
    UnknownInclude,
    UnknownKeyword,
    UnknownSection,
    UnsupportedConstruct,
    UnterminatedRecord,
)

SECTION_NAMES = ("RUNSPEC", "GRID", "EDIT", "PROPS", "REGIONS", "SOLUTION", "SUMMARY", "SCHEDULE")

#: occurrence sentinel for set_keyword: append a new keyword at section end
APPEND = -1

_KEYWORD_RE = re.compile(r"[A-Z][A-Z0-9]{0,7}")
_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z_][A-Za-z0-9_]*)\}\}")
_REPEAT_RE = re.compile(r"(\d+)\*(.*)", re.DOTALL)
_MAX_INCLUDE_DEPTH = 16


def format_number(value) -> str:
    """Shortest round-trip decimal spelling for a numeric value."""
    if isinstance(value, bool):
        raise MalformedRecord("boolean is not a deck number")
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


@dataclass(frozen=True)
class Token:
    """One record item.

    kind is one of number | string | word | default | repeat | placeholder.
    `value` holds the float/int for numbers, the text for strings/words, the
    placeholder name, or the inner Token for repeats. `count` is the
    multiplicity of repeat/default tokens. `text` preserves the source
    spelling of numbers so untouched values re-serialize exactly.
    """

    kind: str
    value: object = None
    count: int = 1
    text: str | None = None
    line: int | None = None

    @property
    def multiplicity(self) -> int:
        if self.kind in ("repeat", "default"):
            return self.count
        return 1

    def render(self) -> str:
        if self.kind == "number":
            return self.text if self.text is not None else format_number(self.value)
        if self.kind == "string":
            return f"'{self.value}'"
        if self.kind == "word":
            return str(self.value)
        if self.kind == "default":
            if self.text is not None:
                return self.text
            return f"{self.count}*"
        if self.kind == "repeat":
            return f"{self.count}*{self.value.render()}"
        if self.kind == "placeholder":
            return "{{" + str(self.value) + "}}"
        raise MalformedRecord(f"unknown token kind {self.kind!r}")

    def structural_key(self):
        if self.kind == "repeat":
            return ("repeat", self.count, self.value.structural_key())
        if self.kind == "number":
            return ("number", float(self.value))
        if self.kind == "default":
            return ("default", self.count)
        return (self.kind, self.value)


def number(value, text: str | None = None, line: int | None = None) -> Token:
    return Token("number", value, text=text, line=line)


def string(value: str, line: int | None = None) -> Token:
    return Token("string", value, line=line)


def word(value: str, line: int | None = None) -> Token:
    return Token("word", value, line=line)


def default(count: int = 1, text: str | None = None, line: int | None = None) -> Token:
    if count < 1:
        raise MalformedRecord("default marker count must be >= 1")
    return Token("default", count=count, text=text, line=line)


def repeat(count: int, inner: Token, line: int | None = None) -> Token:
    if count < 1:
        raise MalformedRecord("repeat count must be >= 1")
    if not isinstance(inner, Token) or inner.kind in ("repeat", "default"):
        raise MalformedRecord("repeat value must be a scalar token")
    return Token("repeat", inner, count=count, line=line)


def placeholder(name: str, line: int | None = None) -> Token:
    return Token("placeholder", name, line=line)


@dataclass(frozen=True)
class Record:
    """One slash-terminated token group."""

    items: tuple[Token, ...] = ()

    def expanded_length(self) -> int:
        return sum(t.multiplicity for t in self.items)

    def render(self) -> str:
        if not self.items:
            return "/"
        return " ".join(t.render() for t in self.items) + " /"

    def structural_key(self):
        return tuple(t.structural_key() for t in self.items)


def expand_record(record: Record) -> list[Token]:
    """Expand repeat/default multiplicities into a flat scalar token list."""
    out: list[Token] = []
    for tok in record.items:
        if tok.kind == "placeholder":
            raise PlaceholderPresent(f"record contains placeholder {{{{{tok.value}}}}}")
        if tok.kind == "repeat":
            if tok.value.kind == "placeholder":
                raise PlaceholderPresent(
                    f"record contains placeholder {{{{{tok.value.value}}}}}"
                )
            out.extend([tok.value] * tok.count)
        elif tok.kind == "default":
            out.extend([Token("default", count=1)] * tok.count)
        else:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Keyword:
    name: str
    records: tuple[Record, ...]
    section: str
    origin: SourceLocation
    free_text: str | None = None  # TITLE-style payload

    def render(self) -> str:
        lines = [self.name]
        if self.free_text is not None:
            lines.append(self.free_text)
        for rec in self.records:
            lines.append("  " + rec.render())
        return "\n".join(lines) + "\n"


# Internal node stream: the deck is a sequence of these, concatenated on
# serialization. `raw` is None for canonically formatted (rewritten) nodes.
@dataclass(frozen=True)
class _Node:
    kind: str  # trivia | section | keyword
    raw: str | None = None
    name: str | None = None  # section name for section nodes
    keyword: Keyword | None = None

    def render(self) -> str:
        if self.raw is not None:
            return self.raw
        if self.kind == "keyword":
            return self.keyword.render()
        if self.kind == "section":
            return f"{self.name}\n"
        return ""


@dataclass(frozen=True)
class Section:
    name: str
    known: bool
    keywords: tuple[Keyword, ...]


@dataclass(frozen=True)
class Deck:
    """Immutable structured deck; rewrites return new values."""

    nodes: tuple[_Node, ...]
    trivia: tuple[tuple[SourceLocation, str], ...] = ()

    @property
    def sections(self) -> tuple[Section, ...]:
        out: list[Section] = []
        current: list[Keyword] | None = None
        name = None
        for node in self.nodes:
            if node.kind == "section":
                if name is not None:
                    out.append(Section(name, name in SECTION_NAMES, tuple(current)))
                name, current = node.name, []
            elif node.kind == "keyword" and current is not None:
                current.append(node.keyword)
        if name is not None:
            out.append(Section(name, name in SECTION_NAMES, tuple(current)))
        return tuple(out)

    @property
    def source_map(self) -> dict[tuple[str, str, int], SourceLocation]:
        seen: dict[tuple[str, str], int] = {}
        out = {}
        for sec in self.sections:
            for kw in sec.keywords:
                n = seen.get((sec.name, kw.name), 0)
                seen[(sec.name, kw.name)] = n + 1
                out[(sec.name, kw.name, n)] = kw.origin
        return out

    def serialize(self) -> str:
        return "".join(node.render() for node in self.nodes)

    def keywords_named(self, name: str) -> list[Keyword]:
        return [n.keyword for n in self.nodes if n.kind == "keyword" and n.keyword.name == name]

    def has_keyword(self, name: str) -> bool:
        return any(n.kind == "keyword" and n.keyword.name == name for n in self.nodes)


def structural_equal(a: Deck, b: Deck) -> bool:
    """Equality on structure (sections, keywords, token values), not spelling."""

    def key(deck: Deck):
        return [
            (
                sec.name,
                [
                    (kw.name, kw.free_text, tuple(r.structural_key() for r in kw.records))
                    for kw in sec.keywords
                ],
            )
            for sec in deck.sections
        ]

    return key(a) == key(b)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_scalar_text(text: str, line: int) -> Token:
    m = _PLACEHOLDER_RE.fullmatch(text)
    if m:
        return placeholder(m.group(1), line=line)
    try:
        return number(int(text), text=text, line=line)
    except ValueError:
        pass
    try:
        return number(float(text), text=text, line=line)
    except ValueError:
        pass
    return word(text, line=line)


def _parse_bare_token(text: str, line: int, loc: SourceLocation) -> Token:
    """Classify one whitespace-delimited bare (unquoted) token."""
    if text == "*":
        return default(1, text=text, line=line)
    m = _REPEAT_RE.fullmatch(text)
    if m:
        count = int(m.group(1))
        if count < 1:
            raise MalformedRecord(f"repeat count must be >= 1, got {count}", loc)
        rest = m.group(2)
        if rest == "":
            return default(count, text=text, line=line)
        inner = _parse_scalar_text(rest, line)
        if inner.kind == "word" and "*" in rest:
            raise UnsupportedConstruct(f"nested repeat in token {text!r}", loc)
        return Token("repeat", inner, count=count, text=None, line=line)
    return _parse_scalar_text(text, line)


class _Scanner:
    """Line-oriented scanner over normalized (LF) deck text."""

    def __init__(self, text: str, filename: str):
        self.filename = filename
        self.lines = text.splitlines(keepends=True)
        self.i = 0  # current line index
        self.trivia: list[tuple[SourceLocation, str]] = []

    def loc(self, col: int = 1) -> SourceLocation:
        return SourceLocation(self.filename, self.i + 1, col)

    def eof(self) -> bool:
        return self.i >= len(self.lines)

    def current(self) -> str:
        return self.lines[self.i]

    def advance(self):
        self.i += 1

    def record_comment(self, line_text: str, lineno: int):
        pos = line_text.find("--")
        if pos >= 0:
            comment = line_text[pos:].rstrip("\n")
            self.trivia.append((SourceLocation(self.filename, lineno, pos + 1), comment))


def _line_is_blank_or_comment(line: str) -> bool:
    stripped = line.strip()
    return stripped == "" or stripped.startswith("--")


def _line_keyword_start(line: str) -> str | None:
    """Keyword name if this line begins a keyword (uppercase word at column 1)."""
    m = _KEYWORD_RE.match(line)
    if not m:
        return None
    end = m.end()
    if end < len(line) and line[end] not in (" ", "\t", "\n", "/") and line[end : end + 2] != "--":
        return None
    return m.group(0)


def _tokenize_line(line: str, lineno: int, filename: str, start_col: int = 0):
    """Yield ('tok', text, col) and ('slash', '/', col) items; stops at comments.

    Returns (items, slash_seen_positions). Text after a '/' on the same line is
    ignored (ECLIPSE semantics) and handled by the caller.
    """
    items = []
    i = start_col
    n = len(line)
    while i < n:
        ch = line[i]
        if ch in " \t\n":
            i += 1
            continue
        if line[i : i + 2] == "--":
            break
        if ch == "/":
            items.append(("slash", "/", i + 1))
            i += 1
            # rest of the line after a record terminator is ignored
            break
        if ch == "'":
            j = line.find("'", i + 1)
            if j < 0:
                raise UnterminatedRecord(
                    "unterminated quoted string", SourceLocation(filename, lineno, i + 1)
                )
            items.append(("string", line[i + 1 : j], i + 1))
            i = j + 1
            continue
        j = i
        while j < n and line[j] not in " \t\n/'" and line[j : j + 2] != "--":
            j += 1
        items.append(("tok", line[i:j], i + 1))
        i = j
    return items


def parse_deck(text: str, include_resolver=None, filename: str = "<deck>") -> Deck:
    """Parse deck text into a lossless Deck.

    include_resolver maps an INCLUDE'd name to its text; raising KeyError (or
    passing None) rejects the name with UnknownInclude. CRLF input is
    normalized to LF before parsing; serialization emits LF.
    """
    if text.strip() == "":
        raise EmptyInput("deck input is empty", SourceLocation(filename, 1))
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    nodes, trivia = _parse_fragment(text, filename, include_resolver, depth=0)
    return Deck(tuple(nodes), tuple(trivia))


def _parse_fragment(text: str, filename: str, resolver, depth: int, in_section: str | None = None):
    if depth > _MAX_INCLUDE_DEPTH:
        raise UnsupportedConstruct(f"INCLUDE nesting deeper than {_MAX_INCLUDE_DEPTH}")
    sc = _Scanner(text, filename)
    nodes: list[_Node] = []
    section = in_section

    while not sc.eof():
        line = sc.current()
        if _line_is_blank_or_comment(line):
            sc.record_comment(line, sc.i + 1)
            nodes.append(_Node("trivia", raw=line))
            sc.advance()
            continue

        name = _line_keyword_start(line)
        if name is None:
            raise UnsupportedConstruct(
                f"expected a keyword at column 1, got {line.strip()[:40]!r}", sc.loc()
            )

        if name in SECTION_NAMES:
            rest = line[len(name) :]
            if rest.strip() and not rest.strip().startswith("--"):
                raise UnsupportedConstruct(
                    f"unexpected text after section header {name}", sc.loc(len(name) + 1)
                )
            sc.record_comment(line, sc.i + 1)
            nodes.append(_Node("section", raw=line, name=name))
            section = name
            sc.advance()
            continue

        if section is None:
            raise UnsupportedConstruct(
                f"keyword {name} appears before any section header", sc.loc()
            )

        if name == "INCLUDE":
            inc_nodes, inc_trivia, section = _parse_include(sc, resolver, depth, section)
            nodes.extend(inc_nodes)
            sc.trivia.extend(inc_trivia)
            continue

        kw_node = _parse_keyword(sc, name, section)
        nodes.append(kw_node)

    return nodes, sc.trivia


def _parse_include(sc: _Scanner, resolver, depth: int, section: str):
    start_line = sc.i + 1
    origin = sc.loc()
    records, _raw = _consume_records(sc, start_col=len("INCLUDE"))
    if len(records) != 1 or len(records[0].items) != 1:
        raise MalformedRecord("INCLUDE expects exactly one file name", origin)
    tok = records[0].items[0]
    if tok.kind not in ("string", "word"):
        raise MalformedRecord("INCLUDE file name must be a string or bare word", origin)
    target = str(tok.value)
    if resolver is None:
        raise UnknownInclude(f"no include resolver for {target!r}", origin)
    try:
        included = resolver(target)
    except (KeyError, FileNotFoundError, OSError):
        raise UnknownInclude(f"cannot resolve include {target!r}", origin) from None
    if included is None:
        raise UnknownInclude(f"cannot resolve include {target!r}", origin)
    included = included.replace("\r\n", "\n").replace("\r", "\n")
    nodes, trivia = _parse_fragment(included, target, resolver, depth + 1, in_section=section)
    new_section = section
    for n in nodes:
        if n.kind == "section":
            new_section = n.name
    return nodes, trivia, new_section


def _parse_keyword(sc: _Scanner, name: str, section: str) -> _Node:
    origin = sc.loc()

    if name == "TITLE":
        # the line immediately after TITLE is the title, verbatim
        raw = sc.current()
        sc.record_comment(raw, sc.i + 1)
        sc.advance()
        free_text = ""
        if not sc.eof():
            free_text = sc.current().rstrip("\n")
            raw += sc.current()
            sc.advance()
        kw = Keyword(name, (), section, origin, free_text=free_text)
        return _Node("keyword", raw=raw, keyword=kw)

    records, raw = _consume_records(sc, start_col=len(name))
    kw = Keyword(name, tuple(records), section, origin)
    return _Node("keyword", raw=raw, keyword=kw)


def _more_data_follows(sc: _Scanner) -> bool:
    """True if the next substantive line continues the current keyword
    (i.e. is record data, not a new keyword). Lets blank lines sit between
    records of one keyword without ending it."""
    j = sc.i
    while j < len(sc.lines) and _line_is_blank_or_comment(sc.lines[j]):
        j += 1
    if j >= len(sc.lines):
        return False
    return _line_keyword_start(sc.lines[j]) is None


def _consume_records(sc: _Scanner, start_col: int):
    """Consume slash-terminated records for the keyword starting at the
    scanner's current line. Returns (records, raw_text_span)."""
    raw_parts = [sc.current()]
    first_line = sc.current()
    first_lineno = sc.i + 1
    sc.record_comment(first_line, first_lineno)
    filename = sc.filename

    records: list[Record] = []
    items: list[Token] = []
    open_record = False

    def feed(line_text: str, lineno: int, col0: int):
        nonlocal open_record
        sc.record_comment(line_text, lineno)
        for kind, val, col in _tokenize_line(line_text, lineno, filename, col0):
            if kind == "slash":
                records.append(Record(tuple(items)))
                items.clear()
                open_record = False
            elif kind == "string":
                items.append(string(val, line=lineno))
                open_record = True
            else:
                items.append(
                    _parse_bare_token(val, lineno, SourceLocation(filename, lineno, col))
                )
                open_record = True

    feed(first_line, first_lineno, start_col)
    sc.advance()

    while not sc.eof():
        line = sc.current()
        if _line_keyword_start(line) is not None:
            if open_record:
                raise UnterminatedRecord(
                    "record not terminated by '/' before next keyword", sc.loc()
                )
            break
        if _line_is_blank_or_comment(line):
            if not open_record and not _more_data_follows(sc):
                break  # trailing trivia belongs to the gap, not the keyword
            sc.record_comment(line, sc.i + 1)
            raw_parts.append(line)
            sc.advance()
            continue
        raw_parts.append(line)
        feed(line, sc.i + 1, 0)
        sc.advance()

    if open_record:
        raise UnterminatedRecord(
            "record not terminated by '/' at end of input",
            SourceLocation(filename, len(sc.lines)),
        )
    return records, "".join(raw_parts)


# ---------------------------------------------------------------------------
# Query and rewrite tools
# ---------------------------------------------------------------------------


def list_sections(deck: Deck) -> list[str]:
    return [sec.name for sec in deck.sections]


def _section_keywords(deck: Deck, section: str) -> list[Keyword]:
    matches = [sec for sec in deck.sections if sec.name == section]
    if not matches:
        raise UnknownSection(f"section {section} not present in deck")
    return [kw for sec in matches for kw in sec.keywords]


def list_keywords(deck: Deck, section: str) -> list[str]:
    return [kw.name for kw in _section_keywords(deck, section)]


def get_keyword(deck: Deck, section: str, keyword: str, occurrence: int = 0) -> Keyword:
    kws = [kw for kw in _section_keywords(deck, section) if kw.name == keyword]
    if not kws:
        raise UnknownKeyword(f"keyword {keyword} not present in section {section}")
    if occurrence < 0 or occurrence >= len(kws):
        raise OccurrenceOutOfRange(
            f"occurrence {occurrence} out of range for {section}/{keyword} "
            f"({len(kws)} present)"
        )
    return kws[occurrence]


def _coerce_records(records) -> tuple[Record, ...]:
    out = []
    for rec in records:
        if isinstance(rec, Record):
            items = rec.items
        elif isinstance(rec, (list, tuple)):
            items = tuple(rec)
        else:
            raise MalformedRecord(f"record must be a Record or token sequence, got {type(rec)}")
        for tok in items:
            if not isinstance(tok, Token):
                raise MalformedRecord(f"record item must be a Token, got {type(tok)}")
            if tok.kind in ("repeat",):
                if tok.count < 1:
                    raise MalformedRecord("repeat count must be >= 1")
                if not isinstance(tok.value, Token) or tok.value.kind in ("repeat", "default"):
                    raise MalformedRecord("repeat value must be a scalar token")
            if tok.kind == "default" and tok.count < 1:
                raise MalformedRecord("default marker count must be >= 1")
        out.append(Record(tuple(items)))
    return tuple(out)


def set_keyword(deck: Deck, section: str, keyword: str, occurrence: int, records) -> Deck:
    """Replace one keyword occurrence (or append with occurrence=APPEND).

    Untouched nodes keep their raw bytes; the target keyword is re-emitted
    canonically.
    """
    recs = _coerce_records(records)
    section_present = any(sec.name == section for sec in deck.sections)
    if not section_present:
        raise UnknownSection(f"section {section} not present in deck")

    if occurrence == APPEND:
        return _append_keyword(deck, section, keyword, recs)

    count = 0
    nodes = list(deck.nodes)
    current_section = None
    for idx, node in enumerate(nodes):
        if node.kind == "section":
            current_section = node.name
        elif node.kind == "keyword" and current_section == section and node.keyword.name == keyword:
            if count == occurrence:
                new_kw = replace(node.keyword, records=recs)
                nodes[idx] = _Node("keyword", raw=None, keyword=new_kw)
                return Deck(tuple(nodes), deck.trivia)
            count += 1
    if count == 0:
        raise UnknownKeyword(f"keyword {keyword} not present in section {section}")
    raise OccurrenceOutOfRange(
        f"occurrence {occurrence} out of range for {section}/{keyword} ({count} present)"
    )


def _append_keyword(deck: Deck, section: str, keyword: str, recs: tuple[Record, ...]) -> Deck:
    nodes = list(deck.nodes)
    # insert before the section header that follows the last node of `section`
    insert_at = None
    current = None
    for idx, node in enumerate(nodes):
        if node.kind == "section":
            if current == section and insert_at is None:
                insert_at = idx
            current = node.name
    if insert_at is None:
        insert_at = len(nodes)
    origin = SourceLocation("<edit>", 0)
    kw = Keyword(keyword, recs, section, origin)
    nodes.insert(insert_at, _Node("keyword", raw=None, keyword=kw))
    return Deck(tuple(nodes), deck.trivia)


def replace_token(deck: Deck, section: str, keyword: str, occurrence: int,
                  token_path: tuple[int, int], new_token: Token) -> Deck:
    """Replace a single token (by record index, item index) inside a keyword.

    Targeting a repeat token swaps its repeated value, preserving the count.
    The containing keyword is re-emitted canonically.
    """
    kw = get_keyword(deck, section, keyword, occurrence)
    ri, ti = token_path
    if ri < 0 or ri >= len(kw.records) or ti < 0 or ti >= len(kw.records[ri].items):
        raise MalformedRecord(
            f"token path {token_path} out of range for {section}/{keyword}"
        )
    old = kw.records[ri].items[ti]
    if old.kind == "repeat":
        if new_token.kind in ("repeat", "default"):
            raise MalformedRecord("cannot nest repeat tokens")
        new_token = Token("repeat", replace(new_token, line=old.value.line),
                          count=old.count, line=old.line)
    else:
        new_token = replace(new_token, line=old.line)
    items = list(kw.records[ri].items)
    items[ti] = new_token
    records = list(kw.records)
    records[ri] = Record(tuple(items))
    return set_keyword(deck, section, keyword, occurrence, records)


def get_token(deck: Deck, section: str, keyword: str, occurrence: int,
              token_path: tuple[int, int]) -> Token:
    kw = get_keyword(deck, section, keyword, occurrence)
    ri, ti = token_path
    if ri < 0 or ri >= len(kw.records) or ti < 0 or ti >= len(kw.records[ri].items):
        raise MalformedRecord(f"token path {token_path} out of range for {section}/{keyword}")
    return kw.records[ri].items[ti]


def find_placeholders(deck: Deck) -> dict[str, tuple[str, str, int, tuple[int, int]]]:
    """Map placeholder name -> (section, keyword, occurrence, token_path)."""
    out: dict[str, tuple[str, str, int, tuple[int, int]]] = {}
    occ_seen: dict[tuple[str, str], int] = {}
    for sec in deck.sections:
        for kw in sec.keywords:
            occ = occ_seen.get((sec.name, kw.name), 0)
            occ_seen[(sec.name, kw.name)] = occ + 1
            for ri, rec in enumerate(kw.records):
                for ti, tok in enumerate(rec.items):
                    name = None
                    if tok.kind == "placeholder":
                        name = tok.value
                    elif tok.kind == "repeat" and tok.value.kind == "placeholder":
                        name = tok.value.value
                    if name is not None:
                        if name in out:
                            raise MalformedRecord(
                                f"placeholder {{{{{name}}}}} appears more than once"
                            )
                        out[name] = (sec.name, kw.name, occ, (ri, ti))
    return out


def file_include_resolver(base_dir) -> object:
    """Resolver reading include targets relative to a directory."""
    from pathlib import Path

    base = Path(base_dir)

    def resolve(name: str) -> str:
        path = base / name
        if not path.is_file():
            raise KeyError(name)
        return path.read_text()

    return resolve
