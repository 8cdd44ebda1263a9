import string as _string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petromatch import deck as D
from petromatch.errors import (
    EmptyInput,
    MalformedRecord,
    OccurrenceOutOfRange,
    PlaceholderPresent,
    UnknownInclude,
    UnknownKeyword,
    UnknownSection,
    UnsupportedConstruct,
    UnterminatedRecord,
)

MINI = """RUNSPEC
DIMENS
 10 10 3 /
GRID
PORO
 300*0.3 /
PERMX
 100*500.0 100*50.0 100*200.0 /
"""


def values(record):
    return [t.value for t in D.expand_record(record)]


class TestParseBasics:
    def test_single_section_single_keyword(self):
        d = D.parse_deck("RUNSPEC\nDIMENS\n 10 10 3 /\n")
        assert D.list_sections(d) == ["RUNSPEC"]
        kw = D.get_keyword(d, "RUNSPEC", "DIMENS")
        assert values(kw.records[0]) == [10, 10, 3]

    def test_repeat_token(self):
        d = D.parse_deck("GRID\nPORO\n 300*0.3 /\n")
        kw = D.get_keyword(d, "GRID", "PORO")
        tok = kw.records[0].items[0]
        assert tok.kind == "repeat"
        assert tok.count == 300
        assert tok.value.value == 0.3
        assert kw.records[0].expanded_length() == 300

    def test_flag_keyword_has_no_records(self):
        d = D.parse_deck("RUNSPEC\nOIL\nWATER\nMETRIC\n")
        assert D.list_keywords(d, "RUNSPEC") == ["OIL", "WATER", "METRIC"]
        assert D.get_keyword(d, "RUNSPEC", "OIL").records == ()

    def test_keyword_and_record_on_one_line(self):
        d = D.parse_deck("GRID\nDX 4*50.0 /\n")
        assert D.get_keyword(d, "GRID", "DX").records[0].expanded_length() == 4

    def test_quoted_strings_keep_spaces(self):
        d = D.parse_deck("SCHEDULE\nWELSPECS\n 'P 1' 'GRP A' 5 5 1* 'OIL' /\n/\n")
        kw = D.get_keyword(d, "SCHEDULE", "WELSPECS")
        assert kw.records[0].items[0].value == "P 1"
        assert kw.records[0].items[1].value == "GRP A"
        # multi-record keyword keeps its empty terminator record
        assert kw.records[-1].items == ()

    def test_default_markers(self):
        d = D.parse_deck("PROPS\nPVTW\n 120.0 1.0 2* 0.0 /\nROCK\n 120.0 * /\n")
        pvtw = D.get_keyword(d, "PROPS", "PVTW").records[0]
        assert [t.kind for t in pvtw.items] == ["number", "number", "default", "number"]
        assert pvtw.items[2].count == 2
        assert pvtw.expanded_length() == 5
        rock = D.get_keyword(d, "PROPS", "ROCK").records[0]
        assert rock.items[1].kind == "default"
        assert rock.items[1].count == 1

    def test_bare_words_in_records(self):
        d = D.parse_deck("RUNSPEC\nSTART\n 1 JAN 2020 /\n")
        rec = D.get_keyword(d, "RUNSPEC", "START").records[0]
        assert [t.kind for t in rec.items] == ["number", "word", "number"]
        assert rec.items[1].value == "JAN"

    def test_title_free_text(self):
        d = D.parse_deck("RUNSPEC\nTITLE\nSECTOR A/B -- NOT A COMMENT / HERE\nDIMENS\n 1 1 1 /\n")
        kw = D.get_keyword(d, "RUNSPEC", "TITLE")
        assert kw.free_text == "SECTOR A/B -- NOT A COMMENT / HERE"
        assert kw.records == ()

    def test_text_after_slash_ignored(self):
        d = D.parse_deck("GRID\nDX\n 4*50.0 / these words are skipped\n")
        assert D.get_keyword(d, "GRID", "DX").records[0].expanded_length() == 4

    def test_number_spelling_preserved(self):
        d = D.parse_deck("PROPS\nROCK\n 250.0 4.5E-5 /\n")
        tok = D.get_keyword(d, "PROPS", "ROCK").records[0].items[1]
        assert tok.value == 4.5e-5
        assert tok.text == "4.5E-5"

    def test_duplicate_keyword_occurrences(self):
        text = "SCHEDULE\nTSTEP\n 3*30.0 /\nTSTEP\n 2*45.0 /\n"
        d = D.parse_deck(text)
        assert values(D.get_keyword(d, "SCHEDULE", "TSTEP", 0).records[0])[0] == 30.0
        assert values(D.get_keyword(d, "SCHEDULE", "TSTEP", 1).records[0])[0] == 45.0

    def test_crlf_normalized(self):
        d = D.parse_deck("RUNSPEC\r\nDIMENS\r\n 2 2 1 /\r\n")
        assert d.serialize() == "RUNSPEC\nDIMENS\n 2 2 1 /\n"

    def test_source_map_lines(self):
        d = D.parse_deck(MINI, filename="mini.data")
        sm = d.source_map
        assert sm[("RUNSPEC", "DIMENS", 0)].line == 2
        assert sm[("GRID", "PERMX", 0)].line == 7
        assert sm[("GRID", "PERMX", 0)].file == "mini.data"


class TestRoundTrip:
    def test_corpus_byte_identical(self, corpus_paths):
        assert len(corpus_paths) >= 10
        for path in corpus_paths:
            text = path.read_text()
            assert D.parse_deck(text, filename=path.name).serialize() == text, path.name

    def test_corpus_reparse_structural(self, corpus_paths):
        for path in corpus_paths:
            d = D.parse_deck(path.read_text(), filename=path.name)
            again = D.parse_deck(d.serialize(), filename=path.name)
            assert D.structural_equal(d, again), path.name

    def test_trivia_collected(self, corpus_paths):
        text = (next(p for p in corpus_paths if p.name == "comments_everywhere.data")).read_text()
        d = D.parse_deck(text)
        comments = [c for _, c in d.trivia]
        assert "-- header block" in comments
        assert any("nx ny nz" in c for c in comments)
        assert any("end of file" in c for c in comments)


class TestRewrite:
    def test_set_keyword_values(self):
        d = D.parse_deck(MINI)
        d2 = D.set_keyword(d, "GRID", "PERMX", 0, [[
            D.repeat(100, D.number(400.0)),
            D.repeat(100, D.number(60.0)),
            D.repeat(100, D.number(300.0)),
        ]])
        out = d2.serialize()
        assert "100*400.0 100*60.0 100*300.0 /" in out
        kw = D.get_keyword(D.parse_deck(out), "GRID", "PERMX")
        assert kw.records[0].expanded_length() == 300

    def test_rewrite_touches_only_target_span(self):
        d = D.parse_deck(MINI)
        d2 = D.set_keyword(d, "GRID", "PERMX", 0, [[D.repeat(300, D.number(1.0))]])
        original, modified = d.serialize(), d2.serialize()
        # everything before and after the PERMX block is byte-identical
        prefix = original.split("PERMX")[0]
        assert modified.startswith(prefix + "PERMX")
        assert original.endswith("/\n") and modified.endswith("/\n")
        assert "DIMENS\n 10 10 3 /" in modified
        assert "PORO\n 300*0.3 /" in modified

    def test_rewrite_preserves_unrelated_spelling(self):
        text = "PROPS\nROCK\n 250.0 4.5E-5 /\nPVTW\n 250.0 1.0 4.0E-5 0.5 0.0 /\n"
        d = D.parse_deck(text)
        d2 = D.set_keyword(d, "PROPS", "PVTW", 0, [[D.number(1.0)]])
        assert "ROCK\n 250.0 4.5E-5 /" in d2.serialize()

    def test_rewrite_occurrence_selects_among_duplicates(self):
        text = "SCHEDULE\nTSTEP\n 3*30.0 /\nTSTEP\n 2*45.0 /\n"
        d2 = D.set_keyword(D.parse_deck(text), "SCHEDULE", "TSTEP", 1,
                           [[D.repeat(4, D.number(10.0))]])
        out = d2.serialize()
        assert "3*30.0" in out and "4*10.0" in out and "2*45.0" not in out

    def test_append_keyword(self):
        d = D.parse_deck(MINI)
        d2 = D.set_keyword(d, "GRID", "PERMY", D.APPEND, [[D.repeat(300, D.number(50.0))]])
        assert D.list_keywords(d2, "GRID") == ["PORO", "PERMX", "PERMY"]
        # appended before any following section header
        out = d2.serialize()
        assert out.index("PERMY") > out.index("PERMX")

    def test_replace_token_in_repeat_keeps_count(self):
        d = D.parse_deck(MINI)
        d2 = D.replace_token(d, "GRID", "PORO", 0, (0, 0), D.number(0.27))
        tok = D.get_keyword(d2, "GRID", "PORO").records[0].items[0]
        assert tok.kind == "repeat" and tok.count == 300 and tok.value.value == 0.27
        assert "300*0.27 /" in d2.serialize()

    def test_replace_scalar_token(self):
        d = D.parse_deck(MINI)
        d2 = D.replace_token(d, "RUNSPEC", "DIMENS", 0, (0, 2), D.number(5))
        assert values(D.get_keyword(d2, "RUNSPEC", "DIMENS").records[0]) == [10, 10, 5]

    def test_canonical_form(self):
        d = D.parse_deck("GRID\nDX\n    4*50.0    /\n")
        d2 = D.set_keyword(d, "GRID", "DX", 0, [[D.repeat(4, D.number(60.0))]])
        assert d2.serialize() == "GRID\nDX\n  4*60.0 /\n"


class TestExpand:
    def test_expand_mixed(self):
        d = D.parse_deck("GRID\nPORO\n 2*0.1 0.2 3* /\n")
        toks = D.expand_record(D.get_keyword(d, "GRID", "PORO").records[0])
        assert [t.kind for t in toks] == ["number"] * 3 + ["default"] * 3
        assert [t.value for t in toks[:3]] == [0.1, 0.1, 0.2]

    def test_expand_rejects_placeholder(self):
        d = D.parse_deck("GRID\nPORO\n 4*{{POROSITY}} /\n")
        with pytest.raises(PlaceholderPresent):
            D.expand_record(D.get_keyword(d, "GRID", "PORO").records[0])


class TestPlaceholders:
    def test_find_placeholders(self):
        text = "GRID\nPORO\n {{PHI}} 8*0.2 /\nPERMX\n 9*{{KX}} /\n"
        found = D.find_placeholders(D.parse_deck(text))
        assert found == {
            "PHI": ("GRID", "PORO", 0, (0, 0)),
            "KX": ("GRID", "PERMX", 0, (0, 0)),
        }

    def test_duplicate_placeholder_rejected(self):
        text = "GRID\nPORO\n {{A}} /\nPERMX\n {{A}} /\n"
        with pytest.raises(MalformedRecord):
            D.find_placeholders(D.parse_deck(text))


class TestIncludes:
    def test_include_splices_into_section(self, fixtures_dir):
        inc_dir = fixtures_dir / "include"
        resolver = D.file_include_resolver(inc_dir)
        d = D.parse_deck((inc_dir / "parent.data").read_text(), resolver, "parent.data")
        assert "PORO" in D.list_keywords(d, "GRID")
        assert d.source_map[("GRID", "PORO", 0)].file == "grid_arrays.inc"
        # serialization inlines the included text
        assert "9*40.0" in d.serialize()
        assert "INCLUDE" not in d.serialize()

    def test_unresolvable_include(self):
        text = "GRID\nINCLUDE\n 'missing.inc' /\n"
        with pytest.raises(UnknownInclude):
            D.parse_deck(text, include_resolver=lambda name: (_ for _ in ()).throw(KeyError(name)))
        with pytest.raises(UnknownInclude):
            D.parse_deck(text)  # no resolver at all

    def test_include_cycle_depth_limited(self):
        with pytest.raises(UnsupportedConstruct):
            D.parse_deck("GRID\nINCLUDE\n 'a.inc' /\n",
                         include_resolver=lambda name: "INCLUDE\n 'a.inc' /\n")


class TestErrors:
    def test_empty_input(self):
        for text in ("", "   \n\n  "):
            with pytest.raises(EmptyInput):
                D.parse_deck(text)

    def test_unterminated_at_eof(self):
        with pytest.raises(UnterminatedRecord):
            D.parse_deck("GRID\nDX\n 4*50.0\n")

    def test_unterminated_before_next_keyword(self):
        with pytest.raises(UnterminatedRecord) as exc:
            D.parse_deck("GRID\nDX\n 4*50.0\nDY\n 4*50.0 /\n")
        assert exc.value.location.line == 4

    def test_unknown_section_and_keyword(self):
        d = D.parse_deck(MINI)
        with pytest.raises(UnknownSection):
            D.list_keywords(d, "SCHEDULE")
        with pytest.raises(UnknownKeyword):
            D.get_keyword(d, "GRID", "PERMZ")
        with pytest.raises(OccurrenceOutOfRange):
            D.get_keyword(d, "GRID", "PERMX", 1)

    def test_set_unknown_targets(self):
        d = D.parse_deck(MINI)
        with pytest.raises(UnknownSection):
            D.set_keyword(d, "PROPS", "ROCK", 0, [[D.number(1.0)]])
        with pytest.raises(UnknownKeyword):
            D.set_keyword(d, "GRID", "PERMZ", 0, [[D.number(1.0)]])
        with pytest.raises(OccurrenceOutOfRange):
            D.set_keyword(d, "GRID", "PERMX", 3, [[D.number(1.0)]])

    def test_data_before_section(self):
        with pytest.raises(UnsupportedConstruct):
            D.parse_deck("DIMENS\n 1 1 1 /\n")

    def test_junk_after_section_header(self):
        with pytest.raises(UnsupportedConstruct):
            D.parse_deck("RUNSPEC DIMENS\n")

    def test_unindented_data_line_rejected(self):
        # bare uppercase word at column 1 inside an open record reads as a
        # keyword, so the open record is the error that surfaces
        with pytest.raises(UnterminatedRecord):
            D.parse_deck("SCHEDULE\nWELSPECS\n'P1' 'G' 1 1 1* 'OIL'\nCOMPDAT\n/\n")

    def test_malformed_set_records(self):
        d = D.parse_deck(MINI)
        with pytest.raises(MalformedRecord):
            D.set_keyword(d, "GRID", "PORO", 0, [["not a token"]])
        with pytest.raises(MalformedRecord):
            D.repeat(0, D.number(1.0))
        with pytest.raises(MalformedRecord):
            D.repeat(2, D.repeat(2, D.number(1.0)))


# --- generated round-trip property ---------------------------------------

_name = st.text(alphabet=_string.ascii_uppercase, min_size=2, max_size=6).filter(
    lambda s: s not in D.SECTION_NAMES and s not in ("INCLUDE", "TITLE")
)
_num = st.one_of(
    st.integers(-999, 9999).map(str),
    st.floats(-1e3, 1e3, allow_nan=False).map(lambda v: f"{v:.6g}"),
    st.floats(1e-6, 1e3, allow_nan=False).map(lambda v: f"{v:.3E}"),
)
_tok = st.one_of(
    _num,
    st.tuples(st.integers(1, 200), _num).map(lambda cv: f"{cv[0]}*{cv[1]}"),
    st.integers(1, 9).map(lambda n: f"{n}*"),
    st.just("*"),
    st.text(alphabet=_string.ascii_uppercase + " -", min_size=1, max_size=8).map(
        lambda s: f"'{s}'"
    ),
)
_record = st.lists(_tok, min_size=0, max_size=8).map(lambda toks: " " + " ".join(toks + ["/"]))
_keyword = st.tuples(_name, st.lists(_record, min_size=0, max_size=3)).map(
    lambda nr: "\n".join([nr[0]] + nr[1])
)
_gap = st.sampled_from(["", "\n", "-- note\n", "\n-- two\n-- lines\n"])
_section = st.tuples(
    st.sampled_from(D.SECTION_NAMES), st.lists(st.tuples(_gap, _keyword), min_size=0, max_size=4)
).map(lambda sk: sk[0] + "\n" + "".join(g + k + "\n" for g, k in sk[1]))
_deck_text = st.lists(_section, min_size=1, max_size=4).map("".join)


@given(_deck_text)
@settings(max_examples=150, deadline=None)
def test_generated_decks_round_trip(text):
    d = D.parse_deck(text)
    assert d.serialize() == text
    assert D.structural_equal(d, D.parse_deck(d.serialize()))
