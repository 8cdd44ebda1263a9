"""Parameter space: placeholder binding, substitution, normalization,
dry-run corner validation, and the relperm table checks."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petromatch import deck as D
from petromatch import paramspace as P
from petromatch.errors import (
    DuplicateName,
    IncompleteAssignment,
    InvalidBounds,
    MalformedTable,
    OutOfBounds,
    TargetNotFound,
    UnknownParameter,
)


def perm_spec(name, nominal, index, occurrence=0):
    lo, hi, scale = P.perm_value_bounds(nominal)
    return P.ParameterSpec(name, lo, hi, nominal,
                           ("GRID", "PERMX", occurrence, (0, index)), scale, "mD")


@pytest.fixture
def spe1_space(spe1_deck_text):
    deck = D.parse_deck(spe1_deck_text)
    space = P.empty_space(deck)
    for i, (name, nominal) in enumerate(
        [("PERM_L1", 500.0), ("PERM_L2", 50.0), ("PERM_L3", 200.0)]
    ):
        space = P.add_parameter(space, perm_spec(name, nominal, i))
    return deck, space


class TestSpecValidation:
    def test_equal_bounds_rejected(self):
        with pytest.raises(InvalidBounds):
            P.ParameterSpec("A", 5.0, 5.0, 5.0, ("GRID", "PERMX", 0, (0, 0)))

    def test_initial_outside_bounds_rejected(self):
        with pytest.raises(InvalidBounds):
            P.ParameterSpec("A", 1.0, 2.0, 3.0, ("GRID", "PERMX", 0, (0, 0)))

    def test_log10_needs_positive_lower(self):
        with pytest.raises(InvalidBounds):
            P.ParameterSpec("A", 0.0, 2.0, 1.0, ("GRID", "PERMX", 0, (0, 0)),
                            scale="log10")

    def test_name_must_be_identifier(self):
        with pytest.raises(InvalidBounds):
            P.ParameterSpec("BAD NAME", 1.0, 2.0, 1.5, ("GRID", "PERMX", 0, (0, 0)))


class TestAddRemove:
    def test_add_puts_placeholder_in_template(self, spe1_space):
        _, space = spe1_space
        text = space.template.serialize()
        assert "{{PERM_L1}}" in text and "{{PERM_L3}}" in text
        assert space.dimension() == 3

    def test_add_duplicate_name(self, spe1_space):
        _, space = spe1_space
        with pytest.raises(DuplicateName):
            P.add_parameter(space, perm_spec("PERM_L1", 500.0, 0))

    def test_add_missing_target(self, spe1_space):
        deck, _ = spe1_space
        space = P.empty_space(deck)
        bad = P.ParameterSpec("NOPE", 1.0, 2.0, 1.5, ("GRID", "PERMZZ", 0, (0, 0)))
        with pytest.raises(TargetNotFound):
            P.add_parameter(space, bad)

    def test_add_non_numeric_target(self, spe1_space):
        deck, _ = spe1_space
        space = P.empty_space(deck)
        bad = P.ParameterSpec("WELL", 1.0, 2.0, 1.5,
                              ("SCHEDULE", "WELSPECS", 0, (0, 0)))
        with pytest.raises(TargetNotFound):
            P.add_parameter(space, bad)

    def test_add_onto_existing_placeholder(self, spe1_space):
        _, space = spe1_space
        again = P.ParameterSpec("PERM_L1B", 100.0, 1000.0, 500.0,
                                ("GRID", "PERMX", 0, (0, 0)), "log10")
        with pytest.raises(TargetNotFound):
            P.add_parameter(space, again)

    def test_remove_restores_initial_value(self, spe1_space):
        _, space = spe1_space
        back = P.remove_parameter(space, "PERM_L1")
        kw = D.get_keyword(back.template, "GRID", "PERMX")
        assert kw.records[0].items[0].render() == "100*500"
        assert back.names() == ["PERM_L2", "PERM_L3"]

    def test_remove_unknown(self, spe1_space):
        _, space = spe1_space
        with pytest.raises(UnknownParameter):
            P.remove_parameter(space, "GHOST")

    def test_remove_then_add_keeps_dimension(self, spe1_space):
        _, space = spe1_space
        tweaked = P.remove_parameter(space, "PERM_L2")
        lo, hi, scale = P.perm_value_bounds(50.0)
        tweaked = P.add_parameter(tweaked, P.ParameterSpec(
            "PERM_L2", lo / 2, hi * 2, 50.0, ("GRID", "PERMX", 0, (0, 1)), scale))
        assert tweaked.dimension() == space.dimension()


class TestSubstitute:
    def test_layer_perm_example(self, spe1_space):
        _, space = spe1_space
        out = P.substitute(space, {"PERM_L1": 400, "PERM_L2": 60, "PERM_L3": 300})
        kw = D.get_keyword(out, "GRID", "PERMX")
        assert kw.records[0].render() == "100*400 100*60 100*300 /"
        assert not D.find_placeholders(out)

    def test_identity_assignment_matches_original(self, spe1_space):
        deck, space = spe1_space
        out = P.substitute(space, P.initial_assignment(space))
        assert D.structural_equal(deck, out)

    def test_incomplete_assignment(self, spe1_space):
        _, space = spe1_space
        with pytest.raises(IncompleteAssignment):
            P.substitute(space, {"PERM_L1": 400, "PERM_L2": 60})

    def test_unknown_name(self, spe1_space):
        _, space = spe1_space
        full = P.initial_assignment(space)
        full["SURPRISE"] = 1.0
        with pytest.raises(UnknownParameter):
            P.substitute(space, full)

    def test_out_of_bounds_value(self, spe1_space):
        _, space = spe1_space
        bad = P.initial_assignment(space)
        bad["PERM_L1"] = 1e9
        with pytest.raises(OutOfBounds):
            P.substitute(space, bad)

    def test_substituted_values_reparse_exactly(self, spe1_space):
        _, space = spe1_space
        values = {"PERM_L1": 437.25, "PERM_L2": 61.0625, "PERM_L3": 123.456789}
        out = D.parse_deck(P.substitute(space, values).serialize())
        kw = D.get_keyword(out, "GRID", "PERMX")
        got = [t.value.value for t in kw.records[0].items]
        assert got == [values["PERM_L1"], values["PERM_L2"], values["PERM_L3"]]


class TestUnitCube:
    def test_linear_midpoint(self, spe1_space):
        deck, _ = spe1_space
        space = P.add_parameter(P.empty_space(deck), P.ParameterSpec(
            "A", 100.0, 1000.0, 550.0, ("GRID", "PERMX", 0, (0, 0))))
        assert P.to_unit_cube(space, {"A": 550.0})[0] == pytest.approx(0.5)

    def test_log10_geometric_midpoint(self, spe1_space):
        deck, _ = spe1_space
        space = P.add_parameter(P.empty_space(deck), P.ParameterSpec(
            "A", 0.1, 10.0, 1.0, ("GRID", "PERMX", 0, (0, 0)), scale="log10"))
        assert P.to_unit_cube(space, {"A": 1.0})[0] == pytest.approx(0.5, abs=1e-12)

    def test_bounds_map_to_exact_zero_one(self, spe1_space):
        _, space = spe1_space
        lows = {s.name: s.lower for s in space.specs}
        highs = {s.name: s.upper for s in space.specs}
        assert list(P.to_unit_cube(space, lows)) == [0.0, 0.0, 0.0]
        assert list(P.to_unit_cube(space, highs)) == [1.0, 1.0, 1.0]
        assert P.from_unit_cube(space, [0.0] * 3) == lows
        assert P.from_unit_cube(space, [1.0] * 3) == highs

    def test_out_of_bounds(self, spe1_space):
        _, space = spe1_space
        with pytest.raises(OutOfBounds):
            P.to_unit_cube(space, {"PERM_L1": 1.0, "PERM_L2": 50.0, "PERM_L3": 200.0})
        with pytest.raises(OutOfBounds):
            P.from_unit_cube(space, [0.5, 0.5, 1.5])

    def test_wrong_dimension_point(self, spe1_space):
        _, space = spe1_space
        with pytest.raises(IncompleteAssignment):
            P.from_unit_cube(space, [0.5, 0.5])


@given(st.data())
@settings(max_examples=150, deadline=None)
def test_unit_cube_round_trip_property(data):
    scale = data.draw(st.sampled_from(["linear", "log10"]))
    if scale == "linear":
        lower = data.draw(st.floats(-1e6, 1e6, allow_nan=False))
        width = data.draw(st.floats(1e-3, 1e6))
        upper = lower + width
    else:
        lower = data.draw(st.floats(1e-6, 1e3))
        ratio = data.draw(st.floats(1.001, 1e6))
        upper = lower * ratio
    frac = data.draw(st.floats(0.0, 1.0))
    spec = P.ParameterSpec("A", lower, upper, lower,
                           ("GRID", "PERMX", 0, (0, 0)), scale)
    value = spec.from_unit(frac)
    again = spec.from_unit(spec.to_unit(value))
    assert math.isclose(again, value, rel_tol=1e-12, abs_tol=1e-12)
    assert spec.to_unit(lower) == 0.0 and spec.to_unit(upper) == 1.0


class TestDryRun:
    def test_evaluates_exactly_the_two_corners(self, spe1_space):
        _, space = spe1_space
        seen = []

        def recorder(deck):
            kw = D.get_keyword(deck, "GRID", "PERMX")
            seen.append(tuple(t.value.value for t in kw.records[0].items))
            return P.ValidationOutcome.passed("Recorder")

        report = P.dry_run_validate(space, (recorder,))
        assert report.ok
        lows = tuple(s.lower for s in space.specs)
        highs = tuple(s.upper for s in space.specs)
        assert seen == [lows, highs]
        assert [e.corner for e in report.entries] == ["lower", "upper"]

    def test_no_validators_passes_vacuously(self, spe1_space):
        _, space = spe1_space
        assert P.dry_run_validate(space, ()).ok

    def test_bad_krw_endpoint_caught_then_repaired(self, corpus_deck):
        text = corpus_deck("relperm_tables").read_text()
        deck = D.parse_deck(text)
        # krw at Sw=0.80 sits mid-column; pushing it past the 0.850 in the
        # row above breaks monotonicity at the upper corner
        target = ("PROPS", "SWOF", 0, (0, 25))
        assert D.get_token(deck, *target[:3], target[3]).value == 0.610
        bad = P.add_parameter(P.empty_space(deck), P.ParameterSpec(
            "KRW_END", 0.45, 0.95, 0.610, target))
        report = P.dry_run_validate(bad, P.DEFAULT_VALIDATORS)
        assert not report.ok
        failure = report.failures()[0]
        assert failure.corner == "upper"
        assert "non-monotonic relative permeability curve" in failure.outcome.message

        repaired = P.add_parameter(P.empty_space(deck), P.ParameterSpec(
            "KRW_END", 0.45, 0.84, 0.610, target))
        assert P.dry_run_validate(repaired, P.DEFAULT_VALIDATORS).ok

    def test_arithmetic_leftover_fails(self, corpus_deck):
        deck = D.parse_deck(corpus_deck("arith_leftover").read_text())
        outcome = P.arithmetic_validator(deck)
        assert not outcome.ok
        assert outcome.rule == "ArithmeticNotSupported"

    def test_arithmetic_clean_deck_passes(self, spe1_deck_text):
        deck = D.parse_deck(spe1_deck_text)
        assert P.arithmetic_validator(deck).ok


class TestRelpermTable:
    def swof(self, body):
        deck = D.parse_deck(
            "RUNSPEC\nDIMENS\n 1 1 1 /\nOIL\nWATER\nMETRIC\n\nPROPS\nSWOF\n"
            + body + " /\n"
        )
        return D.get_keyword(deck, "PROPS", "SWOF")

    def test_monotone_table_passes(self):
        kw = self.swof("  0.12 0.0 1.0\n  0.5 0.2 0.4\n  0.9 0.7 0.0\n")
        assert P.validate_relperm_table(kw).ok

    def test_decreasing_krw_fails(self):
        kw = self.swof("  0.12 0.0 1.0\n  0.5 0.6 0.4\n  0.9 0.5 0.0\n")
        outcome = P.validate_relperm_table(kw)
        assert not outcome.ok
        assert "non-monotonic relative permeability curve" in outcome.message

    def test_increasing_krow_fails(self):
        kw = self.swof("  0.12 0.0 0.6\n  0.5 0.2 0.8\n  0.9 0.7 0.0\n")
        assert not P.validate_relperm_table(kw).ok

    def test_kr_outside_unit_interval_fails(self):
        kw = self.swof("  0.12 0.0 1.0\n  0.5 1.2 0.4\n  0.9 1.3 0.0\n")
        outcome = P.validate_relperm_table(kw)
        assert not outcome.ok
        assert "outside [0, 1]" in outcome.message

    def test_saturation_must_increase(self):
        kw = self.swof("  0.5 0.0 1.0\n  0.5 0.2 0.4\n  0.9 0.7 0.0\n")
        assert not P.validate_relperm_table(kw).ok

    def test_ragged_rows_raise(self):
        kw = self.swof("  0.12 0.0 1.0\n  0.5 0.2\n  0.9 0.7 0.0\n")
        with pytest.raises(MalformedTable):
            P.validate_relperm_table(kw)

    def test_fixture_tables_pass(self, corpus_deck):
        deck = D.parse_deck(corpus_deck("relperm_tables").read_text())
        assert P.validate_relperm_table(D.get_keyword(deck, "PROPS", "SWOF")).ok
        assert P.validate_relperm_table(D.get_keyword(deck, "PROPS", "SGOF")).ok
        assert P.relperm_validator(deck).ok


class TestHeuristics:
    def test_perm_value_spans_fifth_to_double(self):
        assert P.perm_value_bounds(500.0) == (100.0, 1000.0, "log10")

    def test_poro_value_linear_window(self):
        lo, hi, scale = P.poro_value_bounds(0.3)
        assert (lo, scale) == (pytest.approx(0.24), "linear")
        assert hi == pytest.approx(0.36)

    def test_poro_clamped_to_one(self):
        assert P.poro_value_bounds(0.9)[1] == 1.0

    def test_multiplier_ranges(self):
        assert P.multiplier_bounds() == (0.1, 10.0, "log10")
        assert P.fault_multiplier_bounds() == (1e-3, 10.0, "log10")

    def test_kr_endpoint_clamps(self):
        lo, hi, _ = P.kr_endpoint_bounds(0.95)
        assert hi == 1.0 and lo == pytest.approx(0.8)

    def test_saturation_endpoint_respects_neighbor(self):
        lo, hi, _ = P.saturation_endpoint_bounds(0.12, 0.30)
        assert lo == pytest.approx(0.03) and hi == pytest.approx(0.21)
        lo2, hi2, _ = P.saturation_endpoint_bounds(0.92, 0.80)
        assert hi2 == pytest.approx(0.98) and lo2 == pytest.approx(0.86)


class TestManifest:
    def test_round_trip(self, spe1_space):
        deck, space = spe1_space
        text = P.manifest_json(space)
        doc = json.loads(text)
        assert [p["name"] for p in doc["parameters"]] == space.names()
        rebuilt = P.space_from_manifest(deck, text)
        assert rebuilt.names() == space.names()
        assert D.structural_equal(rebuilt.template, space.template)

    def test_binds_to_existing_template(self, spe1_space):
        _, space = spe1_space
        rebuilt = P.space_from_manifest(space.template, P.manifest_json(space))
        assert rebuilt.specs == space.specs
