import copy
import json

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from clozescore.testset import (
    INSTRUCTION,
    ResponseParseError,
    TestSetError,
    dump_testset,
    group_filling_text,
    load_testset,
    parse_response,
    render_prompt,
    render_tagged,
    response_from_fillings,
    topological_order,
    validate,
)


def doc_of(ts):
    return copy.deepcopy(dump_testset(ts))


class TestLoad:
    def test_sample_has_36_blanks(self, sample):
        assert sample.n_blanks == 36
        assert sample.blank_ids == list(range(1, 37))

    def test_dangling_blank_reference(self, tiny):
        doc = doc_of(tiny)
        doc["groups"][0]["blanks"] = [1, 99]
        with pytest.raises(TestSetError, match="99"):
            load_testset(doc)

    def test_minimal_document(self, tiny):
        assert tiny.n_blanks == 1
        assert validate(tiny).ok

    def test_accepts_json_string(self, tiny):
        assert load_testset(json.dumps(dump_testset(tiny))) == tiny

    def test_dump_round_trip(self, sample):
        assert load_testset(dump_testset(sample)) == sample


class TestValidate:
    def test_sample_is_clean(self, sample):
        report = validate(sample)
        assert report.findings == []
        assert report.topological_order == [1, 2, 3, 4, 5, 6, 7]

    def test_group_sizes(self, sample):
        assert [len(g.blank_ids) for g in sample.groups] == [7, 5, 5, 10, 4, 2, 3]

    def test_two_cycle_names_both_groups(self, mini):
        doc = doc_of(mini)
        doc["edges"] = [{"from": 1, "to": 2, "criterion": "x"}, {"from": 2, "to": 1, "criterion": "y"}]
        report = validate(load_testset(doc))
        cycles = [f for f in report.findings if f.code == "cycle"]
        assert len(cycles) == 1
        assert set(cycles[0].ids) == {1, 2}

    def test_self_edge(self, mini):
        doc = doc_of(mini)
        doc["edges"].append({"from": 3, "to": 3, "criterion": "x"})
        assert "edge-self" in validate(load_testset(doc)).codes()

    def test_empty_constraint(self, mini):
        doc = doc_of(mini)
        doc["groups"][0]["constraints"][0]["text"] = "  "
        assert "constraint-empty" in validate(load_testset(doc)).codes()

    def test_duplicate_blank(self, mini):
        doc = doc_of(mini)
        doc["segments"][5] = {"blank": 2}
        doc["groups"][0]["blanks"] = [1, 2]
        assert "blank-duplicate" in validate(load_testset(doc)).codes()

    def test_ungrouped_blank(self, mini):
        doc = doc_of(mini)
        doc["groups"][2]["blanks"] = [7]
        assert "blank-ungrouped" in validate(load_testset(doc)).codes()

    def test_blank_in_two_groups(self, mini):
        doc = doc_of(mini)
        doc["groups"][1]["blanks"].append(3)
        assert "blank-multi-group" in validate(load_testset(doc)).codes()

    def test_topological_order_breaks_ties_by_id(self):
        from clozescore.testset import CascadeEdge
        order, leftover = topological_order([3, 1, 2], [CascadeEdge(3, 2, "")])
        assert order == [1, 3, 2] and leftover == []


class TestPrompt:
    def test_each_marker_once(self, sample):
        prompt = render_prompt(sample)
        for k in sample.blank_ids:
            assert prompt.count(f"⟦{k:02d}⟧") == 1

    def test_single_marker(self, tiny):
        prompt = render_prompt(tiny)
        assert prompt.startswith(INSTRUCTION)
        assert prompt.count("⟦01⟧") == 1

    def test_constraints_hidden_by_default(self, sample):
        text = sample.groups[0].constraints[0].text
        assert text not in render_prompt(sample)
        assert text in render_prompt(sample, reveal_constraints=True)


class TestParse:
    def test_all_tags(self, sample):
        fills = {k: f"word{k}" for k in sample.blank_ids}
        r = parse_response(sample, render_tagged(sample, fills), "m")
        assert r.fillings == fills and r.complete

    def test_missing_tag_named(self, sample):
        fills = {k: f"word{k}" for k in sample.blank_ids if k != 5}
        raw = render_tagged(sample, {**fills, 5: "x"}).replace("⟦05: x⟧", "")
        with pytest.raises(ResponseParseError, match="05") as info:
            parse_response(sample, raw, "m")
        assert info.value.missing == (5,)

    def test_lenient_reports_missing(self, sample):
        fills = {k: "w" for k in sample.blank_ids}
        raw = render_tagged(sample, fills).replace("⟦12: w⟧", "")
        r = parse_response(sample, raw, "m", strict=False)
        assert r.missing == (12,) and not r.complete

    def test_unknown_tag(self, tiny):
        with pytest.raises(ResponseParseError, match="unknown"):
            parse_response(tiny, "⟦01: mat⟧ ⟦07: rug⟧", "m")

    def test_fallback_alignment_recovers_placeholders(self, sample):
        raw = "".join(f"X_{s.blank_id}" if s.is_blank else s.text for s in sample.segments)
        r = parse_response(sample, raw, "m")
        assert r.fillings == {k: f"X_{k}" for k in sample.blank_ids}

    def test_fallback_tolerates_light_edits(self, mini):
        fills = {k: f"thing {k}" for k in mini.blank_ids}
        raw = "Sure, here it is:\n\n" + "".join(
            fills[s.blank_id] if s.is_blank else s.text for s in mini.segments)
        assert parse_response(mini, raw, "m").fillings == fills

    def test_fallback_gives_up_on_unrelated_text(self, mini):
        with pytest.raises(ResponseParseError, match="alignment"):
            parse_response(mini, "I would rather not write a story today.", "m")

    def test_whitespace_filling_counts_as_missing(self, tiny):
        r = parse_response(tiny, "⟦01:   ⟧", "m", strict=False)
        assert r.missing == (1,)

    @settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.lists(st.text(alphabet=st.characters(blacklist_characters="⟦⟧", blacklist_categories=("Cs",)),
                            min_size=1, max_size=20).filter(lambda s: s.strip() and s == s.strip()),
                    min_size=8, max_size=8))
    def test_tagged_round_trip(self, mini, words):
        fills = dict(zip(mini.blank_ids, words))
        assert parse_response(mini, render_tagged(mini, fills), "m").fillings == fills


class TestPassages:
    def test_group_passage_has_fillings_and_no_markers(self, sample):
        fills = {k: f"<fill{k}>" for k in sample.blank_ids}
        r = response_from_fillings(sample, "m", fills)
        text = group_filling_text(sample, r, 1)
        for k in range(1, 8):
            assert f"<fill{k}>" in text
        assert "<fill8>" not in text
        assert "⟦" not in text and "⟧" not in text

    def test_locality(self, sample):
        base = {k: f"w{k}" for k in sample.blank_ids}
        a = response_from_fillings(sample, "a", base)
        b = response_from_fillings(sample, "b", {**base, 8: "something else entirely"})
        assert group_filling_text(sample, a, 1) == group_filling_text(sample, b, 1)
        assert group_filling_text(sample, a, 2) != group_filling_text(sample, b, 2)

    def test_tiny_full_story(self, tiny):
        r = response_from_fillings(tiny, "m", {1: "the mat"})
        assert group_filling_text(tiny, r, 1) == "The cat sat on the mat."

    def test_unfilled_blank_placeholder(self, mini):
        r = response_from_fillings(mini, "m", {k: "x" for k in mini.blank_ids if k != 2}, strict=False)
        assert "____" in group_filling_text(mini, r, 1)


# single-invariant mutations of a valid document
def _cycle(doc):
    last = max(g["id"] for g in doc["groups"])
    doc["edges"].append({"from": last, "to": 1, "criterion": "loop"})


def _dangling_edge(doc):
    doc["edges"].append({"from": 1, "to": 99, "criterion": "nowhere"})


def _duplicate_blank(doc):
    idx = [i for i, s in enumerate(doc["segments"]) if "blank" in s]
    doc["segments"][idx[1]] = {"blank": doc["segments"][idx[0]]["blank"]}


def _empty_constraint(doc):
    doc["groups"][-1]["constraints"][0]["text"] = ""


MUTATIONS = {"cycle": _cycle, "dangling": _dangling_edge, "duplicate-blank": _duplicate_blank,
             "empty-constraint": _empty_constraint}


def mutation_findings(ts, mutate):
    doc = doc_of(ts)
    mutate(doc)
    try:
        return validate(load_testset(doc)).codes()
    except TestSetError as exc:
        # load-time rejection counts as a finding
        return {f"load:{exc}"}


@pytest.mark.parametrize("name", sorted(MUTATIONS))
def test_mutation_is_detected(sample, mini, name):
    for ts in (sample, mini):
        assert mutation_findings(ts, MUTATIONS[name])
