"""Corpus loading, label handling and BIO round trips."""

from __future__ import annotations

import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parner.corpus import (
    CorpusError,
    Document,
    GoldAnnotation,
    LabelSet,
    Mention,
    apply_label_map,
    bio_spans,
    emit_spans_json,
    filter_max_mentions,
    mention_multiset,
    parse_bio,
    parse_spans_json,
    spans_to_bio,
)


class TestLabelSet:
    def test_order_and_rank(self):
        ls = LabelSet(["PER", "MISC", "LOC", "ORG"])
        assert list(ls) == ["PER", "MISC", "LOC", "ORG"]
        assert ls.rank("PER") == 0
        assert ls.rank("ORG") == 3
        assert "LOC" in ls
        assert "GPE" not in ls
        assert len(ls) == 4

    def test_duplicate_labels_rejected(self):
        with pytest.raises(CorpusError):
            LabelSet(["PER", "PER"])

    def test_empty_rejected(self):
        with pytest.raises(CorpusError):
            LabelSet([])

    def test_surface_map_round_trip(self):
        ls = LabelSet(["LOC", "PER"], surface_map={"LOC": "地点", "PER": "名称"})
        assert ls.surface("LOC") == "地点"
        assert ls.canonical("地点") == "LOC"
        with pytest.raises(CorpusError):
            ls.canonical("LOC")  # strict: only surfaces invert

    def test_surface_map_must_cover_all_labels(self):
        with pytest.raises(CorpusError):
            LabelSet(["LOC", "PER"], surface_map={"LOC": "地点"})

    def test_surface_map_must_be_invertible(self):
        with pytest.raises(CorpusError):
            LabelSet(["LOC", "PER"], surface_map={"LOC": "x", "PER": "x"})

    def test_unknown_label_lookups_raise(self):
        ls = LabelSet(["LOC"])
        with pytest.raises(CorpusError):
            ls.rank("PER")
        with pytest.raises(CorpusError):
            ls.surface("PER")
        with pytest.raises(CorpusError):
            ls.canonical("PER")

    def test_apply_label_map(self):
        ls = LabelSet(["LOC", "PER"])
        mapped = apply_label_map(ls, {"LOC": "location", "PER": "person"})
        assert mapped.surface("LOC") == "location"
        assert list(mapped) == ["LOC", "PER"]

    def test_apply_label_map_requires_every_label(self):
        ls = LabelSet(["LOC", "PER"])
        with pytest.raises(CorpusError):
            apply_label_map(ls, {"LOC": "location"})


class TestBioSpans:
    def test_basic(self):
        tags = ["B-PER", "I-PER", "O", "B-LOC"]
        assert bio_spans(tags) == [("PER", 0, 2), ("LOC", 3, 4)]

    def test_adjacent_b_tags_split(self):
        tags = ["B-LOC", "B-LOC"]
        assert bio_spans(tags) == [("LOC", 0, 1), ("LOC", 1, 2)]

    def test_dangling_i_treated_as_begin(self):
        tags = ["O", "I-LOC", "I-LOC", "O", "I-PER"]
        assert bio_spans(tags) == [("LOC", 1, 3), ("PER", 4, 5)]

    def test_label_switch_inside_run_starts_new_span(self):
        tags = ["B-PER", "I-LOC"]
        assert bio_spans(tags) == [("PER", 0, 1), ("LOC", 1, 2)]

    def test_dangling_i_error_policy(self):
        with pytest.raises(CorpusError):
            bio_spans(["O", "I-LOC"], malformed="error")

    def test_bad_tag_rejected(self):
        with pytest.raises(CorpusError):
            bio_spans(["B-PER", "X-PER"])

    def test_spans_to_bio_inverse(self):
        spans = [("PER", 0, 2), ("LOC", 3, 4)]
        tags = spans_to_bio(spans, 5)
        assert tags == ["B-PER", "I-PER", "O", "B-LOC", "O"]
        assert bio_spans(tags) == spans

    def test_spans_to_bio_rejects_overlap(self):
        with pytest.raises(CorpusError):
            spans_to_bio([("PER", 0, 2), ("LOC", 1, 3)], 4)

    def test_spans_to_bio_rejects_out_of_bounds(self):
        with pytest.raises(CorpusError):
            spans_to_bio([("PER", 0, 5)], 4)

    @given(
        st.lists(
            st.sampled_from(
                ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"]
            ),
            max_size=30,
        )
    )
    @settings(max_examples=200)
    def test_decode_encode_decode_is_stable(self, tags):
        spans = bio_spans(tags)
        rebuilt = spans_to_bio(spans, len(tags))
        assert bio_spans(rebuilt) == spans


class TestParseBio:
    def test_two_documents(self, labels):
        text = (
            "Cuttitta B-PER\n"
            "joined O\n"
            "Italy B-LOC\n"
            "\n"
            "nothing O\n"
            "here O\n"
        )
        pairs = parse_bio(text, labels)
        assert len(pairs) == 2
        doc0, gold0 = pairs[0]
        assert doc0.id == "0"
        assert doc0.text == "Cuttitta joined Italy"
        assert gold0.mentions == [Mention("PER", "Cuttitta"), Mention("LOC", "Italy")]
        doc1, gold1 = pairs[1]
        assert doc1.id == "1"
        assert doc1.text == "nothing here"
        assert gold1.mentions == []

    def test_id_prefix(self, labels):
        pairs = parse_bio("a O\n", labels, id_prefix="test-")
        assert pairs[0][0].id == "test-0"

    def test_multi_token_mention(self, labels):
        text = "1995 B-MISC\nWorld I-MISC\nCup I-MISC\n"
        pairs = parse_bio(text, labels)
        assert pairs[0][1].mentions == [Mention("MISC", "1995 World Cup")]

    def test_empty_joiner_for_unspaced_scripts(self):
        ls = LabelSet(["LOC"])
        text = "北 B-LOC\n京 I-LOC\n市 O\n"
        pairs = parse_bio(text, ls, joiner="")
        doc, gold = pairs[0]
        assert doc.text == "北京市"
        assert gold.mentions == [Mention("LOC", "北京")]

    def test_extra_columns_use_last(self, labels):
        text = "Cuttitta NNP B-PER\n"
        pairs = parse_bio(text, labels)
        assert pairs[0][1].mentions == [Mention("PER", "Cuttitta")]

    def test_unknown_label_reports_line(self, labels):
        with pytest.raises(CorpusError) as err:
            parse_bio("a O\nParis B-GPE\n", labels)
        assert "GPE" in str(err.value)
        assert "2" in str(err.value)

    def test_trailing_blank_lines_ignored(self, labels):
        pairs = parse_bio("a O\n\n\n", labels)
        assert len(pairs) == 1

    def test_empty_input(self, labels):
        assert parse_bio("", labels) == []

    def test_dangling_i_error_policy_propagates(self, labels):
        with pytest.raises(CorpusError):
            parse_bio("Paris I-LOC\n", labels, malformed="error")
        pairs = parse_bio("Paris I-LOC\n", labels)
        assert pairs[0][1].mentions == [Mention("LOC", "Paris")]


class TestSpansJson:
    def test_round_trip(self, labels, cuttitta):
        doc, gold = cuttitta
        other = (Document(id="d1", text="no entities here"),
                 GoldAnnotation(doc_id="d1", mentions=[]))
        blob = emit_spans_json([(doc, gold), other])
        pairs = parse_spans_json(blob, labels)
        assert pairs == [(doc, gold), other]

    def test_invalid_json_line_numbered(self, labels):
        with pytest.raises(CorpusError) as err:
            parse_spans_json('{"id": "a", "text": "x", "mentions": []}\nnot json\n', labels)
        assert "2" in str(err.value)

    def test_duplicate_id_rejected(self, labels):
        row = json.dumps({"id": "a", "text": "x", "mentions": []})
        with pytest.raises(CorpusError):
            parse_spans_json(row + "\n" + row + "\n", labels)

    def test_unknown_mention_label_rejected(self, labels):
        row = json.dumps({
            "id": "a", "text": "Paris",
            "mentions": [{"label": "GPE", "text": "Paris"}],
        })
        with pytest.raises(CorpusError) as err:
            parse_spans_json(row + "\n", labels)
        assert "GPE" in str(err.value)

    def test_malformed_record_rejected(self, labels):
        with pytest.raises(CorpusError):
            parse_spans_json('["not", "a", "dict"]\n', labels)
        with pytest.raises(CorpusError):
            parse_spans_json(json.dumps({"id": "a"}) + "\n", labels)
        row = json.dumps({"id": "a", "text": "x", "mentions": ["bad"]})
        with pytest.raises(CorpusError):
            parse_spans_json(row + "\n", labels)

    def test_missing_mentions_key_defaults_empty(self, labels):
        pairs = parse_spans_json(json.dumps({"id": "a", "text": "x"}) + "\n", labels)
        assert pairs[0][1].mentions == []


class TestHelpers:
    def test_mention_multiset(self, cuttitta):
        _, gold = cuttitta
        assert mention_multiset(gold.mentions) == Counter({
            ("PER", "Cuttitta"): 1,
            ("MISC", "1995 World Cup"): 1,
            ("LOC", "Italy"): 1,
            ("LOC", "England"): 1,
        })

    def test_for_label_preserves_order(self, cuttitta):
        _, gold = cuttitta
        assert [m.text for m in gold.for_label("LOC")] == ["Italy", "England"]
        assert gold.for_label("ORG") == []

    def test_filter_max_mentions(self, cuttitta):
        doc, gold = cuttitta
        small = (Document(id="d1", text="x"), GoldAnnotation(doc_id="d1", mentions=[]))
        kept, dropped = filter_max_mentions([(doc, gold), small], 1)
        assert dropped == ["d0"]
        assert [p[0].id for p in kept] == ["d1"]
        kept_all, dropped_none = filter_max_mentions([(doc, gold), small], None)
        assert dropped_none == []
        assert len(kept_all) == 2

    def test_filter_limit_is_total_mentions(self, cuttitta):
        doc, gold = cuttitta  # four mentions in total
        kept, dropped = filter_max_mentions([(doc, gold)], 4)
        assert dropped == []
        kept, dropped = filter_max_mentions([(doc, gold)], 3)
        assert dropped == ["d0"]
