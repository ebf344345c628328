"""Corpus loading, synthesis, vocabulary, and encoding."""

import json

import numpy as np
import pytest

from segsum.corpus import (
    BOS_ID,
    EOS_ID,
    FILLER_VOCAB_SIZE,
    RESERVED_TOKENS,
    UNK_ID,
    X_SEP_ID,
    Y_SEP_ID,
    CorpusError,
    Document,
    Vocabulary,
    build_vocab,
    document_to_record,
    encode_document,
    load_jsonl,
    save_jsonl,
    synth_generate,
    truncate_document,
)


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


class TestLoadJsonl:
    def test_direct_field_mapping(self, tmp_path):
        f = tmp_path / "c.jsonl"
        write_jsonl(
            f,
            [
                {
                    "paragraphs": ["A b", "c d", "e", "f g"],
                    "boundaries": [2],
                    "summaries": [["x", "Y"]],
                }
            ],
        )
        (doc,) = load_jsonl(f)
        assert doc.num_paragraphs == 4
        assert doc.num_sections == 2
        assert doc.gold_summaries == (("x", "y"),)  # lowercased
        assert doc.paragraphs[0] == ("a", "b")
        assert doc.first_section_has_summary is False

    def test_non_ascending_boundaries_rejected(self, tmp_path):
        f = tmp_path / "c.jsonl"
        write_jsonl(
            f,
            [{"paragraphs": ["a", "b", "c", "d"], "boundaries": [3, 1], "summaries": ["s"]}],
        )
        with pytest.raises(CorpusError, match="boundaries not ascending"):
            load_jsonl(f)

    def test_errors_name_the_line(self, tmp_path):
        f = tmp_path / "c.jsonl"
        f.write_text('{"paragraphs": ["a"], "boundaries": [], "summaries": []}\nnot json\n')
        with pytest.raises(CorpusError, match="line 2"):
            load_jsonl(f)

    def test_missing_field_named(self, tmp_path):
        f = tmp_path / "c.jsonl"
        write_jsonl(f, [{"paragraphs": ["a"], "boundaries": []}])
        with pytest.raises(CorpusError, match="summaries"):
            load_jsonl(f)

    def test_unsummarized_first_section_shape(self, tmp_path):
        """Eight paragraphs, three interior boundaries, first section has
        no summary: four sections, three summaries."""
        f = tmp_path / "c.jsonl"
        write_jsonl(
            f,
            [
                {
                    "paragraphs": [f"p{i} tok" for i in range(8)],
                    "boundaries": [2, 4, 6],
                    "summaries": [["s1"], ["s2"], ["s3"]],
                    "first_section_has_summary": False,
                }
            ],
        )
        (doc,) = load_jsonl(f)
        assert doc.num_sections == 4
        assert len(doc.gold_summaries) == 3

    def test_round_trip(self, tmp_path):
        docs = synth_generate(5, 8, 4, (1, 3), (1, 2), (2, 4), seed=3)
        f = tmp_path / "c.jsonl"
        save_jsonl(f, docs)
        assert load_jsonl(f) == docs


class TestDocumentInvariants:
    def test_empty_paragraph_rejected(self):
        with pytest.raises(CorpusError, match="paragraph 2 is empty"):
            Document((("a",), ()), (), (("s",),), True)

    def test_summary_count_must_match_sections(self):
        with pytest.raises(CorpusError, match="summaries"):
            Document((("a",), ("b",)), (1,), (("s",),), True)

    def test_boundary_out_of_range(self):
        with pytest.raises(CorpusError, match=r"\[1, 1\]"):
            Document((("a",), ("b",)), (2,), (("s",), ("t",)), True)

    def test_section_of_paragraph(self):
        doc = Document(
            tuple((f"w{i}",) for i in range(5)), (2, 3), ((("s",))[:1],) * 3, True
        )
        assert [doc.section_of_paragraph(p) for p in range(1, 6)] == [1, 1, 2, 3, 3]


class TestSynthGenerate:
    def test_identical_seed_identical_corpus(self):
        a = synth_generate(20, 10, 5, (2, 3), (1, 2), (3, 5), seed=7)
        b = synth_generate(20, 10, 5, (2, 3), (1, 2), (3, 5), seed=7)
        assert a == b
        ra = [json.dumps(document_to_record(d), sort_keys=True) for d in a]
        rb = [json.dumps(document_to_record(d), sort_keys=True) for d in b]
        assert ra == rb

    def test_single_section_means_no_boundaries(self):
        docs = synth_generate(10, 6, 4, (1, 1), (1, 3), (2, 4), seed=1)
        assert all(d.gold_boundaries == () for d in docs)
        assert all(d.num_sections == 1 for d in docs)

    def test_topics_distinct_within_document(self):
        """Each section's key phrase identifies its topic, so phrases must
        be pairwise distinct inside a document."""
        docs = synth_generate(500, 50, 10, (2, 4), (2, 3), (4, 8), seed=13)
        assert len(docs) == 500
        for d in docs:
            phrases = [tuple(s) for s in d.gold_summaries]
            assert len(set(phrases)) == len(phrases)

    def test_infeasible_ranges_rejected(self):
        with pytest.raises(CorpusError, match="topics"):
            synth_generate(5, 3, 4, (2, 4), (1, 2), (2, 4), seed=0)
        with pytest.raises(CorpusError, match="para_len_range"):
            synth_generate(5, 8, 4, (2, 3), (1, 2), (4, 2), seed=0)

    def test_summaries_are_key_phrases_of_two_to_four_tokens(self):
        docs = synth_generate(50, 20, 10, (2, 4), (1, 2), (3, 5), seed=5)
        for d in docs:
            assert d.first_section_has_summary
            for s in d.gold_summaries:
                assert 2 <= len(s) <= 4


class TestBuildVocab:
    def test_frequency_order_after_reserved_block(self):
        doc = Document((("a", "a", "b"),), (), (("a",),), True)
        vocab = build_vocab([doc], min_freq=1)
        assert vocab.id_to_token[: len(RESERVED_TOKENS)] == list(RESERVED_TOKENS)
        assert vocab.id_to_token[len(RESERVED_TOKENS) :] == ["a", "b"]

    def test_min_freq_drops_rare_tokens_to_unk(self):
        doc = Document((("a", "a", "b"),), (), (("a",),), True)
        vocab = build_vocab([doc], min_freq=2)
        assert "b" not in vocab.token_to_id
        assert vocab.encode_token("b") == UNK_ID

    def test_synthetic_vocab_size_matches_token_census(self):
        """Distinct tokens = topic words + shared filler; summaries reuse
        topic words so they add nothing."""
        docs = synth_generate(500, 50, 10, (2, 4), (2, 3), (4, 8), seed=13)
        vocab = build_vocab(docs, min_freq=1)
        distinct = set()
        for d in docs:
            for p in d.paragraphs:
                distinct.update(p)
            for s in d.gold_summaries:
                distinct.update(s)
        assert len(vocab) == len(distinct) + len(RESERVED_TOKENS)
        assert len(vocab) == 50 * 10 + FILLER_VOCAB_SIZE + len(RESERVED_TOKENS)

    def test_save_load_round_trip(self, tmp_path):
        docs = synth_generate(5, 6, 4, (1, 2), (1, 2), (2, 4), seed=2)
        vocab = build_vocab(docs)
        path = tmp_path / "vocab.tsv"
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.id_to_token == vocab.id_to_token
        first = path.read_text().splitlines()[0]
        assert first == "[PAD]\t0"


class TestEncodeDocument:
    def _small_vocab(self):
        doc = Document(
            (("a", "b"), ("c",)), (1,), (("x",), ("y",)), True
        )
        return doc, build_vocab([doc])

    def test_smallest_joint_case(self):
        doc, vocab = self._small_vocab()
        ex = encode_document(doc, vocab, 64, 32)
        a, b, c = vocab.encode(["a", "b", "c"])
        x, y = vocab.encode(["x", "y"])
        assert ex.src_ids.tolist() == [a, b, X_SEP_ID, c]
        assert ex.xsep_positions.tolist() == [2]
        assert ex.boundary_labels.tolist() == [1]
        assert ex.tgt_ids.tolist() == [BOS_ID, x, Y_SEP_ID, y, EOS_ID]
        assert ex.tgt_section_of_token.tolist() == [1, 1, 1, 2, 2]
        assert ex.src_section_of_token.tolist() == [1, 1, 1, 2]

    def test_single_section_no_separator(self):
        doc = Document((("a", "b"), ("c",)), (), (("x",),), True)
        vocab = build_vocab([doc])
        ex = encode_document(doc, vocab, 64, 32)
        assert ex.boundary_labels.tolist() == [0]
        assert Y_SEP_ID not in ex.tgt_ids.tolist()

    def test_unsummarized_first_section_targets_start_at_two(self):
        paragraphs = tuple((f"w{i}", f"w{i}") for i in range(8))
        doc = Document(paragraphs, (2, 4, 6), (("s1",), ("s2",), ("s3",)), False)
        vocab = build_vocab([doc])
        ex = encode_document(doc, vocab, 64, 32)
        assert ex.num_summaries == 3
        assert ex.tgt_section_of_token[0] == 2
        assert ex.tgt_section_of_token[-1] == 4
        assert ex.boundary_labels.sum() == 3

    def test_invariants_over_random_documents(self):
        docs = synth_generate(100, 12, 6, (1, 4), (1, 3), (2, 6), seed=21)
        vocab = build_vocab(docs)
        for doc in docs:
            ex = encode_document(doc, vocab, 512, 64)
            m, n = doc.num_paragraphs, doc.num_sections
            assert len(ex.xsep_positions) == m - 1
            assert ex.boundary_labels.sum() == n - 1
            assert np.all(np.diff(ex.src_section_of_token) >= 0)
            assert np.all(np.diff(ex.tgt_section_of_token) >= 0)
            k = len(doc.gold_summaries)
            assert (ex.tgt_ids == Y_SEP_ID).sum() == max(0, k - 1)
            assert ex.src_ids[ex.xsep_positions].tolist() == [X_SEP_ID] * (m - 1)
            assert UNK_ID not in ex.src_ids

    def test_truncation_drops_whole_paragraphs_and_relabels(self):
        paragraphs = (("a",) * 4, ("b",) * 4, ("c",) * 4)
        doc = Document(paragraphs, (1, 2), (("a",), ("b",), ("c",)), True)
        vocab = build_vocab([doc])
        ex = encode_document(doc, vocab, 9, 32)  # fits 2 paragraphs + 1 sep
        assert len(ex.src_ids) == 9
        assert ex.boundary_labels.tolist() == [1]
        assert ex.num_summaries == 2

    def test_first_paragraph_too_long_rejected(self):
        doc = Document((("a",) * 10,), (), (("a",),), True)
        vocab = build_vocab([doc])
        with pytest.raises(CorpusError, match="max_src_len"):
            encode_document(doc, vocab, 5, 32)

    def test_target_overflow_rejected(self):
        doc, vocab = self._small_vocab()
        with pytest.raises(CorpusError, match="max_tgt_len"):
            encode_document(doc, vocab, 64, 4)

    def test_truncate_document_noop_when_fits(self):
        doc, _ = self._small_vocab()
        assert truncate_document(doc, 64) is doc
