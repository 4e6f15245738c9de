"""Deterministic feature-hash embeddings and precomputed-vector import."""

import json

import numpy as np
import pytest

from comatch.embedding import (
    EmbeddingConfig,
    embed_corpus,
    embed_sentence,
    embed_text,
    export_embeddings,
    import_embeddings,
    window_text,
)
from comatch.errors import ConfigError, FormatError
from comatch.model import SentenceRef
from conftest import make_doc

CFG = EmbeddingConfig(dimension=64, context_window=1, seed=7)


def doc_with_texts(texts, doc_id="d"):
    return make_doc(doc_id, [(t, None) for t in texts])


class TestEmbedSentence:
    def test_deterministic_across_calls(self):
        doc = doc_with_texts(["the quick brown fox", "jumps over", "the lazy dog"])
        a = embed_sentence(doc, 1, CFG)
        b = embed_sentence(doc, 1, CFG)
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        doc = doc_with_texts(["a contract clause about payment", "another sentence"])
        v = embed_sentence(doc, 0, CFG)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)

    def test_empty_window_gives_zero_vector(self):
        doc = doc_with_texts([""])
        v = embed_sentence(doc, 0, CFG)
        assert not np.any(v)

    def test_index_out_of_range(self):
        doc = doc_with_texts(["only one"])
        with pytest.raises(IndexError):
            embed_sentence(doc, 1, CFG)

    def test_window_truncated_at_boundaries(self):
        doc = doc_with_texts(["first", "second", "third"])
        assert window_text(doc, 0, 2) == "first second third"
        assert window_text(doc, 2, 1) == "second third"

    def test_locality_changes_outside_window_do_not_matter(self):
        texts = ["s0", "s1", "s2", "s3", "s4"]
        base = doc_with_texts(texts)
        changed = doc_with_texts(["s0", "s1", "s2", "s3", "completely different"])
        # Sentence 4 is outside the radius-1 window of sentences 0..2.
        for i in (0, 1, 2):
            assert np.array_equal(embed_sentence(base, i, CFG), embed_sentence(changed, i, CFG))
        assert not np.array_equal(embed_sentence(base, 4, CFG), embed_sentence(changed, 4, CFG))

    def test_seed_salts_the_hash(self):
        a = embed_text("some legal sentence", EmbeddingConfig(dimension=64, seed=1))
        b = embed_text("some legal sentence", EmbeddingConfig(dimension=64, seed=2))
        assert not np.array_equal(a, b)


class TestEmbedCorpus:
    def test_one_vector_per_sentence(self):
        docs = [doc_with_texts(["a", "b", "c"], "x"), doc_with_texts(["d", "e", "f"], "y")]
        out = embed_corpus(docs, CFG)
        assert len(out) == 6
        assert SentenceRef("x", 0) in out and SentenceRef("y", 2) in out

    def test_document_order_does_not_matter(self):
        docs = [doc_with_texts(["a", "b"], "x"), doc_with_texts(["c", "d"], "y")]
        fwd = embed_corpus(docs, CFG)
        rev = embed_corpus(list(reversed(docs)), CFG)
        assert fwd.keys() == rev.keys()
        for ref in fwd:
            assert np.array_equal(fwd[ref], rev[ref])

    def test_matches_per_sentence_results(self):
        doc = doc_with_texts(["a b c", "d e f"], "x")
        out = embed_corpus([doc], CFG)
        assert np.array_equal(out[SentenceRef("x", 0)], embed_sentence(doc, 0, CFG))


class TestConfig:
    def test_dimension_floor(self):
        with pytest.raises(ConfigError):
            EmbeddingConfig(dimension=4)

    def test_ngram_range_order(self):
        with pytest.raises(ConfigError):
            EmbeddingConfig(ngram_range=(3, 1))


class TestImportExport:
    def _write(self, path, rows):
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")

    def test_happy_path(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        self._write(path, [{"doc_id": "d", "index": i, "vector": [0.0, 1.0, 2.0, float(i)]} for i in range(3)])
        out = import_embeddings(path, 4)
        assert len(out) == 3

    def test_dimension_mismatch_names_line(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        self._write(path, [
            {"doc_id": "d", "index": 0, "vector": [0.0, 1.0, 2.0, 3.0]},
            {"doc_id": "d", "index": 1, "vector": [0.0, 1.0, 2.0]},
        ])
        with pytest.raises(FormatError, match="line 2"):
            import_embeddings(path, 4)

    def test_duplicate_ref_rejected(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        self._write(path, [
            {"doc_id": "d", "index": 0, "vector": [1.0, 0.0]},
            {"doc_id": "d", "index": 0, "vector": [0.0, 1.0]},
        ])
        with pytest.raises(FormatError, match="duplicate"):
            import_embeddings(path, 2)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        rng = np.random.default_rng(0)
        embeddings = {SentenceRef("d", i): rng.standard_normal(5) for i in range(4)}
        export_embeddings(embeddings, path)
        loaded = import_embeddings(path, 5)
        assert loaded.keys() == embeddings.keys()
        for ref in embeddings:
            assert np.allclose(loaded[ref], embeddings[ref])

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        path.write_text('{"doc_id": "d", "index": 0, "vector": [1.0, 0.0]}\nnot json\n')
        with pytest.raises(FormatError, match="line 2"):
            import_embeddings(path, 2)
