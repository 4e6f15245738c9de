"""Reference matcher geometry and the matcher registry."""

import numpy as np
import pytest

from comatch.errors import ConfigError, DegenerateDataWarning
from comatch.matcher import (
    available_matchers,
    category_breakdown,
    get_matcher,
    match_pair,
    register_matcher,
)
from comatch.model import CasePair, FusedDecision, SentenceRef
from conftest import make_doc


def one_hot(c, label):
    v = np.zeros(c)
    v[label] = 1.0
    return v


def fused_for(doc, labels, c=3):
    return [FusedDecision(s.ref, one_hot(c, l)) for s, l in zip(doc.sentences, labels)]


def pair_with_embeddings(src_rows, tgt_rows):
    """Each row: (text, true_label, embedding)."""
    src = make_doc("src", [(t, l) for t, l, _ in src_rows])
    tgt = make_doc("tgt", [(t, l) for t, l, _ in tgt_rows])
    embeddings = {}
    for doc, rows in ((src, src_rows), (tgt, tgt_rows)):
        for s, (_, _, e) in zip(doc.sentences, rows):
            embeddings[s.ref] = np.asarray(e, dtype=float)
    return CasePair(src, tgt), embeddings


class TestMatchPair:
    def test_identical_documents_score_one_highest_relation(self):
        rows = [("a", 1, [1.0, 0.0]), ("b", 2, [0.0, 1.0])]
        pair, embeddings = pair_with_embeddings(rows, rows)
        labels = [1, 2]
        relation, score = match_pair(
            pair, fused_for(pair.source, labels), fused_for(pair.target, labels), embeddings
        )
        assert score == pytest.approx(1.0)
        assert relation == 2

    def test_orthogonal_key_embeddings_score_half(self):
        pair, embeddings = pair_with_embeddings(
            [("a", 1, [1.0, 0.0])], [("b", 1, [0.0, 1.0])]
        )
        relation, score = match_pair(
            pair, fused_for(pair.source, [1]), fused_for(pair.target, [1]), embeddings
        )
        assert score == pytest.approx(0.5)
        assert relation == 1  # one threshold (0.45) strictly below 0.5

    def test_all_not_key_on_one_side_scores_zero_with_diagnostic(self):
        pair, embeddings = pair_with_embeddings(
            [("a", 0, [1.0, 0.0])], [("b", 1, [1.0, 0.0])]
        )
        with pytest.warns(DegenerateDataWarning):
            relation, score = match_pair(
                pair, fused_for(pair.source, [0]), fused_for(pair.target, [1]), embeddings
            )
        assert (relation, score) == (0, 0.0)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(0)
        src_rows = [("s", int(rng.integers(3)), rng.standard_normal(4)) for _ in range(5)]
        tgt_rows = [("t", int(rng.integers(3)), rng.standard_normal(4)) for _ in range(4)]
        pair, embeddings = pair_with_embeddings(src_rows, tgt_rows)
        fs = fused_for(pair.source, [r[1] for r in src_rows])
        ft = fused_for(pair.target, [r[1] for r in tgt_rows])
        swapped = CasePair(pair.target, pair.source)
        a = match_pair(pair, fs, ft, embeddings)
        b = match_pair(swapped, ft, fs, embeddings)
        assert a == b

    def test_score_in_unit_interval_and_relation_monotone(self):
        rng = np.random.default_rng(1)
        thresholds = (0.45, 0.7)
        scored = []
        for _ in range(30):
            src_rows = [("s", int(rng.integers(3)), rng.standard_normal(4)) for _ in range(4)]
            tgt_rows = [("t", int(rng.integers(3)), rng.standard_normal(4)) for _ in range(4)]
            pair, embeddings = pair_with_embeddings(src_rows, tgt_rows)
            fs = fused_for(pair.source, [r[1] for r in src_rows])
            ft = fused_for(pair.target, [r[1] for r in tgt_rows])
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateDataWarning)
                relation, score = match_pair(pair, fs, ft, embeddings, thresholds=thresholds)
            assert 0.0 <= score <= 1.0
            assert relation == sum(1 for t in thresholds if t < score)
            scored.append((score, relation))
        scored.sort()
        relations = [r for _, r in scored]
        assert relations == sorted(relations)

    def test_raising_shared_key_mass_drives_score_up(self):
        # A sentence present in both documents gains posterior mass on its
        # category (taken out of not-key). Small increments can wiggle the
        # centroid geometry, but dominant shared mass pins the category
        # similarity at its maximum, and the average trend is upward.
        rng = np.random.default_rng(2)
        increments = []
        for trial in range(20):
            shared = rng.standard_normal(4)
            src_rows = [("x", 1, shared)] + [("s", 1, rng.standard_normal(4)) for _ in range(3)]
            tgt_rows = [("x", 1, shared)] + [("t", 1, rng.standard_normal(4)) for _ in range(3)]
            pair, embeddings = pair_with_embeddings(src_rows, tgt_rows)

            def fused_with_mass(doc, mass):
                out = []
                for i, s in enumerate(doc.sentences):
                    post = np.array([0.0, 0.25, 0.75]) if i else np.array([1.0 - mass, mass, 0.0])
                    out.append(FusedDecision(s.ref, post))
                return out

            scores = {}
            for mass in (0.1, 0.5, 0.9999):
                _, score = match_pair(
                    pair, fused_with_mass(pair.source, mass), fused_with_mass(pair.target, mass), embeddings
                )
                scores[mass] = score
            assert scores[0.9999] >= scores[0.1] - 1e-9
            assert scores[0.9999] >= scores[0.5] - 1e-9
            increments.append(scores[0.5] - scores[0.1])
        assert np.mean(increments) > 0.0

    def test_threshold_validation(self):
        pair, embeddings = pair_with_embeddings([("a", 1, [1.0, 0.0])], [("b", 1, [1.0, 0.0])])
        fs, ft = fused_for(pair.source, [1]), fused_for(pair.target, [1])
        with pytest.raises(ConfigError):
            match_pair(pair, fs, ft, embeddings, relation_count=3, thresholds=(0.5,))
        with pytest.raises(ConfigError):
            match_pair(pair, fs, ft, embeddings, thresholds=(0.7, 0.45))

    def test_breakdown_reports_all_key_categories(self):
        pair, embeddings = pair_with_embeddings(
            [("a", 1, [1.0, 0.0])], [("b", 1, [1.0, 0.0])]
        )
        rows = category_breakdown(fused_for(pair.source, [1]), fused_for(pair.target, [1]), embeddings)
        assert [r["category"] for r in rows] == [1, 2]
        assert rows[0]["similarity"] == pytest.approx(1.0)
        assert rows[1]["similarity"] is None


class TestRegistry:
    def test_reference_is_registered(self):
        assert "reference" in available_matchers()
        assert get_matcher("reference") is match_pair

    def test_unknown_matcher_names_alternatives(self):
        with pytest.raises(ConfigError, match="reference"):
            get_matcher("does-not-exist")

    def test_duplicate_registration_rejected(self):
        with pytest.raises(ConfigError):
            register_matcher("reference", match_pair)

    def test_two_registrations_both_selectable(self):
        def other(*args, **kwargs):
            return 0, 0.0

        register_matcher("test-null-scorer", other)
        try:
            assert get_matcher("test-null-scorer") is other
            assert get_matcher("reference") is match_pair
        finally:
            from comatch import matcher

            matcher._REGISTRY.pop("test-null-scorer", None)
