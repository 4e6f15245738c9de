"""Fusion math against a brute-force oracle, plus temperature scaling."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from comatch.errors import CompletenessError, ConfigError, InsufficientDataError, NumericError
from comatch.fusion import (
    CalibrationConfig,
    apply_temperature,
    fit_temperature,
    fuse,
    fuse_document,
    nll_at_temperature,
    softmax,
)
from comatch.model import (
    ConfusionMatrix,
    HumanDecision,
    MachineDecision,
    PrototypeModel,
    SentenceRef,
)
from conftest import make_doc


def oracle_fuse(machine_probs, human_label, phi_rows):
    """Independent brute-force posterior: elementwise product of the
    human-response likelihood row with the machine vector, renormalized
    with plain Python floats."""
    row = phi_rows[human_label]
    weighted = [row[j] * machine_probs[j] for j in range(len(machine_probs))]
    denom = sum(weighted)
    if denom < 1e-12:
        return list(machine_probs), True
    return [w / denom for w in weighted], False


def random_instance(rng, c):
    phi = rng.dirichlet(np.ones(c), size=c).T  # column-stochastic
    m = rng.dirichlet(np.ones(c))
    h = int(rng.integers(c))
    return phi, m, h


REF = SentenceRef("d", 0)


class TestFuseOracle:
    def test_matches_brute_force_on_seeded_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            c = int(rng.choice([2, 4]))
            phi, m, h = random_instance(rng, c)
            fused = fuse(MachineDecision(REF, m), HumanDecision(REF, h), ConfusionMatrix(phi))
            expected, fallback = oracle_fuse(m.tolist(), h, phi.tolist())
            assert fused.fallback_used == fallback
            assert np.max(np.abs(fused.posterior - np.asarray(expected))) <= 1e-12

    def test_hand_derived_case(self):
        phi = ConfusionMatrix.from_list([[0.9, 0.2], [0.1, 0.8]])
        fused = fuse(MachineDecision(REF, np.array([0.6, 0.4])), HumanDecision(REF, 0), phi)
        assert fused.posterior == pytest.approx([0.87097, 0.12903], abs=1e-5)

    def test_identity_phi_is_one_hot_at_human_label(self):
        fused = fuse(
            MachineDecision(REF, np.array([0.3, 0.7])),
            HumanDecision(REF, 1),
            ConfusionMatrix.identity(2),
        )
        assert fused.posterior == pytest.approx([0.0, 1.0])
        assert fused.argmax_label == 1

    def test_uniform_phi_passes_machine_through(self):
        m = np.array([0.1, 0.2, 0.3, 0.4])
        fused = fuse(MachineDecision(REF, m), HumanDecision(REF, 2), ConfusionMatrix.uniform(4))
        assert fused.posterior == pytest.approx(m, abs=1e-15)

    def test_zero_denominator_fallback(self):
        # Human label row is orthogonal to the machine's support.
        phi = ConfusionMatrix.from_list([[1.0, 0.0], [0.0, 1.0]])
        fused = fuse(MachineDecision(REF, np.array([0.0, 1.0])), HumanDecision(REF, 0), phi)
        assert fused.fallback_used
        assert fused.posterior == pytest.approx([0.0, 1.0])

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, derandomize=True)
    def test_posterior_is_distribution(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.choice([2, 3, 4]))
        phi, m, h = random_instance(rng, c)
        fused = fuse(MachineDecision(REF, m), HumanDecision(REF, h), ConfusionMatrix(phi))
        assert fused.posterior.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(fused.posterior >= 0) and np.all(fused.posterior <= 1)

    @given(st.integers(0, 10_000), st.floats(0.1, 10.0))
    @settings(max_examples=50, derandomize=True)
    def test_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        phi, m, h = random_instance(rng, 4)
        base = fuse(MachineDecision(REF, m), HumanDecision(REF, h), ConfusionMatrix(phi))
        scaled = m * scale
        scaled /= scaled.sum()
        again = fuse(MachineDecision(REF, scaled), HumanDecision(REF, h), ConfusionMatrix(phi))
        assert np.allclose(base.posterior, again.posterior, atol=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, derandomize=True)
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        c = 4
        phi, m, h = random_instance(rng, c)
        perm = rng.permutation(c)
        inv = np.argsort(perm)
        base = fuse(MachineDecision(REF, m), HumanDecision(REF, h), ConfusionMatrix(phi))
        permuted = fuse(
            MachineDecision(REF, m[inv]),
            HumanDecision(REF, int(perm[h])),
            ConfusionMatrix(phi[np.ix_(inv, inv)]),
        )
        assert np.allclose(base.posterior, permuted.posterior[perm], atol=1e-12)


class TestTemperature:
    def test_closed_form_softmax(self):
        probs = apply_temperature(np.array([2.0, 0.0]), 2.0)
        assert probs == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_identity_temperature_is_plain_softmax(self):
        logits = np.array([1.0, -1.0, 0.5])
        assert np.allclose(apply_temperature(logits, 1.0), softmax(logits))

    def test_large_temperature_approaches_uniform(self):
        probs = apply_temperature(np.array([5.0, 0.0]), 1e6)
        assert probs == pytest.approx([0.5, 0.5], abs=1e-5)

    def test_non_finite_logits_rejected(self):
        with pytest.raises(NumericError):
            apply_temperature(np.array([np.nan, 0.0]), 1.0)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ConfigError):
            apply_temperature(np.array([1.0, 0.0]), 0.0)


def calibrated_logits(rng, n, c):
    """Labels drawn from the softmax of the logits themselves, so T = 1 is
    the population optimum."""
    logits = rng.standard_normal((n, c)) * 2.0
    probs = softmax(logits)
    labels = np.array([rng.choice(c, p=p) for p in probs])
    return logits, labels


class TestFitTemperature:
    def test_calibrated_logits_fit_near_one(self):
        rng = np.random.default_rng(11)
        logits, labels = calibrated_logits(rng, 4000, 4)
        assert fit_temperature(logits, labels) == pytest.approx(1.0, abs=0.1)

    def test_scaled_logits_fit_near_scale(self):
        rng = np.random.default_rng(13)
        logits, labels = calibrated_logits(rng, 4000, 4)
        fitted = fit_temperature(logits * 3.0, labels)
        assert fitted == pytest.approx(3.0, abs=0.3)

    def test_never_worse_than_unit_temperature(self):
        rng = np.random.default_rng(17)
        for seed in range(5):
            sub = np.random.default_rng(seed)
            logits = sub.standard_normal((200, 3)) * sub.uniform(0.5, 4.0)
            labels = sub.integers(0, 3, size=200)
            fitted = fit_temperature(logits, labels)
            assert nll_at_temperature(logits, labels, fitted) <= nll_at_temperature(logits, labels, 1.0) + 1e-12

    def test_insufficient_examples(self):
        with pytest.raises(InsufficientDataError):
            fit_temperature(np.zeros((5, 2)), np.zeros(5, dtype=int))

    def test_bounds_must_be_ordered(self):
        with pytest.raises(ConfigError):
            CalibrationConfig(fit_bounds=(2.0, 1.0))


class TestFuseDocument:
    def _setup(self, confusions):
        doc = make_doc("d", [("alpha one", 1), ("beta two", 0)])
        embeddings = {
            SentenceRef("d", 0): np.array([0.0, 0.0, 1.0]),
            SentenceRef("d", 1): np.array([1.0, 0.0, 0.0]),
        }
        centroids = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])[: len(confusions)]
        model = PrototypeModel(centroids=centroids, confusions=confusions, config={})
        machine = [
            MachineDecision(SentenceRef("d", 0), np.array([0.5, 0.5])),
            MachineDecision(SentenceRef("d", 1), np.array([0.5, 0.5])),
        ]
        human = [
            HumanDecision(SentenceRef("d", 0), 0),
            HumanDecision(SentenceRef("d", 1), 0),
        ]
        return doc, machine, human, model, embeddings

    def test_single_prototype_reduces_to_plain_fuse(self):
        phi = ConfusionMatrix.from_list([[0.9, 0.2], [0.1, 0.8]])
        doc, machine, human, _, embeddings = self._setup((phi,))
        model = PrototypeModel(centroids=np.zeros((1, 3)) + 0.1, confusions=(phi,), config={})
        fused = fuse_document(doc, machine, human, model, embeddings)
        for f, m, h in zip(fused, machine, human):
            assert f == fuse(m, h, phi)

    def test_prototype_specific_posteriors_diverge(self):
        trusting = ConfusionMatrix.from_list([[0.99, 0.01], [0.01, 0.99]])
        doubting = ConfusionMatrix.from_list([[0.6, 0.4], [0.4, 0.6]])
        doc, machine, human, model, embeddings = self._setup((trusting, doubting))
        fused = fuse_document(doc, machine, human, model, embeddings)
        # Same (machine, human) everywhere; only the prototype differs.
        assert not np.allclose(fused[0].posterior, fused[1].posterior)

    def test_perfect_human_all_not_key(self):
        identity = ConfusionMatrix.identity(2)
        doc, machine, human, model, embeddings = self._setup((identity, identity))
        fused = fuse_document(doc, machine, human, model, embeddings)
        assert all(f.argmax_label == 0 for f in fused)

    def test_missing_decision_is_completeness_error(self):
        phi = ConfusionMatrix.identity(2)
        doc, machine, human, model, embeddings = self._setup((phi, phi))
        with pytest.raises(CompletenessError):
            fuse_document(doc, machine[:1], human, model, embeddings)
        with pytest.raises(CompletenessError):
            fuse_document(doc, machine, human[:1], model, embeddings)
