"""EM estimation of per-prototype confusion matrices."""

import json

import numpy as np
import pytest

from comatch.errors import InsufficientDataError, NumericError
from comatch.model import (
    CategorySet,
    ConfusionMatrix,
    DecisionLog,
    DecisionRecord,
    SentenceRef,
)
from comatch.protoem import (
    ProtoEmConfig,
    e_step,
    expected_log_likelihood,
    initial_matrix,
    m_step,
    run_naive_em,
    run_protoem,
)
from comatch.simulation import (
    MachineSimConfig,
    confusion_from_noise,
    labels_from_confusions,
    machine_probabilities,
    frobenius_error,
    prototype_noise_rates,
)
from conftest import make_log


def record(h, probs, emb=(0.0, 0.0)):
    return DecisionRecord(SentenceRef("d", record.counter), np.asarray(emb), h, np.asarray(probs))


record.counter = 0


def records_of(pairs):
    out = []
    for i, (h, probs) in enumerate(pairs):
        out.append(DecisionRecord(SentenceRef("d", i), np.zeros(2), h, np.asarray(probs)))
    return out


class TestESstep:
    def test_identity_phi_gives_one_hot_posteriors(self):
        recs = records_of([(0, [0.6, 0.4]), (1, [0.3, 0.7])])
        posts = e_step(recs, ConfusionMatrix.identity(2))
        assert np.allclose(posts, [[1.0, 0.0], [0.0, 1.0]])

    def test_uniform_phi_returns_machine_probs(self):
        recs = records_of([(0, [0.6, 0.4]), (1, [0.3, 0.7])])
        posts = e_step(recs, ConfusionMatrix.uniform(2))
        assert np.allclose(posts, [[0.6, 0.4], [0.3, 0.7]])

    def test_single_record_hand_case(self):
        recs = records_of([(0, [0.6, 0.4])])
        posts = e_step(recs, ConfusionMatrix.from_list([[0.9, 0.2], [0.1, 0.8]]))
        assert posts[0] == pytest.approx([0.87097, 0.12903], abs=1e-5)

    def test_fallback_matches_fuse_rule(self):
        recs = records_of([(0, [0.0, 1.0])])
        posts = e_step(recs, ConfusionMatrix.identity(2))
        assert np.allclose(posts, [[0.0, 1.0]])


class TestMStep:
    def test_three_record_hand_case(self):
        recs = records_of([(0, [0.5, 0.5]), (0, [0.5, 0.5]), (1, [0.5, 0.5])])
        posts = np.array([[0.8, 0.2], [0.6, 0.4], [0.1, 0.9]])
        phi = m_step(recs, posts, alpha=0.0)
        assert phi.entries == pytest.approx(np.array([[0.9333, 0.4], [0.0667, 0.6]]), abs=1e-4)

    def test_one_hot_posteriors_at_human_labels_give_identity(self):
        recs = records_of([(0, [0.5, 0.5]), (1, [0.5, 0.5])])
        posts = np.array([[1.0, 0.0], [0.0, 1.0]])
        phi = m_step(recs, posts, alpha=0.0)
        assert np.allclose(phi.entries, np.eye(2))

    def test_empty_true_class_with_smoothing_gives_uniform_column(self):
        recs = records_of([(0, [0.5, 0.5]), (1, [0.5, 0.5])])
        posts = np.array([[1.0, 0.0], [1.0, 0.0]])  # no mass on class 1
        phi = m_step(recs, posts, alpha=1.0)
        assert phi.entries[:, 1] == pytest.approx([0.5, 0.5])

    def test_zero_column_with_alpha_zero_is_error(self):
        recs = records_of([(0, [0.5, 0.5])])
        posts = np.array([[1.0, 0.0]])
        with pytest.raises(NumericError):
            m_step(recs, posts, alpha=0.0)

    def test_columns_stochastic_for_any_alpha(self):
        rng = np.random.default_rng(0)
        recs = records_of([(int(rng.integers(2)), rng.dirichlet([1, 1])) for _ in range(50)])
        posts = rng.dirichlet([1, 1], size=50)
        for alpha in (0.0, 0.5, 1.0, 5.0):
            phi = m_step(recs, posts, alpha=alpha)
            assert np.allclose(phi.entries.sum(axis=0), 1.0, atol=1e-9)


class TestExpectedLogLikelihood:
    def test_identity_fit_is_zero(self):
        recs = records_of([(0, [0.5, 0.5]), (1, [0.5, 0.5])])
        posts = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert expected_log_likelihood(recs, posts, ConfusionMatrix.identity(2)) == pytest.approx(0.0)

    def test_uniform_phi_closed_form(self):
        recs = records_of([(0, [0.5, 0.5])] * 7)
        posts = np.full((7, 2), 0.5)
        value = expected_log_likelihood(recs, posts, ConfusionMatrix.uniform(2))
        assert value == pytest.approx(7 * np.log(0.5))

    def test_zero_entry_under_mass_is_error(self):
        recs = records_of([(0, [0.5, 0.5])])
        posts = np.array([[0.5, 0.5]])
        phi = ConfusionMatrix.from_list([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(NumericError):
            expected_log_likelihood(recs, posts, phi)


def synthetic_log(n_per_proto, seed, base_noise=0.1, prototypes=4, c=4, dim=8, accuracy=0.75):
    """Log drawn from the generative model with known per-prototype matrices."""
    rng = np.random.default_rng(seed)
    means = 10.0 * np.linalg.qr(rng.standard_normal((dim, prototypes)))[0].T
    rates = prototype_noise_rates(base_noise, prototypes, (0.25, 1.75))
    matrices = [confusion_from_noise(float(r), c, "drop_to_notkey") for r in rates]
    z = np.repeat(np.arange(prototypes), n_per_proto)
    y = rng.integers(0, c, size=z.size)
    emb = means[z] + rng.standard_normal((z.size, dim))
    h = labels_from_confusions(y, z, matrices, rng.random(z.size), rng.random(z.size))
    m = machine_probabilities(y, MachineSimConfig(target_accuracy=accuracy, seed=seed), c)
    names = tuple(["not_key"] + [f"k{i}" for i in range(1, c)])
    refs = [SentenceRef("log", i) for i in range(z.size)]
    log = DecisionLog(
        dimension=dim,
        category_set=CategorySet(names),
        records=tuple(DecisionRecord(refs[i], emb[i], int(h[i]), m[i]) for i in range(z.size)),
    )
    truth = {refs[i]: matrices[z[i]] for i in range(z.size)}
    embeddings = {refs[i]: emb[i] for i in range(z.size)}
    return log, truth, embeddings


class TestRunProtoem:
    def test_zero_iterations_returns_initialization(self, cats2):
        log = make_log(cats2, n=20, dimension=3, seed=1)
        cfg = ProtoEmConfig(prototypes=2, em_iterations=0, init_epsilon=0.3, seed=0)
        model = run_protoem(log, cfg)
        expected = initial_matrix(2, 0.3)
        for phi in model.confusions:
            assert phi == expected

    def test_initialization_shape(self):
        phi = initial_matrix(4, 0.2)
        assert np.allclose(np.diag(phi.entries), 0.85)
        assert np.allclose(phi.entries.sum(axis=0), 1.0)

    def test_p1_reduction_matches_naive_bitwise(self, cats2):
        log = make_log(cats2, n=40, dimension=3, seed=2)
        cfg = ProtoEmConfig(prototypes=1, em_iterations=10, seed=7)
        a = run_protoem(log, cfg)
        b = run_naive_em(log, ProtoEmConfig(prototypes=5, em_iterations=10, seed=7))
        assert a == b

    def test_naive_centroid_is_global_mean(self, cats2):
        log = make_log(cats2, n=30, dimension=3, seed=3)
        model = run_naive_em(log, ProtoEmConfig(em_iterations=5, seed=0))
        assert model.prototype_count == 1
        assert np.allclose(model.centroids[0], log.embedding_matrix().mean(axis=0))

    def test_determinism(self, cats4):
        log = make_log(cats4, n=60, dimension=4, seed=4)
        cfg = ProtoEmConfig(prototypes=3, em_iterations=15, seed=11)
        assert run_protoem(log, cfg) == run_protoem(log, cfg)

    def test_insufficient_records(self, cats4):
        log = make_log(cats4, n=7, dimension=4, seed=5)
        with pytest.raises(InsufficientDataError):
            run_protoem(log, ProtoEmConfig(prototypes=2, em_iterations=5, seed=0))

    def test_per_prototype_results_ignore_record_order(self, cats4):
        # Grouping is by nearest centroid; within a prototype, the EM
        # result depends only on the set of records, not their order.
        log = make_log(cats4, n=80, dimension=4, seed=6)
        records = list(log.records)
        perm = np.random.default_rng(0).permutation(len(records))
        shuffled = [records[i] for i in perm]
        phi = initial_matrix(cats4.count, 0.2)
        for _ in range(5):
            phi_a = m_step(records, e_step(records, phi), alpha=1.0)
            phi_b = m_step(shuffled, e_step(shuffled, phi), alpha=1.0)
            assert np.allclose(phi_a.entries, phi_b.entries, atol=1e-12)
            phi = phi_a

    def test_trace_file_schema(self, cats2, tmp_path):
        log = make_log(cats2, n=30, dimension=3, seed=8)
        trace_path = tmp_path / "trace.jsonl"
        run_protoem(log, ProtoEmConfig(prototypes=2, em_iterations=5, seed=0), trace_path=trace_path)
        rows = [json.loads(l) for l in trace_path.read_text().splitlines()]
        assert rows, "trace should not be empty"
        assert set(rows[0]) == {"prototype", "iter", "ell", "max_delta"}

    def test_em_monotone_surrogate_on_seeded_trace(self):
        log, _, _ = synthetic_log(150, seed=21)
        c = log.category_set.count
        records = list(log.records)
        phi = initial_matrix(c, 0.2)
        for _ in range(15):
            posts = e_step(records, phi)
            before = expected_log_likelihood(records, posts, phi)
            phi_next = m_step(records, posts, alpha=0.0)
            after = expected_log_likelihood(records, posts, phi_next)
            assert after >= before - 1e-9
            phi = phi_next

    def test_recovery_improves_with_scale(self):
        errors = []
        for n_per in (500, 5000):
            log, truth, embeddings = synthetic_log(n_per, seed=33)
            model = run_protoem(log, ProtoEmConfig(prototypes=4, em_iterations=40, seed=0))
            errors.append(frobenius_error(model, truth, embeddings))
        assert errors[1] < errors[0]

    def test_recovery_within_threshold_at_scale(self):
        log, truth, embeddings = synthetic_log(5000, seed=44)
        model = run_protoem(log, ProtoEmConfig(prototypes=4, em_iterations=40, seed=0))
        assert frobenius_error(model, truth, embeddings) < 0.15


class TestNaiveEmRecovery:
    def test_single_matrix_recovery_improves_with_scale(self):
        # Every record's human label drawn from one global matrix; the
        # single-prototype estimate homes in as the log grows.
        errors = []
        for n in (500, 5000):
            log, truth, embeddings = synthetic_log(n, seed=55, prototypes=1)
            model = run_naive_em(log, ProtoEmConfig(em_iterations=40, seed=0))
            errors.append(frobenius_error(model, truth, embeddings))
        assert errors[1] < errors[0]

    def test_sparse_prototype_warns_but_estimates(self, cats4):
        from comatch.errors import DegenerateDataWarning

        # Two tight far-apart clumps, one with fewer records than C.
        rng = np.random.default_rng(3)
        records = []
        for i in range(20):
            emb = np.array([0.0, 0.0]) + 0.01 * rng.standard_normal(2)
            records.append(DecisionRecord(SentenceRef("a", i), emb, int(rng.integers(4)), rng.dirichlet(np.ones(4))))
        for i in range(3):
            emb = np.array([50.0, 50.0]) + 0.01 * rng.standard_normal(2)
            records.append(DecisionRecord(SentenceRef("b", i), emb, int(rng.integers(4)), rng.dirichlet(np.ones(4))))
        log = DecisionLog(dimension=2, category_set=cats4, records=tuple(records))
        with pytest.warns(DegenerateDataWarning):
            model = run_protoem(log, ProtoEmConfig(prototypes=2, em_iterations=10, seed=1))
        assert model.prototype_count == 2
        for phi in model.confusions:
            assert np.allclose(phi.entries.sum(axis=0), 1.0, atol=1e-9)
