import numpy as np
import pytest

from comatch.model import (
    CategorySet,
    ConfusionMatrix,
    DecisionLog,
    DecisionRecord,
    Document,
    CasePair,
    Sentence,
    SentenceRef,
)


@pytest.fixture
def cats4() -> CategorySet:
    return CategorySet(("not_key", "crime_element", "dispute_focus", "evidence_point"))


@pytest.fixture
def cats2() -> CategorySet:
    return CategorySet(("not_key", "key"))


def make_doc(doc_id: str, texts_labels) -> Document:
    sentences = tuple(
        Sentence(doc_id=doc_id, index=i, text=t, true_label=l) for i, (t, l) in enumerate(texts_labels)
    )
    return Document(doc_id=doc_id, sentences=sentences)


@pytest.fixture
def small_pair() -> CasePair:
    source = make_doc("doc-a", [("alpha beta gamma", 1), ("delta epsilon", 0), ("zeta eta theta", 2)])
    target = make_doc("doc-b", [("alpha beta gamma", 1), ("iota kappa", 2), ("mu nu xi", 0)])
    return CasePair(source, target)


def make_log(cats: CategorySet, n: int = 60, dimension: int = 4, seed: int = 0) -> DecisionLog:
    rng = np.random.default_rng(seed)
    c = cats.count
    records = []
    for i in range(n):
        probs = rng.dirichlet(np.ones(c))
        records.append(
            DecisionRecord(
                SentenceRef("log-doc", i),
                rng.standard_normal(dimension),
                int(rng.integers(c)),
                probs,
            )
        )
    return DecisionLog(dimension=dimension, category_set=cats, records=tuple(records))
