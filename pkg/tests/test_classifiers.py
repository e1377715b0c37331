import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensaudit.classifiers import (
    ClassWeights,
    ConstantClassifier,
    LinearModel,
    RecordingClassifier,
    ReplayClassifier,
    TfidfStats,
    TrainingConfig,
    dump_model,
    load_model,
    note_hash,
    save_model,
    tfidf_embed,
    train_linear,
    weighted_cross_entropy,
)
from sensaudit.corpus import Note, SyntheticSpec, build_corpus, generate_synthetic
from sensaudit.errors import ReplayMissError, UndefinedMetricError
from sensaudit.metrics import auroc

LN2 = 0.6931471805599453


def test_tfidf_values():
    c = build_corpus([Note("1", ("hi", "there")), Note("2", ("hi", "hi"))])
    stats = TfidfStats.from_corpus(c)
    assert stats.vocab == ["hi", "there"]
    assert np.array_equal(tfidf_embed(Note("q", ("hi", "there")), stats), [0.0, LN2])
    # three copies of a token in half the documents weigh 3 ln 2
    v = tfidf_embed(Note("q", ("there",) * 3), stats)
    assert v[1] == pytest.approx(2.0794415416798357, abs=1e-12)


def test_tfidf_empty_and_oov():
    stats = TfidfStats.from_corpus(build_corpus([Note("1", ("a",)), Note("2", ("b",))]))
    assert not tfidf_embed(Note("q", ()), stats).any()
    assert not tfidf_embed(Note("q", ("zzz",)), stats).any()


def test_embed_matrix_matches_vector():
    c = generate_synthetic(SyntheticSpec(seed=1, num_notes=40))
    stats = TfidfStats.from_corpus(c)
    m = stats.embed_matrix(c.notes).toarray()
    for i, n in enumerate(c.notes[:10]):
        assert np.allclose(m[i], tfidf_embed(n, stats))


def test_constant_classifier():
    f = ConstantClassifier(0.3)
    assert f.predict(Note("x", ("a",))) == 0.3
    with pytest.raises(ValueError):
        ConstantClassifier(1.5)


def test_class_weights():
    cw = ClassWeights.from_labels([1, 0, 0, 0])
    assert cw.positive_weight == 0.75
    assert cw.negative_weight == 0.25


def test_weighted_loss_hand_value():
    z = np.array([0.0, 0.0])
    y = np.array([1, 0])
    cw = ClassWeights(0.75, 0.25)
    assert weighted_cross_entropy(z, y, cw) == pytest.approx((0.75 * LN2 + 0.25 * LN2) / 2)


def test_model_matches_dense_formula():
    c = generate_synthetic(SyntheticSpec(seed=2, num_notes=60, planted_signals=[("stroke", 0.5)], positive_rate=0.2))
    model = train_linear(c, TrainingConfig(epochs=20))
    for n in c.notes[:10]:
        z = float(model.weights @ tfidf_embed(n, model.stats)) + model.bias
        assert model.predict(n) == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-12)


@pytest.fixture(scope="module")
def trained():
    c = generate_synthetic(SyntheticSpec(seed=3, num_notes=800, planted_signals=[("stroke", 0.8)]))
    return c, train_linear(c, TrainingConfig(seed=3))


def test_training_learns_signal(trained):
    c, model = trained
    assert auroc(model.predict_many(c.notes), c.labels) > 0.8
    assert model._coef["stroke"] == max(model._coef.values())


def test_training_is_deterministic(trained):
    c, model = trained
    again = train_linear(c, TrainingConfig(seed=3))
    assert np.array_equal(model.weights, again.weights)
    assert model.bias == again.bias


def test_single_class_training_rejected():
    c = build_corpus([Note("1", ("a",), 0), Note("2", ("b",), 0)])
    with pytest.raises(UndefinedMetricError):
        train_linear(c)


def test_save_load_roundtrip(trained, tmp_path):
    c, model = trained
    save_model(model, tmp_path / "m.csv")
    again = load_model(tmp_path / "m.csv")
    assert again.predict_many(c.notes) == model.predict_many(c.notes)
    assert dump_model(again) == dump_model(model)


@given(st.lists(st.sampled_from(["a", "b", "c"]), max_size=6), st.lists(st.sampled_from(["a", "b", "c"]), max_size=6))
def test_note_hash_separates_token_sequences(a, b):
    assert (note_hash(a) == note_hash(b)) == (a == b)


def test_replay(tmp_path):
    notes = [Note("1", ("a", "b")), Note("2", ("c",))]
    rec = RecordingClassifier(ConstantClassifier(0.25))
    rec.predict_many(notes)
    p = tmp_path / "r.jsonl"
    p.write_text(rec.dump())
    rep = ReplayClassifier.from_file(p)
    assert rep.predict(notes[0]) == 0.25
    with pytest.raises(ReplayMissError):
        rep.predict(Note("3", ("zzz",)))


def test_replay_by_note_id(tmp_path):
    c = build_corpus([Note("1", ("a", "b"))])
    p = tmp_path / "r.jsonl"
    p.write_text('{"note_id": "1", "p": 0.6}\n')
    assert ReplayClassifier.from_file(p, c).predict(Note("other", ("a", "b"))) == 0.6


def test_separable_toy_reaches_full_training_accuracy():
    notes = [Note(f"p{i}", ("good",) * (1 + i % 3), 1) for i in range(10)]
    notes += [Note(f"n{i}", ("bad",) * (1 + i % 3), 0) for i in range(10)]
    c = build_corpus(notes)
    model = train_linear(c, TrainingConfig(epochs=500))
    assert all((model.predict(n) >= 0.5) == (n.label == 1) for n in c)
