import csv
import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensaudit.classifiers import ConstantClassifier, FunctionClassifier, TrainingConfig, train_linear
from sensaudit.corpus import Note, SyntheticSpec, build_corpus, generate_synthetic
from sensaudit.errors import ClassifierCallError, UndefinedScoreError
from sensaudit.perturbation import FilterSet, PerturbationFilter, SwapScheme, explicit_filter
from sensaudit.sensitivity import (
    FilterSpec,
    audit,
    delta,
    frequency_bias,
    note_sensitivity,
    overall_sensitivity,
    read_report_csv,
)


def count_of(tok, scale=0.1):
    return FunctionClassifier(lambda toks: min(1.0, scale * toks.count(tok)), f"count:{tok}")


to_mom = PerturbationFilter("explicit", replacement="mom")
H_mom = FilterSet.of([to_mom])


def test_delta_hand_values():
    f = count_of("dad")
    n = Note("x", ("dad", "and", "dad"))
    assert delta(f, n, "dad", to_mom, "one_swap") == pytest.approx(0.1)
    assert delta(f, n, "dad", to_mom, "multi_swap") == pytest.approx(0.2)
    assert delta(f, Note("y", ("mom",)), "dad", to_mom) == 0.0


def test_note_sensitivity_averages_filters():
    f = count_of("dad")
    H = FilterSet.of([to_mom, explicit_filter({"dad": "dad"})])
    assert note_sensitivity(f, Note("x", ("dad",)), "dad", H) == pytest.approx(0.05)


def test_overall_averages_notes_containing_u():
    f = count_of("dad")
    notes = [Note("1", ("dad",)), Note("2", ("dad", "dad")), Note("3", ("mom",))]
    assert overall_sensitivity(f, notes, "dad", H_mom, "multi_swap") == pytest.approx(0.15)


def test_overall_undefined_without_support():
    with pytest.raises(UndefinedScoreError):
        overall_sensitivity(count_of("dad"), [Note("1", ("a",))], "dad", H_mom)


@given(st.lists(st.lists(st.sampled_from(["dad", "a", "b"]), max_size=6), min_size=1, max_size=6),
       st.floats(0.0, 1.0), st.sampled_from(list(SwapScheme)))
def test_constant_classifier_has_zero_sensitivity(token_lists, c, scheme):
    notes = [Note(str(i), tuple(t)) for i, t in enumerate(token_lists)]
    for n in notes:
        assert note_sensitivity(ConstantClassifier(c), n, "dad", H_mom, scheme) == 0.0


@given(st.lists(st.sampled_from(["dad", "a"]), max_size=8), st.sampled_from(list(SwapScheme)))
def test_scores_lie_in_unit_interval(toks, scheme):
    s = note_sensitivity(count_of("dad", 0.3), Note("x", tuple(toks)), "dad", H_mom, scheme)
    assert 0.0 <= s <= 1.0


@pytest.fixture(scope="module")
def audited():
    c = generate_synthetic(SyntheticSpec(seed=5, num_notes=300, planted_signals=[("stroke", 0.8)],
                                         positive_rate=0.15))
    model = train_linear(c, TrainingConfig(seed=5, epochs=100))
    toks = ["stroke", "w0001", "w0010", "w0050", "nowhere"]
    return c, model, toks, audit(model, c, toks, FilterSpec(seed=5))


def test_audit_matches_direct_computation(audited):
    c, model, toks, rep = audited
    from sensaudit.perturbation import (CooccurrenceProvider, build_context_filters, build_onegram_filters,
                                        build_uniform_filters)
    from sensaudit.corpus import subset_containing

    u = "w0010"
    uni = build_uniform_filters(c.vocabulary, 5, 5)
    one = build_onegram_filters(subset_containing(c, u), u, 5)
    prov = CooccurrenceProvider(c)
    H = lambda n: FilterSet.concat(uni, one, build_context_filters(prov, n, n.first_index(u), 5))  # noqa: E731
    assert rep.overall[u] == pytest.approx(overall_sensitivity(model, c, u, H), abs=1e-12)


def test_audit_report_shape(audited):
    c, model, toks, rep = audited
    assert rep.unsupported == ["nowhere"]
    assert sorted(rep.ranks.values()) == [1.0, 2.0, 3.0, 4.0]
    assert rep.ranks["stroke"] == 1.0
    assert rep.filter_count["stroke"] == 15
    assert rep.support["stroke"] == c.doc_frequency["stroke"]
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert [r["token"] for r in rows] == toks
    assert rows[-1]["overall"] == "unsupported"
    assert read_report_csv(rep.to_csv(), is_text=True)["stroke"]["rank"] == 1.0
    objs = [json.loads(line) for line in rep.to_jsonl().splitlines()]
    assert objs[0]["type"] == "report"
    note_lines = [o for o in objs if o["type"] == "note"]
    assert len(note_lines) == sum(rep.support.values())
    assert all(len(o["deltas"]) == 15 for o in note_lines)


def test_pooled_is_weighted_mean_of_families(audited):
    c, model, toks, rep = audited
    # with equal family sizes the pooled score is the plain family mean
    for u in rep.scored_tokens:
        fams = [rep.per_family[(u, f)] for f in ("uniform", "one_gram", "context")]
        assert rep.overall[u] == pytest.approx(sum(fams) / 3, abs=1e-12)


def test_workers_bit_identical(audited):
    c, model, toks, rep = audited
    rep8 = audit(model, c, toks, FilterSpec(seed=5), workers=8)
    assert rep8.to_csv() == rep.to_csv()
    assert rep8.to_jsonl() == rep.to_jsonl()


def test_subsampling_is_seeded(audited):
    c, model, toks, _ = audited
    a = audit(model, c, toks, FilterSpec(seed=5, max_notes=3, max_filters=4))
    b = audit(model, c, toks, FilterSpec(seed=5, max_notes=3, max_filters=4))
    assert a.to_jsonl() == b.to_jsonl()
    assert max(a.support.values()) == 3
    assert max(a.filter_count.values()) == 4


def test_classifier_error_carries_context():
    c = build_corpus([Note("1", ("dad", "x")), Note("2", ("x", "y"))])
    f = FunctionClassifier(lambda toks: 2.0 if "mom" in toks else 0.5)
    with pytest.raises(ClassifierCallError) as ei:
        audit(f, c, ["dad"], FilterSpec(uniform=0, one_gram=0, context=1,
                                        provider=type("P", (), {"replacements": lambda s, t, i, k: ["mom"] * k})()))
    assert ei.value.note_id == "1"
    assert ei.value.token == "dad"


def test_frequency_bias_sign():
    # sensitive rare tokens take the top ranks, so frequency rises with rank number
    c = build_corpus([Note(str(i), ("common",) * 5 + (("rare",) if i == 0 else ("mid",) if i < 3 else ()))
                      for i in range(6)])
    f = FunctionClassifier(lambda toks: 0.9 if "rare" in toks else 0.6 if "mid" in toks else 0.5)
    rep = audit(f, c, ["common", "mid", "rare"], FilterSpec(uniform=0, one_gram=1, context=0))
    assert rep.ranks == {"rare": 1.0, "mid": 2.0, "common": 3.0}
    assert frequency_bias(rep, c) > 0
