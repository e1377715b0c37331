import csv

import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from sensaudit.errors import UndefinedMetricError
from sensaudit.stats import combine_raters, pearson, rank_tokens, read_reference, spearman, spearman_report


def test_strict_ranking_breaks_ties_by_token():
    r = rank_tokens({"b": 0.5, "a": 0.5, "c": 0.9})
    assert r.entries == {"c": 1.0, "a": 2.0, "b": 3.0}


def test_competition_and_average():
    s = {"a": 5, "b": 4, "c": 3, "d": 3, "e": 3, "f": 1}
    assert list(rank_tokens(s, "competition").entries.values()) == [1, 2, 3, 3, 3, 6]
    assert rank_tokens(s, "average").entries["d"] == 4.0


def test_nan_rejected():
    with pytest.raises(ValueError, match="x"):
        rank_tokens({"x": float("nan"), "y": 1.0})


score_maps = st.dictionaries(st.sampled_from("abcdefghij"), st.sampled_from([0.0, 0.1, 0.5, 0.9, 1.0]),
                             min_size=1)


@given(score_maps)
def test_strict_ranks_are_permutation(scores):
    r = rank_tokens(scores)
    assert sorted(r.entries.values()) == [float(i) for i in range(1, len(scores) + 1)]
    for a in scores:
        for b in scores:
            if scores[a] > scores[b]:
                assert r[a] < r[b]


@given(score_maps)
def test_average_ranks_match_scipy(scores):
    toks = sorted(scores)
    ours = rank_tokens(scores, "average", descending=False)
    ref = scipy.stats.rankdata([scores[t] for t in toks], method="average")
    assert [ours[t] for t in toks] == list(ref)


def test_identical_and_reversed():
    a = {"x": 1, "y": 2, "z": 3}
    assert spearman(a, a) == 1.0
    assert spearman(a, {"x": 3, "y": 2, "z": 1}) == -1.0


def test_mismatched_tokens_listed():
    with pytest.raises(ValueError, match=r"\['w', 'z'\]"):
        spearman({"x": 1, "y": 2, "z": 3}, {"x": 1, "y": 2, "w": 3})


def test_too_few_tokens():
    with pytest.raises(UndefinedMetricError):
        spearman({"x": 1}, {"x": 1})


def test_pearson_zero_variance():
    with pytest.raises(UndefinedMetricError):
        pearson([1, 1, 1], [1, 2, 3])


perm_pairs = st.integers(2, 12).flatmap(lambda n: st.tuples(st.permutations(range(1, n + 1)),
                                                            st.permutations(range(1, n + 1))))


@given(perm_pairs)
def test_variants_agree_without_ties(pair):
    a = {f"t{i}": r for i, r in enumerate(pair[0])}
    b = {f"t{i}": r for i, r in enumerate(pair[1])}
    rep = spearman_report(a, b)
    assert rep["paper_formula"] == pytest.approx(rep["tie_corrected"], abs=1e-12)
    assert rep["paper_formula"] == pytest.approx(scipy.stats.spearmanr(pair[0], pair[1])[0], abs=1e-12)
    assert -1.0 <= rep["paper_formula"] <= 1.0


@pytest.mark.filterwarnings("ignore::scipy.stats.ConstantInputWarning")
@given(st.dictionaries(st.sampled_from("abcdefgh"), st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=3))
def test_tie_corrected_matches_scipy(pairs):
    a = {t: v[0] for t, v in pairs.items()}
    b = {t: v[1] for t, v in pairs.items()}
    toks = sorted(pairs)
    ref = scipy.stats.spearmanr([a[t] for t in toks], [b[t] for t in toks])[0]
    if ref != ref:  # constant input
        with pytest.raises(UndefinedMetricError):
            spearman(a, b, "tie_corrected")
    else:
        assert spearman(a, b, "tie_corrected") == pytest.approx(ref, abs=1e-12)


grid = st.integers(-10**6, 10**6).map(lambda v: v / 1000)


@given(st.lists(st.tuples(grid, grid), min_size=3, max_size=30))
def test_pearson_matches_scipy(points):
    xs, ys = zip(*points)
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    ref = scipy.stats.pearsonr(xs, ys)[0]
    assert pearson(xs, ys) == pytest.approx(ref, abs=1e-9)


def test_combine_raters_lowest_mean_first():
    ref = combine_raters({"r1": {"a": 1, "b": 2, "c": 3}, "r2": {"a": 2, "b": 1, "c": 3}})
    assert ref.combined.entries == {"a": 1.0, "b": 1.0, "c": 3.0}
    assert ref.mean_score["a"] == 1.5


def test_combine_raters_missing_score():
    with pytest.raises(ValueError, match="'c'"):
        combine_raters({"r1": {"a": 1, "c": 2}, "r2": {"a": 1}})


def test_read_reference_formats():
    r = read_reference("token,rater_id,score\na,r1,1\nb,r1,2\na,r2,1\nb,r2,3\n")
    assert r.entries == {"a": 1.0, "b": 2.0}
    assert read_reference("token,rank\nx,2\ny,1\n").entries == {"x": 2.0, "y": 1.0}


def test_fixture_frequency_bias_oracle(fixtures_dir):
    # frozen from scipy.stats.pearsonr over the same 13 rows
    with open(fixtures_dir / "lm_multiswap_13_words.csv") as fh:
        rows = list(csv.DictReader(fh))
    r = pearson([float(x["test_freq"]) for x in rows], [float(x["rank"]) for x in rows])
    assert r == pytest.approx(-0.4067680263250371, abs=1e-12)


def test_fixture_scores_rank_by_descending_score(fixtures_dir):
    with open(fixtures_dir / "lm_multiswap_13_words.csv") as fh:
        rows = list(csv.DictReader(fh))
    ranking = rank_tokens({r["word"]: float(r["score"]) for r in rows})
    off = {r["word"] for r in rows if ranking[r["word"]] != float(r["rank"])}
    # the fixture lists congenital above thinner although thinner scores higher
    assert off == {"congenital", "thinner"}
    assert ranking["thinner"] == 12.0 and ranking["congenital"] == 13.0
