import random

import pytest
from hypothesis import given, strategies as st

import oracles
import suf_fixture
from suqa.errors import InvalidArgument, UndefinedMetric
from suqa.metrics import (
    MetricsReport,
    SufficiencyJudgement,
    aggregate_sufficiency,
    answer_f1,
    conciseness_metrics,
    effective_label,
    rouge2,
    xf1,
)
from suqa.rewards import reward_compression

SEQ = st.lists(st.sampled_from(list("abcd")), max_size=12)


def test_answer_f1_examples():
    assert answer_f1("Paris", "Paris") == {"f1": 1.0, "em": 1.0}
    assert answer_f1("Paris", "London") == {"f1": 0.0, "em": 0.0}
    assert answer_f1("Northern Lights", "the Northern Lights") == {"f1": 1.0, "em": 1.0}
    assert answer_f1("", "") == {"f1": 1.0, "em": 1.0}
    assert answer_f1("", "x") == {"f1": 0.0, "em": 0.0}


def test_answer_f1_multiset_overlap():
    # pred [a a b], gold [a b b]: overlap min-counts a:1 b:1 = 2 -> p=r=2/3
    assert answer_f1("a a b", "a b b")["f1"] == pytest.approx(2 / 3)


@given(st.text(alphabet="ab cd", max_size=12), st.text(alphabet="ab cd", max_size=12))
def test_answer_f1_symmetric(a, b):
    x, y = answer_f1(a, b), answer_f1(b, a)
    assert x["f1"] == pytest.approx(y["f1"])
    assert x["em"] == y["em"]
    if x["em"] == 1.0:
        assert x["f1"] == 1.0


def test_rouge2_examples():
    assert rouge2(list("abc"), list("abc")) == 1.0
    assert rouge2(list("abc"), list("xyz")) == 0.0
    assert rouge2(["a"], ["a"]) == 0.0
    cand, ref = list("abab"), list("abba")
    assert rouge2(cand, ref) == pytest.approx(oracles.rouge2(cand, ref), abs=1e-12)


@given(SEQ, SEQ)
def test_rouge2_matches_oracle(a, b):
    assert rouge2(a, b) == pytest.approx(oracles.rouge2(a, b), abs=1e-12)
    if len(a) >= 2:
        assert rouge2(a, a) == 1.0


def test_conciseness_examples():
    c = ["w"] * 100
    assert conciseness_metrics(["w"] * 25, c)["cm"] == 4.0
    full = conciseness_metrics(list("abcdef"), list("abcdef"))
    assert full == {"cm": 1.0, "abs": 0.0}
    with pytest.raises(UndefinedMetric):
        conciseness_metrics([], c)


@given(st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=10), st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=20))
def test_cm_and_compression_are_reciprocal(e, c):
    m = conciseness_metrics(e, c)
    if len(e) <= len(c):
        assert m["cm"] >= 1.0
        assert m["cm"] * (1 - reward_compression(e, c)) == pytest.approx(1.0, abs=1e-12)


def test_effective_label_rules():
    j = SufficiencyJudgement("w", "yes", "London", "Paris")
    assert effective_label(j) == "no"
    assert effective_label(SufficiencyJudgement("w", "likely", "Paris", "Paris")) == "yes"
    assert effective_label(SufficiencyJudgement("w", "unsure", "Paris", "Paris")) == "no"
    with pytest.raises(InvalidArgument):
        SufficiencyJudgement("w", "maybe", "Paris", "Paris")


@pytest.mark.parametrize("idx", range(30))
def test_sufficiency_fixture(idx):
    assert aggregate_sufficiency(suf_fixture.judgements(idx)) == suf_fixture.CASES[idx][2]


def test_aggregate_empty():
    with pytest.raises(InvalidArgument):
        aggregate_sufficiency([])


def test_xf1_examples():
    assert xf1([{"suf": 1, "f1": 0.8}, {"suf": 0, "f1": 1.0}]) == pytest.approx(0.4)
    assert xf1([{"suf": 1, "f1": 0.5}, {"suf": 1, "f1": 1.0}]) == pytest.approx(0.75)
    assert xf1([{"suf": 0, "f1": 0.5}]) == 0.0
    with pytest.raises(InvalidArgument):
        xf1([])


def test_xf1_bounded_and_monotone():
    rng = random.Random(0)
    for _ in range(500):
        rows = [{"suf": rng.randint(0, 1), "f1": rng.random()} for _ in range(rng.randint(1, 8))]
        mean_f1 = sum(r["f1"] for r in rows) / len(rows)
        x = xf1(rows)
        assert 0.0 <= x <= mean_f1 + 1e-12
        i = rng.randrange(len(rows))
        up = [dict(r) for r in rows]
        up[i]["suf"] = 1
        assert xf1(up) >= x


def test_metrics_report_means_and_optional_suf():
    rows = [
        {"id": "a", "f1": 1.0, "em": 1.0, "cm": 4.0, "abs": 0.2, "rg2": 0.5, "suf": None},
        {"id": "b", "f1": 0.5, "em": 0.0, "cm": None, "abs": None, "rg2": None, "suf": None},
    ]
    corpus = MetricsReport.from_rows(rows).corpus
    assert corpus["mean_f1"] == 0.75 and corpus["mean_cm"] == 4.0 and corpus["abs_percent"] == pytest.approx(20.0)
    assert "xf1" not in corpus
    rows[0]["suf"], rows[1]["suf"] = 1, 0
    corpus = MetricsReport.from_rows(rows).corpus
    assert corpus["xf1"] == 0.5 and corpus["suf_rate"] == 0.5
    assert corpus["xf1"] <= corpus["mean_f1"]
