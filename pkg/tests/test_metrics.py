import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgaudit.metrics import (
    ConfusionMatrix,
    EmptyMatrixError,
    accuracy,
    auc,
    class_metrics,
    f1_macro,
    kappa,
    kappa_band,
    kappa_from_pairs,
    macro_aggregate,
)

from oracles import matrix_to_labels, metrics_from_labels


def test_matrix_rejects_negative_counts():
    with pytest.raises(ValueError):
        ConfusionMatrix(tp=-1)


def test_matrix_addition_is_elementwise():
    total = ConfusionMatrix(1, 2, 3, 4, invalid=1) + ConfusionMatrix(5, 6, 7, 8, invalid=2)
    assert (total.tp, total.fp, total.fn, total.tn, total.invalid) == (6, 8, 10, 12, 3)


def test_perfect_matrix_scores_one_everywhere():
    m = ConfusionMatrix(tp=10, fp=0, fn=0, tn=10)
    assert accuracy(m) == 1.0
    assert auc(m) == 1.0
    assert f1_macro(m) == 1.0
    assert kappa(m) == 1.0


def test_hand_computed_matrix():
    # 20 examples: 11 gold positive, 9 gold negative.
    m = ConfusionMatrix(tp=8, fp=2, fn=3, tn=7)
    assert accuracy(m) == 0.75
    assert auc(m) == pytest.approx((8 / 11 + 7 / 9) / 2, abs=1e-12)
    assert f1_macro(m) == pytest.approx((16 / 21 + 14 / 19) / 2, abs=1e-12)
    assert kappa(m) == pytest.approx(0.5, abs=0)  # exactly 0.5


def test_balanced_symmetric_matrix_kappa_is_two_acc_minus_one():
    m = ConfusionMatrix(tp=83, fp=17, fn=17, tn=83)
    assert accuracy(m) == pytest.approx(0.830, abs=1e-12)
    assert auc(m) == pytest.approx(0.830, abs=1e-12)
    assert kappa(m) == pytest.approx(0.660, abs=1e-9)


def test_empty_matrix_raises():
    with pytest.raises(EmptyMatrixError):
        accuracy(ConfusionMatrix())
    with pytest.raises(EmptyMatrixError):
        kappa(ConfusionMatrix(invalid=3))


def test_absent_rates_when_a_gold_class_is_empty():
    m = ConfusionMatrix(tp=0, fp=3, fn=0, tn=7)  # no gold positives
    assert auc(m) is None
    assert accuracy(m) == 0.7
    # positive class still appears in predictions, so macro F1 is defined
    assert f1_macro(m) == pytest.approx((0.0 + 14 / 17) / 2, abs=1e-12)


def test_f1_skips_class_absent_from_gold_and_predictions():
    m = ConfusionMatrix(tp=0, fp=0, fn=0, tn=5)
    assert f1_macro(m) == 1.0  # only the negative class is defined


def test_kappa_degenerate_marginals_is_zero():
    m = ConfusionMatrix(tp=5, fp=0, fn=0, tn=0)
    assert kappa(m) == 0.0


def test_kappa_from_pairs_matches_hand_computation():
    # 10 pairs, 7 agreements, first labeler balanced 5/5 -> p_e = 0.5.
    pairs = (
        [("positive", "positive")] * 4
        + [("negative", "negative")] * 3
        + [("positive", "negative")] * 1
        + [("negative", "positive")] * 2
    )
    result = kappa_from_pairs(pairs)
    assert result.value == pytest.approx(0.4, abs=1e-12)
    assert not result.degenerate


def test_kappa_from_pairs_degenerate_flag():
    result = kappa_from_pairs([("positive", "positive")] * 4)
    assert result.value == 0.0
    assert result.degenerate


def test_kappa_from_pairs_rejects_other_labels():
    with pytest.raises(ValueError):
        kappa_from_pairs([("yes", "no")])


@pytest.mark.parametrize(
    "value,band",
    [
        (-0.2, "none"),
        (0.0, "none"),
        (0.1, "slight"),
        (0.25, "fair"),
        (0.454, "moderate"),
        (0.660, "substantial"),
        (0.788, "substantial"),
        (0.95, "almost perfect"),
    ],
)
def test_kappa_bands(value, band):
    assert kappa_band(value) == band


matrices = st.tuples(
    st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50)
).filter(lambda m: (m[0] + m[2]) > 0 and (m[1] + m[3]) > 0)


@given(matrices)
def test_label_swap_symmetry(counts):
    tp, fp, fn, tn = counts
    m = ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)
    swapped = ConfusionMatrix(tp=tn, fp=fn, fn=fp, tn=tp)
    assert accuracy(m) == pytest.approx(accuracy(swapped), abs=1e-12)
    assert auc(m) == pytest.approx(auc(swapped), abs=1e-12)
    assert kappa(m) == pytest.approx(kappa(swapped), abs=1e-12)
    assert f1_macro(m) == pytest.approx(f1_macro(swapped), abs=1e-12)


@given(matrices)
def test_metrics_match_label_list_oracle(counts):
    tp, fp, fn, tn = counts
    m = ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)
    gold, pred = matrix_to_labels(tp, fp, fn, tn)
    expected = metrics_from_labels(gold, pred)
    assert accuracy(m) == pytest.approx(expected["accuracy"], abs=1e-12)
    if expected["auc"] is None:
        assert auc(m) is None
    else:
        assert auc(m) == pytest.approx(expected["auc"], abs=1e-12)
    if expected["f1_macro"] is None:
        assert f1_macro(m) is None
    else:
        assert f1_macro(m) == pytest.approx(expected["f1_macro"], abs=1e-12)
    assert kappa(m) == pytest.approx(expected["kappa"], abs=1e-12)


class TestMacroAggregate:
    def test_mean_of_two_f1_values(self):
        # per-class macro F1 of 0.8 and 0.6 must average to 0.7
        per_class = {
            "a": class_metrics(ConfusionMatrix(tp=4, fp=1, fn=1, tn=4)),
            "b": class_metrics(ConfusionMatrix(tp=3, fp=2, fn=2, tn=3)),
        }
        assert per_class["a"].f1_macro == pytest.approx(0.8, abs=1e-12)
        assert per_class["b"].f1_macro == pytest.approx(0.6, abs=1e-12)
        aggregate = macro_aggregate(per_class)
        assert aggregate.macro.f1_macro == pytest.approx(0.7, abs=1e-12)

    def test_single_class_macro_equals_class(self):
        metrics = class_metrics(ConfusionMatrix(tp=8, fp=2, fn=3, tn=7))
        aggregate = macro_aggregate({"only": metrics})
        assert aggregate.macro.accuracy == metrics.accuracy
        assert aggregate.macro.kappa == metrics.kappa
        assert aggregate.pooled.matrix == metrics.matrix

    def test_perfect_plus_inverted_pools_to_half(self):
        per_class = {
            "good": class_metrics(ConfusionMatrix(tp=2, fp=0, fn=0, tn=2)),
            "bad": class_metrics(ConfusionMatrix(tp=0, fp=2, fn=2, tn=0)),
        }
        aggregate = macro_aggregate(per_class)
        assert aggregate.macro.accuracy == 0.5
        assert aggregate.pooled.accuracy == 0.5

    def test_empty_per_class_rejected(self):
        with pytest.raises(ValueError):
            macro_aggregate({})
