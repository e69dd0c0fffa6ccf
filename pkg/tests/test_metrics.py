import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernelseer.baselines import BASELINES, DecisionTree, GaussianNaiveBayes, KNearestNeighbors, best_split
from kernelseer.constraints import ConstraintPredicate, KernelSpec, membership_predicate
from kernelseer.decoding import BeamHypothesis as Hypothesis
from kernelseer.decoding import greedy_decode
from kernelseer.encoding import ProblemDescriptor, Vocabulary
from kernelseer.errors import DimensionError, EmptyInputError, ParameterError
from kernelseer.metrics import (
    CSV_HEADER,
    EvalReport,
    average_accuracy,
    best_matching,
    format_csv,
    format_table,
    greedy_report,
    per_parameter_accuracy,
    perfect_prediction,
    topk_metrics,
)
from kernelseer.models import build_model, init_params

from conftest import tiny_config

INPUT_SIZES = (3, 2, 2, 1, 2, 1, 1)
D = ProblemDescriptor(1, 16, 7, 7, 16, 1, 1)


def test_average_accuracy_two_params():
    actual = [(0, 0)] * 10
    pred = [(0, 0)] * 6 + [(0, 1)] * 2 + [(1, 1)] * 2
    # column matches 8 and 6 out of 10
    assert per_parameter_accuracy(pred, actual) == [80.0, 60.0]
    assert average_accuracy(pred, actual) == 70.0


def test_all_right_and_all_wrong():
    a = [(1, 2, 3), (4, 5, 6)]
    assert average_accuracy(a, a) == 100.0 and perfect_prediction(a, a) == 100.0
    wrong = [(0, 0, 0), (0, 0, 0)]
    assert average_accuracy(wrong, a) == 0.0 and perfect_prediction(wrong, a) == 0.0


def test_perfect_prediction_three_of_ten():
    actual = [(i, i) for i in range(10)]
    pred = [(i, i) for i in range(3)] + [(i, -1) for i in range(3, 10)]
    assert perfect_prediction(pred, actual) == 30.0


def test_perfect_zero_when_every_sample_misses_once():
    actual = [(1, 1, 1, 1)] * 4
    pred = [(0, 1, 1, 1), (1, 0, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)]
    assert average_accuracy(pred, actual) == 75.0
    assert perfect_prediction(pred, actual) == 0.0


def test_metric_errors():
    with pytest.raises(EmptyInputError):
        average_accuracy([], [])
    with pytest.raises(DimensionError):
        perfect_prediction([(1, 2)], [(1, 2, 3)])
    with pytest.raises(DimensionError):
        average_accuracy([(1,), (2,)], [(1,)])


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 6).flatmap(
        lambda n: st.lists(
            st.tuples(st.tuples(*[st.integers(0, 2)] * n), st.tuples(*[st.integers(0, 2)] * n)),
            min_size=1,
            max_size=30,
        )
    )
)
def test_report_invariants(pairs):
    pred, actual = zip(*pairs)
    r = EvalReport.from_predictions(pred, actual)
    assert 0.0 <= r.perfect <= min(r.per_parameter) <= r.average <= 100.0
    assert math.isclose(r.average, sum(r.per_parameter) / len(r.per_parameter), rel_tol=0, abs_tol=1e-12)
    assert r.samples == len(actual)


def test_best_matching_prefers_earlier_on_ties():
    beams = [Hypothesis((0, 1, 2), -1.0), Hypothesis((1, 1, 0), -2.0), Hypothesis((1, 1, 2), -3.0)]
    assert best_matching(beams, (0, 0, 0)) == (0, 1, 2)
    assert best_matching(beams, (1, 1, 2)) == (1, 1, 2)
    assert best_matching([], (1,)) is None


# top-k ---------------------------------------------------------------------------


def toy_setup(variant, seed, sizes=(2, 3, 2), n=12):
    rng = np.random.default_rng(seed)
    params = init_params(tiny_config(variant), INPUT_SIZES, sizes, seed)
    for arr in params.tensors.values():
        arr *= 2.0
    model = build_model(params)
    x = np.stack([[int(rng.integers(s)) for s in INPUT_SIZES] for _ in range(n)])
    y = np.stack([[int(rng.integers(s)) for s in sizes] for _ in range(n)])
    names = [f"p{i}" for i in range(len(sizes))]
    spec = KernelSpec("toy", tuple((nm, tuple(range(s))) for nm, s in zip(names, sizes)))
    spec = KernelSpec(spec.name, spec.params, (membership_predicate(spec),))
    vocab = Vocabulary({f: (1,) for f in ("n", "c", "h", "w", "k", "y", "x")}, dict(spec.params))
    return model, x, y, spec, vocab


@pytest.mark.parametrize("variant", ["enc-dec", "hybrid-2"])
def test_topk_width_one_is_greedy(variant):
    model, x, y, _, _ = toy_setup(variant, 3)
    top = topk_metrics(model, x, y, [1])[1]
    greedy = greedy_report(model, x, y)
    assert top.average == greedy.average and top.perfect == greedy.perfect
    assert top.per_parameter == greedy.per_parameter


def test_topk_exhaustive_is_perfect():
    model, x, y, _, _ = toy_setup("attn", 4)
    r = topk_metrics(model, x, y, [12])[12]
    assert r.perfect == 100.0 and r.average == 100.0


def test_topk_perfect_non_decreasing():
    model, x, y, _, _ = toy_setup("hybrid", 5)
    reports = topk_metrics(model, x, y, [1, 2, 3, 5, 8, 12], threads=2)
    perfect = [reports[k].perfect for k in sorted(reports)]
    assert perfect == sorted(perfect)


def test_topk_threads_do_not_change_results():
    model, x, y, spec, vocab = toy_setup("attn-2", 6)
    a = topk_metrics(model, x, y, [1, 3], threads=1)
    b = topk_metrics(model, x, y, [1, 3], threads=3)
    assert {k: (r.average, r.perfect) for k, r in a.items()} == {k: (r.average, r.perfect) for k, r in b.items()}


def test_topk_invalid_counts():
    model, x, y, spec, vocab = toy_setup("hybrid-2", 7)
    descriptors = [D] * len(x)
    none_bad = topk_metrics(model, x, y, [2], spec.predicates, spec, vocab, descriptors)[2]
    assert none_bad.invalid == 0
    never = ConstraintPredicate("never", lambda d, p: not p)
    empty = topk_metrics(model, x, y, [2], [never], spec, vocab, descriptors)[2]
    assert empty.invalid == len(x) and empty.perfect == 0.0
    strict = KernelSpec("toy", spec.params, (ConstraintPredicate("p0_is_one", lambda d, p: p.get("p0", 1) == 1),))
    checked = topk_metrics(model, x, y, [1], None, strict, vocab, descriptors)[1]
    top = greedy_decode(model, x)
    assert checked.invalid == int((top[:, 0] != 1).sum())


def test_topk_argument_errors():
    model, x, y, spec, vocab = toy_setup("enc-dec", 8)
    with pytest.raises(ParameterError):
        topk_metrics(model, x, y, [0])
    with pytest.raises(ParameterError):
        topk_metrics(model, x, y, [1], spec.predicates)
    with pytest.raises(EmptyInputError):
        topk_metrics(model, x[:0], y[:0], [1])


def test_format_table_layout():
    a = EvalReport([100.0, 50.0], 75.0, 50.0, 2)
    b = EvalReport([100.0, 100.0], 100.0, 100.0, 2)
    text = format_table({"unconstrained": {1: a, 10: b}, "constrained": {1: b}})
    lines = text.splitlines()
    assert lines[0].split() == ["metric", "k=1", "k=10"]
    assert lines[2].split() == ["unconstrained", "Avg", "75.00", "100.00"]
    assert lines[3].split() == ["Pft", "50.00", "100.00"]
    assert lines[4].split() == ["constrained", "Avg", "100.00", "-"]
    assert len({len(l) for l in lines[2:]}) == 1


def test_format_csv_rows():
    a = EvalReport([100.0, 50.0], 75.0, 50.0, 2, invalid=1)
    text = format_csv({"greedy": {1: a}})
    rows = [r.split(",") for r in text.splitlines()]
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[1] == ["greedy", "1", "2", "75.0000", "50.0000", "1"]


# baselines -----------------------------------------------------------------------

# One informative feature, one constant. Raw distances along feature 0 order
# neighbours the same way as the standardised ones.
KNN_X = np.array([[0, 7], [1, 7], [3, 7], [4, 7], [10, 7]], dtype=float)
KNN_Y = np.array([[5, 1], [5, 2], [9, 3], [9, 4], [9, 4]])


@pytest.mark.parametrize(
    "query, k, expected",
    [
        # distances 2,1,1,2,8: ties at the 3rd distance all vote -> {5,5,9,9} -> 5, {1,2,3,4} -> 1
        (2.0, 3, (5, 1)),
        # nearest pair at distance 1 disagrees -> smaller label
        (2.0, 1, (5, 2)),
        # distances 9,8,6,5,1 -> rows 4,3,2
        (9.0, 3, (9, 4)),
        # distances 3.4,2.4,0.4,0.6,6.6 -> rows 2,3 -> (9,9), (3,4)
        (3.4, 2, (9, 3)),
        # exact training point
        (10.0, 1, (9, 4)),
    ],
)
def test_knn_hand_table(query, k, expected):
    model = KNearestNeighbors(k).fit(KNN_X, KNN_Y)
    assert tuple(model.predict([[query, 7.0]])[0]) == expected


def test_knn_is_scale_aware():
    x = np.array([[0.0, 0.0], [0.0, 1000.0], [1.0, 0.0]])
    y = np.array([0, 1, 2])
    # z-scored: feature 1 spans one std per unit of 1000, so (0.9, 100) sits next to row 2
    assert KNearestNeighbors(1).fit(x, y).predict([[0.9, 100.0]])[0, 0] == 2


GINI_X = np.array([[1, 0], [2, 1], [3, 0], [4, 1], [5, 0], [6, 1], [7, 0], [8, 1]], dtype=float)
GINI_Y = np.array([0, 0, 0, 1, 1, 1, 1, 0])


def test_gini_split_hand_table():
    # feature 0 weighted child impurity per cut:
    #   1.5: 7/8*24/49=.4286  2.5: 6/8*4/9=.3333  3.5: 5/8*8/25=.2000
    #   4.5: .3750  5.5: .4667  6.5: .5000  7.5: .4286
    # feature 1 cut 0.5: .5000
    f, thr, score = best_split(GINI_X, GINI_Y, 2)
    assert (f, thr) == (0, 3.5)
    assert math.isclose(score, 0.2, abs_tol=1e-12)


def test_tree_structure_and_fit():
    tree = DecisionTree(max_depth=2).fit(GINI_X, GINI_Y)
    root = tree.trees_[0]
    assert (root.feature, root.threshold) == (0, 3.5)
    assert root.left.left is None and root.left.label == 0
    assert (root.right.feature, root.right.threshold) == (0, 7.5)
    assert np.array_equal(tree.predict(GINI_X)[:, 0], GINI_Y)


def test_tree_pure_labels_is_a_stump():
    tree = DecisionTree().fit(GINI_X, np.full(8, 4))
    assert tree.trees_[0].left is None
    assert (tree.predict([[100, 100]]) == 4).all()


def test_tree_threshold_function():
    x = np.arange(20, dtype=float)[:, None]
    y = (x[:, 0] >= 13).astype(int) * 7
    assert np.array_equal(DecisionTree(max_depth=1).fit(x, y).predict(x)[:, 0], y)


GNB_X = np.array([[0, 0], [2, 0], [1, 3], [4, 4], [6, 4], [5, 1]], dtype=float)
GNB_Y = np.array([0, 0, 0, 1, 1, 1])


def test_gnb_hand_posteriors():
    # class 0: mean (1,1) var (2/3, 2); class 1: mean (5,3) var (2/3, 2); equal priors
    model = GaussianNaiveBayes().fit(GNB_X, GNB_Y)
    lp = model.log_posterior([[2.0, 2.0], [4.0, 1.0], [3.0, 2.0]])
    # squared-z sums: (2,2) -> 2 vs 14; (4,1) -> 13.5 vs 3.5; (3,2) -> 6.5 vs 6.5
    assert math.isclose(lp[0, 0] - lp[0, 1], 6.0, abs_tol=1e-6)
    assert math.isclose(lp[1, 1] - lp[1, 0], 5.0, abs_tol=1e-6)
    assert math.isclose(lp[2, 0], lp[2, 1], abs_tol=1e-9)
    expected = -0.5 * (math.log(2 * math.pi * 2 / 3) + math.log(2 * math.pi * 2) + 2.0) + math.log(0.5)
    assert math.isclose(lp[0, 0], expected, abs_tol=1e-6)
    assert model.predict([[2.0, 2.0], [4.0, 1.0]])[:, 0].tolist() == [0, 1]


def test_gnb_single_class_and_clusters():
    x = np.array([[0.0], [0.2], [10.0], [10.4]])
    assert (GaussianNaiveBayes().fit(x, np.full(4, 3)).predict([[5.0], [-9.0]]) == 3).all()
    model = GaussianNaiveBayes().fit(x, np.array([1, 1, 2, 2]))
    assert model.predict([[-1.0], [1.0], [9.0], [12.0]])[:, 0].tolist() == [1, 1, 2, 2]


def test_gnb_variance_floor_handles_constant_class():
    x = np.array([[1.0, 0.0], [1.0, 5.0], [3.0, 0.0], [3.0, 5.0]])
    model = GaussianNaiveBayes().fit(x, np.array([0, 0, 1, 1]))
    assert model.predict([[1.0, 2.0], [3.0, 2.0]])[:, 0].tolist() == [0, 1]


@pytest.mark.parametrize("name", sorted(BASELINES))
def test_baselines_deterministic_and_reject_empty(name):
    rng = np.random.default_rng(0)
    x = rng.integers(0, 50, size=(60, 7)).astype(float)
    y = rng.integers(0, 3, size=(60, 2))
    a = BASELINES[name]().fit(x, y).predict(x[:20])
    b = BASELINES[name]().fit(x, y).predict(x[:20])
    assert np.array_equal(a, b) and a.shape == (20, 2)
    with pytest.raises(EmptyInputError):
        BASELINES[name]().fit(np.zeros((0, 7)), np.zeros((0, 2)))


def test_equal_columns_average_exactly():
    actual = [(0,) * 5] * 7
    pred = [(0,) * 5] * 2 + [(1,) * 5] * 5
    r = EvalReport.from_predictions(pred, actual)
    assert r.per_parameter == [2 / 7 * 100] * 5
    assert r.average == min(r.per_parameter)
