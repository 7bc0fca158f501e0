import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from focallab.datagen import Subcase
from focallab.evaluator import (
    EmptySubsetError,
    aggregate_runs,
    cell_name,
    challenge_breakdown_from_predictions,
    evaluate,
    hard_subset_accuracy,
    histogram_of_losses,
    histogram_of_probs,
    read_histogram_csv,
    summarize,
)
from focallab.losses import LossKind, LossSpec
from focallab.netmodel import init_params


def test_cell_names():
    assert cell_name(0, Subcase.ENTAILED) == "lexical_overlap/entailed"
    assert cell_name(2, Subcase.NON_ENTAILED) == "constituent/non_entailed"


def test_breakdown_constant_predictors(small_bundle):
    ch = small_bundle.challenge
    always_entail = challenge_breakdown_from_predictions(np.zeros(len(ch), dtype=int), ch)
    never_entail = challenge_breakdown_from_predictions(np.full(len(ch), 2), ch)
    assert always_entail.overall == never_entail.overall == 0.5
    assert set(always_entail.by_subcase(Subcase.ENTAILED).values()) == {1.0}
    assert set(never_entail.by_subcase(Subcase.ENTAILED).values()) == {0.0}
    assert sum(always_entail.counts.values()) == len(ch)


def test_breakdown_rejects_untagged(small_bundle):
    with pytest.raises(ValueError, match="untagged"):
        challenge_breakdown_from_predictions(np.zeros(len(small_bundle.test)), small_bundle.test)


def test_hard_accuracy_needs_labels(small_bundle):
    p = init_params(28, 4, seed=0)
    with pytest.raises(ValueError):
        hard_subset_accuracy(p, small_bundle.test)


def test_prob_histogram_conserves_counts():
    rng = np.random.default_rng(0)
    p = rng.uniform(size=500)
    p[:3] = [0.0, 1.0, 0.5]
    correct = rng.uniform(size=500) < 0.5
    hard = (rng.uniform(size=500) < 0.2).astype(int)
    h = histogram_of_probs(p, correct, hard, n_bins=20)
    assert h.total == 500
    assert set(h.counts) == {"correct_easy", "correct_hard", "incorrect_easy", "incorrect_hard"}
    assert h.markers == {"guess": pytest.approx(1 / 3), "sure": 0.5}


def test_loss_histogram_markers_and_overflow():
    p = np.array([1e-15, 0.2, 0.5, 0.9, 0.999999])
    spec = LossSpec(LossKind.FOCAL, 2.0)
    h = histogram_of_losses(p, np.ones(5, dtype=bool), None, spec, n_bins=10)
    assert h.total == 5
    assert h.markers["sure"] == pytest.approx(0.25 * math.log(2))
    assert h.edges[-1] <= -math.log(spec.clamp_eps) * (1 - spec.clamp_eps) ** 2 + 1e-9


def test_histogram_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    h = histogram_of_probs(rng.uniform(size=50), rng.uniform(size=50) < 0.7, n_bins=8)
    h.write_csv(tmp_path / "h.csv")
    back = read_histogram_csv(tmp_path / "h.csv")
    np.testing.assert_array_equal(back.edges, h.edges)
    for k in h.counts:
        np.testing.assert_array_equal(back.counts[k], h.counts[k])
    assert back.markers == h.markers


def test_summarize():
    s = summarize([0.5, 0.7, 0.9])
    assert s.mean == pytest.approx(0.7)
    assert s.std == pytest.approx(0.2)
    assert s.n_runs == 3
    assert summarize([0.3]).std is None


@given(st.lists(st.floats(0, 1), min_size=2, max_size=10), st.randoms())
def test_summarize_order_independent(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a, b = summarize(values), summarize(shuffled)
    assert a.mean == b.mean
    assert a.std == pytest.approx(b.std, abs=1e-15)


def test_aggregate_needs_two():
    with pytest.raises(ValueError, match="at least 2"):
        aggregate_runs([{"test_acc": 0.5}])
    agg = aggregate_runs([{"test_acc": 0.5}, {"test_acc": 0.7}])
    assert agg["test_acc"].mean == pytest.approx(0.6)


def test_evaluate_report(small_bundle):
    p = init_params(28, 8, seed=0)
    report = evaluate(p, small_bundle.test, small_bundle.challenge, LossSpec())
    m = report.metrics()
    assert math.isnan(m["hard_acc"])
    assert len([k for k in m if k.startswith("challenge:")]) == 6
    assert report.prob_histogram.total == len(small_bundle.test)
    assert 0.0 <= m["test_mean_abs_p_minus_half"] <= 0.5


def test_empty_subset_error_is_value_error():
    assert issubclass(EmptySubsetError, ValueError)
