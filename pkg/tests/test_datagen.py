import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focallab.datagen import (
    ENTAILMENT,
    GenSpec,
    HeuristicKind,
    Subcase,
    collapse_to_binary,
    counterexample_mask,
    expected_counterexamples,
    fired_classes,
    generate_corpus,
    heuristic_predict,
    inject_challenge_samples,
    load_corpus,
    read_split,
    save_corpus,
    write_split,
)
from focallab.evaluator import challenge_breakdown_from_predictions
from focallab.netmodel import View

from conftest import SMALL_GEN


def test_same_seed_same_bundle(small_bundle):
    again = generate_corpus(SMALL_GEN)
    for name, split in small_bundle.splits().items():
        assert split.equals(again.splits()[name]), name


def test_different_seed_differs(small_bundle):
    other = generate_corpus(GenSpec(**{**SMALL_GEN.to_dict(), "seed": 4}))
    assert not small_bundle.train.equals(other.train)


def test_split_sizes(small_bundle):
    b = small_bundle
    assert (len(b.train), len(b.val_matched), len(b.val_mismatched), len(b.test)) == (2000, 300, 300, 600)
    assert len(b.challenge) == 6 * 40
    assert len(b.challenge_pool) == 6 * 40


def test_uids_unique_across_bundle(small_bundle):
    uids = np.concatenate([s.uid for s in small_bundle.splits().values()])
    assert len(np.unique(uids)) == len(uids)


def test_bias_rate_planted(small_bundle):
    tr = small_bundle.train
    fired = fired_classes(SMALL_GEN, tr.shortcut)
    assert np.sum(fired == tr.label) == round(SMALL_GEN.bias_rate * len(tr))


def test_counterexample_rate_default_within_tolerance():
    spec = GenSpec(n_val=10, n_test=10, n_challenge_per_cell=1, n_pool_per_cell=0, seed=1)
    bundle = generate_corpus(spec)
    count = int(counterexample_mask(bundle.train, spec).sum())
    expected = expected_counterexamples(spec)
    assert abs(count - expected) <= 0.2 * expected


def test_challenge_cells_and_labels(small_bundle):
    ch = small_bundle.challenge
    for kind in HeuristicKind:
        for sub in Subcase:
            mask = (ch.kind == kind) & (ch.subcase == sub)
            assert mask.sum() == 40
            labels = ch.label[mask]
            if sub is Subcase.ENTAILED:
                assert np.all(labels == ENTAILMENT)
            else:
                assert np.all(labels != ENTAILMENT)
    # every challenge row fires the entailment shortcut
    assert np.all(fired_classes(SMALL_GEN, ch.shortcut) == ENTAILMENT)


def test_heuristic_predictor_scores_half(small_bundle):
    pred = heuristic_predict(SMALL_GEN, small_bundle.challenge.shortcut)
    bd = challenge_breakdown_from_predictions(pred, small_bundle.challenge)
    assert bd.overall == 0.5
    assert all(v == 1.0 for v in bd.by_subcase(Subcase.ENTAILED).values())
    assert all(v == 0.0 for v in bd.by_subcase(Subcase.NON_ENTAILED).values())


def test_mismatched_validation_is_shifted(small_bundle):
    m = small_bundle.val_matched.genuine.mean(axis=0)
    mm = small_bundle.val_mismatched.genuine.mean(axis=0)
    assert np.linalg.norm(m - mm) > 0.1


def test_injection(small_bundle):
    out = inject_challenge_samples(small_bundle, 30, seed=0)
    assert len(out.train) == len(small_bundle.train) + 30
    assert out.n_injected == 30
    tail = out.train.take(np.arange(len(small_bundle.train), len(out.train)))
    assert np.all(tail.kind == -1) and np.all(tail.subcase == -1)
    assert set(tail.uid) <= set(small_bundle.challenge_pool.uid)
    assert not set(tail.uid) & set(small_bundle.challenge.uid)
    assert inject_challenge_samples(small_bundle, 0, seed=0) is small_bundle


def test_injection_too_many(small_bundle):
    with pytest.raises(ValueError, match="pool holds only 240"):
        inject_challenge_samples(small_bundle, 241, seed=0)


def test_collapse_to_binary():
    assert collapse_to_binary(0) is Subcase.ENTAILED
    assert collapse_to_binary(2) is Subcase.NON_ENTAILED
    np.testing.assert_array_equal(collapse_to_binary([0, 1, 2]),
                                  [int(Subcase.ENTAILED), int(Subcase.NON_ENTAILED), int(Subcase.NON_ENTAILED)])
    with pytest.raises(ValueError):
        collapse_to_binary(3)


def test_features_view(small_bundle):
    assert small_bundle.test.features(View.FULL).shape == (600, SMALL_GEN.d_g + SMALL_GEN.d_s)
    assert small_bundle.test.features(View.SHORTCUT_ONLY).shape == (600, SMALL_GEN.d_s)


def test_example_access(small_bundle):
    ex = small_bundle.challenge[0]
    assert ex.heuristic_kind is HeuristicKind(small_bundle.challenge.kind[0])
    assert small_bundle.train[0].heuristic_kind is None


@pytest.mark.parametrize("bad", [{"d_s": 8}, {"bias_rate": 0.0}, {"counterexample_rate": 0.5}, {"n_train": 0}])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        GenSpec(**bad)


def test_csv_round_trip(tmp_path, small_bundle):
    write_split(small_bundle.challenge, SMALL_GEN, tmp_path / "c.csv")
    back = read_split(tmp_path / "c.csv", SMALL_GEN)
    assert back.equals(small_bundle.challenge)
    header = (tmp_path / "c.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["uid", "label", "heuristic_kind", "subcase", "hard"]


def test_corpus_round_trip(tmp_path, small_bundle):
    save_corpus(small_bundle, tmp_path / "corpus")
    back = load_corpus(tmp_path / "corpus")
    assert back.gen_spec == SMALL_GEN
    for name, split in small_bundle.splits().items():
        assert split.equals(back.splits()[name]), name


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_heuristic_half_on_any_challenge_split(seed, per_cell):
    spec = GenSpec(n_train=10, n_val=5, n_test=5, n_challenge_per_cell=per_cell, n_pool_per_cell=0, seed=seed)
    ch = generate_corpus(spec).challenge
    bd = challenge_breakdown_from_predictions(heuristic_predict(spec, ch.shortcut, seed), ch)
    assert bd.overall == 0.5
