"""Accuracy tables, challenge breakdowns, histograms and multi-run aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import losses
from .datagen import (
    KIND_NAMES,
    SUBCASE_NAMES,
    HeuristicKind,
    Split,
    Subcase,
    collapse_to_binary,
)
from .losses import LossKind, LossSpec
from .netmodel import ModelParams, predict_logits

DEFAULT_BINS = 40
GUESS_PROB = 1.0 / 3.0
SURE_PROB = 0.5


class EmptySubsetError(ValueError):
    """Raised when a metric is requested on a subset with no examples."""


def cell_name(kind, subcase) -> str:
    return f"{KIND_NAMES[HeuristicKind(kind)]}/{SUBCASE_NAMES[Subcase(subcase)]}"


def predict(params: ModelParams, split: Split) -> np.ndarray:
    # np.argmax returns the lowest index among ties.
    return np.argmax(predict_logits(params, split.features(params.view)), axis=1)


def label_probs(params: ModelParams, split: Split) -> np.ndarray:
    probs = losses.softmax(predict_logits(params, split.features(params.view)))
    return probs[np.arange(len(split)), split.label]


def accuracy(params: ModelParams, split: Split) -> float:
    if len(split) == 0:
        raise EmptySubsetError("accuracy of an empty example set is undefined")
    return float(np.mean(predict(params, split) == split.label))


def hard_subset_accuracy(params: ModelParams, test: Split) -> float:
    if np.any(test.hard < 0):
        raise ValueError("split has no hardness labels; run label_hardness first")
    mask = test.hard == 1
    if not mask.any():
        raise EmptySubsetError("no hard examples in this split")
    return float(np.mean(predict(params, test)[mask] == test.label[mask]))


@dataclass
class ChallengeBreakdown:
    cells: dict[str, float]
    counts: dict[str, int]
    overall: float

    def by_subcase(self, subcase: Subcase) -> dict[str, float]:
        suffix = "/" + SUBCASE_NAMES[subcase]
        return {k: v for k, v in self.cells.items() if k.endswith(suffix)}


def challenge_breakdown_from_predictions(pred, challenge: Split) -> ChallengeBreakdown:
    """Score 3-class predictions on the binary entailed / non-entailed task per cell."""
    if len(challenge) == 0:
        raise EmptySubsetError("empty challenge split")
    if not challenge.tagged:
        raise ValueError("challenge split contains untagged examples")
    correct = collapse_to_binary(np.asarray(pred)) == challenge.subcase
    cells, counts = {}, {}
    for kind in HeuristicKind:
        for sub in Subcase:
            mask = (challenge.kind == kind) & (challenge.subcase == sub)
            name = cell_name(kind, sub)
            counts[name] = int(mask.sum())
            if counts[name]:
                cells[name] = float(np.mean(correct[mask]))
    return ChallengeBreakdown(cells, counts, float(np.mean(correct)))


def challenge_breakdown(params: ModelParams, challenge: Split) -> ChallengeBreakdown:
    return challenge_breakdown_from_predictions(predict(params, challenge), challenge)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: dict[str, np.ndarray]
    markers: dict[str, float] = field(default_factory=dict)
    quantity: str = "p_label"

    @property
    def total(self) -> int:
        return int(sum(int(c.sum()) for c in self.counts.values()))

    def rows(self) -> list[tuple[str, int, float, float, int]]:
        out = []
        for part, counts in self.counts.items():
            for i, c in enumerate(counts):
                out.append((part, i, float(self.edges[i]), float(self.edges[i + 1]), int(c)))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", "partition", "bin", "lo", "hi", "count"])
            for part, i, lo, hi, c in self.rows():
                w.writerow([self.quantity, part, i, repr(lo), repr(hi), c])
            for name, value in self.markers.items():
                w.writerow([self.quantity, f"marker:{name}", "", repr(value), "", ""])


def read_histogram_csv(path) -> Histogram:
    counts: dict[str, list[int]] = {}
    edges: list[float] = []
    markers = {}
    quantity = "p_label"
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            quantity = row["quantity"]
            if row["partition"].startswith("marker:"):
                markers[row["partition"][7:]] = float(row["lo"])
                continue
            part = row["partition"]
            counts.setdefault(part, []).append(int(row["count"]))
            if len(counts) == 1:
                if not edges:
                    edges.append(float(row["lo"]))
                edges.append(float(row["hi"]))
    return Histogram(np.array(edges), {k: np.array(v) for k, v in counts.items()}, markers, quantity)


def _partitions(correct: np.ndarray, hard: np.ndarray | None) -> dict[str, np.ndarray]:
    if hard is None or np.any(hard < 0):
        return {"correct": correct, "incorrect": ~correct}
    hard = hard.astype(bool)
    return {
        "correct_easy": correct & ~hard,
        "correct_hard": correct & hard,
        "incorrect_easy": ~correct & ~hard,
        "incorrect_hard": ~correct & hard,
    }


def _bin_index(values: np.ndarray, lo: float, hi: float, n_bins: int) -> np.ndarray:
    idx = np.floor((values - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def _histogram(values, parts, lo, hi, n_bins, markers, quantity) -> Histogram:
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    idx = _bin_index(np.asarray(values, dtype=np.float64), lo, hi, n_bins)
    counts = {name: np.bincount(idx[mask], minlength=n_bins) for name, mask in parts.items()}
    return Histogram(np.linspace(lo, hi, n_bins + 1), counts, markers, quantity)


def prob_histogram(params: ModelParams, split: Split, n_bins: int = DEFAULT_BINS) -> Histogram:
    """Distribution of the probability assigned to the true class, by correctness and hardness."""
    p = label_probs(params, split)
    correct = predict(params, split) == split.label
    return histogram_of_probs(p, correct, split.hard, n_bins)


def histogram_of_probs(p, correct, hard=None, n_bins: int = DEFAULT_BINS) -> Histogram:
    return _histogram(p, _partitions(np.asarray(correct, dtype=bool), hard), 0.0, 1.0, n_bins,
                      {"guess": GUESS_PROB, "sure": SURE_PROB}, "p_label")


def _per_example_loss(p_label: np.ndarray, spec: LossSpec) -> np.ndarray:
    # Two-column stand-in distribution; focal_value only reads the label column.
    probs = np.stack([p_label, 1.0 - p_label], axis=1)
    return losses.focal_value(probs, np.zeros(len(p_label), dtype=np.int64), spec)


def loss_histogram(params: ModelParams, split: Split, loss_spec: LossSpec,
                   n_bins: int = DEFAULT_BINS, normalize: bool = False) -> Histogram:
    """Per-example loss distribution.

    With ``normalize`` the loss is recomputed as cross-entropy of the predicted
    probabilities, whatever ``loss_spec`` says, so runs with different gamma
    share one scale.
    """
    p = label_probs(params, split)
    correct = predict(params, split) == split.label
    return histogram_of_losses(p, correct, split.hard, loss_spec, n_bins, normalize)


def histogram_of_losses(p, correct, hard, loss_spec: LossSpec, n_bins: int = DEFAULT_BINS,
                        normalize: bool = False) -> Histogram:
    p = np.asarray(p, dtype=np.float64)
    if normalize or loss_spec.kind in (LossKind.DEBIASED_FOCAL, LossKind.PRODUCT_OF_EXPERTS):
        spec = LossSpec(LossKind.CROSS_ENTROPY, clamp_eps=loss_spec.clamp_eps)
    else:
        spec = loss_spec
    values = _per_example_loss(p, spec)
    markers = {
        "guess": float(_per_example_loss(np.array([GUESS_PROB]), spec)[0]),
        "sure": float(_per_example_loss(np.array([SURE_PROB]), spec)[0]),
    }
    ceiling = float(_per_example_loss(np.array([spec.clamp_eps]), spec)[0])
    upper = min(ceiling, float(np.percentile(values, 99.9))) if len(values) else ceiling
    if upper <= 0.0:
        upper = ceiling
    quantity = "ce_loss" if spec.kind is LossKind.CROSS_ENTROPY else f"{spec.kind.value}_loss_g{spec.gamma:g}"
    return _histogram(values, _partitions(np.asarray(correct, dtype=bool), hard), 0.0, upper, n_bins,
                      markers, quantity)


@dataclass
class EvalReport:
    test_accuracy: float
    hard_accuracy: float | None
    challenge_overall: float
    challenge_cells: dict[str, float]
    prob_histogram: Histogram
    loss_histogram: Histogram
    test_mean_p_label: float = math.nan
    test_mean_abs_margin: float = math.nan

    def metrics(self) -> dict[str, float]:
        """Flat metric map; this is what the CSV tables and aggregation consume."""
        out = {
            "test_acc": self.test_accuracy,
            "hard_acc": math.nan if self.hard_accuracy is None else self.hard_accuracy,
            "challenge_acc": self.challenge_overall,
        }
        for name, acc in self.challenge_cells.items():
            out[f"challenge:{name}"] = acc
        out["test_mean_p_label"] = self.test_mean_p_label
        out["test_mean_abs_p_minus_half"] = self.test_mean_abs_margin
        return out


def evaluate(params: ModelParams, test: Split, challenge: Split, loss_spec: LossSpec,
             n_bins: int = DEFAULT_BINS) -> EvalReport:
    """Every metric reported for one trained model."""
    try:
        hard_acc = hard_subset_accuracy(params, test)
    except (EmptySubsetError, ValueError):
        hard_acc = None
    breakdown = challenge_breakdown(params, challenge)
    p = label_probs(params, test)
    correct = predict(params, test) == test.label
    return EvalReport(
        test_accuracy=float(np.mean(correct)),
        hard_accuracy=hard_acc,
        challenge_overall=breakdown.overall,
        challenge_cells=breakdown.cells,
        prob_histogram=histogram_of_probs(p, correct, test.hard, n_bins),
        loss_histogram=histogram_of_losses(p, correct, test.hard, loss_spec, n_bins, normalize=True),
        test_mean_p_label=float(np.mean(p)),
        test_mean_abs_margin=float(np.mean(np.abs(p - 0.5))),
    )


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float | None
    n_runs: int


AggregateReport = dict[str, MetricSummary]


def summarize(values: Sequence[float]) -> MetricSummary:
    """Mean and sample (n-1) standard deviation; std is None below two values."""
    vals = [float(v) for v in values if not math.isnan(float(v))]
    if not vals:
        return MetricSummary(math.nan, None, 0)
    # math.fsum keeps the mean independent of summation order.
    mean = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return MetricSummary(mean, None, len(vals))
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return MetricSummary(mean, math.sqrt(var), len(vals))


def aggregate_runs(reports: Iterable[EvalReport | Mapping[str, float]]) -> AggregateReport:
    """Per-metric mean and n-1 standard deviation across at least two runs."""
    rows = [r.metrics() if isinstance(r, EvalReport) else dict(r) for r in reports]
    if len(rows) < 2:
        raise ValueError(f"aggregate_runs needs at least 2 reports, got {len(rows)}")
    keys = list(rows[0])
    for r in rows[1:]:
        keys.extend(k for k in r if k not in keys)
    return {k: summarize([r.get(k, math.nan) for r in rows]) for k in keys}
