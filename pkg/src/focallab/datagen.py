"""Synthetic underspecified corpus with planted shortcut features.

Every example carries a *genuine* block (class-dependent Gaussian, the real
signal) and a *shortcut* block made of three heuristic indicator blocks.  In
the training-like splits the shortcut almost always agrees with the label;
in the challenge split it always fires for entailment, whatever the label.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GENERATOR_VERSION = "focallab-datagen-1"

ENTAILMENT, NEUTRAL, CONTRADICTION = 0, 1, 2
LABEL_NAMES = ("entailment", "neutral", "contradiction")
N_CLASSES = 3


class HeuristicKind(enum.IntEnum):
    LEXICAL_OVERLAP = 0
    SUBSEQUENCE = 1
    CONSTITUENT = 2


class Subcase(enum.IntEnum):
    ENTAILED = 0
    NON_ENTAILED = 1


KIND_NAMES = {k: k.name.lower() for k in HeuristicKind}
SUBCASE_NAMES = {s: s.name.lower() for s in Subcase}
SPLIT_NAMES = ("train", "val_matched", "val_mismatched", "test", "challenge", "challenge_pool")

# Counterexample share of the natural corpus: ~250 of ~433k sentence pairs.
DEFAULT_COUNTEREXAMPLE_RATE = 250 / 433_000


@dataclass(frozen=True)
class GenSpec:
    d_g: int = 16
    d_s: int = 12
    n_train: int = 50_000
    n_val: int = 5_000
    n_test: int = 10_000
    n_challenge_per_cell: int = 500
    n_pool_per_cell: int = 500
    bias_rate: float = 0.98
    counterexample_rate: float = DEFAULT_COUNTEREXAMPLE_RATE
    noise_sigma: float = 1.0
    mismatch_shift: float = 0.5
    class_separation: float = 2.2
    shortcut_strength: float = 1.0
    template_marker: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("d_g", "n_train", "n_val", "n_test", "n_challenge_per_cell"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_pool_per_cell < 0:
            raise ValueError("n_pool_per_cell must be >= 0")
        if self.d_g < N_CLASSES:
            raise ValueError(f"d_g must be at least {N_CLASSES} to hold the class means")
        min_width = N_CLASSES + (1 if self.template_marker else 0)
        if self.d_s % 3 or self.d_s // 3 < min_width:
            raise ValueError(
                f"d_s must be a multiple of 3 with blocks at least {min_width} wide "
                "(one indicator per class, plus the template slot when template_marker != 0)"
            )
        if not (0.0 < self.bias_rate <= 1.0):
            raise ValueError("bias_rate must lie in (0, 1]")
        if self.counterexample_rate < 0 or self.counterexample_rate > 1.0 - self.bias_rate + 1e-15:
            raise ValueError(
                f"counterexample_rate {self.counterexample_rate} exceeds the mass left by "
                f"bias_rate {self.bias_rate}"
            )
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def block_width(self) -> int:
        return self.d_s // 3

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Example:
    genuine: np.ndarray
    shortcut: np.ndarray
    label: int
    heuristic_kind: HeuristicKind | None = None
    subcase: Subcase | None = None
    hard: bool | None = None
    uid: int = -1


@dataclass
class Split:
    """Column-oriented storage for one split.

    ``kind``/``subcase`` are -1 for untagged rows, ``hard`` is -1 while
    hardness is unknown.  ``uid`` is unique across a whole bundle.
    """

    genuine: np.ndarray
    shortcut: np.ndarray
    label: np.ndarray
    kind: np.ndarray
    subcase: np.ndarray
    hard: np.ndarray
    uid: np.ndarray

    def __len__(self) -> int:
        return len(self.label)

    def __getitem__(self, i: int) -> Example:
        kind = int(self.kind[i])
        sub = int(self.subcase[i])
        hard = int(self.hard[i])
        return Example(
            genuine=self.genuine[i], shortcut=self.shortcut[i], label=int(self.label[i]),
            heuristic_kind=None if kind < 0 else HeuristicKind(kind),
            subcase=None if sub < 0 else Subcase(sub),
            hard=None if hard < 0 else bool(hard),
            uid=int(self.uid[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def tagged(self) -> bool:
        return bool(len(self)) and bool(np.all(self.kind >= 0))

    def take(self, idx) -> "Split":
        idx = np.asarray(idx)
        return Split(*(getattr(self, f.name)[idx] for f in dataclasses.fields(self)))

    def with_hard(self, hard) -> "Split":
        return dataclasses.replace(self, hard=np.asarray(hard, dtype=np.int64))

    def features(self, view) -> np.ndarray:
        from .netmodel import apply_view

        return apply_view(self.genuine, self.shortcut, view)

    def equals(self, other: "Split") -> bool:
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in dataclasses.fields(self)
        )

    @staticmethod
    def concat(a: "Split", b: "Split") -> "Split":
        return Split(*(np.concatenate([getattr(a, f.name), getattr(b, f.name)]) for f in dataclasses.fields(a)))


@dataclass
class CorpusBundle:
    train: Split
    val_matched: Split
    val_mismatched: Split
    test: Split
    challenge: Split
    challenge_pool: Split
    gen_spec: GenSpec
    version: str = GENERATOR_VERSION
    n_injected: int = 0

    def splits(self) -> dict[str, Split]:
        return {name: getattr(self, name) for name in SPLIT_NAMES}

    def replace(self, **changes) -> "CorpusBundle":
        return dataclasses.replace(self, **changes)


@dataclass
class _Geometry:
    means: np.ndarray  # (classes, d_g)
    shifted_means: np.ndarray
    rng: np.random.Generator
    next_uid: int = 0


def _class_geometry(spec: GenSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # Orthonormal class directions keep pairwise mean distance at separation * sqrt(2).
    q, _ = np.linalg.qr(rng.standard_normal((spec.d_g, spec.d_g)))
    means = spec.class_separation * q[:, :N_CLASSES].T
    drift = rng.standard_normal((N_CLASSES, spec.d_g))
    drift /= np.linalg.norm(drift, axis=1, keepdims=True)
    return means, means + spec.mismatch_shift * drift


def _genuine(geo: _Geometry, spec: GenSpec, labels: np.ndarray, shifted: bool = False) -> np.ndarray:
    means = geo.shifted_means if shifted else geo.means
    noise = geo.rng.standard_normal((len(labels), spec.d_g))
    return means[labels] + spec.noise_sigma * noise


def _fire(spec: GenSpec, kinds: np.ndarray, classes: np.ndarray, active: np.ndarray) -> np.ndarray:
    s = np.zeros((len(kinds), spec.d_s))
    rows = np.flatnonzero(active)
    s[rows, kinds[rows] * spec.block_width + classes[rows]] = spec.shortcut_strength
    return s


def _uids(geo: _Geometry, n: int) -> np.ndarray:
    out = np.arange(geo.next_uid, geo.next_uid + n, dtype=np.int64)
    geo.next_uid += n
    return out


def _natural_split(geo: _Geometry, spec: GenSpec, n: int, shifted: bool = False) -> Split:
    rng = geo.rng
    labels = rng.integers(0, N_CLASSES, size=n)
    genuine = _genuine(geo, spec, labels, shifted)
    kinds = rng.integers(0, 3, size=n)
    # Exact planted counts rather than Bernoulli draws: rare counterexamples
    # would otherwise fluctuate by tens of percent between seeds.
    n_agree = min(n, round(spec.bias_rate * n))
    n_mislead = min(n - n_agree, round(spec.counterexample_rate * n))
    role = np.zeros(n, dtype=np.int64)
    role[:n_agree] = 1
    role[n_agree:n_agree + n_mislead] = 2
    role = rng.permutation(role)
    agree = role == 1
    mislead = role == 2
    wrong = (labels + rng.integers(1, N_CLASSES, size=n)) % N_CLASSES
    fired_class = np.where(mislead, wrong, labels)
    shortcut = _fire(spec, kinds, fired_class, agree | mislead)
    minus = np.full(n, -1, dtype=np.int64)
    return Split(genuine, shortcut, labels.astype(np.int64), minus, minus.copy(), minus.copy(), _uids(geo, n))


def _challenge_split(geo: _Geometry, spec: GenSpec, per_cell: int) -> Split:
    kinds, subcases, labels = [], [], []
    for kind in HeuristicKind:
        for sub in Subcase:
            kinds.append(np.full(per_cell, int(kind)))
            subcases.append(np.full(per_cell, int(sub)))
            if sub is Subcase.ENTAILED:
                labels.append(np.full(per_cell, ENTAILMENT))
            else:
                labels.append(np.where(np.arange(per_cell) % 2 == 0, NEUTRAL, CONTRADICTION))
    kinds = np.concatenate(kinds).astype(np.int64)
    subcases = np.concatenate(subcases).astype(np.int64)
    labels = np.concatenate(labels).astype(np.int64)
    n = len(labels)
    genuine = _genuine(geo, spec, labels)
    shortcut = _fire(spec, kinds, np.full(n, ENTAILMENT), np.ones(n, dtype=bool))
    if spec.template_marker:
        # Template-built pairs are recognisable as such; the slot after the
        # class indicators flags them.
        shortcut[np.arange(n), kinds * spec.block_width + N_CLASSES] = spec.template_marker
    return Split(genuine, shortcut, labels, kinds, subcases, np.full(n, -1, dtype=np.int64), _uids(geo, n))


def generate_corpus(spec: GenSpec) -> CorpusBundle:
    """Build all splits from one seeded stream; identical specs give identical bundles."""
    rng = np.random.default_rng(spec.seed)
    means, shifted = _class_geometry(spec, rng)
    geo = _Geometry(means, shifted, rng)
    train = _natural_split(geo, spec, spec.n_train)
    val_m = _natural_split(geo, spec, spec.n_val)
    val_mm = _natural_split(geo, spec, spec.n_val, shifted=True)
    test = _natural_split(geo, spec, spec.n_test)
    challenge = _challenge_split(geo, spec, spec.n_challenge_per_cell)
    pool = _challenge_split(geo, spec, spec.n_pool_per_cell)
    return CorpusBundle(train, val_m, val_mm, test, challenge, pool, spec)


def inject_challenge_samples(bundle: CorpusBundle, n: int, seed: int) -> CorpusBundle:
    """Append ``n`` untagged examples drawn from the held-out challenge pool to train."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    pool = bundle.challenge_pool
    if n > len(pool):
        raise ValueError(f"requested {n} injected samples but the pool holds only {len(pool)}")
    if n == 0:
        return bundle
    rng = np.random.default_rng(seed)
    picked = pool.take(np.sort(rng.choice(len(pool), size=n, replace=False)))
    minus = np.full(n, -1, dtype=np.int64)
    picked = dataclasses.replace(picked, kind=minus, subcase=minus.copy(), hard=minus.copy())
    return bundle.replace(train=Split.concat(bundle.train, picked), n_injected=bundle.n_injected + n)


def collapse_to_binary(predicted_class) -> Subcase | np.ndarray:
    """entailment -> ENTAILED; neutral and contradiction -> NON_ENTAILED."""
    arr = np.asarray(predicted_class)
    if np.any((arr < 0) | (arr >= N_CLASSES)):
        raise ValueError(f"class index out of range: {predicted_class}")
    if arr.ndim == 0:
        return Subcase.ENTAILED if int(arr) == ENTAILMENT else Subcase.NON_ENTAILED
    return np.where(arr == ENTAILMENT, int(Subcase.ENTAILED), int(Subcase.NON_ENTAILED))


def fired_classes(spec: GenSpec, shortcut) -> np.ndarray:
    """Class each shortcut row fires for, or -1 when no block fires.

    Entailment wins when several blocks fire, mirroring how the heuristics
    all vote for entailment.
    """
    s = np.atleast_2d(np.asarray(shortcut))
    blocks = s.reshape(len(s), 3, spec.block_width)[:, :, :N_CLASSES]
    votes = (blocks != 0).any(axis=1)
    out = np.full(len(s), -1, dtype=np.int64)
    for c in reversed(range(N_CLASSES)):
        out[votes[:, c]] = c
    return out


def heuristic_predict(spec: GenSpec, shortcut, seed: int = 0) -> np.ndarray:
    """Predictor that only follows the shortcut: the fired class, else a uniform guess."""
    fired = fired_classes(spec, shortcut)
    rng = np.random.default_rng(seed)
    guess = rng.integers(0, N_CLASSES, size=len(fired))
    return np.where(fired >= 0, fired, guess)


def label_hardness(bundle: CorpusBundle, seed: int, model_cfg=None, train_spec=None) -> CorpusBundle:
    """Mark each test example hard iff a shortcut-only model misclassifies it."""
    from .trainer import train_bias_model

    params = train_bias_model(bundle, model_cfg, seed, train_spec=train_spec)
    return apply_hardness(bundle, params)


def apply_hardness(bundle: CorpusBundle, shallow_params) -> CorpusBundle:
    from .netmodel import predict_logits

    test = bundle.test
    pred = np.argmax(predict_logits(shallow_params, test.features(shallow_params.view)), axis=1)
    return bundle.replace(test=test.with_hard((pred != test.label).astype(np.int64)))


# ---------------------------------------------------------------------------
# serialization


def _header(spec: GenSpec) -> list[str]:
    return (
        ["uid", "label", "heuristic_kind", "subcase", "hard"]
        + [f"g{i}" for i in range(spec.d_g)]
        + [f"s{i}" for i in range(spec.d_s)]
    )


def write_split(split: Split, spec: GenSpec, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(spec))
        for i in range(len(split)):
            kind, sub, hard = int(split.kind[i]), int(split.subcase[i]), int(split.hard[i])
            w.writerow(
                [int(split.uid[i]), LABEL_NAMES[int(split.label[i])],
                 KIND_NAMES[HeuristicKind(kind)] if kind >= 0 else "",
                 SUBCASE_NAMES[Subcase(sub)] if sub >= 0 else "",
                 "" if hard < 0 else hard]
                + [repr(float(v)) for v in split.genuine[i]]
                + [repr(float(v)) for v in split.shortcut[i]]
            )


def read_split(path, spec: GenSpec) -> Split:
    kind_ids = {v: int(k) for k, v in KIND_NAMES.items()}
    sub_ids = {v: int(k) for k, v in SUBCASE_NAMES.items()}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != _header(spec):
            raise ValueError(f"{path}: column header does not match the generator spec")
        rows = list(r)
    n = len(rows)
    uid = np.array([int(row[0]) for row in rows], dtype=np.int64)
    label = np.array([LABEL_NAMES.index(row[1]) for row in rows], dtype=np.int64)
    kind = np.array([kind_ids[row[2]] if row[2] else -1 for row in rows], dtype=np.int64)
    sub = np.array([sub_ids[row[3]] if row[3] else -1 for row in rows], dtype=np.int64)
    hard = np.array([int(row[4]) if row[4] else -1 for row in rows], dtype=np.int64)
    feats = np.array([[float(v) for v in row[5:]] for row in rows], dtype=np.float64).reshape(n, spec.d_g + spec.d_s)
    return Split(feats[:, : spec.d_g], feats[:, spec.d_g:], label, kind, sub, hard, uid)


def spec_hash(spec: GenSpec) -> str:
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def save_corpus(bundle: CorpusBundle, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, split in bundle.splits().items():
        write_split(split, bundle.gen_spec, directory / f"{name}.csv")
    manifest = {
        "generator_version": bundle.version,
        "seed": bundle.gen_spec.seed,
        "spec_hash": spec_hash(bundle.gen_spec),
        "gen_spec": bundle.gen_spec.to_dict(),
        "n_injected": bundle.n_injected,
        "rows": {name: len(split) for name, split in bundle.splits().items()},
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_corpus(directory) -> CorpusBundle:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"corpus manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    spec = GenSpec(**manifest["gen_spec"])
    splits = {}
    for name in SPLIT_NAMES:
        path = directory / f"{name}.csv"
        if not path.exists():
            raise FileNotFoundError(f"corpus split not found: {path}")
        splits[name] = read_split(path, spec)
    return CorpusBundle(**splits, gen_spec=spec, version=manifest["generator_version"],
                        n_injected=manifest.get("n_injected", 0))


def expected_counterexamples(spec: GenSpec) -> float:
    return spec.counterexample_rate * spec.n_train


def counterexample_mask(split: Split, spec: GenSpec) -> np.ndarray:
    fired = fired_classes(spec, split.shortcut)
    return (fired >= 0) & (fired != split.label)
