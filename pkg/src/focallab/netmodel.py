"""One-hidden-layer tanh classifier with hand-written forward/backward passes."""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

N_CLASSES = 3
CHECKPOINT_MAGIC = "FOCALLAB-PARAMS"
CHECKPOINT_VERSION = 1


class View(str, enum.Enum):
    FULL = "full"
    SHORTCUT_ONLY = "shortcut_only"


def apply_view(genuine, shortcut, view: View | str) -> np.ndarray:
    """Project feature blocks onto the input a model of ``view`` sees.

    Works on single examples (1-D blocks) and on stacked rows (2-D blocks).
    """
    shortcut = np.asarray(shortcut, dtype=np.float64)
    if View(view) is View.SHORTCUT_ONLY:
        return shortcut.copy()
    return np.concatenate([np.asarray(genuine, dtype=np.float64), shortcut], axis=-1)


@dataclass
class ModelParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    view: View = View.FULL
    seed: int | None = None

    def __post_init__(self):
        self.view = View(self.view)
        hidden, n_in = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape[1] != hidden or self.b2.shape != (self.w2.shape[0],):
            raise ValueError(
                f"inconsistent shapes w1={self.w1.shape} b1={self.b1.shape} "
                f"w2={self.w2.shape} b2={self.b2.shape}"
            )
        for name, arr in zip(("w1", "b1", "w2", "b2"), self.arrays()):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[0]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def with_arrays(self, arrays, validate: bool = True) -> "ModelParams":
        w1, b1, w2, b2 = arrays
        if validate:
            return ModelParams(w1, b1, w2, b2, view=self.view, seed=self.seed)
        # Hot path for optimizer steps: shapes are preserved by construction.
        new = object.__new__(ModelParams)
        new.__dict__.update(w1=w1, b1=b1, w2=w2, b2=b2, view=self.view, seed=self.seed)
        return new

    def copy(self) -> "ModelParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def equals(self, other: "ModelParams") -> bool:
        return self.view == other.view and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class ModelGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    @classmethod
    def from_arrays(cls, arrays) -> "ModelGrads":
        return cls(*arrays)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.vdot(a, a)) for a in self.arrays())))


@dataclass
class ForwardCache:
    x: np.ndarray
    hidden: np.ndarray
    params_id: int = field(repr=False)
    shapes: tuple = field(repr=False)


def init_params(input_dim: int, hidden_dim: int, seed: int, view: View | str = View.FULL,
                n_classes: int = N_CLASSES) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    if input_dim < 1 or hidden_dim < 1:
        raise ValueError(f"dimensions must be >= 1, got input_dim={input_dim} hidden_dim={hidden_dim}")
    rng = np.random.default_rng(seed)
    lim1 = 1.0 / np.sqrt(input_dim)
    lim2 = 1.0 / np.sqrt(hidden_dim)
    w1 = rng.uniform(-lim1, lim1, size=(hidden_dim, input_dim))
    w2 = rng.uniform(-lim2, lim2, size=(n_classes, hidden_dim))
    return ModelParams(w1, np.zeros(hidden_dim), w2, np.zeros(n_classes), view=View(view), seed=seed)


def forward(params: ModelParams, x) -> tuple[np.ndarray, ForwardCache]:
    """Logits ``w2 tanh(w1 x + b1) + b2`` for one input or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(
            f"input has {x.shape[-1]} features but the {params.view.value} model expects {params.input_dim}"
        )
    hidden = np.tanh(x @ params.w1.T + params.b1)
    logits = hidden @ params.w2.T + params.b2
    cache = ForwardCache(x, hidden, id(params), tuple(a.shape for a in params.arrays()))
    return logits, cache


def predict_logits(params: ModelParams, x) -> np.ndarray:
    return forward(params, x)[0]


def backward(params: ModelParams, cache: ForwardCache, grad_logits) -> ModelGrads:
    """Parameter gradients given dL/dlogits; rows of a batch are summed."""
    if cache.params_id != id(params) or cache.shapes != tuple(a.shape for a in params.arrays()):
        raise ValueError("forward cache does not belong to these parameters")
    g = np.asarray(grad_logits, dtype=np.float64)
    x, h = cache.x, cache.hidden
    if g.shape != h.shape[:-1] + (params.n_classes,):
        raise ValueError(f"grad_logits has shape {g.shape}, expected {h.shape[:-1] + (params.n_classes,)}")
    if g.ndim == 1:
        g, x, h = g[None, :], x[None, :], h[None, :]
    dw2 = g.T @ h
    db2 = g.sum(axis=0)
    dpre = (g @ params.w2) * (1.0 - h * h)
    dw1 = dpre.T @ x
    db1 = dpre.sum(axis=0)
    return ModelGrads(dw1, db1, dw2, db2)


def save_params(params: ModelParams, path) -> None:
    """Text checkpoint: magic header, metadata, then row-major entries."""
    buf = io.StringIO()
    buf.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
    buf.write(f"view {params.view.value}\n")
    buf.write(f"seed {'none' if params.seed is None else params.seed}\n")
    for name, arr in zip(("w1", "b1", "w2", "b2"), params.arrays()):
        buf.write(f"{name} {' '.join(str(s) for s in arr.shape)}\n")
        buf.write(" ".join(repr(float(v)) for v in arr.ravel()) + "\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(buf.getvalue())


def load_params(path) -> ModelParams:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split() if lines else []
    if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    if header[1] != f"v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: unsupported checkpoint version {header[1]}")
    view = View(lines[1].split()[1])
    seed_tok = lines[2].split()[1]
    seed = None if seed_tok == "none" else int(seed_tok)
    arrays = []
    for i in range(4):
        shape = tuple(int(s) for s in lines[3 + 2 * i].split()[1:])
        values = np.array([float(v) for v in lines[4 + 2 * i].split()], dtype=np.float64)
        arrays.append(values.reshape(shape))
    return ModelParams(*arrays, view=view, seed=seed)
