"""Mini-batch training loop with early stopping on a validation split."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from .datagen import CorpusBundle, Split
from .losses import LossKind, LossSpec
from .netmodel import ModelParams, View, backward, forward, init_params, load_params, predict_logits
from .optimizer import (
    OptimKind,
    OptimSpec,
    adamw_step,
    clip_grad_norm,
    init_state,
    sgd_step,
    shrink_on_epoch,
    warmup_linear_lr,
)

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e6
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc", "lr")


class ValidationSplit(str, enum.Enum):
    MATCHED = "matched"
    MISMATCHED = "mismatched"


class BiasSource(str, enum.Enum):
    NONE = "none"
    TRAIN_SHORTCUT_ONLY_FIRST = "train_shortcut_only_first"
    CHECKPOINT = "checkpoint"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: train loss {loss!r}")
        self.epoch = epoch
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 64
    view: View = View.FULL

    def __post_init__(self):
        object.__setattr__(self, "view", View(self.view))
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


@dataclass(frozen=True)
class TrainSpec:
    loss: LossSpec = field(default_factory=LossSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)
    early_stopping: bool = True
    validation_split: ValidationSplit = ValidationSplit.MISMATCHED
    max_epochs: int = 10
    seed: int = 0
    bias_model_source: BiasSource = BiasSource.NONE
    bias_checkpoint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "validation_split", ValidationSplit(self.validation_split))
        object.__setattr__(self, "bias_model_source", BiasSource(self.bias_model_source))
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        needs_bias = self.loss.kind in (LossKind.DEBIASED_FOCAL, LossKind.PRODUCT_OF_EXPERTS)
        if needs_bias != (self.bias_model_source is not BiasSource.NONE):
            raise ValueError(
                f"loss kind {self.loss.kind.value!r} "
                + ("needs a bias model source" if needs_bias else "does not take a bias model")
            )
        if self.bias_model_source is BiasSource.CHECKPOINT and not self.bias_checkpoint:
            raise ValueError("bias_model_source=checkpoint needs bias_checkpoint")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_params: ModelParams | None = None

    @property
    def best_val_loss(self) -> float:
        return self.records[self.best_epoch].val_loss

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc), repr(r.lr)])


EvalHook = Callable[[ModelParams, int], "tuple[float, float]"]


def validation_loss_spec(spec: LossSpec) -> LossSpec:
    """Loss used for model selection; bias-coupled kinds are scored on the main model alone."""
    if spec.kind in (LossKind.DEBIASED_FOCAL, LossKind.PRODUCT_OF_EXPERTS):
        return LossSpec(LossKind.CROSS_ENTROPY, clamp_eps=spec.clamp_eps)
    return replace(spec, reduction=losses.Reduction.MEAN)


def evaluate_loss(params: ModelParams, x: np.ndarray, y: np.ndarray, spec: LossSpec) -> tuple[float, float]:
    """Mean validation loss and accuracy of ``params`` on ``(x, y)``."""
    logits = predict_logits(params, x)
    probs = losses.softmax(logits)
    values = losses.focal_value(probs, y, validation_loss_spec(spec))
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return float(np.mean(values)), acc


def _validation_split(bundle: CorpusBundle, which: ValidationSplit) -> Split:
    return bundle.val_mismatched if which is ValidationSplit.MISMATCHED else bundle.val_matched


def fit_arrays(
    x: np.ndarray,
    y: np.ndarray,
    init: ModelParams,
    spec: TrainSpec,
    eval_hook: EvalHook,
    bias_probs: np.ndarray | None = None,
) -> tuple[ModelParams, RunHistory]:
    """Train from ``init`` on ``(x, y)``; ``eval_hook`` scores each finished epoch."""
    n = len(y)
    optim = spec.optim
    batch = min(optim.batch_size, n)
    steps_per_epoch = -(-n // batch)
    total_steps = steps_per_epoch * spec.max_epochs
    state = init_state(optim, init, total_steps)
    rng = np.random.default_rng([spec.seed, 1])
    params = init
    history = RunHistory()
    best_loss = np.inf
    lr = optim.peak_lr
    global_step = 0

    for epoch in range(spec.max_epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for step in range(steps_per_epoch):
            idx = order[step * batch:(step + 1) * batch]
            logits, cache = forward(params, x[idx])
            if not np.isfinite(logits).all():
                raise TrainingDiverged(epoch, step, float("nan"))
            loss, g_logits = losses.loss_and_grad(
                logits, y[idx], spec.loss, None if bias_probs is None else bias_probs[idx]
            )
            if not np.isfinite(loss) or loss > DIVERGENCE_THRESHOLD:
                raise TrainingDiverged(epoch, step, loss)
            loss_sum += loss * len(idx) if spec.loss.reduction is losses.Reduction.MEAN else loss
            grads = backward(params, cache, g_logits)
            if optim.clip_norm is not None:
                grads, _ = clip_grad_norm(grads, optim.clip_norm)
            if optim.kind is OptimKind.ADAMW:
                state.current_lr = warmup_linear_lr(global_step, total_steps, optim.peak_lr, optim.warmup_fraction)
                params, state = adamw_step(state, params, grads, optim)
            else:
                params = sgd_step(params, grads, lr)
            global_step += 1

        epoch_lr = state.current_lr if optim.kind is OptimKind.ADAMW else lr
        val_loss, val_acc = eval_hook(params, epoch)
        history.records.append(EpochRecord(epoch, loss_sum / n, float(val_loss), float(val_acc), epoch_lr))
        log.debug("epoch %d train_loss=%.5f val_loss=%.5f val_acc=%.4f lr=%.3g",
                  epoch, loss_sum / n, val_loss, val_acc, epoch_lr)
        if not spec.early_stopping or val_loss < best_loss:
            best_loss = val_loss
            history.best_epoch = epoch
            history.best_params = params
        if optim.kind is OptimKind.SGD:
            lr = shrink_on_epoch(lr, optim.shrink_factor)

    return history.best_params, history


def resolve_bias_model(bundle: CorpusBundle, model_cfg: ModelConfig, spec: TrainSpec) -> ModelParams | None:
    if spec.bias_model_source is BiasSource.NONE:
        return None
    if spec.bias_model_source is BiasSource.CHECKPOINT:
        params = load_params(spec.bias_checkpoint)
        if params.view is not View.SHORTCUT_ONLY:
            raise ValueError(f"{spec.bias_checkpoint}: bias checkpoint must use the shortcut-only view")
        return params
    return train_bias_model(bundle, ModelConfig(model_cfg.hidden_dim), spec.seed, train_spec=spec)


def train_run(
    bundle: CorpusBundle,
    model_cfg: ModelConfig | None,
    spec: TrainSpec,
    eval_hook: EvalHook | None = None,
    bias_params: ModelParams | None = None,
) -> tuple[ModelParams, RunHistory]:
    """Train a classifier on ``bundle.train`` and keep the best-validation parameters."""
    model_cfg = model_cfg or ModelConfig()
    train = bundle.train
    x = train.features(model_cfg.view)
    init = init_params(x.shape[1], model_cfg.hidden_dim, spec.seed, view=model_cfg.view)

    bias_probs = None
    if spec.loss.kind in (LossKind.DEBIASED_FOCAL, LossKind.PRODUCT_OF_EXPERTS):
        if bias_params is None:
            bias_params = resolve_bias_model(bundle, model_cfg, spec)
        bias_probs = losses.softmax(predict_logits(bias_params, train.features(bias_params.view)))

    if eval_hook is None:
        val = _validation_split(bundle, spec.validation_split)
        xv = val.features(model_cfg.view)

        def eval_hook(params, epoch):
            return evaluate_loss(params, xv, val.label, spec.loss)

    return fit_arrays(x, train.label, init, spec, eval_hook, bias_probs)


def bias_train_spec(seed: int, template: TrainSpec | None = None) -> TrainSpec:
    """Cross-entropy, shortcut-only training settings derived from ``template``."""
    template = template or TrainSpec()
    return replace(
        template,
        loss=LossSpec(LossKind.CROSS_ENTROPY),
        early_stopping=True,
        seed=seed,
        bias_model_source=BiasSource.NONE,
        bias_checkpoint=None,
    )


def train_bias_model(bundle: CorpusBundle, model_cfg: ModelConfig | None, seed: int,
                     train_spec: TrainSpec | None = None) -> ModelParams:
    """Shortcut-only cross-entropy model standing in for a hypothesis-only classifier."""
    model_cfg = ModelConfig(hidden_dim=(model_cfg or ModelConfig()).hidden_dim, view=View.SHORTCUT_ONLY)
    params, _ = train_run(bundle, model_cfg, bias_train_spec(seed, train_spec))
    return params


def save_history(history: RunHistory, path) -> Path:
    path = Path(path)
    history.write_csv(path)
    return path
