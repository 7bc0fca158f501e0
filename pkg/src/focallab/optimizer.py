"""Update rules and learning-rate schedules.

Two regimes are supported: AdamW with linear warmup then linear decay, and
plain SGD whose learning rate is divided by a shrink factor after every epoch.
Both share global-norm gradient clipping.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .netmodel import ModelGrads, ModelParams


class OptimKind(str, enum.Enum):
    ADAMW = "adamw"
    SGD = "sgd"


@dataclass(frozen=True)
class OptimSpec:
    kind: OptimKind = OptimKind.SGD
    peak_lr: float = 0.1
    adam_eps: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    clip_norm: float | None = 5.0
    warmup_fraction: float = 0.1
    shrink_factor: float = 5.0
    batch_size: int = 32
    epochs: int = 10

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimKind(self.kind))
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be nonnegative")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.shrink_factor < 1.0:
            raise ValueError("shrink_factor must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")

    @classmethod
    def bert_recipe(cls, epochs: int = 10) -> "OptimSpec":
        """AdamW settings used for transformer fine-tuning."""
        return cls(kind=OptimKind.ADAMW, peak_lr=2e-5, adam_eps=1e-6, beta1=0.9, beta2=0.999,
                   weight_decay=0.01, clip_norm=1.0, warmup_fraction=0.1, batch_size=32, epochs=epochs)

    @classmethod
    def infersent_recipe(cls, epochs: int = 20) -> "OptimSpec":
        """SGD settings used for the BiLSTM sentence-encoder classifier."""
        return cls(kind=OptimKind.SGD, peak_lr=0.1, clip_norm=5.0, shrink_factor=5.0,
                   batch_size=32, epochs=epochs)


@dataclass
class OptimState:
    current_lr: float
    step_counter: int = 0
    first_moment: list[np.ndarray] | None = None
    second_moment: list[np.ndarray] | None = None
    total_steps: int | None = None


def init_state(spec: OptimSpec, params: ModelParams, total_steps: int | None = None) -> OptimState:
    if spec.kind is OptimKind.ADAMW:
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return OptimState(
            current_lr=warmup_linear_lr(0, total_steps, spec.peak_lr, spec.warmup_fraction) if total_steps else spec.peak_lr,
            first_moment=zeros,
            second_moment=[z.copy() for z in zeros],
            total_steps=total_steps,
        )
    return OptimState(current_lr=spec.peak_lr, total_steps=total_steps)


def clip_grad_norm(grads: ModelGrads, max_norm: float) -> tuple[ModelGrads, float]:
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    arrays = grads.arrays()
    norm = grads.global_norm()
    if not np.isfinite(norm):
        raise ValueError("cannot clip non-finite gradients")
    if norm <= max_norm:
        return grads, 1.0
    scale = max_norm / norm
    return ModelGrads.from_arrays([a * scale for a in arrays]), scale


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    return math.ceil(warmup_fraction * total_steps)


def warmup_linear_lr(step: int, total_steps: int, peak_lr: float, warmup_fraction: float) -> float:
    """Linear ramp 0 -> peak over the warmup steps, then linear decay to 0."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_steps(total_steps, warmup_fraction)
    if step < warm:
        return peak_lr * step / warm
    if total_steps == warm:
        return peak_lr
    return peak_lr * (total_steps - step) / (total_steps - warm)


def _check_shapes(params: ModelParams, grads: ModelGrads) -> None:
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")


def adamw_step(state: OptimState, params: ModelParams, grads: ModelGrads,
               spec: OptimSpec) -> tuple[ModelParams, OptimState]:
    """Bias-corrected Adam update with decoupled weight decay.

    Uses ``state.current_lr``; the caller refreshes it from the schedule.
    """
    _check_shapes(params, grads)
    if state.first_moment is None or any(
        m.shape != p.shape for m, p in zip(state.first_moment, params.arrays())
    ):
        raise ValueError("optimizer state does not match the parameter shapes")
    t = state.step_counter + 1
    lr = state.current_lr
    c1 = 1.0 - spec.beta1**t
    c2 = 1.0 - spec.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.first_moment, state.second_moment):
        m = spec.beta1 * m + (1.0 - spec.beta1) * g
        v = spec.beta2 * v + (1.0 - spec.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + spec.adam_eps)
        new_p.append(p * (1.0 - lr * spec.weight_decay) - lr * update)
        new_m.append(m)
        new_v.append(v)
    new_state = OptimState(current_lr=lr, step_counter=t, first_moment=new_m,
                           second_moment=new_v, total_steps=state.total_steps)
    return params.with_arrays(new_p, validate=False), new_state


def sgd_step(params: ModelParams, grads: ModelGrads, current_lr: float) -> ModelParams:
    _check_shapes(params, grads)
    return params.with_arrays([p - current_lr * g for p, g in zip(params.arrays(), grads.arrays())], validate=False)


def shrink_on_epoch(current_lr: float, shrink_factor: float) -> float:
    if shrink_factor < 1.0:
        raise ValueError("shrink_factor must be >= 1")
    return current_lr / shrink_factor
