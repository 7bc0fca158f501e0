"""Cross-entropy, focal and bias-coupled losses with gradients w.r.t. logits.

All functions accept either a single vector (one sample) or a 2-D array with
one row per sample.  Per-sample values are returned unreduced; use
:func:`batch_reduce` to collapse them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

DEFAULT_CLAMP_EPS = 1e-12


class LossKind(str, enum.Enum):
    CROSS_ENTROPY = "ce"
    FOCAL = "focal"
    DEBIASED_FOCAL = "dfl"
    PRODUCT_OF_EXPERTS = "poe"


class Reduction(str, enum.Enum):
    MEAN = "mean"
    SUM = "sum"


@dataclass(frozen=True)
class LossSpec:
    """Loss family selector.

    ``gamma`` is the focusing exponent of the modulating factor.  For
    ``CROSS_ENTROPY`` it is ignored and treated as exactly zero.
    ``PRODUCT_OF_EXPERTS`` applies the focal form (usually with gamma 0) to the
    renormalised product of the main and bias model distributions.
    """

    kind: LossKind = LossKind.FOCAL
    gamma: float = 0.0
    clamp_eps: float = DEFAULT_CLAMP_EPS
    reduction: Reduction = Reduction.MEAN

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "reduction", Reduction(self.reduction))
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be a finite nonnegative number, got {self.gamma}")
        if not (0.0 < self.clamp_eps <= 1e-3):
            raise ValueError(f"clamp_eps must lie in (0, 1e-3], got {self.clamp_eps}")

    @property
    def effective_gamma(self) -> float:
        return 0.0 if self.kind is LossKind.CROSS_ENTROPY else float(self.gamma)


def _check_finite(x: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        idx = idx[0] if len(idx) == 1 else idx
        raise ValueError(f"{what} contains a non-finite value at index {idx}")


def softmax(logits) -> np.ndarray:
    """Row-wise softmax in max-subtracted form."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("softmax needs at least two logits")
    _check_finite(z, "logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _label_prob(probs: np.ndarray, label) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    label = np.asarray(label)
    n_classes = probs.shape[-1]
    if np.any(label < 0) or np.any(label >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes: {label}")
    if probs.ndim == 1:
        if label.ndim != 0:
            raise ValueError("a single probability vector needs a scalar label")
        return probs[int(label)], label
    if label.shape != probs.shape[:1]:
        raise ValueError(f"got {label.shape[0] if label.ndim else 1} labels for {probs.shape[0]} rows")
    return probs[np.arange(probs.shape[0]), label], label


def _modulated_nll(p_t, weight_src, gamma: float, eps: float):
    """-(1 - w)^gamma * log(p) with the clamping rules shared by all variants."""
    log_p = np.log(np.clip(p_t, eps, 1.0))
    if gamma == 0.0:
        return -log_p
    w = np.asarray(weight_src, dtype=np.float64)
    if gamma < 1.0:
        w = np.clip(w, eps, 1.0 - eps)
    return -((1.0 - w) ** gamma) * log_p


def focal_value(probs, label, spec: LossSpec):
    """Per-sample focal loss ``-(1 - p_t)^gamma log p_t``."""
    if spec.kind not in (LossKind.CROSS_ENTROPY, LossKind.FOCAL, LossKind.PRODUCT_OF_EXPERTS):
        raise ValueError(f"focal_value does not handle loss kind {spec.kind.value!r}")
    p_t, _ = _label_prob(probs, label)
    return _modulated_nll(p_t, p_t, spec.effective_gamma, spec.clamp_eps)


def cross_entropy(probs, label, clamp_eps: float = DEFAULT_CLAMP_EPS):
    p_t, _ = _label_prob(probs, label)
    return -np.log(np.clip(p_t, clamp_eps, 1.0))


def _focal_scale(p_t: np.ndarray, gamma: float, eps: float) -> np.ndarray:
    # p_t * dL/dp_t; the logit gradient is this times (onehot - p).
    if gamma == 0.0:
        return np.full_like(p_t, -1.0)
    one_minus = 1.0 - p_t
    pow_base = np.maximum(one_minus, eps) if gamma < 1.0 else one_minus
    log_p = np.log(np.clip(p_t, eps, 1.0))
    scale = gamma * p_t * pow_base ** (gamma - 1.0) * log_p - one_minus**gamma
    return np.where(one_minus <= eps, 0.0, scale)


def focal_grad_logits(logits, label, spec: LossSpec) -> np.ndarray:
    """Gradient of the per-sample focal loss with respect to the logits.

    For gamma = 0 this is exactly ``softmax(z) - onehot(label)``.
    """
    probs = softmax(logits)
    p_t, label = _label_prob(probs, label)
    gamma = spec.effective_gamma
    onehot = np.zeros_like(probs)
    if probs.ndim == 1:
        onehot[int(label)] = 1.0
    else:
        onehot[np.arange(probs.shape[0]), label] = 1.0
    if gamma == 0.0:
        return probs - onehot
    scale = _focal_scale(p_t, gamma, spec.clamp_eps)
    if probs.ndim == 2:
        scale = scale[:, None]
    return scale * (onehot - probs)


def debiased_focal_value(probs, label, bias_probs, spec: LossSpec):
    """``-(1 - b_t)^gamma log p_t``: the bias model's confidence sets the weight."""
    if spec.kind is not LossKind.DEBIASED_FOCAL:
        raise ValueError(f"debiased_focal_value needs kind 'dfl', got {spec.kind.value!r}")
    probs = np.asarray(probs, dtype=np.float64)
    bias_probs = np.asarray(bias_probs, dtype=np.float64)
    if probs.shape != bias_probs.shape:
        raise ValueError(f"probability shapes differ: {probs.shape} vs {bias_probs.shape}")
    p_t, _ = _label_prob(probs, label)
    b_t, _ = _label_prob(bias_probs, label)
    return _modulated_nll(p_t, np.clip(b_t, spec.clamp_eps, 1.0 - spec.clamp_eps), spec.gamma, spec.clamp_eps)


def debiased_focal_grad_logits(logits, label, bias_probs, spec: LossSpec) -> np.ndarray:
    """Gradient of :func:`debiased_focal_value` w.r.t. the main model's logits.

    The bias model is frozen, so its weight is a constant per sample.
    """
    ce_grad = focal_grad_logits(logits, label, LossSpec(LossKind.CROSS_ENTROPY, clamp_eps=spec.clamp_eps))
    if spec.gamma == 0.0:
        return ce_grad
    b_t, _ = _label_prob(bias_probs, label)
    weight = (1.0 - np.clip(b_t, spec.clamp_eps, 1.0 - spec.clamp_eps)) ** spec.gamma
    if ce_grad.ndim == 2:
        weight = weight[:, None]
    return weight * ce_grad


def product_of_experts(main_probs, bias_probs, clamp_eps: float = DEFAULT_CLAMP_EPS) -> np.ndarray:
    """Elementwise product of two distributions, renormalised to sum to one."""
    main_probs = np.asarray(main_probs, dtype=np.float64)
    bias_probs = np.asarray(bias_probs, dtype=np.float64)
    if main_probs.shape != bias_probs.shape:
        raise ValueError(f"probability shapes differ: {main_probs.shape} vs {bias_probs.shape}")
    prod = main_probs * bias_probs
    if np.any(np.all(prod < clamp_eps**2, axis=-1)):
        raise ValueError("degenerate product of experts: every entry is below clamp_eps**2")
    return prod / prod.sum(axis=-1, keepdims=True)


def poe_logits(main_logits, bias_probs, clamp_eps: float = DEFAULT_CLAMP_EPS) -> np.ndarray:
    """Log-space route to the product of experts: ``z + log b``.

    ``softmax(poe_logits(z, b)) == product_of_experts(softmax(z), b)`` and the
    Jacobian w.r.t. ``z`` is the identity, so logit gradients pass through.
    """
    return np.asarray(main_logits, dtype=np.float64) + np.log(np.clip(bias_probs, clamp_eps, 1.0))


def batch_reduce(values, reduction: Reduction | str = Reduction.MEAN) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot reduce an empty batch")
    if Reduction(reduction) is Reduction.MEAN:
        return float(values.mean())
    return float(values.sum())


def loss_and_grad(logits, labels, spec: LossSpec, bias_probs=None):
    """Reduced loss and the matching gradient w.r.t. the batch of logits.

    This is what the training loop calls for every mini-batch; the loss kind
    decides whether and how ``bias_probs`` enters.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(labels)
    n = len(labels)
    if spec.kind in (LossKind.DEBIASED_FOCAL, LossKind.PRODUCT_OF_EXPERTS) and bias_probs is None:
        raise ValueError(f"loss kind {spec.kind.value!r} needs bias model probabilities")
    if spec.kind is LossKind.PRODUCT_OF_EXPERTS:
        logits = poe_logits(logits, bias_probs, spec.clamp_eps)
    probs = softmax(logits)
    p_t, labels = _label_prob(probs, labels)
    rows = np.arange(n)
    eps = spec.clamp_eps
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    if spec.kind is LossKind.DEBIASED_FOCAL:
        b_t, _ = _label_prob(np.asarray(bias_probs, dtype=np.float64), labels)
        b_t = np.clip(b_t, eps, 1.0 - eps)
        values = _modulated_nll(p_t, b_t, spec.gamma, eps)
        if spec.gamma != 0.0:
            grad *= ((1.0 - b_t) ** spec.gamma)[:, None]
    else:
        gamma = spec.effective_gamma
        values = _modulated_nll(p_t, p_t, gamma, eps)
        if gamma != 0.0:
            # scale * (onehot - p) == -scale * (p - onehot)
            grad *= -_focal_scale(p_t, gamma, eps)[:, None]
    if spec.reduction is Reduction.MEAN:
        grad /= n
    return batch_reduce(values, spec.reduction), grad
