"""scikit-learn compatible wrapper around the tanh classifier and training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y, validate_data

from .losses import LossKind, LossSpec, softmax
from .netmodel import View, init_params, predict_logits
from .optimizer import OptimKind, OptimSpec
from .trainer import BiasSource, TrainSpec, evaluate_loss, fit_arrays


class FocalMLPClassifier(ClassifierMixin, BaseEstimator):
    """One-hidden-layer tanh network trained with cross-entropy or focal loss.

    Parameters
    ----------
    gamma : float, default=0.0
        Focusing exponent; 0 gives plain cross-entropy.
    loss : {"focal", "ce", "dfl", "poe"}, default="focal"
        ``"dfl"`` and ``"poe"`` need ``bias_proba`` at fit time.
    hidden_dim : int, default=64
    optimizer : {"sgd", "adamw"}, default="sgd"
    learning_rate : float, default=0.1
    shrink_factor : float, default=5.0
        SGD only: learning rate is divided by this after every epoch.
    clip_norm : float or None, default=5.0
    weight_decay : float, default=0.0
        AdamW only.
    warmup_fraction : float, default=0.1
        AdamW only.
    batch_size : int, default=32
    max_epochs : int, default=5
    early_stopping : bool, default=True
        Keep the parameters with the lowest validation loss.
    validation_fraction : float, default=0.1
        Held-out share of the training data used for early stopping when no
        explicit validation set is passed to :meth:`fit`.
    random_state : int, default=0
    """

    def __init__(self, gamma=0.0, loss="focal", hidden_dim=64, optimizer="sgd", learning_rate=0.1,
                 shrink_factor=5.0, clip_norm=5.0, weight_decay=0.0, warmup_fraction=0.1, batch_size=32,
                 max_epochs=5, early_stopping=True, validation_fraction=0.1, random_state=0):
        self.gamma = gamma
        self.loss = loss
        self.hidden_dim = hidden_dim
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.shrink_factor = shrink_factor
        self.clip_norm = clip_norm
        self.weight_decay = weight_decay
        self.warmup_fraction = warmup_fraction
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stopping = early_stopping
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_spec(self) -> TrainSpec:
        kind = LossKind(self.loss)
        coupled = kind in (LossKind.DEBIASED_FOCAL, LossKind.PRODUCT_OF_EXPERTS)
        return TrainSpec(
            loss=LossSpec(kind, float(self.gamma)),
            optim=OptimSpec(kind=OptimKind(self.optimizer), peak_lr=self.learning_rate,
                            shrink_factor=self.shrink_factor, clip_norm=self.clip_norm,
                            weight_decay=self.weight_decay, warmup_fraction=self.warmup_fraction,
                            batch_size=self.batch_size, epochs=self.max_epochs),
            early_stopping=self.early_stopping,
            max_epochs=self.max_epochs,
            seed=self.random_state,
            # Bias probabilities come in through fit(); no model is trained here.
            bias_model_source=BiasSource.TRAIN_SHORTCUT_ONLY_FIRST if coupled else BiasSource.NONE,
        )

    def fit(self, X, y, bias_proba=None, X_val=None, y_val=None):
        X, y = validate_data(self, X, y, dtype=np.float64)
        spec = self._train_spec()
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to fit")
        y_idx = np.searchsorted(self.classes_, y)
        if spec.loss.kind in (LossKind.DEBIASED_FOCAL, LossKind.PRODUCT_OF_EXPERTS):
            if bias_proba is None:
                raise ValueError(f"loss={self.loss!r} needs bias_proba")
            bias_proba = check_array(bias_proba, dtype=np.float64)
            if bias_proba.shape != (len(y), len(self.classes_)):
                raise ValueError(f"bias_proba must have shape {(len(y), len(self.classes_))}")

        if X_val is None:
            if self.validation_fraction > 0:
                idx_tr, idx_val = train_test_split(np.arange(len(y)), test_size=self.validation_fraction,
                                                   random_state=self.random_state, stratify=y_idx)
            else:
                idx_tr = idx_val = np.arange(len(y))
            X_tr, y_tr, X_v, y_v = X[idx_tr], y_idx[idx_tr], X[idx_val], y_idx[idx_val]
            if bias_proba is not None:
                bias_proba = bias_proba[idx_tr]
        else:
            X_v, yv = check_X_y(X_val, y_val, dtype=np.float64)
            if X_v.shape[1] != X.shape[1]:
                raise ValueError("X_val has a different number of features than X")
            X_tr, y_tr, y_v = X, y_idx, np.searchsorted(self.classes_, yv)

        init = init_params(X.shape[1], self.hidden_dim, self.random_state, view=View.FULL,
                           n_classes=len(self.classes_))

        def hook(params, epoch):
            return evaluate_loss(params, X_v, y_v, spec.loss)

        self.params_, self.history_ = fit_arrays(X_tr, y_tr, init, spec, hook, bias_proba)
        self.best_epoch_ = self.history_.best_epoch
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return predict_logits(self.params_, X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class FeatureViewSelector(TransformerMixin, BaseEstimator):
    """Keep the columns a given model view is allowed to see.

    Inputs are ``[genuine | shortcut]`` rows; ``shortcut_dim`` says how many
    trailing columns form the shortcut block.  ``view="shortcut_only"`` is the
    hypothesis-only projection used for the shallow bias model.
    """

    def __init__(self, shortcut_dim=12, view="full"):
        self.shortcut_dim = shortcut_dim
        self.view = view

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        if not (0 < self.shortcut_dim <= X.shape[1]):
            raise ValueError(f"shortcut_dim={self.shortcut_dim} does not fit {X.shape[1]} columns")
        View(self.view)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        if View(self.view) is View.SHORTCUT_ONLY:
            return X[:, -self.shortcut_dim:]
        return X
