"""scikit-learn front end for the three architectures, so the trainable core
composes with pipelines, grid search, and cross-validation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .models import (
    WindowScheme,
    activation_from_name,
    forward,
    init_cnn_standard,
    init_cnn_theorem,
    init_fcn_perm_invariant,
    init_fcn_standard,
    init_lcn_standard,
    init_lcn_theorem,
)
from .numerics import Rng
from .problems import Empirical
from .training import TrainConfig, train


class ShallowNetClassifier(ClassifierMixin, BaseEstimator):
    """Depth-2 convolutional / locally-connected / fully-connected binary
    classifier trained by (sub)gradient descent on the hinge loss.

    Parameters
    ----------
    arch : "cnn" | "lcn" | "fcn"
    q : hidden width (filters per position for cnn/lcn)
    kernel : window width for cnn/lcn (ignored for fcn)
    stride : window stride for cnn/lcn
    activation : "clipped_relu" | "tanh" | "relu"
    c : clipping level for clipped_relu
    init : "standard" (scaled gaussian) or "theorem" (discrete +-1/k kernels,
        biases 1/k - 1, zero readouts; cnn/lcn only) or "perm_invariant"
        (fcn only)
    steps : number of gradient steps
    eta : learning rate (plain GD)
    optimizer : "gd" | "adadelta"
    batch_size : 0 trains full batch, otherwise minibatch size
    freeze_bias : keep biases at their initial values
    seed : controls initialization and batch order
    """

    def __init__(
        self,
        arch: str = "cnn",
        q: int = 64,
        kernel: int = 3,
        stride: int = 1,
        activation: str = "clipped_relu",
        c: float = 1.0,
        init: str = "theorem",
        steps: int = 200,
        eta: float = 0.5,
        optimizer: str = "gd",
        batch_size: int = 0,
        freeze_bias: bool = True,
        seed: int = 0,
    ):
        self.arch = arch
        self.q = q
        self.kernel = kernel
        self.stride = stride
        self.activation = activation
        self.c = c
        self.init = init
        self.steps = steps
        self.eta = eta
        self.optimizer = optimizer
        self.batch_size = batch_size
        self.freeze_bias = freeze_bias
        self.seed = seed

    def _init_params(self, rng, n):
        scheme = None
        if self.arch in ("cnn", "lcn"):
            scheme = WindowScheme(size=n, width=self.kernel, stride=self.stride)
        if self.arch == "cnn":
            p = (init_cnn_theorem if self.init == "theorem"
                 else init_cnn_standard)(rng, self.q, scheme)
        elif self.arch == "lcn":
            p = (init_lcn_theorem if self.init == "theorem"
                 else init_lcn_standard)(rng, self.q, scheme)
        elif self.arch == "fcn":
            if self.init == "perm_invariant":
                p = init_fcn_perm_invariant(rng, self.q, n, c=self.c)
            else:
                p = init_fcn_standard(rng, self.q, n)
        else:
            raise ValueError(f"unknown architecture {self.arch!r}")
        return p, scheme

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError("this is a binary classifier; need exactly 2 classes")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        self.n_features_in_ = X.shape[1]

        act = activation_from_name(self.activation, self.c)
        rng = Rng(self.seed)
        params, scheme = self._init_params(rng.split(0), self.n_features_in_)
        cfg = TrainConfig(
            steps=self.steps,
            eta=self.eta,
            batch="minibatch" if self.batch_size else "full-sample",
            minibatch=self.batch_size,
            optimizer=self.optimizer,
            frozen=frozenset({"b"}) if self.freeze_bias else frozenset(),
            record_stride=max(1, self.steps // 50),
            seed=self.seed,
        )
        dist = Empirical(X)
        self.params_, self.trajectory_ = train(
            params, act, signs, dist, cfg, scheme=scheme
        )
        self._act = act
        self._scheme = scheme
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return forward(self.params_, self._act, X, self._scheme)

    def predict(self, X):
        h = self.decision_function(X)
        return np.where(h > 0.0, self.classes_[1], self.classes_[0])
