"""scikit-learn style wrappers around model training, discovery and transfer.

``X`` is an ``(n, 2)`` integer array of operand pairs ``(a, b)`` and ``y`` the
answer residues.  All three estimators support ``get_params``/``set_params``,
``fit``, ``predict`` and ``score`` (accuracy), and validate their inputs.

>>> clf = TransformerClassifier(input_max=10, epochs=5).fit(X, y)   # doctest: +SKIP
>>> sub = SubnetworkDiscovery(clf, epochs=10).fit(X, y_sub)          # doctest: +SKIP
>>> ind = SubtaskInductionClassifier(clf, sub).fit(X_new, y_new)     # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import ModelConfig, build_model, copy_params, predict_answers
from .sparsify import SparsifyConfig, discover
from .training import TrainConfig, train
from .transfer import TransferPlan, prepare


def _tokens(X: np.ndarray, y: np.ndarray | None, input_max: int) -> np.ndarray:
    tok = np.zeros((X.shape[0], 4), dtype=np.int64)
    tok[:, :2] = X
    tok[:, 2] = input_max
    if y is not None:
        tok[:, 3] = y
    return tok


def _check_pairs(X, input_max: int, y=None):
    if y is None:
        X = check_array(X, dtype=np.int64)
    else:
        X, y = check_X_y(X, y, dtype=np.int64, y_numeric=True)
        y = np.asarray(y, dtype=np.int64)
        if y.min() < 0 or y.max() >= input_max:
            raise ValueError(f"labels must lie in [0, {input_max})")
    if X.shape[1] != 2:
        raise ValueError(f"X must have 2 columns (a, b), got {X.shape[1]}")
    if X.min() < 0 or X.max() >= input_max:
        raise ValueError(f"operands must lie in [0, {input_max})")
    return X, y


def _split(X, y, fraction: float, seed: int):
    """Hold out ``fraction`` of the rows for checkpoint selection."""
    if fraction <= 0:
        return X, y, None, None
    rng = np.random.default_rng(seed)
    order = rng.permutation(X.shape[0])
    k = max(1, int(round(fraction * X.shape[0])))
    ev, tr = order[:k], order[k:]
    return X[tr], y[tr], X[ev], y[ev]


class TransformerClassifier(ClassifierMixin, BaseEstimator):
    """A small GPT-2 trained from scratch to map ``(a, b)`` to an answer token."""

    def __init__(self, input_max: int = 100, n_layers: int = 2, n_heads: int = 4,
                 d_model: int = 128, d_ff: int = 512, epochs: int = 100, lr: float = 5e-4,
                 batch_size: int = 64, weight_decay: float = 0.01,
                 validation_fraction: float = 0.1, random_state: int = 0):
        self.input_max = input_max
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(n_layers=self.n_layers, n_heads=self.n_heads, d_model=self.d_model,
                           d_ff=self.d_ff, vocab_size=self.input_max + 1)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
                           weight_decay=self.weight_decay)

    def _initial(self, config: ModelConfig):
        params = build_model(config, self.random_state)
        return params, {k: True for k in params}

    def fit(self, X, y):
        X, y = _check_pairs(X, self.input_max, y)
        self.config_ = self._model_config()
        params, trainable = self._initial(self.config_)
        Xt, yt, Xe, ye = _split(X, y, self.validation_fraction, self.random_state)
        ev = None if Xe is None else _tokens(Xe, ye, self.input_max)
        res = train(params, self.config_, _tokens(Xt, yt, self.input_max), ev,
                    self._train_config(), seed=self.random_state, trainable=trainable)
        self.params_ = res.params
        self.history_ = res.history
        self.best_epoch_ = res.best_epoch
        self.classes_ = np.arange(self.input_max)
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X, _ = _check_pairs(X, self.input_max)
        return predict_answers(self.params_, _tokens(X, None, self.input_max), self.config_)


class SubnetworkDiscovery(TransformerMixin, BaseEstimator):
    """Learn a binary weight mask over a fitted :class:`TransformerClassifier`.

    ``transform`` returns the subnetwork's predicted answers as a column, so
    the estimator can sit in a pipeline in front of another model.
    """

    def __init__(self, base, lambdas=(1e-7, 5e-7, 1e-8), epochs: int = 50, lr: float = 1e-3,
                 batch_size: int = 64, beta_start: float = 1.0, beta_final: float = 100.0,
                 mask_init: float = -0.1, validation_fraction: float = 0.1,
                 random_state: int = 0):
        self.base = base
        self.lambdas = lambdas
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.beta_start = beta_start
        self.beta_final = beta_final
        self.mask_init = mask_init
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        check_is_fitted(self.base, "params_")
        X, y = _check_pairs(X, self.base.input_max, y)
        scfg = SparsifyConfig(beta_start=self.beta_start, beta_final=self.beta_final,
                              mask_init=self.mask_init, lambdas=tuple(self.lambdas),
                              epochs=self.epochs, lr=self.lr, batch_size=self.batch_size)
        Xt, yt, Xe, ye = _split(X, y, self.validation_fraction, self.random_state)
        if Xe is None:
            Xe, ye = Xt, yt
        m = self.base.input_max
        res = discover(self.base.params_, self.base.config_, _tokens(Xt, yt, m),
                       _tokens(Xe, ye, m), scfg, seed=self.random_state)
        self.mask_ = res.mask
        self.lambda_ = res.lam
        self.density_ = res.density
        self.history_ = res.history
        self.classes_ = np.arange(m)
        return self

    def predict(self, X):
        check_is_fitted(self, "mask_")
        X, _ = _check_pairs(X, self.base.input_max)
        p = self.base.params_
        return predict_answers(p, _tokens(X, None, self.base.input_max), self.base.config_,
                               self.mask_.override(p))

    def transform(self, X):
        return self.predict(X)[:, None]

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))


class SubtaskInductionClassifier(TransformerClassifier):
    """Train a new model that starts from a transplanted subnetwork.

    ``mode`` is any transfer condition (``"induction"``, ``"scratch"``,
    ``"random-subnet"``, ...).  Architecture comes from ``source``.
    """

    def __init__(self, source, subnetwork=None, mode: str = "induction",
                 unmasked: str = "copy-embeddings", epochs: int = 100, lr: float = 2e-4,
                 batch_size: int = 32, weight_decay: float = 0.01,
                 validation_fraction: float = 0.1, random_state: int = 0):
        self.source = source
        self.subnetwork = subnetwork
        self.mode = mode
        self.unmasked = unmasked
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    @property
    def input_max(self) -> int:
        return self.source.input_max

    def _model_config(self) -> ModelConfig:
        check_is_fitted(self.source, "params_")
        return self.source.config_

    def _initial(self, config: ModelConfig):
        mask = None
        if self.subnetwork is not None:
            check_is_fitted(self.subnetwork, "mask_")
            mask = self.subnetwork.mask_
        plan = TransferPlan(self.mode, reinit_seed=self.random_state + 1, mask=mask,
                            unmasked=self.unmasked)
        mixed, used = prepare(plan, copy_params(self.source.params_), config)
        self.transferred_mask_ = used
        return mixed.params, mixed.trainable
